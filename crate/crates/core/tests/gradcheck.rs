use dppass::gradcheck::{central_differences, relative_error, run_suite};
use dppass::Tensor;

#[test]
fn suite_passes_on_fresh_seeds() {
    let report = run_suite(20, 99).unwrap();
    assert_eq!(report.instances, 20);
    assert!(report.losses < 1e-6, "{report:?}");
    assert!(report.model < 1e-5, "{report:?}");
    assert!(report.classifier < 1e-5, "{report:?}");
}

#[test]
fn central_differences_of_a_cubic() {
    let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
    let g = central_differences(&x, 1e-4, |t| t.data().iter().map(|v| v * v * v).sum());
    let exact = Tensor::from_fn(&[3], |i| 3.0 * x.data()[i] * x.data()[i]);
    // error of the central scheme on a cubic is exactly h²
    for (a, b) in g.data().iter().zip(exact.data()) {
        assert!((a - b - 1e-8).abs() < 1e-9);
    }
    assert!(relative_error(&g, &exact) < 1e-8);
    assert_eq!(relative_error(&Tensor::zeros(&[2]), &Tensor::zeros(&[2])), 0.0);
}
