use dppass::model::{Architecture, ClassifierParams, ModelParams, Padding};
use dppass::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn output_shapes_follow_the_architecture(
        channels in prop::collection::vec(1usize..6, 1..4),
        stride_bits in 0u8..8,
        classes in 2usize..6,
        hk in 1usize..4,
        wk in 1usize..4,
        batch in 1usize..3,
        wrap in any::<bool>(),
    ) {
        let strides: Vec<usize> = (0..channels.len()).map(|i| 1 + ((stride_bits >> i) & 1) as usize).collect();
        let arch = Architecture { in_channels: 3, channels: channels.clone(), strides, num_classes: classes };
        let s = arch.feature_stride();
        let (h, w) = (s * hk, s * wk);
        let params = ModelParams::init(&arch, 0).unwrap();
        let padding = if wrap { Padding::WrapWidth } else { Padding::Zero };
        let (out, _) = params.forward(&Tensor::zeros(&[batch, h, w, 3]), padding).unwrap();
        let f = *channels.last().unwrap();
        prop_assert_eq!(out.logits.shape(), &[batch, h, w, classes][..]);
        prop_assert_eq!(out.features.shape(), &[batch, hk, wk, f][..]);
        prop_assert_eq!(arch.feature_channels(), f);
        let (single, _) = params.forward(&Tensor::zeros(&[h, w, 3]), padding).unwrap();
        prop_assert_eq!(single.logits.shape(), &[h, w, classes][..]);
        let cls = ClassifierParams::init(f, 1);
        let (probs, _) = cls.forward(&out.features, padding).unwrap();
        prop_assert_eq!(probs.len(), batch);
    }
}

#[test]
fn batched_forward_equals_per_item_forward() {
    let params = ModelParams::init(&Architecture::default(), 9).unwrap();
    let a = Tensor::from_fn(&[16, 32, 3], |i| (i % 11) as f64 / 11.0);
    let b = Tensor::from_fn(&[16, 32, 3], |i| (i % 5) as f64 / 5.0);
    let batch = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
    let (joint, _) = params.forward(&batch, Padding::WrapWidth).unwrap();
    for (k, item) in [a, b].iter().enumerate() {
        let (solo, _) = params.forward(item, Padding::WrapWidth).unwrap();
        let got = joint.logits.batch_item(k).unwrap();
        for (x, y) in got.data().iter().zip(solo.logits.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn odd_sizes_are_rejected() {
    let params = ModelParams::init(&Architecture::default(), 0).unwrap();
    assert!(params.forward(&Tensor::zeros(&[10, 16, 3]), Padding::Zero).is_err());
    assert!(params.forward(&Tensor::zeros(&[16, 16, 4]), Padding::Zero).is_err());
    assert!(Architecture { strides: vec![1, 3, 2], ..Default::default() }.validate().is_err());
}
