use dppass::losses::domain_loss_batch;
use dppass::model::{Architecture, ClassifierParams, Padding};
use dppass::optim::Adam;
use dppass::resample::calls_on_this_thread;
use dppass::synthdata::{Dataset, DatasetSpec};
use dppass::trainer::*;
use dppass::{Labels, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(mask: LossMask) -> TrainConfig {
    TrainConfig {
        mask,
        arch: Architecture { channels: vec![4, 8, 8], ..Default::default() },
        layout: LayoutConfig { patch_size: 16, ..Default::default() },
        erp_size: (32, 64),
        crops_per_source: 3,
        steps: 4,
        ..Default::default()
    }
}

fn tiny_data() -> Dataset {
    DatasetSpec {
        erp_size: (32, 64),
        source_count: 3,
        target_count: 3,
        eval_count: 2,
        ..Default::default()
    }
    .generate()
    .unwrap()
}

fn run(config: &TrainConfig, data: &Dataset) -> (TrainState, Vec<LossReport>) {
    let mut reports = Vec::new();
    let state = train(config, data, |r, _| reports.push(*r)).unwrap();
    (state, reports)
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data();
    let cfg = tiny_config(LossMask::ALL);
    let (a, ra) = run(&cfg, &data);
    let (b, rb) = run(&cfg, &data);
    assert_eq!(ra, rb);
    assert_eq!(a.models(), b.models());
    let (c, _) = run(&TrainConfig { seed: 1, ..cfg }, &data);
    assert_ne!(a.models(), c.models());
}

#[test]
fn one_step_reports_every_term() {
    let data = tiny_data();
    let (_, reports) = run(&TrainConfig { steps: 1, ..tiny_config(LossMask::ALL) }, &data);
    let r = reports[0];
    assert_eq!(r.step, 1);
    for v in [r.l_s, r.l_d, r.l_d_classifier, r.l_pc, r.l_fc, r.total] {
        assert!(v.is_finite() && v > 0.0, "{r:?}");
    }
    let cfg = tiny_config(LossMask::ALL);
    let expected = r.l_s + cfg.loss.alpha * r.l_d + cfg.loss.beta * r.l_pc + cfg.loss.fc_weight * r.l_fc;
    assert!((r.total - expected).abs() <= 1e-12 * expected.abs());
    let line = r.log_line();
    assert!(line.starts_with("step=1 L_s="));
    for key in ["L_d=", "L_pc=", "L_fc=", "total="] {
        assert!(line.contains(key));
    }
}

#[test]
fn zero_weights_reduce_to_source_supervision() {
    let data = tiny_data();
    let base = tiny_config(LossMask::NONE);
    let (plain, plain_reports) = run(&base, &data);
    let mut cfg = tiny_config(LossMask::ALL);
    cfg.loss.alpha = 0.0;
    cfg.loss.beta = 0.0;
    cfg.loss.fc_weight = 0.0;
    let (zeroed, zeroed_reports) = run(&cfg, &data);
    assert_eq!(plain.erp_model, zeroed.erp_model);
    assert_eq!(plain.tp_model, zeroed.tp_model);
    for (a, b) in plain_reports.iter().zip(&zeroed_reports) {
        assert_eq!(a.l_s.to_bits(), b.l_s.to_bits());
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }
}

#[test]
fn zero_alpha_leaves_encoders_untouched_by_classifiers() {
    let data = tiny_data();
    let mut cfg = tiny_config(LossMask { d: true, ..LossMask::NONE });
    cfg.loss.alpha = 0.0;
    let (with_d, _) = run(&cfg, &data);
    let (plain, _) = run(&tiny_config(LossMask::NONE), &data);
    assert_eq!(with_d.erp_model, plain.erp_model);
    assert_eq!(with_d.tp_model, plain.tp_model);
}

#[test]
fn frozen_erp_side_of_consistency_matches_baseline_erp() {
    let data = tiny_data();
    let cfg = TrainConfig { stop_gradient_erp: true, ..tiny_config(LossMask { pc: true, ..LossMask::NONE }) };
    let (frozen, _) = run(&cfg, &data);
    let (plain, _) = run(&tiny_config(LossMask::NONE), &data);
    assert_eq!(frozen.erp_model, plain.erp_model);
    assert_ne!(frozen.tp_model, plain.tp_model);
}

fn random_features(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::from_fn(&[n, 8, 8, 8], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn adversarial_alternation_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let mut cls = ClassifierParams::init(8, trial);
        let ft = random_features(&mut rng, 2);
        let fs = random_features(&mut rng, 2);
        let mut adam = Adam::new(1e-4, &cls.tensors());
        let before = classifier_update(&mut cls, &mut |p, g| adam.step(p, g), &ft, &fs, Padding::Zero).unwrap();
        let after = {
            let (dt, _) = cls.forward(&ft, Padding::Zero).unwrap();
            let (ds, _) = cls.forward(&fs, Padding::Zero).unwrap();
            domain_loss_batch(&dt, &ds, false).loss
        };
        assert!(after < before, "classifier step raised its loss: {before} -> {after}");

        // a small feature step against the swapped-label gradient lowers the adversarial loss
        let (adv, gt, gs) = adversarial_feature_gradients(&cls, &ft, &fs, Padding::Zero).unwrap();
        let mut ft2 = ft.clone();
        let mut fs2 = fs.clone();
        ft2.add_scaled(&gt, -1e-4 / gt.max_abs().max(1e-300)).unwrap();
        fs2.add_scaled(&gs, -1e-4 / gs.max_abs().max(1e-300)).unwrap();
        let (adv2, _, _) = adversarial_feature_gradients(&cls, &ft2, &fs2, Padding::Zero).unwrap();
        assert!(adv2 < adv, "feature step raised adversarial loss: {adv} -> {adv2}");
    }
}

#[test]
fn erp_only_evaluation_never_resamples() {
    let data = tiny_data();
    let (state, _) = run(&tiny_config(LossMask::ALL), &data);
    let layout = tiny_config(LossMask::ALL).layout;
    let before = calls_on_this_thread();
    evaluate(&state.models(), &data.eval, EvalMode::ErpOnly, &layout).unwrap();
    assert_eq!(calls_on_this_thread(), before);
    evaluate(&state.models(), &data.eval, EvalMode::DualAverage, &layout).unwrap();
    assert!(calls_on_this_thread() > before);
}

#[test]
fn deleting_tangent_path_does_not_change_erp_only_scores() {
    let data = tiny_data();
    let cfg = tiny_config(LossMask::ALL);
    let (state, _) = run(&cfg, &data);
    let full = state.models();
    let pruned = Models { erp: full.erp.clone(), tp: None, erp_classifier: None, tp_classifier: None };
    let a = evaluate(&full, &data.eval, EvalMode::ErpOnly, &cfg.layout).unwrap();
    let b = evaluate(&pruned, &data.eval, EvalMode::ErpOnly, &cfg.layout).unwrap();
    assert_eq!(a, b);
    assert!(evaluate(&pruned, &data.eval, EvalMode::DualAverage, &cfg.layout).is_err());
}

#[test]
fn perfect_oracle_scores_one_hundred() {
    let data = tiny_data();
    let scores: Vec<Tensor> = data
        .eval
        .iter()
        .map(|s| {
            let (h, w) = (s.labels.height(), s.labels.width());
            Tensor::from_fn(&[h, w, 5], |i| if s.labels.data()[i / 5] as usize == i % 5 { 1.0 } else { 0.0 })
        })
        .collect();
    let labels: Vec<&Labels> = data.eval.iter().map(|s| &s.labels).collect();
    let report = score_predictions(&scores, &labels, 5).unwrap();
    assert_eq!(report.miou.mean, 100.0);
    assert!(score_predictions(&[], &[], 5).is_err());
}

#[test]
fn dual_average_outputs_probabilities() {
    let data = tiny_data();
    let cfg = TrainConfig { steps: 6, ..tiny_config(LossMask::ALL) };
    let (state, _) = run(&cfg, &data);
    let predicted = predict(&state.models(), &data.eval[0].image, EvalMode::DualAverage, Some(state.grid())).unwrap();
    assert_eq!(predicted.shape(), &[32, 64, 5]);
    let sums: Vec<f64> = predicted.data().chunks_exact(5).map(|p| p.iter().sum()).collect();
    assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-9));
}

#[test]
fn masks_parse_and_print() {
    for m in LossMask::all_subsets() {
        assert_eq!(m.to_string().parse::<LossMask>().unwrap(), m);
    }
    assert_eq!("all".parse::<LossMask>().unwrap(), LossMask::ALL);
    assert_eq!(LossMask::ALL.to_string(), "d+pc+fc");
    assert!("d+e".parse::<LossMask>().is_err());
    assert_eq!("dual_average".parse::<EvalMode>().unwrap(), EvalMode::DualAverage);
}

#[test]
fn ablation_rows_and_csv() {
    let data = tiny_data();
    let cfg = TrainConfig { steps: 2, ..tiny_config(LossMask::NONE) };
    let masks = [LossMask::NONE, LossMask { pc: true, ..LossMask::NONE }];
    let mut seen = 0;
    let rows = run_ablation(&cfg, &data, &masks, &[0, 1], |_| seen += 1).unwrap();
    assert_eq!((rows.len(), seen), (4, 4));
    let csv = ablation_csv(&rows, &dppass::synthdata::CLASS_NAMES);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "mask,seed,miou,background,disk,stripe,polygon,ring");
    for line in lines {
        assert_eq!(line.split(',').count(), 8);
        assert!(line.starts_with("none,") || line.starts_with("pc,"));
    }
    let means = mean_by_mask(&rows);
    assert_eq!(means.len(), 2);
    let expected = (rows[0].report.miou.mean + rows[2].report.miou.mean) / 2.0;
    assert!((means[0].1 - expected).abs() < 1e-12);
}

#[test]
fn invalid_configs_are_rejected() {
    let data = tiny_data();
    for cfg in [
        TrainConfig { lr: 0.0, ..tiny_config(LossMask::ALL) },
        TrainConfig { erp_size: (30, 64), ..tiny_config(LossMask::ALL) },
        TrainConfig { crops_per_source: 0, ..tiny_config(LossMask::ALL) },
    ] {
        assert!(train(&cfg, &data, |_, _| {}).is_err());
    }
    // training on the wrong panorama size fails instead of reading garbage
    let cfg = TrainConfig { erp_size: (64, 128), ..tiny_config(LossMask::ALL) };
    assert!(train(&cfg, &data, |_, _| {}).is_err());
}

#[test]
fn model_seeds_differ_between_paths() {
    let s = TrainState::new(&tiny_config(LossMask::ALL)).unwrap();
    assert_ne!(s.erp_model, s.tp_model);
    assert_eq!(s.erp_model.arch, s.tp_model.arch);
}

#[test]
fn thread_count_does_not_change_results() {
    let data = tiny_data();
    let cfg = tiny_config(LossMask::ALL);
    let on = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run(&cfg, &data))
    };
    let (a, ra) = on(1);
    let (b, rb) = on(3);
    assert_eq!(ra, rb);
    assert_eq!(a.models(), b.models());
}
