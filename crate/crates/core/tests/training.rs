use tmlab_core::evaluation::{gen_dataset, DatasetName, LabeledPoint};
use tmlab_core::nets::checkpoint::Checkpoint;
use tmlab_core::nets::{BackboneConfig, HeadArch, HeadConfig, Model, ModelConfig, ModelKind};
use tmlab_core::training::{
    cfg_dropout, fm_loss, tm_loss, train, write_loss_csv, TrainConfig, TrainItem, TrainMode,
};
use tmlab_core::{Error, Parameterization, Seed, StatePoint, TimeWeighting};

fn config(arch: HeadArch, p: Parameterization, tokens: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        tokens,
        channels: 2,
        backbone: BackboneConfig {
            d_in: 2,
            d_b: 16,
            layers: 2,
            cond_classes: classes,
        },
        kind: ModelKind::Dtm {
            parameterization: p,
            head: HeadConfig {
                arch,
                d_h: 16,
                layers: 2,
                seq_scale: 1,
                scale_maps: None,
            },
        },
    }
}

fn items(dim: usize, count: usize) -> Vec<TrainItem> {
    (0..count)
        .map(|i| {
            let mut rng = Seed(40 + i as u64).stream();
            TrainItem {
                x0: rng.normal_vec(dim),
                x1: rng.normal_vec(dim),
                cond: Some(i % 3),
                key: 100 + i as u64,
            }
        })
        .collect()
}

/// A freshly initialized head outputs zero, so the loss is the mean of
/// `|Y_1 - Y_0|^2` over items and replicates. Replaying the documented draw
/// order reproduces it exactly.
#[test]
fn zero_head_loss_matches_replayed_draws() {
    for p in Parameterization::ALL {
        for tpt in [false, true] {
            let tokens = 3;
            let model = Model::<f64>::new(config(HeadArch::Mlp, p, tokens, 3), Seed(1)).unwrap();
            let mut cfg = TrainConfig::new(TrainMode::Dtm, 1, 4, 1e-3);
            cfg.head_batch = 3;
            cfg.time_per_token = tpt;
            cfg.weighting_t = TimeWeighting::LogitNormal { mu: -0.5, sigma: 1.0 };
            cfg.weighting_s = TimeWeighting::Beta { alpha: 2.0, beta: 1.5 };
            let batch = items(2 * tokens, 4);
            let seed = Seed(17);
            let got = tm_loss(&model, &batch, &cfg, seed).unwrap().loss;

            let mut expected = 0.0;
            for it in &batch {
                let mut rng = seed.derive(it.key).stream();
                cfg.weighting_t.sample_time(&mut rng);
                cfg_dropout(it.cond, cfg.cond_drop, &mut rng);
                for _ in 0..cfg.head_batch {
                    for _ in 0..if tpt { tokens } else { 1 } {
                        cfg.weighting_s.sample_time(&mut rng);
                    }
                    let y0 = rng.normal_vec(2 * tokens);
                    for ((a, b), y) in it.x0.iter().zip(&it.x1).zip(&y0) {
                        expected += (p.target(*a, *b) - y).powi(2);
                    }
                }
            }
            expected /= (batch.len() * cfg.head_batch) as f64;
            assert!((got - expected).abs() < 1e-12 * expected, "{p}: {got} vs {expected}");
        }
    }
}

#[test]
fn loss_is_invariant_to_batch_order() {
    let mut model = Model::<f64>::new(config(HeadArch::TransformerLite, Parameterization::Denoiser, 2, 3), Seed(1)).unwrap();
    model.params_mut().randomize(Seed(3), 0.3);
    let cfg = TrainConfig::new(TrainMode::Dtm, 1, 5, 1e-3);
    let batch = items(4, 5);
    let mut reversed = batch.clone();
    reversed.reverse();
    let a = tm_loss(&model, &batch, &cfg, Seed(8)).unwrap();
    let b = tm_loss(&model, &reversed, &cfg, Seed(8)).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-12 * a.loss);
    for (x, y) in a.grad.iter().zip(&b.grad) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn cfg_dropout_extremes() {
    let mut rng = Seed(0).stream();
    for _ in 0..100 {
        assert_eq!(cfg_dropout(Some(2), 0.0, &mut rng), Some(2));
        assert_eq!(cfg_dropout(Some(2), 1.0, &mut rng), None);
        assert_eq!(cfg_dropout(None, 0.0, &mut rng), None);
    }
}

#[test]
fn config_is_checked_against_model() {
    let data = gen_dataset(DatasetName::Gauss8, 64, Seed(0)).unwrap();
    let mut model = Model::<f32>::new(config(HeadArch::TransformerLite, Parameterization::Difference, 1, 0), Seed(0)).unwrap();
    let fm = TrainConfig::new(TrainMode::Fm, 1, 4, 1e-3);
    assert!(matches!(train(&mut model, &data, &fm, Seed(0)), Err(Error::InvalidArgument { name: "mode", .. })));
    let mut tpt = TrainConfig::new(TrainMode::Dtm, 1, 4, 1e-3);
    tpt.time_per_token = true;
    assert!(matches!(
        train(&mut model, &data, &tpt, Seed(0)),
        Err(Error::InvalidArgument { name: "time_per_token", .. })
    ));
    let mut bad = TrainConfig::new(TrainMode::Dtm, 1, 4, 1e-3);
    bad.cond_drop = 1.5;
    assert!(bad.validate().is_err());
    let wrong_dim = vec![LabeledPoint {
        x: StatePoint::from_vec(vec![0.0; 3]).unwrap(),
        class: 0,
    }];
    let ok = TrainConfig::new(TrainMode::Dtm, 1, 4, 1e-3);
    assert!(train(&mut model, &wrong_dim, &ok, Seed(0)).is_err());
}

#[test]
fn training_is_deterministic() {
    let data = gen_dataset(DatasetName::Gauss8, 512, Seed(0)).unwrap();
    let run = || {
        let mut model = Model::<f32>::new(config(HeadArch::Mlp, Parameterization::Difference, 1, 8), Seed(4)).unwrap();
        let mut cfg = TrainConfig::new(TrainMode::Dtm, 30, 32, 2e-3);
        cfg.log_every = 10;
        let report = train(&mut model, &data, &cfg, Seed(4)).unwrap();
        (Checkpoint::from_model(&model, Seed(4), 30).to_bytes(), report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 10, 20, 30]);
    assert_eq!(
        ra.records.iter().map(|r| r.loss).collect::<Vec<_>>(),
        rb.records.iter().map(|r| r.loss).collect::<Vec<_>>()
    );
    let mut csv = Vec::new();
    write_loss_csv(&ra.records, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("step,loss,wallclock_ms\n1,"));
    assert_eq!(text.lines().count(), 5);
}

/// The FM objective keeps the conditional variance of `X_1 - X_0` given
/// `X_t` as an irreducible floor, so it cannot fall as far as the D-TM loss.
#[test]
fn training_reduces_loss() {
    let data = gen_dataset(DatasetName::Gauss8, 2048, Seed(0)).unwrap();
    let mut model = Model::<f32>::new(config(HeadArch::Mlp, Parameterization::Difference, 1, 0), Seed(2)).unwrap();
    let mut cfg = TrainConfig::new(TrainMode::Dtm, 400, 64, 3e-3);
    cfg.log_every = 50;
    let report = train(&mut model, &data, &cfg, Seed(2)).unwrap();
    assert!(report.last_loss().unwrap() < 0.75 * report.first_loss().unwrap(), "{:?}", report.records);

    let mut fm_config = config(HeadArch::Mlp, Parameterization::Difference, 1, 0);
    fm_config.kind = ModelKind::Fm {
        target: Parameterization::Difference,
    };
    let mut fm = Model::<f32>::new(fm_config, Seed(2)).unwrap();
    let mut cfg = TrainConfig::new(TrainMode::Fm, 400, 64, 3e-3);
    cfg.log_every = 50;
    let report = train(&mut fm, &data, &cfg, Seed(2)).unwrap();
    assert!(report.last_loss().unwrap() < 0.9 * report.first_loss().unwrap(), "{:?}", report.records);
}

#[test]
fn divergence_reports_step() {
    let data = gen_dataset(DatasetName::Gauss8, 256, Seed(0)).unwrap();
    let mut model = Model::<f32>::new(config(HeadArch::Mlp, Parameterization::Difference, 1, 0), Seed(2)).unwrap();
    let mut cfg = TrainConfig::new(TrainMode::Dtm, 50, 16, 1e30);
    cfg.lr_decay = false;
    match train(&mut model, &data, &cfg, Seed(2)) {
        Err(Error::Diverged { step, .. }) => assert!(step > 0 && step < 50),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn fm_loss_requires_fm_model() {
    let model = Model::<f64>::new(config(HeadArch::Mlp, Parameterization::Difference, 1, 3), Seed(1)).unwrap();
    let cfg = TrainConfig::new(TrainMode::Fm, 1, 2, 1e-3);
    assert!(fm_loss(&model, &items(2, 2), &cfg, Seed(0)).is_err());
}

#[test]
fn zero_steps_leave_model_unchanged() {
    let data = gen_dataset(DatasetName::Gauss8, 16, Seed(0)).unwrap();
    let mut model = Model::<f32>::new(config(HeadArch::Mlp, Parameterization::Difference, 1, 0), Seed(2)).unwrap();
    let before = model.params().clone();
    let report = train(&mut model, &data, &TrainConfig::new(TrainMode::Dtm, 0, 8, 1e-3), Seed(0)).unwrap();
    assert!(report.records.is_empty());
    assert_eq!(model.params(), &before);
}

#[test]
fn dropout_rate() {
    let mut rng = Seed(12).stream();
    let n = 100_000;
    let dropped = (0..n).filter(|_| cfg_dropout(Some(1), 0.15, &mut rng).is_none()).count();
    assert!((dropped as f64 / n as f64 - 0.15).abs() < 0.005);
}

#[test]
fn zero_fm_network_loss_is_mean_squared_difference() {
    let mut cfg = config(HeadArch::Mlp, Parameterization::Difference, 2, 3);
    cfg.kind = ModelKind::Fm {
        target: Parameterization::Difference,
    };
    let model = Model::<f64>::new(cfg, Seed(1)).unwrap();
    let train_cfg = TrainConfig::new(TrainMode::Fm, 1, 4, 1e-3);
    let batch = items(4, 4);
    let expected = batch
        .iter()
        .map(|it| it.x0.iter().zip(&it.x1).map(|(a, b)| (b - a) * (b - a)).sum::<f64>())
        .sum::<f64>()
        / 4.0;
    let got = fm_loss(&model, &batch, &train_cfg, Seed(3)).unwrap().loss;
    assert!((got - expected).abs() < 1e-12 * expected);
    let same: Vec<TrainItem> = batch.iter().map(|it| TrainItem { x1: it.x0.clone(), ..it.clone() }).collect();
    assert_eq!(fm_loss(&model, &same, &train_cfg, Seed(3)).unwrap().loss, 0.0);
}

#[test]
fn head_batch_reduces_estimator_variance() {
    let mut model = Model::<f64>::new(config(HeadArch::Mlp, Parameterization::Difference, 1, 0), Seed(1)).unwrap();
    model.params_mut().randomize(Seed(5), 0.3);
    let batch = vec![TrainItem {
        x0: vec![0.3, -0.4],
        x1: vec![1.4, 1.4],
        cond: None,
        key: 0,
    }];
    let variance = |k_h: usize| {
        let mut cfg = TrainConfig::new(TrainMode::Dtm, 1, 1, 1e-3);
        cfg.head_batch = k_h;
        let losses: Vec<f64> = (0..1000).map(|r| tm_loss(&model, &batch, &cfg, Seed(r)).unwrap().loss).collect();
        let m = losses.iter().sum::<f64>() / 1000.0;
        losses.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / 999.0
    };
    let (v1, v4, v16) = (variance(1), variance(4), variance(16));
    assert!(v4 < v1 && v16 < v4, "{v1} {v4} {v16}");
}
