use ndarray::{Array2, Axis};
use tmlab_core::nets::checkpoint::Checkpoint;
use tmlab_core::nets::gradcheck::check_gradient;
use tmlab_core::nets::{BackboneConfig, HeadArch, HeadConfig, HeadTime, Model, ModelConfig, ModelKind};
use tmlab_core::training::{fm_loss, tm_loss, TrainConfig, TrainItem, TrainMode};
use tmlab_core::{Error, Parameterization, Seed};

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn head(arch: HeadArch, seq_scale: usize, scale_maps: Option<bool>) -> HeadConfig {
    HeadConfig {
        arch,
        d_h: 5,
        layers: 2,
        seq_scale,
        scale_maps,
    }
}

fn dtm_config(head: HeadConfig, tokens: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        tokens,
        channels: 2,
        backbone: BackboneConfig {
            d_in: 2,
            d_b: 6,
            layers: 2,
            cond_classes: classes,
        },
        kind: ModelKind::Dtm {
            parameterization: Parameterization::Difference,
            head,
        },
    }
}

fn items(dim: usize, count: usize, classes: usize, seed: Seed) -> Vec<TrainItem> {
    (0..count)
        .map(|i| {
            let mut rng = seed.derive(i as u64).stream();
            TrainItem {
                x0: rng.normal_vec(dim),
                x1: rng.normal_vec(dim),
                cond: (classes > 0).then(|| i % classes),
                key: i as u64 * 7 + 1,
            }
        })
        .collect()
}

fn random_model(config: ModelConfig, seed: Seed) -> Model<f64> {
    let mut model = Model::<f64>::new(config, seed).unwrap();
    // Zero-initialized outputs would make most gradients vanish.
    model.params_mut().randomize(seed.derive(99), 0.4);
    model
}

fn grad_check(config: ModelConfig, tpt: bool, seed: Seed) -> f64 {
    let mode = match config.kind {
        ModelKind::Dtm { .. } => TrainMode::Dtm,
        ModelKind::Fm { .. } => TrainMode::Fm,
    };
    let mut cfg = TrainConfig::new(mode, 1, 3, 1e-3);
    cfg.head_batch = 2;
    cfg.cond_drop = 0.3;
    cfg.time_per_token = tpt;
    let classes = config.backbone.cond_classes;
    let model = random_model(config.clone(), seed);
    let batch = items(config.dim(), 3, classes, seed.derive(1));
    let loss_seed = seed.derive(2);
    let eval = |m: &Model<f64>| match mode {
        TrainMode::Dtm => tm_loss(m, &batch, &cfg, loss_seed),
        TrainMode::Fm => fm_loss(m, &batch, &cfg, loss_seed),
    };
    let analytic = eval(&model).unwrap().grad;
    let mut probe = model.clone();
    let report = check_gradient(model.params(), &analytic, STEP, |values| {
        probe.params_mut().values.copy_from_slice(values);
        Ok(eval(&probe)?.loss)
    })
    .unwrap();
    assert_eq!(report.checked, model.params().len());
    assert!(report.passes(TOL), "{config:?}: {report:?}");
    report.max_rel_error
}

fn seeds() -> [Seed; 3] {
    [Seed(11), Seed(12), Seed(13)]
}

#[test]
fn gradients_backbone_and_fm_readout() {
    for seed in seeds() {
        let mut config = dtm_config(head(HeadArch::Mlp, 1, None), 3, 4);
        config.kind = ModelKind::Fm {
            target: Parameterization::Denoiser,
        };
        grad_check(config, false, seed);
    }
}

#[test]
fn gradients_mlp_head() {
    for seed in seeds() {
        grad_check(dtm_config(head(HeadArch::Mlp, 1, None), 3, 4), false, seed);
        grad_check(dtm_config(head(HeadArch::Mlp, 1, None), 3, 0), true, seed);
    }
}

#[test]
fn gradients_transformer_head() {
    for seed in seeds() {
        grad_check(dtm_config(head(HeadArch::TransformerLite, 1, None), 3, 4), false, seed);
    }
}

#[test]
fn gradients_scaling_maps() {
    for seed in seeds() {
        for arch in [HeadArch::Mlp, HeadArch::TransformerLite] {
            grad_check(dtm_config(head(arch, 1, Some(true)), 2, 3), false, seed);
            grad_check(dtm_config(head(arch, 4, None), 2, 3), false, seed);
        }
    }
}

fn head_output(model: &Model<f64>, y: &Array2<f64>, h: &Array2<f64>, s: &[f64]) -> Array2<f64> {
    model.head_forward(&y.view(), &h.view(), HeadTime::Shared(s)).unwrap().0
}

fn random_rows(rows: usize, cols: usize, seed: Seed) -> Array2<f64> {
    let mut rng = seed.stream();
    Array2::from_shape_fn((rows, cols), |_| rng.normal())
}

#[test]
fn heads_are_token_permutation_equivariant() {
    let perm = [2usize, 0, 3, 1];
    for cfg in [
        head(HeadArch::Mlp, 1, None),
        head(HeadArch::TransformerLite, 1, None),
        head(HeadArch::TransformerLite, 4, None),
    ] {
        let model = random_model(dtm_config(cfg, 4, 0), Seed(3));
        let y = random_rows(4, 2, Seed(4));
        let h = random_rows(4, 6, Seed(5));
        let out = head_output(&model, &y, &h, &[0.3]);
        let out_p = head_output(&model, &y.select(Axis(0), &perm), &h.select(Axis(0), &perm), &[0.3]);
        let diff = (&out.select(Axis(0), &perm) - &out_p).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-12, "{diff}");
    }
}

#[test]
fn fresh_heads_output_zero() {
    for arch in [HeadArch::Mlp, HeadArch::TransformerLite] {
        let model = Model::<f64>::new(dtm_config(head(arch, 4, None), 3, 0), Seed(1)).unwrap();
        let out = head_output(&model, &random_rows(6, 2, Seed(2)), &random_rows(6, 6, Seed(3)), &[0.1, 0.9]);
        assert!(out.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn identity_scaling_maps_match_plain_head() {
    for arch in [HeadArch::Mlp, HeadArch::TransformerLite] {
        let plain = random_model(dtm_config(head(arch, 1, None), 3, 0), Seed(8));
        let mut wrapped = Model::<f64>::new(dtm_config(head(arch, 1, Some(true)), 3, 0), Seed(9)).unwrap();
        for spec in plain.params().layout() {
            let (a, len) = plain.params().find(&spec.name).unwrap();
            let (b, _) = wrapped.params().find(&spec.name).unwrap();
            let src = plain.params().values[a..a + len].to_vec();
            wrapped.params_mut().values[b..b + len].copy_from_slice(&src);
        }
        let y = random_rows(6, 2, Seed(1));
        let h = random_rows(6, 6, Seed(2));
        let a = head_output(&plain, &y, &h, &[0.2, 0.7]);
        let b = head_output(&wrapped, &y, &h, &[0.2, 0.7]);
        let diff = (&a - &b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-12, "{arch:?}: {diff}");
    }
}

#[test]
fn scaling_maps_add_expected_parameters() {
    let (d, d_b) = (2, 6);
    for l in [1usize, 4, 9] {
        let plain = Model::<f32>::new(dtm_config(head(HeadArch::Mlp, l, Some(false)), 2, 0), Seed(0)).unwrap();
        let scaled = Model::<f32>::new(dtm_config(head(HeadArch::Mlp, l, Some(true)), 2, 0), Seed(0)).unwrap();
        assert_eq!(scaled.params().len() - plain.params().len(), 2 * l * d * d + l * d_b * d_b);
    }
}

#[test]
fn seq_scale_must_be_square() {
    assert!(Model::<f32>::new(dtm_config(head(HeadArch::Mlp, 3, None), 2, 0), Seed(0)).is_err());
}

#[test]
fn single_token_transformer() {
    let model = random_model(dtm_config(head(HeadArch::TransformerLite, 1, None), 1, 0), Seed(2));
    let out = head_output(&model, &random_rows(3, 2, Seed(1)), &random_rows(3, 6, Seed(2)), &[0.1, 0.5, 0.9]);
    assert_eq!(out.dim(), (3, 2));
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn per_token_time_rejected_for_transformer() {
    let model = random_model(dtm_config(head(HeadArch::TransformerLite, 1, None), 2, 0), Seed(2));
    let y = random_rows(2, 2, Seed(1));
    let h = random_rows(2, 6, Seed(2));
    let err = model.head_forward(&y.view(), &h.view(), HeadTime::PerToken(&[0.1, 0.2])).err();
    assert!(matches!(err, Some(Error::InvalidArgument { name: "s", .. })));
}

#[test]
fn unknown_class_rejected() {
    let model = random_model(dtm_config(head(HeadArch::Mlp, 1, None), 2, 3), Seed(2));
    let x = random_rows(1, 4, Seed(1));
    let err = model.backbone_forward(&x.view(), &[0.5], &[Some(3)]).err();
    assert!(matches!(err, Some(Error::UnknownClass { id: 3, classes: 3 })));
}

#[test]
fn init_is_seeded() {
    let cfg = dtm_config(head(HeadArch::TransformerLite, 4, None), 2, 3);
    let a = Model::<f32>::new(cfg.clone(), Seed(5)).unwrap();
    let b = Model::<f32>::new(cfg.clone(), Seed(5)).unwrap();
    let c = Model::<f32>::new(cfg, Seed(6)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn checkpoint_roundtrip_is_byte_exact() {
    let cfg = dtm_config(head(HeadArch::Mlp, 4, None), 2, 3);
    let mut model = Model::<f32>::new(cfg, Seed(5)).unwrap();
    model.params_mut().randomize(Seed(1), 0.5);
    let ckpt = Checkpoint::from_model(&model, Seed(5), 42);
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), bytes);
    let restored: Model<f32> = back.into_model().unwrap();
    assert_eq!(restored.params(), model.params());

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
}
