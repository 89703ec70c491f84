//! Training losses and the optimizer loop.
//!
//! The D-TM loss regresses the head velocity onto `Y_1 - Y_0` along the
//! straight path `Y_s = (1 - s) Y_0 + s Y_1`, where `Y_1` is the
//! parameterization's target for the pair `(X_0, X_1)`. The backbone runs once
//! per item and its latent is shared by `k_h` head replicates, each with its
//! own `s` and `Y_0`.
//!
//! Per-item randomness comes from `seed.derive(item.key)` and is drawn in a
//! fixed order: `t`, the condition-dropout coin, then for each replicate its
//! head time(s) followed by `Y_0`. The loss is therefore invariant to the
//! order of items in a batch.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::LabeledPoint;
use crate::nets::{Adam, HeadTime, Model, Real};
use crate::rng::{tags, RandomStream, Seed};
use crate::schedules::TimeWeighting;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Dtm,
    Fm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Head replicates per backbone evaluation, `k_h`.
    #[serde(default = "default_head_batch")]
    pub head_batch: usize,
    #[serde(default)]
    pub weighting_t: TimeWeighting,
    #[serde(default)]
    pub weighting_s: TimeWeighting,
    /// Independent head time per token (MLP heads only).
    #[serde(default)]
    pub time_per_token: bool,
    #[serde(default = "default_cond_drop")]
    pub cond_drop: f64,
    /// Linear decay of the learning rate to zero.
    #[serde(default = "yes")]
    pub lr_decay: bool,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_head_batch() -> usize {
    4
}

fn default_cond_drop() -> f64 {
    0.15
}

fn yes() -> bool {
    true
}

fn default_log_every() -> usize {
    100
}

impl TrainConfig {
    pub fn new(mode: TrainMode, steps: usize, batch: usize, lr: f64) -> Self {
        Self {
            mode,
            steps,
            batch,
            lr,
            head_batch: default_head_batch(),
            weighting_t: TimeWeighting::Uniform,
            weighting_s: TimeWeighting::Uniform,
            time_per_token: false,
            cond_drop: default_cond_drop(),
            lr_decay: true,
            log_every: default_log_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("lr", format!("must be finite and > 0, got {}", self.lr)));
        }
        if self.head_batch == 0 {
            return Err(Error::invalid("head_batch", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.cond_drop) {
            return Err(Error::invalid("cond_drop", format!("must lie in [0, 1], got {}", self.cond_drop)));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every", "must be >= 1"));
        }
        self.weighting_t.validate()?;
        self.weighting_s.validate()
    }

    fn check_model<F: Real>(&self, model: &Model<F>) -> Result<()> {
        self.validate()?;
        let is_dtm = model.parameterization().is_some();
        if (self.mode == TrainMode::Dtm) != is_dtm {
            return Err(Error::invalid(
                "mode",
                format!("{:?} training needs a {} model", self.mode, if is_dtm { "flow-matching" } else { "D-TM" }),
            ));
        }
        if self.time_per_token && !model.head().is_some_and(|h| h.supports_per_token_time()) {
            return Err(Error::invalid(
                "time_per_token",
                "requires a token-independent (MLP) head",
            ));
        }
        Ok(())
    }
}

/// One training pair. `key` selects the item's random substream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub cond: Option<usize>,
    pub key: u64,
}

#[derive(Debug, Clone)]
pub struct LossOutput<F> {
    pub loss: f64,
    pub grad: Vec<F>,
}

/// Replaces the condition by the null condition with probability `p`.
/// Always consumes exactly one uniform draw.
pub fn cfg_dropout(cond: Option<usize>, p: f64, rng: &mut RandomStream) -> Option<usize> {
    let u = rng.uniform();
    if u < p {
        None
    } else {
        cond
    }
}

fn check_items(items: &[TrainItem], dim: usize) -> Result<()> {
    if items.is_empty() {
        return Err(Error::invalid("batch", "empty batch"));
    }
    for it in items {
        if it.x0.len() != dim || it.x1.len() != dim {
            return Err(Error::shape(dim, format!("x0: {}, x1: {}", it.x0.len(), it.x1.len())));
        }
    }
    Ok(())
}

fn finite_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite { layer: "loss".into() })
    }
}

/// D-TM loss and its gradient with respect to all parameters.
pub fn tm_loss<F: Real>(model: &Model<F>, items: &[TrainItem], cfg: &TrainConfig, seed: Seed) -> Result<LossOutput<F>> {
    let p = model
        .parameterization()
        .ok_or_else(|| Error::invalid("model", "expected a D-TM model"))?;
    let (n, d) = (model.config().tokens, model.config().channels);
    let dim = n * d;
    check_items(items, dim)?;
    let (b, k) = (items.len(), cfg.head_batch);
    let reps = b * k;
    let rows = reps * n;

    let mut x_t = Array2::<F>::zeros((b, dim));
    let mut times = Vec::with_capacity(b);
    let mut conds = Vec::with_capacity(b);
    let mut y_s = Array2::<F>::zeros((rows, d));
    let mut target = Array2::<F>::zeros((rows, d));
    let mut s_shared = Vec::with_capacity(reps);
    let mut s_token = Vec::with_capacity(rows);

    for (bi, it) in items.iter().enumerate() {
        let mut rng = seed.derive(it.key).stream();
        let t = cfg.weighting_t.sample_time(&mut rng);
        times.push(t);
        conds.push(cfg_dropout(it.cond, cfg.cond_drop, &mut rng));
        for (o, (&a, &c)) in x_t.row_mut(bi).iter_mut().zip(it.x0.iter().zip(&it.x1)) {
            *o = crate::nets::real((1.0 - t) * a + t * c);
        }
        let y1: Vec<f64> = it.x0.iter().zip(&it.x1).map(|(&a, &c)| p.target(a, c)).collect();
        for i in 0..k {
            let base = (bi * k + i) * n;
            let svals: Vec<f64> = if cfg.time_per_token {
                (0..n).map(|_| cfg.weighting_s.sample_time(&mut rng)).collect()
            } else {
                vec![cfg.weighting_s.sample_time(&mut rng)]
            };
            let y0 = rng.normal_vec(dim);
            for j in 0..n {
                let s = if cfg.time_per_token { svals[j] } else { svals[0] };
                for c in 0..d {
                    let idx = j * d + c;
                    y_s[[base + j, c]] = crate::nets::real((1.0 - s) * y0[idx] + s * y1[idx]);
                    target[[base + j, c]] = crate::nets::real(y1[idx] - y0[idx]);
                }
            }
            if cfg.time_per_token {
                s_token.extend(svals);
            } else {
                s_shared.push(svals[0]);
            }
        }
    }

    let (h, bcache) = model.backbone_forward(&x_t.view(), &times, &conds)?;
    let idx: Vec<usize> = (0..rows).map(|r| (r / (k * n)) * n + r % n).collect();
    let h_rep = h.select(Axis(0), &idx);
    let time = if cfg.time_per_token {
        HeadTime::PerToken(&s_token)
    } else {
        HeadTime::Shared(&s_shared)
    };
    let (u, hcache) = model.head_forward(&y_s.view(), &h_rep.view(), time)?;

    let mut diff = u - &target;
    let loss = diff.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>() / reps as f64;
    let loss = finite_loss(loss)?;
    diff *= crate::nets::real::<F>(2.0 / reps as f64);

    let mut grad = model.params().zeros_like();
    let dh_rep = model.head_backward(&mut grad, &hcache, &diff.view())?;
    let mut dh = Array2::<F>::zeros(h.raw_dim());
    for (r, &dst) in idx.iter().enumerate() {
        let mut row = dh.row_mut(dst);
        row += &dh_rep.row(r);
    }
    model.backbone_backward(&mut grad, &bcache, &dh.view());
    Ok(LossOutput { loss, grad })
}

/// Flow-matching regression loss for the model's configured target.
pub fn fm_loss<F: Real>(model: &Model<F>, items: &[TrainItem], cfg: &TrainConfig, seed: Seed) -> Result<LossOutput<F>> {
    let target_kind = model
        .fm_target()
        .ok_or_else(|| Error::invalid("model", "expected a flow-matching model"))?;
    let dim = model.config().dim();
    check_items(items, dim)?;
    let b = items.len();
    let mut x_t = Array2::<F>::zeros((b, dim));
    let mut target = Array2::<F>::zeros((b, dim));
    let mut times = Vec::with_capacity(b);
    let mut conds = Vec::with_capacity(b);
    for (bi, it) in items.iter().enumerate() {
        let mut rng = seed.derive(it.key).stream();
        let t = cfg.weighting_t.sample_time(&mut rng);
        times.push(t);
        conds.push(cfg_dropout(it.cond, cfg.cond_drop, &mut rng));
        for (c, (&a, &x1)) in it.x0.iter().zip(&it.x1).enumerate() {
            x_t[[bi, c]] = crate::nets::real((1.0 - t) * a + t * x1);
            target[[bi, c]] = crate::nets::real(target_kind.target(a, x1));
        }
    }
    let (pred, cache) = model.fm_forward(&x_t.view(), &times, &conds)?;
    let mut diff = pred - &target;
    let loss = finite_loss(diff.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>() / b as f64)?;
    diff *= crate::nets::real::<F>(2.0 / b as f64);
    let mut grad = model.params().zeros_like();
    model.fm_backward(&mut grad, &cache, &diff.view())?;
    Ok(LossOutput { loss, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    /// Mean minibatch loss since the previous record. The first record is
    /// the loss of the untrained model on the first minibatch.
    pub loss: f64,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<LossRecord>,
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

pub fn write_loss_csv(records: &[LossRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "step,loss,wallclock_ms")?;
    for r in records {
        writeln!(w, "{},{},{:.3}", r.step, r.loss, r.wallclock_ms)?;
    }
    Ok(())
}

/// The minibatch drawn at `step`: data indices, fresh `X_0` and item keys.
pub fn draw_batch(data: &[LabeledPoint], batch: usize, conditional: bool, step_seed: Seed) -> Vec<TrainItem> {
    let mut pick = step_seed.derive(0).stream();
    (0..batch)
        .map(|b| {
            let point = &data[pick.below(data.len())];
            let x1 = point.x.values().to_vec();
            let x0 = step_seed.derive(1).derive(b as u64).stream().normal_vec(x1.len());
            TrainItem {
                x0,
                x1,
                cond: conditional.then_some(point.class),
                key: b as u64,
            }
        })
        .collect()
}

/// Adam training. Deterministic for a fixed seed; aborts with
/// [`Error::Diverged`] on a non-finite loss.
pub fn train<F: Real>(model: &mut Model<F>, data: &[LabeledPoint], cfg: &TrainConfig, seed: Seed) -> Result<TrainReport> {
    cfg.check_model(model)?;
    if data.is_empty() {
        return Err(Error::invalid("data", "empty dataset"));
    }
    let dim = model.config().dim();
    if let Some(bad) = data.iter().find(|p| p.x.dim() != dim) {
        return Err(Error::shape(dim, bad.x.dim()));
    }
    let classes = model.config().backbone.cond_classes;
    if let Some(bad) = data.iter().find(|p| classes > 0 && p.class >= classes) {
        return Err(Error::UnknownClass { id: bad.class, classes });
    }
    let conditional = classes > 0;
    let mut adam = Adam::<F>::new(model.params().len());
    let start = Instant::now();
    let mut records = Vec::new();
    let (mut window, mut count) = (0.0, 0usize);
    for step in 0..cfg.steps {
        let step_seed = seed.derive(tags::TRAIN).derive(step as u64);
        let items = draw_batch(data, cfg.batch, conditional, step_seed);
        let out = match cfg.mode {
            TrainMode::Dtm => tm_loss(model, &items, cfg, step_seed.derive(2)),
            TrainMode::Fm => fm_loss(model, &items, cfg, step_seed.derive(2)),
        };
        let out = match out {
            Ok(o) => o,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if out.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss: out.loss });
        }
        let lr = if cfg.lr_decay {
            cfg.lr * (1.0 - step as f64 / cfg.steps as f64)
        } else {
            cfg.lr
        };
        adam.step(&mut model.params_mut().values, &out.grad, lr);
        window += out.loss;
        count += 1;
        if step == 0 || (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            records.push(LossRecord {
                step: step + 1,
                loss: window / count as f64,
                wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            window = 0.0;
            count = 0;
        }
    }
    Ok(TrainReport { records })
}
