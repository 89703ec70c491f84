//! Self-contained verification suites.
//!
//! Each check compares an implementation against an independent reference
//! (algebraic identity, closed-form oracle, or a statistical bound) and
//! reports a margin: the tolerance minus the observed error, so a check
//! passes when its margin is non-negative. The `tmlab check` command and
//! the acceptance test target both run these.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{rank_aggregate, MetricSpec, MetricTable};
use crate::nets::gradcheck::check_gradient;
use crate::nets::{BackboneConfig, HeadArch, HeadConfig, Model, ModelConfig, ModelKind};
use crate::oracle::{mc_moment_check, GaussianMixtureTarget, OracleHead, OracleVelocity};
use crate::process::{advance_state, interpolate, target_y, Parameterization, SINGULARITY_MARGIN};
use crate::rng::Seed;
use crate::samplers::{
    dtm_sample, fm_stochastic_sample, renoise_in_place, stochastic_dtm_sample, stochastic_dtm_sample_with,
    NeuralTransition, OdeSolver, RenoiseFn, SamplerMode, SamplerSpec,
};
use crate::schedules::TimeWeighting;
use crate::state::StatePoint;
use crate::stats::ks_one_sample;
use crate::training::{fm_loss, tm_loss, TrainConfig, TrainItem, TrainMode};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `error <= tol`.
    pub fn within(name: impl Into<String>, error: f64, tol: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: error <= tol,
            margin: tol - error,
            detail: detail.into(),
        }
    }

    fn failed(name: impl Into<String>, err: &Error) -> Self {
        Self {
            name: name.into(),
            passed: false,
            margin: f64::NEG_INFINITY,
            detail: format!("error: {err}"),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: margin {:+.3e} ({})", self.name, self.margin, self.detail)
    }
}

fn guard(name: &str, r: Result<CheckResult>) -> CheckResult {
    r.unwrap_or_else(|e| CheckResult::failed(name, &e))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Every parameterization's update from `(t, x_t)` lands on the straight
/// line at `t2`. The error is relative to the size of the endpoints.
pub fn parameterization_equivalence(tuples: usize, seed: Seed) -> CheckResult {
    const TOL: f64 = 1e-12;
    let run = || -> Result<CheckResult> {
        let mut rng = seed.stream();
        let mut worst = 0.0f64;
        let mut worst_at = (0.0, 0.0, Parameterization::Difference);
        for _ in 0..tuples {
            let x0 = StatePoint::new(rng.normal_vec(4), 2, 2)?;
            let x1 = StatePoint::new(rng.normal_vec(4), 2, 2)?;
            let (a, b) = (rng.uniform(), rng.uniform());
            let (t, t2) = if a < b { (a, b) } else { (b, a) };
            if t == t2 || t < SINGULARITY_MARGIN || t > 1.0 - SINGULARITY_MARGIN {
                continue;
            }
            let x_t = interpolate(&x0, &x1, t)?;
            let expect = interpolate(&x0, &x1, t2)?;
            let scale = inf_norm(x0.values()).max(inf_norm(x1.values()));
            for p in Parameterization::ALL {
                let got = advance_state(&x_t, t, t2, &target_y(&x0, &x1, p)?, p)?;
                let diff: Vec<f64> = got.values().iter().zip(expect.values()).map(|(a, b)| a - b).collect();
                let err = inf_norm(&diff) / scale;
                if err > worst {
                    worst = err;
                    worst_at = (t, t2, p);
                }
            }
        }
        Ok(CheckResult::within(
            "parameterization equivalence",
            worst,
            TOL,
            format!(
                "{tuples} tuples, max rel err {worst:.2e} at t={:.4} t'={:.4} ({})",
                worst_at.0, worst_at.1, worst_at.2
            ),
        ))
    };
    guard("parameterization equivalence", run())
}

/// Re-noising `X_{t''} ~ q_{t''}(. | x1)` back to `t'` must give
/// `N(t' x1, (1-t')^2 I)`. Mean within `4 (1-t') / sqrt(N)`, variance
/// within 1.5%.
pub fn renoise_marginals(kernel: RenoiseFn, n: usize, seed: Seed) -> Vec<CheckResult> {
    let x1 = [1.5, -0.7];
    [(0.3, 0.6), (0.3, 1.0), (0.7, 0.9)]
        .iter()
        .enumerate()
        .flat_map(|(cell, &(t2, t3))| {
            let name = format!("renoise t'={t2} t''={t3}");
            let run = || -> Result<Vec<CheckResult>> {
                let mut rng = seed.derive(cell as u64).stream();
                let mut sum = [0.0; 2];
                let mut sq = [0.0; 2];
                let mut x = [0.0; 2];
                for _ in 0..n {
                    for k in 0..2 {
                        x[k] = t3 * x1[k] + (1.0 - t3) * rng.normal();
                    }
                    kernel(&mut x, t2, t3, &mut rng)?;
                    for k in 0..2 {
                        sum[k] += x[k];
                        sq[k] += x[k] * x[k];
                    }
                }
                let nf = n as f64;
                let sd = 1.0 - t2;
                let mut mean_err = 0.0f64;
                let mut var_err = 0.0f64;
                for k in 0..2 {
                    let m = sum[k] / nf;
                    let v = sq[k] / nf - m * m;
                    mean_err = mean_err.max((m - t2 * x1[k]).abs());
                    var_err = var_err.max((v / (sd * sd) - 1.0).abs());
                }
                let mean_tol = 4.0 * sd / nf.sqrt();
                Ok(vec![
                    CheckResult::within(
                        format!("{name} mean"),
                        mean_err,
                        mean_tol,
                        format!("max |err| {mean_err:.2e}, bound {mean_tol:.2e}, N={n}"),
                    ),
                    CheckResult::within(
                        format!("{name} variance"),
                        var_err,
                        0.015,
                        format!("max rel err {var_err:.2e}, bound 1.5e-2, N={n}"),
                    ),
                ])
            };
            run().unwrap_or_else(|e| vec![CheckResult::failed(name.clone(), &e)])
        })
        .collect()
}

fn small_dtm_config(arch: HeadArch, tokens: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        tokens,
        channels: 2,
        backbone: BackboneConfig {
            d_in: 2,
            d_b: 8,
            layers: 2,
            cond_classes: classes,
        },
        kind: ModelKind::Dtm {
            parameterization: Parameterization::Difference,
            head: HeadConfig {
                arch,
                d_h: 8,
                layers: 2,
                seq_scale: 1,
                scale_maps: None,
            },
        },
    }
}

/// A small network with non-trivial outputs: fresh heads are zero-initialized.
fn random_model(config: ModelConfig, seed: Seed) -> Result<Model<f32>> {
    let mut model = Model::<f32>::new(config, seed)?;
    model.params_mut().randomize(seed.derive(1), 0.3);
    Ok(model)
}

fn bit_equal(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// With `c = 0` the stochastic sampler must reproduce the linear sampler
/// bit for bit, for any frequency.
pub fn zero_scale_degeneracy(seed: Seed) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for steps in [1usize, 8, 32] {
        let name = format!("c=0 bit identity T={steps}");
        let run = || -> Result<CheckResult> {
            let model = random_model(small_dtm_config(HeadArch::TransformerLite, 3, 0), seed)?;
            let neural = NeuralTransition::new(&model)?;
            let oracle = OracleHead {
                target: GaussianMixtureTarget::gauss8(),
                parameterization: Parameterization::Noise,
            };
            let linear = SamplerSpec::new(SamplerMode::DtmLinear, steps, 3);
            let mut cases = 0;
            let mut mismatches = 0;
            for tau in [1, (steps / 2).max(1), steps] {
                let stoch = SamplerSpec {
                    mode: SamplerMode::DtmStochastic,
                    ..linear.clone()
                }
                .with_stochastic(0.0, tau);
                let s = seed.derive(tau as u64);
                let a = dtm_sample(&neural, &linear, 32, &[], s)?.samples;
                let b = stochastic_dtm_sample(&neural, &stoch, 32, &[], s)?.samples;
                let c = dtm_sample(&oracle, &linear, 256, &[], s)?.samples;
                let d = stochastic_dtm_sample(&oracle, &stoch, 256, &[], s)?.samples;
                cases += 2;
                mismatches += usize::from(!bit_equal(&a, &b)) + usize::from(!bit_equal(&c, &d));
            }
            Ok(CheckResult::within(
                name.clone(),
                mismatches as f64,
                0.0,
                format!("{mismatches} of {cases} sampler pairs differ (neural and oracle heads)"),
            ))
        };
        out.push(guard(&name, run()));
    }
    out
}

fn grad_items(dim: usize, count: usize, classes: usize, seed: Seed) -> Vec<TrainItem> {
    (0..count)
        .map(|i| {
            let mut rng = seed.derive(i as u64).stream();
            TrainItem {
                x0: rng.normal_vec(dim),
                x1: rng.normal_vec(dim),
                cond: (classes > 0).then(|| i % classes),
                key: i as u64,
            }
        })
        .collect()
}

/// Max relative error of the analytic loss gradient against central
/// differences (`h = 1e-5`, f64) for one network and seed.
pub fn gradient_error(config: &ModelConfig, time_per_token: bool, seed: Seed) -> Result<f64> {
    let mode = match config.kind {
        ModelKind::Dtm { .. } => TrainMode::Dtm,
        ModelKind::Fm { .. } => TrainMode::Fm,
    };
    let mut cfg = TrainConfig::new(mode, 1, 3, 1e-3);
    cfg.head_batch = 2;
    cfg.cond_drop = 0.3;
    cfg.time_per_token = time_per_token;
    let mut model = Model::<f64>::new(config.clone(), seed)?;
    model.params_mut().randomize(seed.derive(99), 0.4);
    let batch = grad_items(config.dim(), 3, config.backbone.cond_classes, seed.derive(1));
    let loss_seed = seed.derive(2);
    let eval = |m: &Model<f64>| match mode {
        TrainMode::Dtm => tm_loss(m, &batch, &cfg, loss_seed),
        TrainMode::Fm => fm_loss(m, &batch, &cfg, loss_seed),
    };
    let analytic = eval(&model)?.grad;
    let mut probe = model.clone();
    let report = check_gradient(model.params(), &analytic, 1e-5, |values| {
        probe.params_mut().values.copy_from_slice(values);
        Ok(eval(&probe)?.loss)
    })?;
    Ok(report.max_rel_error)
}

/// The networks covered by the gradient suite: name, config, time-per-token.
pub fn gradient_networks() -> Vec<(String, ModelConfig, bool)> {
    let with_head = |arch, tokens, classes, l: usize, maps: Option<bool>| {
        let mut c = small_dtm_config(arch, tokens, classes);
        c.backbone.d_b = 6;
        if let ModelKind::Dtm { head, .. } = &mut c.kind {
            head.d_h = 5;
            head.seq_scale = l;
            head.scale_maps = maps;
        }
        c
    };
    let mut backbone = with_head(HeadArch::Mlp, 3, 4, 1, None);
    backbone.kind = ModelKind::Fm {
        target: Parameterization::Denoiser,
    };
    let mut nets = vec![
        ("backbone".to_string(), backbone, false),
        ("mlp head".into(), with_head(HeadArch::Mlp, 3, 4, 1, None), false),
        ("mlp head, time per token".into(), with_head(HeadArch::Mlp, 3, 0, 1, None), true),
        ("transformer-lite head".into(), with_head(HeadArch::TransformerLite, 3, 4, 1, None), false),
    ];
    for (label, arch) in [("mlp", HeadArch::Mlp), ("transformer-lite", HeadArch::TransformerLite)] {
        nets.push((format!("scaling maps l=1 ({label})"), with_head(arch, 2, 3, 1, Some(true)), false));
        nets.push((format!("scaling maps l=4 ({label})"), with_head(arch, 2, 3, 4, None), false));
    }
    nets
}

pub fn gradient_checks(seeds: &[Seed]) -> Vec<CheckResult> {
    const TOL: f64 = 1e-4;
    gradient_networks()
        .into_iter()
        .map(|(name, config, tpt)| {
            let name = format!("gradient {name}");
            let run = || -> Result<CheckResult> {
                let mut worst = 0.0f64;
                for &s in seeds {
                    worst = worst.max(gradient_error(&config, tpt, s)?);
                }
                Ok(CheckResult::within(
                    name.clone(),
                    worst,
                    TOL,
                    format!("max rel err {worst:.2e} over {} seeds", seeds.len()),
                ))
            };
            guard(&name, run())
        })
        .collect()
}

fn moment_result(name: String, report: Result<crate::oracle::MomentReport>) -> CheckResult {
    match report {
        Ok(r) => CheckResult {
            passed: r.passed(),
            margin: r.min_margin(),
            detail: format!("N={}, z={}, mean {:?}, var {:?}", r.n, r.z, round4(&r.mean), round4(&r.variance)),
            name,
        },
        Err(e) => CheckResult::failed(name, &e),
    }
}

fn round4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

/// Linear and stochastic D-TM sampling with the exact posterior head on
/// gauss8: terminal samples must match the target's mean and variance.
pub fn oracle_end_to_end(n: usize, seed: Seed) -> Vec<CheckResult> {
    let target = GaussianMixtureTarget::gauss8();
    let (mean, var) = (target.mean(), target.variance());
    let mut out = Vec::new();
    let mut cell = 0u64;
    for steps in [1usize, 4, 32] {
        for p in Parameterization::ALL {
            let head = OracleHead {
                target: target.clone(),
                parameterization: p,
            };
            let linear = SamplerSpec::new(SamplerMode::DtmLinear, steps, 1);
            cell += 1;
            let s = seed.derive(cell);
            out.push(moment_result(
                format!("oracle linear T={steps} {p}"),
                mc_moment_check(|n| Ok(dtm_sample(&head, &linear, n, &[], s)?.samples), &mean, &var, n, 4.0),
            ));
            for c in [0.0, 0.2, 0.8] {
                for tau in [1, steps] {
                    let spec = SamplerSpec::new(SamplerMode::DtmStochastic, steps, 1).with_stochastic(c, tau);
                    cell += 1;
                    let s = seed.derive(cell);
                    out.push(moment_result(
                        format!("oracle stochastic T={steps} {p} c={c} tau={tau}"),
                        mc_moment_check(
                            |n| Ok(stochastic_dtm_sample(&head, &spec, n, &[], s)?.samples),
                            &mean,
                            &var,
                            n,
                            4.0,
                        ),
                    ));
                }
            }
        }
    }
    out
}

/// Stochastic D-TM sampling through a swappable re-noising kernel.
pub fn stochastic_oracle_moments(kernel: RenoiseFn, n: usize, seed: Seed) -> Vec<CheckResult> {
    let target = GaussianMixtureTarget::gauss8();
    let head = OracleHead {
        target: target.clone(),
        parameterization: Parameterization::Difference,
    };
    let mut out = Vec::new();
    for (cell, (c, tau)) in [(0.2, 1usize), (0.8, 1), (0.2, 4), (0.8, 4), (1.0, 4)].into_iter().enumerate() {
        let spec = SamplerSpec::new(SamplerMode::DtmStochastic, 4, 1).with_stochastic(c, tau);
        let s = seed.derive(cell as u64);
        out.push(moment_result(
            format!("stochastic oracle sampler T=4 c={c} tau={tau}"),
            mc_moment_check(
                |n| Ok(stochastic_dtm_sample_with(&head, &spec, n, &[], s, kernel)?.samples),
                &target.mean(),
                &target.variance(),
                n,
                4.0,
            ),
        ));
    }
    out
}

/// Stochastic flow-matching sampling (midpoint segments) with the exact
/// velocity of a single Gaussian keeps the terminal mean within
/// `4 sigma / sqrt(N)` and the variance within 1.5%.
pub fn stochastic_fm(n: usize, steps: usize, seed: Seed) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let run = |c: f64, tau: usize, s: Seed| -> Result<Vec<CheckResult>> {
        let sigma = 0.5;
        let target = GaussianMixtureTarget::single(StatePoint::new(vec![1.0, -0.5], 1, 2)?, sigma)?;
        let field = OracleVelocity { target: target.clone() };
        let mut spec = SamplerSpec::new(SamplerMode::FmStochastic, steps, 1).with_stochastic(c, tau);
        // Euler's own O(1/T) variance error would swamp the re-noising check.
        spec.fm_solver = OdeSolver::Midpoint;
        let samples = fm_stochastic_sample(&field, &spec, n, &[], s)?.samples;
        let nf = n as f64;
        let mut mean_err = 0.0f64;
        let mut var_err = 0.0f64;
        for (k, col) in samples.columns().into_iter().enumerate() {
            let m = col.sum() / nf;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / nf;
            mean_err = mean_err.max((m - target.means()[0][k]).abs());
            var_err = var_err.max((v / (sigma * sigma) - 1.0).abs());
        }
        let name = format!("stochastic fm T={steps} c={c} tau={tau}");
        let mean_tol = 4.0 * sigma / nf.sqrt();
        Ok(vec![
            CheckResult::within(
                format!("{name} mean"),
                mean_err,
                mean_tol,
                format!("max |err| {mean_err:.2e}, bound {mean_tol:.2e}, N={n}"),
            ),
            CheckResult::within(
                format!("{name} variance"),
                var_err,
                0.015,
                format!("max rel err {var_err:.2e}, bound 1.5e-2, N={n}"),
            ),
        ])
    };
    for (cell, (c, tau)) in [(0.2, 1usize), (0.8, 1), (0.2, steps), (0.8, steps)].into_iter().enumerate() {
        match run(c, tau, seed.derive(cell as u64)) {
            Ok(r) => out.extend(r),
            Err(e) => out.push(CheckResult::failed(format!("stochastic fm c={c} tau={tau}"), &e)),
        }
    }
    out
}

pub fn weighting_cases() -> Vec<TimeWeighting> {
    vec![
        TimeWeighting::Uniform,
        TimeWeighting::LogitNormal { mu: 0.0, sigma: 1.0 },
        TimeWeighting::LogitNormal { mu: -0.5, sigma: 1.0 },
        TimeWeighting::Beta { alpha: 0.1, beta: 1.3 },
        TimeWeighting::Beta { alpha: 0.5, beta: 2.0 },
        TimeWeighting::Beta { alpha: 1.1, beta: 2.4 },
    ]
}

/// KS test of `n` draws from each weighting against its CDF at level 0.001.
pub fn time_weightings(n: usize, seed: Seed) -> Vec<CheckResult> {
    weighting_cases()
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rng = seed.derive(i as u64).stream();
            let xs: Vec<f64> = (0..n).map(|_| w.sample_time(&mut rng)).collect();
            let ks = ks_one_sample(&xs, |t| w.cdf(t));
            CheckResult {
                name: format!("time weighting {}", w.label()),
                passed: ks.p_value > 0.001,
                margin: ks.p_value - 0.001,
                detail: format!("n={n}, D={:.2e}, p={:.3}", ks.statistic, ks.p_value),
            }
        })
        .collect()
}

/// A 3 x 4 table with mixed orientations and a tie, checked against ranks
/// worked out by hand, then against monotone rescalings of every column.
pub fn rank_aggregation() -> Vec<CheckResult> {
    let run = || -> Result<Vec<CheckResult>> {
        let metrics = vec![
            MetricSpec::new("a", true),
            MetricSpec::new("b", false),
            MetricSpec::new("c", true),
            MetricSpec::new("d", false),
        ];
        let scores = ndarray::array![[0.9, 10.0, 0.1, 5.0], [0.5, 30.0, 0.3, 5.0], [0.7, 20.0, 0.2, 1.0]];
        let models = vec!["m0".to_string(), "m1".into(), "m2".into()];
        let table = MetricTable::new(models.clone(), metrics.clone(), scores.clone())?;
        // rank sums 3+3+1+1.5, 1+1+3+1.5, 2+2+2+3 over 4 metrics and 3 models
        let expected = [17.0 / 24.0, 13.0 / 24.0, 3.0 / 4.0];
        let got = rank_aggregate(&table);
        let hand_ok = got.iter().zip(&expected).all(|(a, b)| a == b);
        let transforms: [fn(f64) -> f64; 4] = [f64::exp, |x| 3.0 * x + 7.0, |x| x * x * x, |x| x.atan()];
        let mut changed = 0;
        for (k, f) in transforms.iter().enumerate() {
            let mut rescaled = scores.clone();
            rescaled.column_mut(k).mapv_inplace(f);
            let mut all = scores.clone();
            all.mapv_inplace(f);
            for s in [rescaled, all] {
                let t = MetricTable::new(models.clone(), metrics.clone(), s)?;
                changed += usize::from(rank_aggregate(&t) != got);
            }
        }
        Ok(vec![
            CheckResult::within(
                "rank aggregation hand table",
                f64::from(u8::from(!hand_ok)),
                0.0,
                format!("got {got:?}, expected {expected:?}"),
            ),
            CheckResult::within(
                "rank aggregation monotone invariance",
                changed as f64,
                0.0,
                format!("{changed} of 8 rescaled tables changed the scores"),
            ),
        ])
    };
    run().unwrap_or_else(|e| vec![CheckResult::failed("rank aggregation", &e)])
}

/// Backbone and head call counts equal `T` and `T * S` for linear and
/// stochastic sampling, with and without guidance.
pub fn nfe_accounting(seed: Seed) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (steps, head_steps) in [(1usize, 1usize), (8, 4), (32, 2)] {
        let name = format!("nfe T={steps} S={head_steps}");
        let run = || -> Result<CheckResult> {
            let model = random_model(small_dtm_config(HeadArch::Mlp, 2, 4), seed)?;
            let net = NeuralTransition::new(&model)?;
            let linear = SamplerSpec::new(SamplerMode::DtmLinear, steps, head_steps);
            let stoch = SamplerSpec {
                mode: SamplerMode::DtmStochastic,
                ..linear.clone()
            }
            .with_stochastic(0.5, steps);
            let mut bad = Vec::new();
            for (label, spec) in [("linear", &linear), ("stochastic", &stoch)] {
                for cond in [vec![], vec![Some(1); 8]] {
                    model.counters().reset();
                    crate::samplers::sample_dtm(&net, spec, 8, &cond, seed)?;
                    let (b, h) = (model.counters().backbone(), model.counters().head());
                    if b != steps as u64 || h != (steps * head_steps) as u64 {
                        bad.push(format!("{label} guided={}: {b}/{h}", !cond.is_empty()));
                    }
                }
            }
            Ok(CheckResult::within(
                name.clone(),
                bad.len() as f64,
                0.0,
                if bad.is_empty() {
                    format!("backbone {steps}, head {} in all 4 runs", steps * head_steps)
                } else {
                    bad.join("; ")
                },
            ))
        };
        out.push(guard(&name, run()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Process,
    Gradients,
    Marginals,
    OracleEnd2end,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Process, Suite::Gradients, Suite::Marginals, Suite::OracleEnd2end];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Process => "process",
            Suite::Gradients => "gradients",
            Suite::Marginals => "marginals",
            Suite::OracleEnd2end => "oracle_end2end",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid("suite", format!("unknown suite `{s}`")))
    }
}

/// Runs one suite. `kernel` replaces the re-noising step in the marginal
/// checks, which is how a broken kernel can be shown to be caught.
pub fn run_suite(suite: Suite, seed: Seed, kernel: Option<RenoiseFn>) -> Vec<CheckResult> {
    let seed = seed.derive(suite as u64);
    match suite {
        Suite::Process => {
            let mut out = vec![parameterization_equivalence(1000, seed.derive(0))];
            out.extend(zero_scale_degeneracy(seed.derive(1)));
            out.extend(time_weightings(100_000, seed.derive(2)));
            out.extend(rank_aggregation());
            out.extend(nfe_accounting(seed.derive(3)));
            out
        }
        Suite::Gradients => gradient_checks(&[Seed(11), Seed(12), Seed(13)]),
        Suite::Marginals => {
            let kernel = kernel.unwrap_or(renoise_in_place);
            let mut out = renoise_marginals(kernel, 200_000, seed.derive(0));
            out.extend(stochastic_oracle_moments(kernel, 100_000, seed.derive(1)));
            out.extend(stochastic_fm(200_000, 16, seed.derive(2)));
            out
        }
        Suite::OracleEnd2end => oracle_end_to_end(100_000, seed),
    }
}
