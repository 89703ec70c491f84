//! Closed-form posteriors for isotropic Gaussian-mixture targets.
//!
//! With `X_0 ~ N(0, I)`, `X_1 ~ sum_k w_k N(m_k, sigma^2 I)` and
//! `X_t = (1-t) X_0 + t X_1`, each component makes `(X_t, X_1)` jointly
//! Gaussian:
//!
//! ```text
//! X_t | k        ~ N(t m_k, s_t^2 I),          s_t^2 = (1-t)^2 + t^2 sigma^2
//! X_1 | x_t, k   ~ N(m_k + (t sigma^2 / s_t^2)(x_t - t m_k),  sigma^2 (1-t)^2 / s_t^2 I)
//! P(k | x_t)     ∝ w_k exp(-|x_t - t m_k|^2 / (2 s_t^2))
//! ```
//!
//! Every `Y` is affine in `X_1` once `x_t` is fixed, so its posterior is the
//! same mixture pushed through that map. Sampling from it is an exact
//! "perfect head" for the D-TM samplers.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::Parameterization;
use crate::rng::RandomStream;
use crate::samplers::{ChainStreams, PosteriorSampler, SamplerSpec, VelocityField};
use crate::state::StatePoint;
use crate::stats::column_moments;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureTarget {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    std: f64,
    tokens: usize,
    channels: usize,
}

impl GaussianMixtureTarget {
    pub fn new(weights: Vec<f64>, means: Vec<StatePoint>, std: f64) -> Result<Self> {
        if means.is_empty() || weights.len() != means.len() {
            return Err(Error::invalid(
                "weights",
                format!("need one weight per component, got {} for {}", weights.len(), means.len()),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights", "must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", format!("must sum to 1, got {total}")));
        }
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::invalid("std", format!("must be > 0, got {std}")));
        }
        let (tokens, channels) = (means[0].tokens(), means[0].channels());
        for m in &means[1..] {
            means[0].check_shape(m)?;
        }
        Ok(Self {
            weights,
            means: means.into_iter().map(StatePoint::into_values).collect(),
            std,
            tokens,
            channels,
        })
    }

    pub fn single(mean: StatePoint, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], std)
    }

    /// Eight equally weighted components of std 0.1 on the radius-2 circle.
    pub fn gauss8() -> Self {
        let means = (0..8)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 8.0;
                StatePoint::from_vec(vec![2.0 * a.cos(), 2.0 * a.sin()]).unwrap()
            })
            .collect();
        Self::new(vec![0.125; 8], means, 0.1).unwrap()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.tokens * self.channels
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    /// Per-coordinate variance (the covariance diagonal).
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut out = vec![self.std * self.std; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for ((o, v), mu) in out.iter_mut().zip(m).zip(&mean) {
                *o += w * (v - mu) * (v - mu);
            }
        }
        out
    }

    /// The target restricted to one component.
    pub fn component(&self, k: usize) -> Result<Self> {
        let m = self.means.get(k).ok_or(Error::UnknownClass {
            id: k,
            classes: self.components(),
        })?;
        Ok(Self {
            weights: vec![1.0],
            means: vec![m.clone()],
            std: self.std,
            tokens: self.tokens,
            channels: self.channels,
        })
    }

    pub fn sample_into(&self, out: &mut [f64], rng: &mut RandomStream) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        for (o, m) in out.iter_mut().zip(&self.means[k]) {
            *o = m + self.std * rng.normal();
        }
        k
    }

    pub fn sample(&self, rng: &mut RandomStream) -> (StatePoint, usize) {
        let mut v = vec![0.0; self.dim()];
        let k = self.sample_into(&mut v, rng);
        (StatePoint::new(v, self.tokens, self.channels).unwrap(), k)
    }
}

/// A mixture of isotropic Gaussians over `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per-component isotropic variance.
    pub variances: Vec<f64>,
}

impl PosteriorMixture {
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.means[0].len()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut out = vec![0.0; mean.len()];
        for ((w, m), var) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for ((o, v), mu) in out.iter_mut().zip(m).zip(&mean) {
                *o += w * (var + (v - mu) * (v - mu));
            }
        }
        out
    }

    pub fn sample_into(&self, out: &mut [f64], rng: &mut RandomStream) {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let sd = self.variances[k].sqrt();
        for (o, m) in out.iter_mut().zip(&self.means[k]) {
            *o = m + sd * rng.normal();
        }
    }
}

/// Coefficients `(a, b)` with `Y = a X_1 + b x_t` given `X_t = x_t`.
fn affine_in_x1(t: f64, p: Parameterization) -> (f64, f64) {
    match p {
        Parameterization::Difference => (1.0 / (1.0 - t), -1.0 / (1.0 - t)),
        Parameterization::Denoiser => (1.0, 0.0),
        Parameterization::Noise => (-t / (1.0 - t), 1.0 / (1.0 - t)),
    }
}

fn posterior_raw(x_t: &[f64], t: f64, target: &GaussianMixtureTarget, p: Parameterization) -> Result<PosteriorMixture> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::TimeOutOfRange {
            value: t,
            range: "[0, 1) (X_1 is determined at t = 1)",
        });
    }
    if x_t.len() != target.dim() {
        return Err(Error::shape(target.dim(), x_t.len()));
    }
    let var1 = target.std * target.std;
    let s2 = (1.0 - t) * (1.0 - t) + t * t * var1;
    let gain = t * var1 / s2;
    let post_var_x1 = var1 * (1.0 - t) * (1.0 - t) / s2;
    let (a, b) = affine_in_x1(t, p);

    let mut logw = Vec::with_capacity(target.components());
    let mut means = Vec::with_capacity(target.components());
    for (w, m) in target.weights.iter().zip(&target.means) {
        let mut sq = 0.0;
        let mut mean = Vec::with_capacity(m.len());
        for (&x, &mk) in x_t.iter().zip(m) {
            let r = x - t * mk;
            sq += r * r;
            mean.push(a * (mk + gain * r) + b * x);
        }
        logw.push(if *w > 0.0 { w.ln() - 0.5 * sq / s2 } else { f64::NEG_INFINITY });
        means.push(mean);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    let var = a * a * post_var_x1;
    Ok(PosteriorMixture {
        weights,
        means,
        variances: vec![var; target.components()],
    })
}

/// Draws one `Y` from the posterior without building the mixture. Same
/// arithmetic and draw order as `posterior_raw(..).sample_into(..)`.
fn sample_posterior_raw(
    x_t: &[f64],
    t: f64,
    target: &GaussianMixtureTarget,
    p: Parameterization,
    logw: &mut Vec<f64>,
    out: &mut [f64],
    rng: &mut RandomStream,
) -> Result<()> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::TimeOutOfRange {
            value: t,
            range: "[0, 1) (X_1 is determined at t = 1)",
        });
    }
    if x_t.len() != target.dim() || out.len() != target.dim() {
        return Err(Error::shape(target.dim(), x_t.len()));
    }
    let var1 = target.std * target.std;
    let s2 = (1.0 - t) * (1.0 - t) + t * t * var1;
    let gain = t * var1 / s2;
    let post_var_x1 = var1 * (1.0 - t) * (1.0 - t) / s2;
    let (a, b) = affine_in_x1(t, p);

    logw.clear();
    for (w, m) in target.weights.iter().zip(&target.means) {
        let mut sq = 0.0;
        for (&x, &mk) in x_t.iter().zip(m) {
            let r = x - t * mk;
            sq += r * r;
        }
        logw.push(if *w > 0.0 { w.ln() - 0.5 * sq / s2 } else { f64::NEG_INFINITY });
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in logw.iter_mut() {
        *l = (*l - max).exp();
        z += *l;
    }
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut k = logw.len() - 1;
    for (i, w) in logw.iter().enumerate() {
        acc += w / z;
        if u < acc {
            k = i;
            break;
        }
    }
    let sd = (a * a * post_var_x1).sqrt();
    for ((o, &x), &mk) in out.iter_mut().zip(x_t).zip(&target.means[k]) {
        let r = x - t * mk;
        *o = a * (mk + gain * r) + b * x + sd * rng.normal();
    }
    Ok(())
}

/// Exact posterior of `Y` given `X_t = x_t`.
pub fn posterior_y_params(
    x_t: &StatePoint,
    t: f64,
    target: &GaussianMixtureTarget,
    p: Parameterization,
) -> Result<PosteriorMixture> {
    posterior_raw(x_t.values(), t, target, p)
}

pub fn sample_posterior_y(
    x_t: &StatePoint,
    t: f64,
    target: &GaussianMixtureTarget,
    p: Parameterization,
    rng: &mut RandomStream,
) -> Result<StatePoint> {
    let post = posterior_y_params(x_t, t, target, p)?;
    let mut out = vec![0.0; x_t.dim()];
    post.sample_into(&mut out, rng);
    Ok(x_t.map_with(out))
}

/// `E[X_1 - X_0 | X_t = x]`, the marginal flow-matching velocity.
pub fn marginal_velocity(x: &[f64], t: f64, target: &GaussianMixtureTarget) -> Result<Vec<f64>> {
    Ok(posterior_raw(x, t, target, Parameterization::Difference)?.mean())
}

/// Perfect D-TM head: draws `Y` from the exact posterior. A class condition
/// restricts the target to that component.
#[derive(Debug, Clone)]
pub struct OracleHead {
    pub target: GaussianMixtureTarget,
    pub parameterization: Parameterization,
}

impl OracleHead {
    fn target_for(&self, cond: Option<usize>) -> Result<std::borrow::Cow<'_, GaussianMixtureTarget>> {
        match cond {
            None => Ok(std::borrow::Cow::Borrowed(&self.target)),
            Some(k) => Ok(std::borrow::Cow::Owned(self.target.component(k)?)),
        }
    }
}

impl PosteriorSampler for OracleHead {
    fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn sample_y(
        &self,
        x: &Array2<f64>,
        t: f64,
        cond: &[Option<usize>],
        streams: &mut ChainStreams,
        _spec: &SamplerSpec,
    ) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.raw_dim());
        let mut scratch = Vec::with_capacity(self.target.components());
        for (r, (xr, mut yr)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let target = self.target_for(cond.get(r).copied().flatten())?;
            sample_posterior_raw(
                xr.as_slice().expect("row-major"),
                t,
                &target,
                self.parameterization,
                &mut scratch,
                yr.as_slice_mut().expect("row-major"),
                &mut streams.posterior[r],
            )?;
        }
        Ok(out)
    }
}

/// Exact marginal velocity of a mixture target, usable as an FM model.
#[derive(Debug, Clone)]
pub struct OracleVelocity {
    pub target: GaussianMixtureTarget,
}

impl VelocityField for OracleVelocity {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn velocity(&self, x: &Array2<f64>, t: f64, cond: &[Option<usize>], _spec: &SamplerSpec) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.raw_dim());
        for (r, (xr, mut vr)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let v = match cond.get(r).copied().flatten() {
                Some(k) => marginal_velocity(xr.as_slice().unwrap(), t, &self.target.component(k)?)?,
                None => marginal_velocity(xr.as_slice().unwrap(), t, &self.target)?,
            };
            vr.as_slice_mut().unwrap().copy_from_slice(&v);
        }
        Ok(out)
    }
}

/// Outcome of [`mc_moment_check`]. Margins are `bound - |error|`; a check
/// passes when every margin is non-negative.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub n: usize,
    pub z: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean_margins: Vec<f64>,
    pub variance_margins: Vec<f64>,
}

impl MomentReport {
    pub fn passed(&self) -> bool {
        self.mean_margins.iter().chain(&self.variance_margins).all(|m| *m >= 0.0)
    }

    pub fn min_margin(&self) -> f64 {
        self.mean_margins
            .iter()
            .chain(&self.variance_margins)
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Draws `n` samples (rows) and compares per-coordinate mean and variance
/// with their expected values at `z` standard errors. The mean uses the
/// expected variance; the variance uses the empirical fourth moment, which
/// reduces to `sigma^2 sqrt(2/n)` for Gaussian samples.
pub fn mc_moment_check(
    sample_fn: impl FnOnce(usize) -> Result<Array2<f64>>,
    expected_mean: &[f64],
    expected_var: &[f64],
    n: usize,
    z: f64,
) -> Result<MomentReport> {
    if n < 1000 {
        return Err(Error::invalid("n", format!("need at least 1000 samples, got {n}")));
    }
    let samples = sample_fn(n)?;
    if samples.ncols() != expected_mean.len() || expected_var.len() != expected_mean.len() {
        return Err(Error::shape(expected_mean.len(), samples.ncols()));
    }
    let rows: Vec<Vec<f64>> = samples.rows().into_iter().map(|r| r.to_vec()).collect();
    let (mean, var, m4) = column_moments(&rows);
    let nf = rows.len() as f64;
    let mean_margins = (0..mean.len())
        .map(|k| z * (expected_var[k] / nf).sqrt() - (mean[k] - expected_mean[k]).abs())
        .collect();
    let variance_margins = (0..mean.len())
        .map(|k| z * ((m4[k] - var[k] * var[k]).max(0.0) / nf).sqrt() - (var[k] - expected_var[k]).abs())
        .collect();
    Ok(MomentReport {
        n: rows.len(),
        z,
        mean,
        variance: var,
        mean_margins,
        variance_margins,
    })
}
