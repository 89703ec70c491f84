//! Inference loops.
//!
//! D-TM sampling walks the grid `t_i = t_0 + (1 - t_0) i / T`. Each step asks a
//! [`PosteriorSampler`] for a draw of `Y` given `X_{t_i}` and applies the
//! parameterization's update. The neural sampler draws `Y` by integrating the
//! head ODE with `S` Euler steps from `N(0, I)`.
//!
//! The stochastic variant overshoots to `t'' = t' + c (1 - t')` on every
//! `ceil(T / tau)`-th step and re-noises back to `t'` with
//!
//! ```text
//! X_{t'} = (t' X_{t''} + Z) / t'',    Var Z = (t'' - t')(t' + t'' - 2 t' t'')
//! ```
//!
//! which leaves the marginal of `X_{t'}` unchanged.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{HeadTime, Model, Real};
use crate::process::{advance_in_place, Parameterization};
use crate::rng::{RandomStream, Seed};
use crate::state::StatePoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    DtmLinear,
    DtmStochastic,
    FmLinear,
    FmMidpoint,
    FmStochastic,
}

impl SamplerMode {
    pub fn is_dtm(self) -> bool {
        matches!(self, SamplerMode::DtmLinear | SamplerMode::DtmStochastic)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, SamplerMode::DtmStochastic | SamplerMode::FmStochastic)
    }
}

/// How guided velocities are combined. `OneMinusW` is
/// `(1 - w) u_c - w u_0`; `Conventional` is `(1 + w) u_c - w u_0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfgConvention {
    OneMinusW,
    #[default]
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub mode: SamplerMode,
    /// Outer steps `T`.
    pub steps: usize,
    /// Head ODE steps `S` (D-TM only).
    #[serde(default = "default_head_steps")]
    pub head_steps: usize,
    /// Overshoot scale `c` in `[0, 1]`.
    #[serde(default)]
    pub scale: f64,
    /// Stochastic frequency `tau` in `[1, T]`.
    #[serde(default = "one")]
    pub frequency: usize,
    /// Guidance weight `w`; 0 disables guidance.
    #[serde(default = "default_guidance")]
    pub guidance: f64,
    #[serde(default)]
    pub cfg_convention: CfgConvention,
    /// First grid time. Raised to the parameterization's singular margin
    /// when needed.
    #[serde(default)]
    pub t_start: f64,
    /// Integrator for the ODE segments of `FmStochastic`.
    #[serde(default)]
    pub fm_solver: OdeSolver,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeSolver {
    #[default]
    Euler,
    Midpoint,
}

fn default_head_steps() -> usize {
    8
}

fn one() -> usize {
    1
}

fn default_guidance() -> f64 {
    6.5
}

impl SamplerSpec {
    pub fn new(mode: SamplerMode, steps: usize, head_steps: usize) -> Self {
        Self {
            mode,
            steps,
            head_steps,
            scale: 0.0,
            frequency: 1,
            guidance: default_guidance(),
            cfg_convention: CfgConvention::Conventional,
            t_start: 0.0,
            fm_solver: OdeSolver::Euler,
        }
    }

    pub fn with_stochastic(mut self, scale: f64, frequency: usize) -> Self {
        self.scale = scale;
        self.frequency = frequency;
        self
    }

    pub fn with_guidance(mut self, guidance: f64) -> Self {
        self.guidance = guidance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be >= 1"));
        }
        if self.mode.is_dtm() && self.head_steps == 0 {
            return Err(Error::invalid("head_steps", "must be >= 1"));
        }
        if self.mode.is_stochastic() {
            if !(0.0..=1.0).contains(&self.scale) {
                return Err(Error::invalid("scale", format!("must lie in [0, 1], got {}", self.scale)));
            }
            if self.frequency == 0 || self.frequency > self.steps {
                return Err(Error::invalid(
                    "frequency",
                    format!("must lie in [1, {}], got {}", self.steps, self.frequency),
                ));
            }
        }
        if !(self.guidance.is_finite() && self.guidance >= 0.0) {
            return Err(Error::invalid("guidance", format!("must be finite and >= 0, got {}", self.guidance)));
        }
        if !(0.0..1.0).contains(&self.t_start) {
            return Err(Error::invalid("t_start", format!("must lie in [0, 1), got {}", self.t_start)));
        }
        Ok(())
    }

    fn expect_mode(&self, allowed: &[SamplerMode]) -> Result<()> {
        self.validate()?;
        if allowed.contains(&self.mode) {
            Ok(())
        } else {
            Err(Error::invalid(
                "mode",
                format!("{:?} is not valid here (expected one of {allowed:?})", self.mode),
            ))
        }
    }

    /// Time grid `t_0 < ... < t_T = 1`.
    pub fn grid(&self, min_time: f64) -> Vec<f64> {
        let t0 = self.t_start.max(min_time);
        let n = self.steps;
        (0..=n)
            .map(|i| if i == n { 1.0 } else { t0 + (1.0 - t0) * (i as f64 / n as f64) })
            .collect()
    }

    /// Period between stochastic steps, `ceil(T / tau)`.
    pub fn stochastic_period(&self) -> usize {
        self.steps.div_ceil(self.frequency)
    }
}

/// Independent per-chain random streams for each consumer in a sampling run.
#[derive(Debug, Clone)]
pub struct ChainStreams {
    pub init: Vec<RandomStream>,
    pub posterior: Vec<RandomStream>,
    pub head_ode: Vec<RandomStream>,
    pub renoise: Vec<RandomStream>,
}

impl ChainStreams {
    pub fn new(seed: Seed, chains: usize) -> Self {
        let make = |tag: u64| (0..chains).map(|c| seed.derive(c as u64).derive(tag).stream()).collect();
        Self {
            init: make(1),
            posterior: make(2),
            head_ode: make(3),
            renoise: make(4),
        }
    }

    pub fn chains(&self) -> usize {
        self.init.len()
    }
}

/// Draws `Y ~ p(Y | X_t = x)` for every row of `x`.
pub trait PosteriorSampler {
    fn parameterization(&self) -> Parameterization;
    fn dim(&self) -> usize;
    fn sample_y(
        &self,
        x: &Array2<f64>,
        t: f64,
        cond: &[Option<usize>],
        streams: &mut ChainStreams,
        spec: &SamplerSpec,
    ) -> Result<Array2<f64>>;
}

/// A marginal velocity field `v(x, t)` for flow-matching sampling.
pub trait VelocityField {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &Array2<f64>, t: f64, cond: &[Option<usize>], spec: &SamplerSpec) -> Result<Array2<f64>>;
    /// Smallest time at which the field is defined.
    fn min_time(&self) -> f64 {
        0.0
    }
}

/// Guided combination of conditional and unconditional outputs.
pub fn cfg_velocity(
    cond: &ArrayView2<f64>,
    uncond: &ArrayView2<f64>,
    guidance: f64,
    convention: CfgConvention,
) -> Array2<f64> {
    let a = match convention {
        CfgConvention::OneMinusW => 1.0 - guidance,
        CfgConvention::Conventional => 1.0 + guidance,
    };
    let mut out = cond.to_owned();
    out.zip_mut_with(uncond, |c, u| *c = a * *c - guidance * u);
    out
}

/// Euler integration of `dY/ds = f(Y, s)` over `s_j = j / S`.
pub fn solve_head_ode(
    mut f: impl FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
    y0: Array2<f64>,
    steps: usize,
) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::invalid("head_steps", "must be >= 1"));
    }
    let mut y = y0;
    let ds = 1.0 / steps as f64;
    for j in 0..steps {
        let u = f(&y, j as f64 / steps as f64)?;
        if u.dim() != y.dim() {
            return Err(Error::shape(format!("{:?}", y.dim()), format!("{:?}", u.dim())));
        }
        y.scaled_add(ds, &u);
    }
    Ok(y)
}

fn check_renoise_times(t2: f64, t3: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t2) || !(0.0..=1.0).contains(&t3) {
        return Err(Error::TimeOutOfRange {
            value: if (0.0..=1.0).contains(&t2) { t3 } else { t2 },
            range: "[0, 1]",
        });
    }
    if t3 < t2 {
        return Err(Error::invalid("t3", format!("need t' <= t'', got t'={t2}, t''={t3}")));
    }
    if t3 == 0.0 {
        return Err(Error::invalid("t3", "re-noising from t'' = 0 is undefined"));
    }
    Ok(())
}

/// In-place re-noising of a flat buffer from `t3 = t''` back to `t2 = t'`.
/// A no-op when the two times coincide.
pub fn renoise_in_place(x: &mut [f64], t2: f64, t3: f64, rng: &mut RandomStream) -> Result<()> {
    check_renoise_times(t2, t3)?;
    if t2 == t3 {
        return Ok(());
    }
    let sd = ((t3 - t2) * (t2 + t3 - 2.0 * t2 * t3)).max(0.0).sqrt();
    for v in x {
        *v = (t2 * *v + sd * rng.normal()) / t3;
    }
    Ok(())
}

pub fn renoise(x: &StatePoint, t2: f64, t3: f64, rng: &mut RandomStream) -> Result<StatePoint> {
    let mut v = x.values().to_vec();
    renoise_in_place(&mut v, t2, t3, rng)?;
    Ok(x.map_with(v))
}

/// Signature of a re-noising kernel, so alternative kernels can be swapped in.
pub type RenoiseFn = fn(&mut [f64], f64, f64, &mut RandomStream) -> Result<()>;

#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// One final state per row.
    pub samples: Array2<f64>,
    /// Number of stochastic (overshoot + re-noise) steps taken.
    pub injections: usize,
}

fn expand_cond(cond: &[Option<usize>], chains: usize) -> Result<Vec<Option<usize>>> {
    match cond.len() {
        0 => Ok(vec![None; chains]),
        n if n == chains => Ok(cond.to_vec()),
        1 => Ok(vec![cond[0]; chains]),
        n => Err(Error::shape(format!("0, 1 or {chains} conditions"), n)),
    }
}

fn init_states(streams: &mut ChainStreams, dim: usize) -> Array2<f64> {
    let mut x = Array2::zeros((streams.chains(), dim));
    for (mut row, rng) in x.rows_mut().into_iter().zip(streams.init.iter_mut()) {
        rng.fill_normal(row.as_slice_mut().unwrap());
    }
    x
}

fn renoise_rows(x: &mut Array2<f64>, t2: f64, t3: f64, streams: &mut ChainStreams, kernel: RenoiseFn) -> Result<()> {
    for (mut row, rng) in x.rows_mut().into_iter().zip(streams.renoise.iter_mut()) {
        kernel(row.as_slice_mut().unwrap(), t2, t3, rng)?;
    }
    Ok(())
}

fn advance_rows(x: &mut Array2<f64>, t: f64, t2: f64, y: &Array2<f64>, p: Parameterization) -> Result<()> {
    advance_in_place(x.as_slice_mut().unwrap(), t, t2, y.as_slice().unwrap(), p)
}

fn run_dtm(
    sampler: &impl PosteriorSampler,
    spec: &SamplerSpec,
    chains: usize,
    cond: &[Option<usize>],
    seed: Seed,
    stochastic: bool,
    kernel: RenoiseFn,
) -> Result<SampleOutput> {
    let cond = expand_cond(cond, chains)?;
    let p = sampler.parameterization();
    let grid = spec.grid(p.min_time());
    let period = spec.stochastic_period();
    let mut streams = ChainStreams::new(seed, chains);
    let mut x = init_states(&mut streams, sampler.dim());
    let mut injections = 0;
    for i in 0..spec.steps {
        let (t, t1) = (grid[i], grid[i + 1]);
        let y = sampler.sample_y(&x, t, &cond, &mut streams, spec)?;
        if y.dim() != x.dim() {
            return Err(Error::shape(format!("{:?}", x.dim()), format!("{:?}", y.dim())));
        }
        if stochastic && i % period == 0 {
            let t3 = t1 + spec.scale * (1.0 - t1);
            advance_rows(&mut x, t, t3, &y, p)?;
            renoise_rows(&mut x, t1, t3, &mut streams, kernel)?;
            injections += 1;
        } else {
            advance_rows(&mut x, t, t1, &y, p)?;
        }
    }
    Ok(SampleOutput { samples: x, injections })
}

/// Deterministic-grid D-TM sampling of `chains` states.
pub fn dtm_sample(
    sampler: &impl PosteriorSampler,
    spec: &SamplerSpec,
    chains: usize,
    cond: &[Option<usize>],
    seed: Seed,
) -> Result<SampleOutput> {
    spec.expect_mode(&[SamplerMode::DtmLinear, SamplerMode::DtmStochastic])?;
    run_dtm(sampler, spec, chains, cond, seed, false, renoise_in_place)
}

/// Stochastic D-TM sampling. With `scale = 0` the output is bit-identical to
/// [`dtm_sample`] for the same seed.
pub fn stochastic_dtm_sample(
    sampler: &impl PosteriorSampler,
    spec: &SamplerSpec,
    chains: usize,
    cond: &[Option<usize>],
    seed: Seed,
) -> Result<SampleOutput> {
    stochastic_dtm_sample_with(sampler, spec, chains, cond, seed, renoise_in_place)
}

pub fn stochastic_dtm_sample_with(
    sampler: &impl PosteriorSampler,
    spec: &SamplerSpec,
    chains: usize,
    cond: &[Option<usize>],
    seed: Seed,
    kernel: RenoiseFn,
) -> Result<SampleOutput> {
    spec.expect_mode(&[SamplerMode::DtmStochastic])?;
    run_dtm(sampler, spec, chains, cond, seed, true, kernel)
}

fn euler(field: &impl VelocityField, x: &mut Array2<f64>, t: f64, t2: f64, cond: &[Option<usize>], spec: &SamplerSpec) -> Result<()> {
    let v = field.velocity(x, t, cond, spec)?;
    x.scaled_add(t2 - t, &v);
    Ok(())
}

fn midpoint(
    field: &impl VelocityField,
    x: &mut Array2<f64>,
    t: f64,
    t2: f64,
    cond: &[Option<usize>],
    spec: &SamplerSpec,
) -> Result<()> {
    let h = t2 - t;
    let v = field.velocity(x, t, cond, spec)?;
    let mut mid = x.clone();
    mid.scaled_add(0.5 * h, &v);
    let v_mid = field.velocity(&mid, t + 0.5 * h, cond, spec)?;
    x.scaled_add(h, &v_mid);
    Ok(())
}

fn ode_step(
    solver: OdeSolver,
    field: &impl VelocityField,
    x: &mut Array2<f64>,
    t: f64,
    t2: f64,
    cond: &[Option<usize>],
    spec: &SamplerSpec,
) -> Result<()> {
    match solver {
        OdeSolver::Euler => euler(field, x, t, t2, cond, spec),
        OdeSolver::Midpoint => midpoint(field, x, t, t2, cond, spec),
    }
}

/// Flow-matching ODE sampling with Euler or midpoint steps.
pub fn fm_sample(
    field: &impl VelocityField,
    spec: &SamplerSpec,
    chains: usize,
    cond: &[Option<usize>],
    seed: Seed,
) -> Result<SampleOutput> {
    spec.expect_mode(&[SamplerMode::FmLinear, SamplerMode::FmMidpoint])?;
    let cond = expand_cond(cond, chains)?;
    let grid = spec.grid(field.min_time());
    let mut streams = ChainStreams::new(seed, chains);
    let mut x = init_states(&mut streams, field.dim());
    for i in 0..spec.steps {
        let (t, t1) = (grid[i], grid[i + 1]);
        match spec.mode {
            SamplerMode::FmMidpoint => midpoint(field, &mut x, t, t1, &cond, spec)?,
            _ => euler(field, &mut x, t, t1, &cond, spec)?,
        }
    }
    Ok(SampleOutput { samples: x, injections: 0 })
}

/// Flow-matching counterpart of the stochastic sampler: on stochastic steps
/// the ODE runs on to `t''` (substeps no longer than the grid spacing) and
/// the state is re-noised back to `t'`. Segments use `spec.fm_solver`.
pub fn fm_stochastic_sample(
    field: &impl VelocityField,
    spec: &SamplerSpec,
    chains: usize,
    cond: &[Option<usize>],
    seed: Seed,
) -> Result<SampleOutput> {
    spec.expect_mode(&[SamplerMode::FmStochastic])?;
    let cond = expand_cond(cond, chains)?;
    let grid = spec.grid(field.min_time());
    let spacing = (1.0 - grid[0]) / spec.steps as f64;
    let period = spec.stochastic_period();
    let mut streams = ChainStreams::new(seed, chains);
    let mut x = init_states(&mut streams, field.dim());
    let mut injections = 0;
    for i in 0..spec.steps {
        let (t, t1) = (grid[i], grid[i + 1]);
        let solver = spec.fm_solver;
        if i % period != 0 {
            ode_step(solver, field, &mut x, t, t1, &cond, spec)?;
            continue;
        }
        let t3 = t1 + spec.scale * (1.0 - t1);
        let sub = (((t3 - t) / spacing - 1e-9).ceil() as usize).max(1);
        if sub == 1 {
            ode_step(solver, field, &mut x, t, t3, &cond, spec)?;
        } else {
            for k in 0..sub {
                let a = t + (t3 - t) * (k as f64 / sub as f64);
                let b = if k + 1 == sub { t3 } else { t + (t3 - t) * ((k + 1) as f64 / sub as f64) };
                ode_step(solver, field, &mut x, a, b, &cond, spec)?;
            }
        }
        renoise_rows(&mut x, t1, t3, &mut streams, renoise_in_place)?;
        injections += 1;
    }
    Ok(SampleOutput { samples: x, injections })
}

/// Dispatches on `spec.mode` for D-TM samplers.
pub fn sample_dtm(
    sampler: &impl PosteriorSampler,
    spec: &SamplerSpec,
    chains: usize,
    cond: &[Option<usize>],
    seed: Seed,
) -> Result<SampleOutput> {
    match spec.mode {
        SamplerMode::DtmLinear => dtm_sample(sampler, spec, chains, cond, seed),
        SamplerMode::DtmStochastic => stochastic_dtm_sample(sampler, spec, chains, cond, seed),
        m => Err(Error::invalid("mode", format!("{m:?} is a flow-matching mode but the model is D-TM"))),
    }
}

/// Dispatches on `spec.mode` for flow-matching fields.
pub fn sample_fm(
    field: &impl VelocityField,
    spec: &SamplerSpec,
    chains: usize,
    cond: &[Option<usize>],
    seed: Seed,
) -> Result<SampleOutput> {
    match spec.mode {
        SamplerMode::FmLinear | SamplerMode::FmMidpoint => fm_sample(field, spec, chains, cond, seed),
        SamplerMode::FmStochastic => fm_stochastic_sample(field, spec, chains, cond, seed),
        m => Err(Error::invalid("mode", format!("{m:?} is a D-TM mode but the model is flow matching"))),
    }
}

fn to_real<F: Real>(a: &ArrayView2<f64>) -> Array2<F> {
    a.mapv(crate::nets::real::<F>)
}

fn to_f64<F: Real>(a: &Array2<F>) -> Array2<f64> {
    a.mapv(|v| v.to_f64().unwrap_or(f64::NAN))
}

fn guided(spec: &SamplerSpec, cond: &[Option<usize>]) -> bool {
    spec.guidance != 0.0 && cond.iter().any(Option::is_some)
}

/// Doubles the batch as `[conditional; unconditional]` when guidance is on.
fn guidance_batch(x: &Array2<f64>, cond: &[Option<usize>], on: bool) -> (Array2<f64>, Vec<Option<usize>>) {
    if on {
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let mut c2 = cond.to_vec();
        c2.extend(std::iter::repeat_n(None, cond.len()));
        (x2, c2)
    } else {
        (x.clone(), cond.to_vec())
    }
}

fn combine_halves(out: Array2<f64>, on: bool, spec: &SamplerSpec) -> Array2<f64> {
    if !on {
        return out;
    }
    let half = out.nrows() / 2;
    cfg_velocity(
        &out.slice(s![..half, ..]),
        &out.slice(s![half.., ..]),
        spec.guidance,
        spec.cfg_convention,
    )
}

/// A trained D-TM network as a posterior sampler: one backbone call per
/// outer step and `S` head calls for the inner ODE.
pub struct NeuralTransition<'a, F> {
    pub model: &'a Model<F>,
}

impl<'a, F: Real> NeuralTransition<'a, F> {
    pub fn new(model: &'a Model<F>) -> Result<Self> {
        if model.parameterization().is_none() {
            return Err(Error::invalid("model", "expected a D-TM model"));
        }
        Ok(Self { model })
    }
}

impl<F: Real> PosteriorSampler for NeuralTransition<'_, F> {
    fn parameterization(&self) -> Parameterization {
        self.model.parameterization().expect("checked in new")
    }

    fn dim(&self) -> usize {
        self.model.config().dim()
    }

    fn sample_y(
        &self,
        x: &Array2<f64>,
        t: f64,
        cond: &[Option<usize>],
        streams: &mut ChainStreams,
        spec: &SamplerSpec,
    ) -> Result<Array2<f64>> {
        let on = guided(spec, cond);
        let (xb, cb) = guidance_batch(x, cond, on);
        let times = vec![t; xb.nrows()];
        let (h, _) = self.model.backbone_forward(&to_real::<F>(&xb.view()).view(), &times, &cb)?;
        let d = self.model.config().channels;
        let mut y0 = Array2::zeros(x.raw_dim());
        for (mut row, rng) in y0.rows_mut().into_iter().zip(streams.head_ode.iter_mut()) {
            rng.fill_normal(row.as_slice_mut().unwrap());
        }
        solve_head_ode(
            |y, s| {
                let (yb, _) = guidance_batch(y, cond, on);
                let rows = crate::nets::backbone::to_token_rows(&to_real::<F>(&yb.view()).view(), d);
                let svals = vec![s; yb.nrows()];
                let (u, _) = self.model.head_forward(&rows.view(), &h.view(), HeadTime::Shared(&svals))?;
                let u = to_f64(&crate::nets::backbone::from_token_rows(u, self.model.config().tokens));
                Ok(combine_halves(u, on, spec))
            },
            y0,
            spec.head_steps,
        )
    }
}

/// A trained FM network as a velocity field. Predictions of the denoiser or
/// noise targets are converted to velocities.
pub struct NeuralVelocity<'a, F> {
    pub model: &'a Model<F>,
    target: Parameterization,
}

impl<'a, F: Real> NeuralVelocity<'a, F> {
    pub fn new(model: &'a Model<F>) -> Result<Self> {
        let target = model
            .fm_target()
            .ok_or_else(|| Error::invalid("model", "expected a flow-matching model"))?;
        Ok(Self { model, target })
    }
}

impl<F: Real> VelocityField for NeuralVelocity<'_, F> {
    fn dim(&self) -> usize {
        self.model.config().dim()
    }

    fn min_time(&self) -> f64 {
        self.target.min_time()
    }

    fn velocity(&self, x: &Array2<f64>, t: f64, cond: &[Option<usize>], spec: &SamplerSpec) -> Result<Array2<f64>> {
        let on = guided(spec, cond);
        let (xb, cb) = guidance_batch(x, cond, on);
        let times = vec![t; xb.nrows()];
        let (pred, _) = self.model.fm_forward(&to_real::<F>(&xb.view()).view(), &times, &cb)?;
        let mut v = to_f64(&pred);
        match self.target {
            Parameterization::Difference => {}
            Parameterization::Denoiser => {
                let k = 1.0 / (1.0 - t).max(crate::process::SINGULARITY_MARGIN);
                v.zip_mut_with(&xb, |p, x| *p = (*p - x) * k);
            }
            Parameterization::Noise => {
                self.target.check_time(t)?;
                v.zip_mut_with(&xb, |p, x| *p = (x - *p) / t);
            }
        }
        Ok(combine_halves(v, on, spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grid_endpoints() {
        let spec = SamplerSpec::new(SamplerMode::DtmLinear, 4, 2);
        assert_eq!(spec.grid(0.0), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = spec.grid(1e-9);
        assert_eq!(g[0], 1e-9);
        assert_eq!(g[4], 1.0);
    }

    #[test]
    fn stochastic_period() {
        let mut spec = SamplerSpec::new(SamplerMode::DtmStochastic, 10, 2);
        for (tau, period) in [(1, 10), (2, 5), (3, 4), (10, 1)] {
            spec.frequency = tau;
            assert_eq!(spec.stochastic_period(), period);
        }
    }

    #[test]
    fn spec_validation() {
        let ok = SamplerSpec::new(SamplerMode::DtmStochastic, 10, 2).with_stochastic(0.5, 3);
        assert!(ok.validate().is_ok());
        assert!(ok.clone().with_stochastic(1.5, 3).validate().is_err());
        assert!(ok.clone().with_stochastic(0.5, 11).validate().is_err());
        assert!(ok.clone().with_stochastic(0.5, 0).validate().is_err());
        assert!(ok.clone().with_guidance(-1.0).validate().is_err());
        let mut bad = ok.clone();
        bad.steps = 0;
        assert!(bad.validate().is_err());
        // tau and c are ignored outside stochastic modes
        let lin = SamplerSpec::new(SamplerMode::DtmLinear, 10, 2).with_stochastic(7.0, 99);
        assert!(lin.validate().is_ok());
    }

    #[test]
    fn spec_json_defaults() {
        let spec: SamplerSpec = serde_json::from_str(r#"{"mode": "dtm_linear", "steps": 4}"#).unwrap();
        assert_eq!(spec.guidance, 6.5);
        assert_eq!(spec.cfg_convention, CfgConvention::Conventional);
        assert!(serde_json::from_str::<SamplerSpec>(r#"{"mode": "dtm_linear", "steps": 4, "bogus": 1}"#).is_err());
    }

    #[test]
    fn cfg_conventions() {
        let c = array![[1.0, 2.0]];
        let u = array![[0.5, -1.0]];
        let lit = cfg_velocity(&c.view(), &u.view(), 2.0, CfgConvention::OneMinusW);
        assert_eq!(lit, array![[-1.0 * 1.0 - 2.0 * 0.5, -1.0 * 2.0 + 2.0]]);
        let conv = cfg_velocity(&c.view(), &u.view(), 2.0, CfgConvention::Conventional);
        assert_eq!(conv, array![[3.0 - 1.0, 6.0 + 2.0]]);
        assert_eq!(cfg_velocity(&c.view(), &u.view(), 0.0, CfgConvention::Conventional), c);
    }

    #[test]
    fn head_ode_constant_field() {
        let y0 = array![[1.0, -1.0]];
        let y = solve_head_ode(|y, _| Ok(Array2::from_elem(y.raw_dim(), 2.0)), y0, 7).unwrap();
        assert!((y[[0, 0]] - 3.0).abs() < 1e-12);
        assert!((y[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn head_ode_linear_field_matches_euler_product() {
        // dY/ds = -Y: Euler gives (1 - 1/S)^S Y0
        let y = solve_head_ode(|y, _| Ok(-y), array![[2.0]], 16).unwrap();
        assert!((y[[0, 0]] - 2.0 * (1.0 - 1.0 / 16.0f64).powi(16)).abs() < 1e-12);
    }

    #[test]
    fn renoise_identity_and_errors() {
        let x = StatePoint::from_vec(vec![0.3, -0.2]).unwrap();
        let mut rng = Seed(1).stream();
        assert_eq!(renoise(&x, 0.4, 0.4, &mut rng).unwrap(), x);
        assert!(renoise(&x, 0.5, 0.4, &mut rng).is_err());
        assert!(renoise(&x, 0.0, 0.0, &mut rng).is_err());
        assert!(renoise(&x, 0.2, 1.5, &mut rng).is_err());
    }

    #[test]
    fn renoise_to_zero_is_pure_noise() {
        // t' = 0 forgets the state entirely: X_0 = Z / t'' with Var Z = t''^2.
        let mut rng = Seed(3).stream();
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut v = [5.0];
            renoise_in_place(&mut v, 0.0, 0.7, &mut rng).unwrap();
            acc += v[0] * v[0];
        }
        assert!((acc / n as f64 - 1.0).abs() < 0.02);
    }
}
