//! The linear supervising process `X_t = (1-t) X_0 + t X_1` and the algebra
//! that moves a state forward in time given a sample of the posterior
//! quantity `Y`.
//!
//! Three choices of `Y` are supported (see [`Parameterization`]). For each one
//! the two process equations at `t` and `t'` can be solved for `X_{t'}`:
//!
//! | kind       | `Y`         | `X_{t'}`                                   |
//! |------------|-------------|--------------------------------------------|
//! | Difference | `X_1 - X_0` | `X_t + (t' - t) Y`                         |
//! | Denoiser   | `X_1`       | `((1 - t') X_t + (t' - t) Y) / (1 - t)`    |
//! | Noise      | `X_0`       | `(t' X_t + (t - t') Y) / t`                |
//!
//! The denoiser update blows up as `t -> 1` and the noise update as `t -> 0`;
//! both are rejected inside a margin of [`SINGULARITY_MARGIN`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::StatePoint;

/// Distance from the singular endpoint inside which the denoiser and noise
/// updates refuse to run.
pub const SINGULARITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `Y = X_1 - X_0`
    Difference,
    /// `Y = X_1`
    Denoiser,
    /// `Y = X_0`
    Noise,
}

impl Parameterization {
    pub const ALL: [Parameterization; 3] = [
        Parameterization::Difference,
        Parameterization::Denoiser,
        Parameterization::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Parameterization::Difference => "difference",
            Parameterization::Denoiser => "denoiser",
            Parameterization::Noise => "noise",
        }
    }

    /// Smallest backbone time at which the update is defined.
    pub fn min_time(self) -> f64 {
        match self {
            Parameterization::Noise => SINGULARITY_MARGIN,
            _ => 0.0,
        }
    }

    /// Whether the update from `t` is well defined.
    pub fn check_time(self, t: f64) -> Result<()> {
        match self {
            Parameterization::Denoiser if t > 1.0 - SINGULARITY_MARGIN => Err(Error::Singular {
                parameterization: self.name(),
                t,
            }),
            Parameterization::Noise if t < SINGULARITY_MARGIN => Err(Error::Singular {
                parameterization: self.name(),
                t,
            }),
            _ => Ok(()),
        }
    }

    /// `Y` for one coordinate.
    #[inline]
    pub fn target(self, x0: f64, x1: f64) -> f64 {
        match self {
            Parameterization::Difference => x1 - x0,
            Parameterization::Denoiser => x1,
            Parameterization::Noise => x0,
        }
    }

    /// One coordinate of the state update. Time validity is the caller's job.
    #[inline]
    pub fn advance(self, x_t: f64, t: f64, t2: f64, y: f64) -> f64 {
        match self {
            Parameterization::Difference => x_t + (t2 - t) * y,
            Parameterization::Denoiser => ((1.0 - t2) * x_t + (t2 - t) * y) / (1.0 - t),
            Parameterization::Noise => (t2 * x_t + (t - t2) * y) / t,
        }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_unit(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange {
            value: t,
            range: "[0, 1]",
        })
    }
}

pub fn interpolate(x0: &StatePoint, x1: &StatePoint, t: f64) -> Result<StatePoint> {
    x0.check_shape(x1)?;
    check_unit(t)?;
    let values = x0
        .values()
        .iter()
        .zip(x1.values())
        .map(|(&a, &b)| (1.0 - t) * a + t * b)
        .collect();
    Ok(x0.map_with(values))
}

pub fn target_y(x0: &StatePoint, x1: &StatePoint, p: Parameterization) -> Result<StatePoint> {
    x0.check_shape(x1)?;
    let values = x0
        .values()
        .iter()
        .zip(x1.values())
        .map(|(&a, &b)| p.target(a, b))
        .collect();
    Ok(x0.map_with(values))
}

/// Validates `0 <= t < t2 <= 1` and the parameterization's singular endpoint.
pub fn check_step(t: f64, t2: f64, p: Parameterization) -> Result<()> {
    check_unit(t)?;
    check_unit(t2)?;
    if t >= t2 {
        return Err(Error::invalid("t2", format!("need t < t2, got t={t}, t2={t2}")));
    }
    p.check_time(t)
}

pub fn advance_state(
    x_t: &StatePoint,
    t: f64,
    t2: f64,
    y: &StatePoint,
    p: Parameterization,
) -> Result<StatePoint> {
    x_t.check_shape(y)?;
    check_step(t, t2, p)?;
    let values = x_t
        .values()
        .iter()
        .zip(y.values())
        .map(|(&x, &y)| p.advance(x, t, t2, y))
        .collect();
    Ok(x_t.map_with(values))
}

/// In-place batch version of [`advance_state`] over flat buffers.
pub fn advance_in_place(x: &mut [f64], t: f64, t2: f64, y: &[f64], p: Parameterization) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(x.len(), y.len()));
    }
    check_step(t, t2, p)?;
    for (x, &y) in x.iter_mut().zip(y) {
        *x = p.advance(*x, t, t2, y);
    }
    Ok(())
}

/// Mean and isotropic standard deviation of `q_t(x | x_1) = N(t x_1, (1-t)^2 I)`.
pub fn conditional_path_params(x1: &StatePoint, t: f64) -> Result<(StatePoint, f64)> {
    check_unit(t)?;
    let mean = x1.map_with(x1.values().iter().map(|&v| t * v).collect());
    Ok((mean, 1.0 - t))
}
