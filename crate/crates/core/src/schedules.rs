//! Time-sampling distributions for the backbone time `t` and head time `s`.

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::function::{beta::beta_reg, erf::erfc, gamma::ln_gamma};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Distribution of training times on `(0, 1)`.
///
/// `LogitNormal` is the sigmoid of `N(mu, sigma^2)`, the usual reading of the
/// "log-normal" time weighting for flow models: it keeps `t` inside the unit
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeWeighting {
    Uniform,
    LogitNormal { mu: f64, sigma: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl Default for TimeWeighting {
    fn default() -> Self {
        TimeWeighting::Uniform
    }
}

const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl TimeWeighting {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeWeighting::Uniform => Ok(()),
            TimeWeighting::LogitNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::invalid("mu", format!("must be finite, got {mu}")));
                }
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
                }
                Ok(())
            }
            TimeWeighting::Beta { alpha, beta } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::invalid("alpha", format!("must be > 0, got {alpha}")));
                }
                if !(beta.is_finite() && beta > 0.0) {
                    return Err(Error::invalid("beta", format!("must be > 0, got {beta}")));
                }
                Ok(())
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            TimeWeighting::Uniform => "uniform".into(),
            TimeWeighting::LogitNormal { mu, sigma } => format!("logit_normal({mu},{sigma})"),
            TimeWeighting::Beta { alpha, beta } => format!("beta({alpha},{beta})"),
        }
    }

    /// Draws one time strictly inside `(0, 1)`.
    pub fn sample_time(&self, rng: &mut RandomStream) -> f64 {
        let t = match *self {
            TimeWeighting::Uniform => rng.uniform_open(),
            TimeWeighting::LogitNormal { mu, sigma } => sigmoid(mu + sigma * rng.normal()),
            TimeWeighting::Beta { alpha, beta } => rand_distr::Beta::new(alpha, beta)
                .expect("validated beta parameters")
                .sample(rng),
        };
        t.clamp(f64::MIN_POSITIVE, ONE_BELOW)
    }

    pub fn density(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::TimeOutOfRange {
                value: t,
                range: "(0, 1)",
            });
        }
        Ok(match *self {
            TimeWeighting::Uniform => 1.0,
            TimeWeighting::LogitNormal { mu, sigma } => {
                let z = ((t / (1.0 - t)).ln() - mu) / sigma;
                (-0.5 * z * z).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt() * t * (1.0 - t))
            }
            TimeWeighting::Beta { alpha, beta } => {
                let ln_b = ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta);
                ((alpha - 1.0) * t.ln() + (beta - 1.0) * (1.0 - t).ln() - ln_b).exp()
            }
        })
    }

    /// Cumulative distribution, defined on all of `R`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        match *self {
            TimeWeighting::Uniform => t,
            TimeWeighting::LogitNormal { mu, sigma } => {
                std_normal_cdf(((t / (1.0 - t)).ln() - mu) / sigma)
            }
            TimeWeighting::Beta { alpha, beta } => beta_reg(alpha, beta, t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use crate::stats::{ks_one_sample, ks_two_sample};

    fn draws(w: TimeWeighting, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Seed(seed).stream();
        (0..n).map(|_| w.sample_time(&mut rng)).collect()
    }

    #[test]
    fn uniform_mean() {
        let xs = draws(TimeWeighting::Uniform, 100_000, 1);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        // se = sqrt(1/12 / 1e5) ~ 9.1e-4
        assert!((mean - 0.5).abs() < 4.0 * 9.13e-4, "{mean}");
    }

    #[test]
    fn beta_one_one_matches_uniform() {
        let a = draws(TimeWeighting::Beta { alpha: 1.0, beta: 1.0 }, 100_000, 2);
        let b = draws(TimeWeighting::Uniform, 100_000, 3);
        let r = ks_two_sample(&a, &b);
        assert!(r.p_value > 0.01, "{r:?}");
    }

    #[test]
    fn logit_normal_median() {
        let mut xs = draws(TimeWeighting::LogitNormal { mu: 0.0, sigma: 1.0 }, 100_000, 4);
        xs.sort_by(f64::total_cmp);
        let median = xs[xs.len() / 2];
        assert!((median - 0.5).abs() < 0.01, "{median}");
    }

    #[test]
    fn density_hand_values() {
        assert_eq!(TimeWeighting::Uniform.density(0.3).unwrap(), 1.0);
        let b = TimeWeighting::Beta { alpha: 2.0, beta: 2.0 }.density(0.5).unwrap();
        assert!((b - 1.5).abs() < 1e-12, "{b}");
        // phi(0) / (0.5 * 0.5)
        let ln = TimeWeighting::LogitNormal { mu: 0.0, sigma: 1.0 }.density(0.5).unwrap();
        let want = 4.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((ln - want).abs() < 1e-12, "{ln}");
        assert!((want - 1.595_769_121_6).abs() < 1e-9);
    }

    #[test]
    fn density_rejects_outside() {
        for t in [0.0, 1.0, -0.2, 1.5] {
            assert!(TimeWeighting::Uniform.density(t).is_err());
        }
    }

    #[test]
    fn validation() {
        assert!(TimeWeighting::LogitNormal { mu: 0.0, sigma: 0.0 }.validate().is_err());
        assert!(TimeWeighting::Beta { alpha: -1.0, beta: 1.0 }.validate().is_err());
        assert!(TimeWeighting::Beta { alpha: 1.0, beta: f64::NAN }.validate().is_err());
        assert!(TimeWeighting::Beta { alpha: 0.1, beta: 1.3 }.validate().is_ok());
    }

    /// Trapezoid rule on (eps, 1-eps) with 2*10^4 points. Only meaningful for
    /// densities that stay bounded near the endpoints.
    fn trapezoid(w: TimeWeighting) -> f64 {
        let eps = 1e-10;
        let n = 20_001;
        let h = (1.0 - 2.0 * eps) / (n - 1) as f64;
        let f = |i: usize| w.density(eps + i as f64 * h).unwrap();
        let inner: f64 = (1..n - 1).map(f).sum();
        h * (inner + 0.5 * (f(0) + f(n - 1)))
    }

    #[test]
    fn bounded_densities_integrate_to_one() {
        for w in [
            TimeWeighting::Uniform,
            TimeWeighting::LogitNormal { mu: 0.0, sigma: 1.0 },
            TimeWeighting::LogitNormal { mu: -0.5, sigma: 1.0 },
            TimeWeighting::Beta { alpha: 2.0, beta: 2.0 },
            TimeWeighting::Beta { alpha: 2.0, beta: 3.5 },
        ] {
            let mass = trapezoid(w);
            assert!((mass - 1.0).abs() < 1e-6, "{}: {mass}", w.label());
        }
    }

    #[test]
    fn cdf_agrees_with_density() {
        // Midpoint-rule integral of the density between two interior points.
        for w in [
            TimeWeighting::LogitNormal { mu: -0.5, sigma: 1.0 },
            TimeWeighting::Beta { alpha: 0.5, beta: 2.0 },
            TimeWeighting::Beta { alpha: 1.1, beta: 2.4 },
        ] {
            let (a, b) = (0.2, 0.7);
            let n = 20_000;
            let h = (b - a) / n as f64;
            let mass: f64 = (0..n).map(|i| w.density(a + (i as f64 + 0.5) * h).unwrap() * h).sum();
            assert!((mass - (w.cdf(b) - w.cdf(a))).abs() < 1e-8, "{}", w.label());
        }
    }

    #[test]
    fn draws_pass_ks() {
        for (i, w) in [
            TimeWeighting::Uniform,
            TimeWeighting::LogitNormal { mu: 0.0, sigma: 1.0 },
            TimeWeighting::Beta { alpha: 0.1, beta: 1.3 },
        ]
        .into_iter()
        .enumerate()
        {
            let xs = draws(w, 100_000, 10 + i as u64);
            let r = ks_one_sample(&xs, |t| w.cdf(t));
            assert!(r.p_value > 0.001, "{}: {r:?}", w.label());
        }
    }
}
