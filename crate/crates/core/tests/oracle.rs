use proptest::prelude::*;
use tmlab_core::oracle::{marginal_velocity, posterior_y_params, GaussianMixtureTarget};
use tmlab_core::{Parameterization, Seed, StatePoint};

fn sp(v: &[f64]) -> StatePoint {
    StatePoint::from_vec(v.to_vec()).unwrap()
}

/// For a single Gaussian target `(X_t, Y)` is jointly Gaussian per coordinate,
/// so `E[Y | x]` and `Var[Y | x]` follow from simulated joint moments by
/// linear regression, independently of the closed form.
#[test]
fn single_gaussian_matches_joint_simulation() {
    let mean = [0.5, -1.0];
    let std = 0.7;
    let target = GaussianMixtureTarget::single(sp(&mean), std).unwrap();
    let n = 1_000_000;
    for p in Parameterization::ALL {
        for (case, (t, x)) in [(0.25, [0.3, -0.2]), (0.6, [0.9, -1.1]), (0.9, [0.2, -0.4])].into_iter().enumerate() {
            let mut rng = Seed(1000 + case as u64).stream();
            let post = posterior_y_params(&sp(&x), t, &target, p).unwrap();
            let (pm, pv) = (post.mean(), post.variance());
            for c in 0..2 {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for _ in 0..n {
                    let x0 = rng.normal();
                    let x1 = mean[c] + std * rng.normal();
                    let xt = (1.0 - t) * x0 + t * x1;
                    let y = p.target(x0, x1);
                    sx += xt;
                    sy += y;
                    sxx += xt * xt;
                    syy += y * y;
                    sxy += xt * y;
                }
                let nf = n as f64;
                let (mx, my) = (sx / nf, sy / nf);
                let vx = sxx / nf - mx * mx;
                let vy = syy / nf - my * my;
                let cxy = sxy / nf - mx * my;
                let cond_mean = my + cxy / vx * (x[c] - mx);
                let cond_var = vy - cxy * cxy / vx;
                let z = (x[c] - mx) * (x[c] - mx) / vx;
                let se_mean = (cond_var / nf * (1.0 + z)).sqrt();
                let se_var = cond_var * (2.0 / nf).sqrt() * (1.0 + z).sqrt() + 1e-12;
                assert!((pm[c] - cond_mean).abs() < 4.0 * se_mean, "{p} t={t} c={c}: {} vs {cond_mean}", pm[c]);
                assert!((pv[c] - cond_var).abs() < 4.0 * se_var, "{p} t={t} c={c}: {} vs {cond_var}", pv[c]);
            }
        }
    }
}

/// Self-normalised importance sampling: draw `X_1` from the target and weight
/// by the likelihood `N(x_t; t X_1, (1-t)^2 I)` of the observed state.
#[test]
fn mixture_matches_importance_sampling() {
    let target = GaussianMixtureTarget::new(
        vec![0.5, 0.3, 0.2],
        vec![sp(&[1.0, 0.0]), sp(&[-1.0, 0.5]), sp(&[0.0, -1.5])],
        0.3,
    )
    .unwrap();
    let n = 1_000_000;
    let mut rng = Seed(77).stream();
    let x1s: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut v = vec![0.0; 2];
            target.sample_into(&mut v, &mut rng);
            v
        })
        .collect();
    for (t, x) in [(0.2, [0.1, 0.1]), (0.5, [0.2, -0.3]), (0.75, [-0.6, 0.4])] {
        let logw: Vec<f64> = x1s
            .iter()
            .map(|x1| {
                let d2: f64 = x1.iter().zip(&x).map(|(a, b)| (b - t * a).powi(2)).sum();
                -d2 / (2.0 * (1.0 - t) * (1.0 - t))
            })
            .collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let sw: f64 = w.iter().sum();
        let ess = sw * sw / w.iter().map(|v| v * v).sum::<f64>();
        assert!(ess > 5_000.0, "ess {ess}");
        for p in Parameterization::ALL {
            let post = posterior_y_params(&sp(&x), t, &target, p).unwrap();
            let (pm, pv) = (post.mean(), post.variance());
            for c in 0..2 {
                let y = |x1: &[f64]| match p {
                    Parameterization::Difference => (x1[c] - x[c]) / (1.0 - t),
                    Parameterization::Denoiser => x1[c],
                    Parameterization::Noise => (x[c] - t * x1[c]) / (1.0 - t),
                };
                let m = x1s.iter().zip(&w).map(|(x1, wi)| wi * y(x1)).sum::<f64>() / sw;
                let v = x1s.iter().zip(&w).map(|(x1, wi)| wi * (y(x1) - m).powi(2)).sum::<f64>() / sw;
                let se = (v / ess).sqrt();
                assert!((pm[c] - m).abs() < 5.0 * se, "{p} t={t} mean {} vs {m}", pm[c]);
                assert!((pv[c] - v).abs() < 5.0 * v * (2.0 / ess).sqrt() + 1e-9, "{p} t={t} var {} vs {v}", pv[c]);
            }
        }
    }
}

#[test]
fn component_conditioning() {
    let target = GaussianMixtureTarget::gauss8();
    let x = sp(&[0.5, 0.5]);
    let k3 = target.component(3).unwrap();
    let post = posterior_y_params(&x, 0.4, &k3, Parameterization::Denoiser).unwrap();
    assert_eq!(post.weights, vec![1.0]);
    assert!(target.component(8).is_err());
}

proptest! {
    #[test]
    fn posteriors_are_mutually_consistent(
        x in prop::array::uniform2(-3.0f64..3.0),
        t in 0.0f64..0.99,
    ) {
        let target = GaussianMixtureTarget::gauss8();
        let x = sp(&x);
        let mean = |p| posterior_y_params(&x, t, &target, p).unwrap().mean();
        let (diff, den, noise) = (
            mean(Parameterization::Difference),
            mean(Parameterization::Denoiser),
            mean(Parameterization::Noise),
        );
        let post = posterior_y_params(&x, t, &target, Parameterization::Difference).unwrap();
        prop_assert!((post.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let v = marginal_velocity(x.values(), t, &target).unwrap();
        for c in 0..2 {
            let scale = 1.0 + den[c].abs() + noise[c].abs();
            // E[Y_diff] = E[X_1] - E[X_0] and x = (1-t) E[X_0] + t E[X_1]
            prop_assert!((diff[c] - (den[c] - noise[c])).abs() < 1e-9 * scale / (1.0 - t));
            prop_assert!(((1.0 - t) * noise[c] + t * den[c] - x.values()[c]).abs() < 1e-9 * scale);
            prop_assert_eq!(v[c], diff[c]);
        }
    }
}
