//! Kolmogorov–Smirnov goodness-of-fit tests and small moment helpers.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-300 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn p_value(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample test of `xs` against a continuous `cdf`.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    assert!(!xs.is_empty(), "ks_one_sample on empty sample");
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    KsResult {
        statistic: d,
        p_value: p_value(d, n),
    }
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "ks_two_sample on empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult {
        statistic: d,
        p_value: p_value(d, na * nb / (na + nb)),
    }
}

/// Per-coordinate mean, variance and fourth central moment of row samples.
pub fn column_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    let mut m4 = vec![0.0; dim];
    for r in rows {
        for k in 0..dim {
            let c = r[k] - mean[k];
            let c2 = c * c;
            var[k] += c2;
            m4[k] += c2 * c2;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    m4.iter_mut().for_each(|v| *v /= n);
    (mean, var, m4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_reference_points() {
        // Classical critical values: P(K > 1.3581) = 0.05, P(K > 1.9495) = 0.001.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.9495) - 0.001).abs() < 2e-5);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn detects_shift() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&a, &b).p_value < 1e-6);
        assert!(ks_one_sample(&b, |x| x.clamp(0.0, 1.0)).p_value < 1e-6);
        let r = ks_one_sample(&a, |x| x.clamp(0.0, 1.0));
        assert!(r.p_value > 0.5, "{r:?}");
    }
}
