//! Central finite-difference checks of analytic gradients.

use super::NetParams;
use crate::error::Result;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms. Central differences at `h = 1e-5` carry round-off of about
/// `1e-11` times the loss, which swamps smaller entries.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against `(L(p + h e_i) - L(p - h e_i)) / 2h` for every
/// parameter.
pub fn check_gradient(
    params: &NetParams<f64>,
    analytic: &[f64],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<GradCheckReport> {
    assert_eq!(analytic.len(), params.len());
    let mut values = params.values.clone();
    let mut names = Vec::with_capacity(values.len());
    for spec in params.layout() {
        for k in 0..spec.size() {
            names.push((spec.name.as_str(), k));
        }
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + step;
        let up = loss(&values)?;
        values[i] = orig - step;
        let down = loss(&values)?;
        values[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], fd);
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err;
            report.worst = format!("{}[{}] analytic={:.6e} fd={:.6e}", names[i].0, names[i].1, analytic[i], fd);
        }
        report.checked += 1;
    }
    Ok(report)
}
