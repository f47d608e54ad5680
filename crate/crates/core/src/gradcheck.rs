//! Central finite-difference gradient checking.

use crate::error::{check_dim, AweError, Result};

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against the central difference
/// `(f(θ+h) - f(θ-h)) / 2h` coordinate by coordinate and returns the largest
/// `|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`.
///
/// `loss` must be deterministic. A non-finite loss value aborts the check
/// and names the coordinate being perturbed.
pub fn grad_check<L>(loss: L, params: &[f64], analytic: &[f64], step: f64) -> Result<GradCheckReport>
where
    L: FnMut(&[f64]) -> f64,
{
    grad_check_with_floor(loss, params, analytic, step, 1e-8)
}

/// [`grad_check`] with a caller-chosen denominator floor, for losses whose
/// gradients contain coordinates near roundoff level.
pub fn grad_check_with_floor<L>(
    mut loss: L,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    L: FnMut(&[f64]) -> f64,
{
    check_dim("gradient check", params.len(), analytic.len())?;
    if !(step > 0.0) {
        return Err(AweError::InvalidConfig(format!("step {step} must be positive")));
    }
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let plus = loss(&theta);
        theta[i] = orig - step;
        let minus = loss(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(AweError::NonFinite(format!(
                "loss while perturbing coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let ga = analytic[i];
        if !ga.is_finite() {
            return Err(AweError::NonFinite(format!("analytic gradient at coordinate {i}")));
        }
        let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(floor);
        if rel > report.max_rel_error || i == 0 {
            report = GradCheckReport {
                max_rel_error: rel.max(report.max_rel_error),
                worst_index: i,
                analytic: ga,
                numeric,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let theta = [1.0, -2.0];
        let loss = |t: &[f64]| 0.5 * t.iter().map(|v| v * v).sum::<f64>();
        let r = grad_check(loss, &theta, &theta, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        let theta = [1.0, -2.0, 0.5];
        let loss = |t: &[f64]| 0.5 * t.iter().map(|v| v * v).sum::<f64>();
        let mut g = theta.to_vec();
        g[1] += 0.1;
        let r = grad_check(loss, &theta, &g, 1e-3).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn non_finite_loss_names_coordinate() {
        let theta = [1.0, 0.0];
        let loss = |t: &[f64]| if t[1] > 0.0 { f64::NAN } else { t[0] };
        match grad_check(loss, &theta, &[1.0, 0.0], 1e-3) {
            Err(AweError::NonFinite(msg)) => assert!(msg.contains("coordinate 1"), "{msg}"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn one_layer_cross_entropy() {
        // logits = W x + b over 3 classes, label 2; loss = -log_softmax[2].
        let x = [0.3, -1.2, 0.8];
        let label = 2;
        let forward = |t: &[f64]| -> (f64, Vec<f64>) {
            let mut z = [0.0; 3];
            for r in 0..3 {
                z[r] = t[9 + r] + (0..3).map(|c| t[r * 3 + c] * x[c]).sum::<f64>();
            }
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let p: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
            (lse - z[label], p)
        };
        let theta: Vec<f64> = (0..12).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let (_, p) = forward(&theta);
        let mut g = vec![0.0; 12];
        for r in 0..3 {
            let dz = p[r] - if r == label { 1.0 } else { 0.0 };
            for c in 0..3 {
                g[r * 3 + c] = dz * x[c];
            }
            g[9 + r] = dz;
        }
        let r = grad_check(|t| forward(t).0, &theta, &g, 1e-3).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }
}
