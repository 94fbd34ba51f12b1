use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Two-sided pooled two-proportion z-test. Returns 1 when the pooled
/// variance vanishes (both groups all-fail or all-succeed).
pub fn compare_proportions(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<f64> {
    if n1 == 0 || n2 == 0 || k1 > n1 || k2 > n2 {
        return Err(Error::invalid(format!("invalid proportions {k1}/{n1} and {k2}/{n2}")));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1f + n2f);
    let var = pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f);
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = (k1 as f64 / n1f - k2 as f64 / n2f) / var.sqrt();
    Ok(two_sided_normal(z))
}

fn two_sided_normal(z: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom.
pub fn compare_samples(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::invalid("each sample needs at least two values"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples contain non-finite values"));
    }
    let (mx, vx) = mean_var(xs);
    let (my, vy) = mean_var(ys);
    let (ax, ay) = (vx / xs.len() as f64, vy / ys.len() as f64);
    let se2 = ax + ay;
    if se2 <= 0.0 {
        return Ok(if mx == my { 1.0 } else { 0.0 });
    }
    let t = (mx - my) / se2.sqrt();
    let df = se2 * se2 / (ax * ax / (xs.len() as f64 - 1.0) + ay * ay / (ys.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Internal(format!("t distribution: {e}")))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}
