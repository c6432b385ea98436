//! First-stage F-statistics: non-robust, robust, effective, and per-group.

use crate::dataset::{Dataset, GroupedView};
use crate::error::{Error, Result};
use crate::estimators::{check_weight_diag, spd_chol, FirstStage};

/// The four first-stage diagnostics.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub f_nonrobust: f64,
    pub f_robust: f64,
    pub f_effective: f64,
    /// Per-group F-statistics; grouped data only.
    pub f_group: Option<Vec<f64>>,
}

/// Per-group `F_s = n_s xbar_s^2 / sigma2hat_v_s`.
pub fn f_group(gv: &GroupedView, fs: &FirstStage) -> Result<Vec<f64>> {
    let s2 = fs
        .sigma2_v_s
        .as_ref()
        .ok_or_else(|| Error::InvalidData("first stage lacks per-group variances".into()))?;
    gv.n_s()
        .iter()
        .zip(gv.xbar_s())
        .zip(s2)
        .map(|((&n, &xb), &v)| {
            if v <= 0.0 {
                Err(Error::Singular {
                    context: "zero within-group first-stage variance".into(),
                })
            } else {
                Ok(n as f64 * xb * xb / v)
            }
        })
        .collect()
}

/// Robust F: `x'Z Omega_v^-1 Z'x / k_z`. On grouped data this equals the
/// mean of the per-group F-statistics.
pub fn f_robust(d: &Dataset, fs: &FirstStage) -> Result<f64> {
    check_weight_diag(&fs.omega_v, d.z(), d.x(), "omega_v")?;
    let chol = spd_chol(&fs.omega_v, "omega_v")?;
    let zx = d.z().transpose() * d.x();
    Ok(zx.dot(&chol.solve(&zx)) / d.k_z() as f64)
}

/// Non-robust F: `pi' (Z'Z) pi / (k_z * (1/n) sum vhat^2)`,
/// no degrees-of-freedom correction.
pub fn f_nonrobust(d: &Dataset, fs: &FirstStage) -> Result<f64> {
    let sigma2_v = fs.v_hat.dot(&fs.v_hat) / d.n() as f64;
    if sigma2_v <= 0.0 {
        return Err(Error::Singular {
            context: "zero first-stage residual variance".into(),
        });
    }
    let zx = d.z().transpose() * d.x();
    let quad = fs.pi_hat.dot(&zx); // pi'(Z'Z)pi = pi' Z'x
    Ok(quad / (d.k_z() as f64 * sigma2_v))
}

/// Effective F: `x' P_Z x / trace((Z'Z)^-1 Omega_v)`. Reduces to the
/// non-robust F on balanced grouped data.
pub fn f_effective(d: &Dataset, fs: &FirstStage) -> Result<f64> {
    let zz = d.z().transpose() * d.z();
    let chol = spd_chol(&zz, "Z'Z")?;
    let trace = chol.solve(&fs.omega_v).trace();
    if trace <= 0.0 {
        return Err(Error::Singular {
            context: "zero trace in effective F denominator".into(),
        });
    }
    let zx = d.z().transpose() * d.x();
    let quad = fs.pi_hat.dot(&zx);
    Ok(quad / trace)
}

/// All four diagnostics at once; `f_group` attached when a grouped view is
/// supplied.
pub fn diagnostics(d: &Dataset, fs: &FirstStage, gv: Option<&GroupedView>) -> Result<Diagnostics> {
    let f_group = match gv {
        Some(gv) => Some(f_group(gv, fs)?),
        None => None,
    };
    Ok(Diagnostics {
        f_nonrobust: f_nonrobust(d, fs)?,
        f_robust: f_robust(d, fs)?,
        f_effective: f_effective(d, fs)?,
        f_group,
    })
}
