//! Linear IV/GMM estimators with heteroskedasticity-robust variances.
//!
//! All estimators are written over a generic `(y, x, Z)` triple. On grouped
//! data (indicator instruments) they collapse to weighted averages of the
//! per-group Wald ratios `ybar_s / xbar_s`; those closed forms are used as
//! oracles in the tests, never as the implementation path.
//!
//! The distinguishing estimator here weights the moments by the inverse of
//! `Omega_v = sum_i vhat_i^2 z_i z_i'`, built from *first-stage* residuals,
//! so that informative instruments keep their weight no matter how small
//! their first-stage error variance is.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dataset::{Dataset, GroupedView};
use crate::error::{Error, Result};

/// Upper 5% quantile of the chi-squared distribution with 1 df.
pub const CHI2_1_CRIT_5PCT: f64 = 3.841458820694124;

/// Estimator tag carried by every [`Estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ols,
    TwoSls,
    Gmmf,
    Gmm2,
    GmmInfeasible,
    GmmufInfeasible,
    /// Period-variance-weighted average of cross-sectional IV estimators
    /// (panel use only).
    SigmaVWeighted,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::TwoSls => "2sls",
            Method::Gmmf => "gmmf",
            Method::Gmm2 => "gmm2",
            Method::GmmInfeasible => "gmm_infeasible",
            Method::GmmufInfeasible => "gmmuf_infeasible",
            Method::SigmaVWeighted => "sigma_v",
        }
    }
}

/// Point estimate with robust (and optionally non-robust) variance and,
/// on grouped data, the weight decomposition over groups.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub method: Method,
    pub beta_hat: f64,
    pub var_robust: Option<f64>,
    pub var_nonrobust: Option<f64>,
    pub weights: Option<Vec<f64>>,
}

/// First-stage regression of `x` on `Z`.
#[derive(Debug, Clone)]
pub struct FirstStage {
    pub pi_hat: DVector<f64>,
    pub v_hat: DVector<f64>,
    /// `sum_i vhat_i^2 z_i z_i'`.
    pub omega_v: DMatrix<f64>,
    /// Per-group residual variances `(1/n_s) sum_j vhat_js^2`; grouped data only.
    pub sigma2_v_s: Option<Vec<f64>>,
}

pub(crate) fn spd_chol(a: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(a.clone()).ok_or_else(|| Error::Singular {
        context: context.to_string(),
    })
}

/// `sum_i w_i z_i z_i'` as `Z' diag(w) Z`.
pub(crate) fn weighted_gram(z: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let (n, k) = z.shape();
    let mut out = DMatrix::zeros(k, k);
    // accumulate upper triangle row by row
    for i in 0..n {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        for a in 0..k {
            let za = z[(i, a)];
            if za == 0.0 {
                continue;
            }
            let waz = wi * za;
            for b in a..k {
                out[(a, b)] += waz * z[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

/// OLS of `x` on `Z` with robust moment variance pieces.
///
/// Pass the grouped view when available so the per-group residual variances
/// are attached; they feed the grouped F-statistics and weights.
pub fn first_stage(d: &Dataset, gv: Option<&GroupedView>) -> Result<FirstStage> {
    let z = d.z();
    let zz = z.transpose() * z;
    let chol = spd_chol(&zz, "Z'Z")?;
    let zx = z.transpose() * d.x();
    let pi_hat = chol.solve(&zx);
    let v_hat = d.x() - z * &pi_hat;
    let v2 = v_hat.map(|v| v * v);
    let omega_v = weighted_gram(z, &v2);
    let sigma2_v_s = gv.map(|gv| {
        let mut acc = vec![0.0f64; gv.n_groups()];
        for (i, &g) in gv.group_index().iter().enumerate() {
            acc[g] += v2[i];
        }
        acc.iter()
            .zip(gv.n_s())
            .map(|(s, &c)| s / c as f64)
            .collect()
    });
    Ok(FirstStage {
        pi_hat,
        v_hat,
        omega_v,
        sigma2_v_s,
    })
}

/// OLS of `y` on `x` (no intercept; exogenous variables are assumed
/// partialled out) with robust variance `(x'x)^-2 sum x_i^2 uhat_i^2`.
pub fn ols(y: &DVector<f64>, x: &DVector<f64>) -> Result<Estimate> {
    let xx = x.dot(x);
    if xx <= 0.0 {
        return Err(Error::ZeroRegressor);
    }
    let beta = x.dot(y) / xx;
    let n = y.len() as f64;
    let mut meat = 0.0;
    let mut ss = 0.0;
    for i in 0..y.len() {
        let u = y[i] - x[i] * beta;
        meat += x[i] * x[i] * u * u;
        ss += u * u;
    }
    Ok(Estimate {
        method: Method::Ols,
        beta_hat: beta,
        var_robust: Some(meat / (xx * xx)),
        var_nonrobust: Some(ss / n / xx),
        weights: None,
    })
}

fn group_weights_2sls(gv: &GroupedView) -> Vec<f64> {
    let q: Vec<f64> = gv
        .n_s()
        .iter()
        .zip(gv.xbar_s())
        .map(|(&n, &xb)| n as f64 * xb * xb)
        .collect();
    let total: f64 = q.iter().sum();
    q.iter().map(|v| v / total).collect()
}

/// Two-stage least squares with robust sandwich variance.
pub fn two_sls(d: &Dataset, gv: Option<&GroupedView>) -> Result<Estimate> {
    let z = d.z();
    let zz = z.transpose() * z;
    let chol = spd_chol(&zz, "Z'Z")?;
    let zx = z.transpose() * d.x();
    let zy = z.transpose() * d.y();
    let a = chol.solve(&zx); // (Z'Z)^-1 Z'x
    let q = zx.dot(&a); // x' P_Z x
    if q <= 1e-14 * d.x().dot(d.x()).max(1.0) {
        return Err(Error::NoFirstStageSignal);
    }
    let beta = a.dot(&zy) / q;
    let u = d.y() - d.x() * beta;
    let u2 = u.map(|v| v * v);
    let omega_u = weighted_gram(z, &u2);
    let var_robust = (&omega_u * &a).dot(&a) / (q * q);
    let sigma2_u = u2.sum() / d.n() as f64;
    Ok(Estimate {
        method: Method::TwoSls,
        beta_hat: beta,
        var_robust: Some(var_robust),
        var_nonrobust: Some(sigma2_u / q),
        weights: gv.map(group_weights_2sls),
    })
}

/// Rejects weight matrices with a numerically dead diagonal block, i.e. an
/// instrument whose residual-weighted gram entry is zero relative to the
/// natural scale `(z'z)_ii * mean(ref^2)` (`ref` = regressand of the
/// residual regression).
pub(crate) fn check_weight_diag(
    omega: &DMatrix<f64>,
    z: &DMatrix<f64>,
    reference: &DVector<f64>,
    context: &str,
) -> Result<()> {
    let n = z.nrows() as f64;
    let mean_sq = reference.dot(reference) / n;
    for i in 0..omega.nrows() {
        let zz_ii = z.column(i).dot(&z.column(i));
        if omega[(i, i)] <= 1e-14 * zz_ii * mean_sq {
            return Err(Error::Singular {
                context: format!("{context}: zero block at instrument {}", i + 1),
            });
        }
    }
    Ok(())
}

/// GMM estimator with moment weight matrix `Omega_v^-1` built from the
/// first-stage residuals, and robust sandwich variance from its own
/// structural residuals.
pub fn gmmf(d: &Dataset, fs: &FirstStage, gv: Option<&GroupedView>) -> Result<Estimate> {
    let z = d.z();
    check_weight_diag(&fs.omega_v, z, d.x(), "omega_v")?;
    let chol = spd_chol(&fs.omega_v, "omega_v")?;
    let zx = z.transpose() * d.x();
    let zy = z.transpose() * d.y();
    let c = chol.solve(&zx); // Omega_v^-1 Z'x
    let denom = zx.dot(&c); // x' Z Omega_v^-1 Z' x
    if denom <= 0.0 {
        return Err(Error::NoFirstStageSignal);
    }
    let beta = c.dot(&zy) / denom;
    let u2 = (d.y() - d.x() * beta).map(|v| v * v);
    let omega_u = weighted_gram(z, &u2);
    let var_robust = (&omega_u * &c).dot(&c) / (denom * denom);
    let weights = match (gv, &fs.sigma2_v_s) {
        (Some(gv), Some(s2)) => {
            let f: Vec<f64> = gv
                .n_s()
                .iter()
                .zip(gv.xbar_s())
                .zip(s2)
                .map(|((&n, &xb), &v)| n as f64 * xb * xb / v)
                .collect();
            let total: f64 = f.iter().sum();
            Some(f.iter().map(|v| v / total).collect())
        }
        _ => None,
    };
    Ok(Estimate {
        method: Method::Gmmf,
        beta_hat: beta,
        var_robust: Some(var_robust),
        var_nonrobust: None,
        weights,
    })
}

/// Two-step GMM: first step 2SLS, second step weighted by the inverse of
/// `Omega_u = sum uhat_i^2 z_i z_i'` with `uhat` from the first step.
pub fn gmm_two_step(d: &Dataset) -> Result<Estimate> {
    let step1 = two_sls(d, None)?;
    let z = d.z();
    let u2 = (d.y() - d.x() * step1.beta_hat).map(|v| v * v);
    let omega_u = weighted_gram(z, &u2);
    check_weight_diag(&omega_u, z, d.y(), "omega_u")?;
    let chol = spd_chol(&omega_u, "omega_u")?;
    let zx = z.transpose() * d.x();
    let zy = z.transpose() * d.y();
    let c = chol.solve(&zx);
    let denom = zx.dot(&c);
    if denom <= 0.0 {
        return Err(Error::NoFirstStageSignal);
    }
    let beta = c.dot(&zy) / denom;
    // efficient-GMM variance at the second-step weight
    let u2b = (d.y() - d.x() * beta).map(|v| v * v);
    let omega_u2 = weighted_gram(z, &u2b);
    let var_robust = (&omega_u2 * &c).dot(&c) / (denom * denom);
    Ok(Estimate {
        method: Method::Gmm2,
        beta_hat: beta,
        var_robust: Some(var_robust),
        var_nonrobust: None,
        weights: None,
    })
}

/// Per-group IV estimates `ybar_s / xbar_s`.
#[derive(Debug, Clone)]
pub struct GroupIv {
    /// `None` marks groups with `xbar_s == 0`, excluded from decompositions.
    pub beta_s: Vec<Option<f64>>,
    pub undefined: usize,
}

pub fn group_iv(gv: &GroupedView) -> GroupIv {
    let mut undefined = 0;
    let beta_s = gv
        .xbar_s()
        .iter()
        .zip(gv.ybar_s())
        .map(|(&xb, &yb)| {
            if xb == 0.0 {
                undefined += 1;
                None
            } else {
                Some(yb / xb)
            }
        })
        .collect();
    GroupIv { beta_s, undefined }
}

fn weighted_group_average(
    gv: &GroupedView,
    raw: Vec<f64>,
    method: Method,
) -> Result<Estimate> {
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoFirstStageSignal);
    }
    let weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let beta = gv
        .xbar_s()
        .iter()
        .zip(gv.ybar_s())
        .zip(&weights)
        .map(|((&xb, &yb), &w)| if xb == 0.0 { 0.0 } else { w * yb / xb })
        .sum();
    Ok(Estimate {
        method,
        beta_hat: beta,
        var_robust: None,
        var_nonrobust: None,
        weights: Some(weights),
    })
}

/// Infeasible GMM group estimator weighting by the true `sigma2_u_s`.
pub fn infeasible_gmm(gv: &GroupedView, sigma2_u_s: &[f64]) -> Result<Estimate> {
    if sigma2_u_s.len() != gv.n_groups() || sigma2_u_s.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidConfig("sigma2_u_s must be positive, one per group".into()));
    }
    let raw: Vec<f64> = gv
        .n_s()
        .iter()
        .zip(gv.xbar_s())
        .zip(sigma2_u_s)
        .map(|((&n, &xb), &su)| n as f64 * xb * xb / su)
        .collect();
    weighted_group_average(gv, raw, Method::GmmInfeasible)
}

/// Infeasible estimator weighting by `sigma2_u_s * sigma2_v_s`.
pub fn infeasible_gmmuf(gv: &GroupedView, sigma2_u_s: &[f64], sigma2_v_s: &[f64]) -> Result<Estimate> {
    if sigma2_u_s.len() != gv.n_groups()
        || sigma2_v_s.len() != gv.n_groups()
        || sigma2_u_s.iter().any(|&v| v <= 0.0)
        || sigma2_v_s.iter().any(|&v| v <= 0.0)
    {
        return Err(Error::InvalidConfig("variances must be positive, one per group".into()));
    }
    let raw: Vec<f64> = gv
        .n_s()
        .iter()
        .zip(gv.xbar_s())
        .zip(sigma2_u_s.iter().zip(sigma2_v_s))
        .map(|((&n, &xb), (&su, &sv))| n as f64 * xb * xb / (su * sv))
        .collect();
    weighted_group_average(gv, raw, Method::GmmufInfeasible)
}

/// Wald statistic `(beta_hat - beta0)^2 / var_robust`.
pub fn wald(e: &Estimate, beta0: f64) -> Result<f64> {
    match e.var_robust {
        Some(v) if v > 0.0 => Ok((e.beta_hat - beta0).powi(2) / v),
        _ => Err(Error::ZeroVariance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::grouped_view;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn indicator(groups: &[usize], s: usize) -> DMatrix<f64> {
        let n = groups.len();
        let mut z = DMatrix::zeros(n, s);
        for (i, &g) in groups.iter().enumerate() {
            z[(i, g)] = 1.0;
        }
        z
    }

    fn d0() -> Dataset {
        Dataset::new(
            vec![2., 2., 1., 3.],
            vec![1., 3., 1., 3.],
            indicator(&[0, 0, 1, 1], 2),
        )
        .unwrap()
    }

    /// group 1: x = (0.9, 1.1), y = (0.8, 1.2); group 2: x = (-2, 6), y = (4, 4)
    /// so beta_1 = 1, beta_2 = 2, sigma2_v = (0.01, 16).
    fn d1() -> Dataset {
        Dataset::new(
            vec![0.8, 1.2, 4., 4.],
            vec![0.9, 1.1, -2., 6.],
            indicator(&[0, 0, 1, 1], 2),
        )
        .unwrap()
    }

    #[test]
    fn first_stage_d0() {
        let d = d0();
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        assert_relative_eq!(fs.pi_hat[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(fs.pi_hat[1], 2.0, epsilon = 1e-12);
        let s2 = fs.sigma2_v_s.unwrap();
        assert_relative_eq!(s2[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s2[1], 1.0, epsilon = 1e-12);
        // Z'vhat = 0
        let zv = d.z().transpose() * &fs.v_hat;
        assert!(zv.amax() < 1e-10);
        // diagonal of omega_v equals n_s * sigma2_v_s
        assert_relative_eq!(fs.omega_v[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn first_stage_d1_variances() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        let s2 = fs.sigma2_v_s.unwrap();
        assert_relative_eq!(s2[0], 0.01, epsilon = 1e-12);
        assert_relative_eq!(s2[1], 16.0, epsilon = 1e-12);
    }

    #[test]
    fn first_stage_exact_fit_gives_zero_omega() {
        let z = indicator(&[0, 0, 1, 1], 2);
        let d = Dataset::new(vec![0.; 4], vec![2., 2., 5., 5.], z).unwrap();
        let fs = first_stage(&d, None).unwrap();
        assert!(fs.v_hat.amax() < 1e-12);
        assert!(fs.omega_v.amax() < 1e-12);
    }

    #[test]
    fn ols_d0() {
        let d = d0();
        let e = ols(d.y(), d.x()).unwrap();
        assert_relative_eq!(e.beta_hat, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn ols_exact_fit_zero_variance() {
        let x = DVector::from_vec(vec![1., 2., 3.]);
        let y = &x * 2.0;
        let e = ols(&y, &x).unwrap();
        assert_relative_eq!(e.beta_hat, 2.0, epsilon = 1e-12);
        assert!(e.var_robust.unwrap() < 1e-24);
    }

    #[test]
    fn ols_zero_regressor() {
        let x = DVector::from_vec(vec![0., 0.]);
        let y = DVector::from_vec(vec![1., 2.]);
        assert!(matches!(ols(&y, &x), Err(Error::ZeroRegressor)));
    }

    #[test]
    fn two_sls_d1() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        let e = two_sls(&d, Some(&gv)).unwrap();
        assert_relative_eq!(e.beta_hat, 1.8, epsilon = 1e-12);
        let w = e.weights.unwrap();
        assert_relative_eq!(w[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(w[1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn two_sls_equal_group_estimates() {
        // both group Wald ratios equal 1 -> 2SLS = 1 regardless of weights
        let d = Dataset::new(
            vec![1., 3., 0.5, 3.5],
            vec![1., 3., 0.5, 3.5],
            indicator(&[0, 0, 1, 1], 2),
        )
        .unwrap();
        let e = two_sls(&d, None).unwrap();
        assert_relative_eq!(e.beta_hat, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_sls_just_identified_closed_form() {
        let z = DMatrix::from_column_slice(3, 1, &[1., 2., 3.]);
        let x = vec![2., 1., 4.];
        let y = vec![1., 0., 5.];
        let d = Dataset::new(y.clone(), x.clone(), z.clone()).unwrap();
        let e = two_sls(&d, None).unwrap();
        let zy: f64 = z.column(0).iter().zip(&y).map(|(a, b)| a * b).sum();
        let zx: f64 = z.column(0).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert_relative_eq!(e.beta_hat, zy / zx, epsilon = 1e-12);
    }

    #[test]
    fn gmmf_d1() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        let e = gmmf(&d, &fs, Some(&gv)).unwrap();
        assert_relative_eq!(e.beta_hat, 201.0 / 200.5, epsilon = 1e-10);
        let w = e.weights.unwrap();
        assert_relative_eq!(w[0], 200.0 / 200.5, epsilon = 1e-10);
        assert_relative_eq!(w[1], 0.5 / 200.5, epsilon = 1e-10);
    }

    #[test]
    fn gmmf_equals_two_sls_under_equal_variances() {
        let d = d0(); // both groups have sigma2_v = 1
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        let a = gmmf(&d, &fs, Some(&gv)).unwrap();
        let b = two_sls(&d, Some(&gv)).unwrap();
        assert_relative_eq!(a.beta_hat, b.beta_hat, epsilon = 1e-10);
    }

    #[test]
    fn gmmf_denominator_equals_s_times_f_robust() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        let zx = d.z().transpose() * d.x();
        let c = Cholesky::new(fs.omega_v.clone()).unwrap().solve(&zx);
        let denom = zx.dot(&c);
        // S * F_r = sum_s F_pis = 200 + 0.5
        assert_relative_eq!(denom, 200.5, epsilon = 1e-9);
    }

    #[test]
    fn gmmf_zero_residual_group_is_singular() {
        let z = indicator(&[0, 0, 1, 1], 2);
        let d = Dataset::new(vec![1., 2., 3., 4.], vec![2., 2., 1., 3.], z).unwrap();
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        let err = gmmf(&d, &fs, Some(&gv)).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
        assert!(err.to_string().contains("instrument 1"));
    }

    #[test]
    fn gmm_two_step_matches_dense_oracle() {
        let d = d1();
        let e = gmm_two_step(&d).unwrap();
        // independent dense evaluation of the closed form
        let beta1 = two_sls(&d, None).unwrap().beta_hat;
        let u = d.y() - d.x() * beta1;
        let mut omega = DMatrix::zeros(2, 2);
        for i in 0..4 {
            let zi = d.z().row(i).transpose();
            omega += &zi * zi.transpose() * u[i] * u[i];
        }
        let oi = omega.try_inverse().unwrap();
        let zx = d.z().transpose() * d.x();
        let zy = d.z().transpose() * d.y();
        let expect = (zx.transpose() * &oi * &zy)[(0, 0)] / (zx.transpose() * &oi * &zx)[(0, 0)];
        assert_relative_eq!(e.beta_hat, expect, epsilon = 1e-10);
    }

    #[test]
    fn gmm_two_step_zero_residuals_singular() {
        // y = 2x exactly -> first-step residuals vanish
        let z = indicator(&[0, 0, 1, 1], 2);
        let x = vec![1., 3., 2., 6.];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = Dataset::new(y, x, z).unwrap();
        assert!(matches!(gmm_two_step(&d), Err(Error::Singular { .. })));
    }

    #[test]
    fn group_iv_d1() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        let g = group_iv(&gv);
        assert_relative_eq!(g.beta_s[0].unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(g.beta_s[1].unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(g.undefined, 0);
    }

    #[test]
    fn group_iv_zero_xbar_flagged() {
        let z = indicator(&[0, 0, 1, 1], 2);
        let d = Dataset::new(vec![1., 2., 3., 4.], vec![-1., 1., 2., 4.], z).unwrap();
        let gv = grouped_view(&d).unwrap();
        let g = group_iv(&gv);
        assert!(g.beta_s[0].is_none());
        assert_eq!(g.undefined, 1);
    }

    #[test]
    fn infeasible_gmm_equal_variances_is_two_sls() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        let a = infeasible_gmm(&gv, &[3.0, 3.0]).unwrap();
        let b = two_sls(&d, None).unwrap();
        assert_relative_eq!(a.beta_hat, b.beta_hat, epsilon = 1e-10);
    }

    #[test]
    fn infeasible_gmm_d1() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        // raw weights: n xbar^2 / s2u = (2/1, 8/4) = (2, 2) -> beta = (1+2)/2
        let e = infeasible_gmm(&gv, &[1.0, 4.0]).unwrap();
        assert_relative_eq!(e.beta_hat, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_gmmuf_d1() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        // raw: n xbar^2/(su sv) = (2/(1*0.01), 8/(4*16)) = (200, 0.125)
        let e = infeasible_gmmuf(&gv, &[1.0, 4.0], &[0.01, 16.0]).unwrap();
        assert_relative_eq!(e.beta_hat, 200.25 / 200.125, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_gmmuf_reduces_to_gmm_under_equal_sigma_v() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        let a = infeasible_gmmuf(&gv, &[1.0, 4.0], &[2.0, 2.0]).unwrap();
        let b = infeasible_gmm(&gv, &[1.0, 4.0]).unwrap();
        assert_relative_eq!(a.beta_hat, b.beta_hat, epsilon = 1e-12);
    }

    #[test]
    fn wald_definition() {
        let e = Estimate {
            method: Method::TwoSls,
            beta_hat: 1.0,
            var_robust: Some(0.25),
            var_nonrobust: None,
            weights: None,
        };
        assert_relative_eq!(wald(&e, 1.0).unwrap(), 0.0);
        // beta - beta0 = 2 se -> W = 4
        assert_relative_eq!(wald(&e, 0.0).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn wald_zero_variance_rejected() {
        let e = Estimate {
            method: Method::Ols,
            beta_hat: 1.0,
            var_robust: Some(0.0),
            var_nonrobust: None,
            weights: None,
        };
        assert!(matches!(wald(&e, 0.0), Err(Error::ZeroVariance)));
    }

    #[test]
    fn gmmf_wald_matches_dense_sandwich_oracle() {
        let d = d1();
        let gv = grouped_view(&d).unwrap();
        let fs = first_stage(&d, Some(&gv)).unwrap();
        let e = gmmf(&d, &fs, Some(&gv)).unwrap();
        let w = wald(&e, 1.0).unwrap();
        // brute-force dense evaluation of the sandwich
        let ovi = fs.omega_v.clone().try_inverse().unwrap();
        let zx = d.z().transpose() * d.x();
        let u = d.y() - d.x() * e.beta_hat;
        let mut omega_u = DMatrix::zeros(2, 2);
        for i in 0..4 {
            let zi = d.z().row(i).transpose();
            omega_u += &zi * zi.transpose() * u[i] * u[i];
        }
        let denom = (zx.transpose() * &ovi * &zx)[(0, 0)];
        let meat = (zx.transpose() * &ovi * &omega_u * &ovi * &zx)[(0, 0)];
        let var = meat / (denom * denom);
        assert_relative_eq!(w, (e.beta_hat - 1.0).powi(2) / var, epsilon = 1e-10);
    }
}
