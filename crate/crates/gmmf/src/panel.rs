//! Forward-orthogonal-deviations machinery, block instrument layout and the
//! panel-specific estimators and cross-section decompositions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{spd_chol, Estimate, Method};

/// Forward orthogonal deviations: maps a length-`L` series to `L - 1` values
/// `w*_t = sqrt((L-1-t)/(L-t)) * (w_t - mean(w_{t+1..L-1}))` (0-based `t`).
/// Annihilates unit constants and preserves i.i.d. variance.
pub fn fod_transform(series: &[f64]) -> Result<Vec<f64>> {
    let l = series.len();
    if l < 2 {
        return Err(Error::InvalidData("FOD needs at least two observations".into()));
    }
    let mut out = Vec::with_capacity(l - 1);
    let mut tail: f64 = series.iter().sum();
    for t in 0..l - 1 {
        tail -= series[t];
        let m = (l - 1 - t) as f64;
        let c = (m / (m + 1.0)).sqrt();
        out.push(c * (series[t] - tail / m));
    }
    Ok(out)
}

/// FOD-transformed panel with the lower-triangular instrument layout.
///
/// Built from `n x (T+1)` levels `y_0..y_T`. Estimating equations run over
/// `t = 2..T-1` (`T - 2` rows per unit); equation `t` instruments are
/// `(y_1, ..., y_{t-1})`, so `k_z = (T-1)(T-2)/2` and the per-unit `Z_i` is
/// block lower-triangular with period-exclusive column blocks.
pub struct PanelData {
    levels: DMatrix<f64>,
    /// n x (T-2); column j is y*_t for t = j + 2.
    y_star: DMatrix<f64>,
    /// n x (T-2); column j is the FOD lag y*_{t-1} over the same window.
    y_lag_star: DMatrix<f64>,
    t_max: usize,
    k_z: usize,
}

impl PanelData {
    pub fn n(&self) -> usize {
        self.levels.nrows()
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// Number of estimating equations per unit, `T - 2`.
    pub fn n_periods(&self) -> usize {
        self.t_max - 2
    }

    pub fn k_z(&self) -> usize {
        self.k_z
    }

    pub fn levels(&self) -> &DMatrix<f64> {
        &self.levels
    }

    pub fn y_star(&self) -> &DMatrix<f64> {
        &self.y_star
    }

    pub fn y_lag_star(&self) -> &DMatrix<f64> {
        &self.y_lag_star
    }

    /// Column offset of period `j`'s instrument block; block width is `j + 1`.
    pub fn block_offset(&self, j: usize) -> usize {
        // widths 1, 2, ..: offset = j(j+3)/2 - j = sum of (1..=j) shifted
        (0..j).map(|l| l + 1).sum()
    }

    /// `(T-2) x k_z` instrument matrix for unit `i`.
    pub fn z_block(&self, i: usize) -> DMatrix<f64> {
        let rows = self.n_periods();
        let mut z = DMatrix::zeros(rows, self.k_z);
        for j in 0..rows {
            let off = self.block_offset(j);
            let t = j + 2;
            for s in 1..t {
                z[(j, off + s - 1)] = self.levels[(i, s)];
            }
        }
        z
    }

    /// `n x (t-1)` instrument matrix of period `t` (`t = 2..T-1`):
    /// columns `y_1..y_{t-1}`.
    pub fn z_t(&self, t: usize) -> DMatrix<f64> {
        assert!((2..self.t_max).contains(&t), "period out of range");
        self.levels.columns(1, t - 1).into_owned()
    }

    /// Stacked `n(T-2) x k_z` instrument matrix (unit-major row order).
    pub fn stacked_z(&self) -> DMatrix<f64> {
        let rows = self.n_periods();
        let mut z = DMatrix::zeros(self.n() * rows, self.k_z);
        for i in 0..self.n() {
            z.rows_mut(i * rows, rows).copy_from(&self.z_block(i));
        }
        z
    }

    /// Stacked `y*` in the row order of [`PanelData::stacked_z`].
    pub fn stacked_y_star(&self) -> DVector<f64> {
        stack_rows(&self.y_star)
    }

    /// Stacked FOD lag in the row order of [`PanelData::stacked_z`].
    pub fn stacked_y_lag_star(&self) -> DVector<f64> {
        stack_rows(&self.y_lag_star)
    }
}

fn stack_rows(m: &DMatrix<f64>) -> DVector<f64> {
    let (n, k) = m.shape();
    DVector::from_fn(n * k, |r, _| m[(r / k, r % k)])
}

/// Builds the FOD panel from `n x (T+1)` levels `y_0..y_T`.
pub fn build_panel(levels: &DMatrix<f64>) -> Result<PanelData> {
    if levels.ncols() < 4 {
        return Err(Error::InvalidData("panel needs T >= 3 (at least 4 level columns)".into()));
    }
    if levels.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("panel contains non-finite values".into()));
    }
    let t_max = levels.ncols() - 1;
    let n = levels.nrows();
    if n == 0 {
        return Err(Error::InvalidData("panel has no units".into()));
    }
    let rows = t_max - 2;
    let k_z = (t_max - 1) * (t_max - 2) / 2;
    let mut y_star = DMatrix::zeros(n, rows);
    let mut y_lag_star = DMatrix::zeros(n, rows);
    for i in 0..n {
        // y*_t for t = 2..T-1 is the FOD of (y_2, ..., y_T) minus its last row;
        // the lag uses the same forward windows on (y_1, ..., y_{T-1}).
        for (j, t) in (2..t_max).enumerate() {
            let m = (t_max - t) as f64;
            let c = (m / (m + 1.0)).sqrt();
            let fut_y: f64 = (t + 1..=t_max).map(|s| levels[(i, s)]).sum();
            let fut_lag: f64 = (t..t_max).map(|s| levels[(i, s)]).sum();
            y_star[(i, j)] = c * (levels[(i, t)] - fut_y / m);
            y_lag_star[(i, j)] = c * (levels[(i, t - 1)] - fut_lag / m);
        }
    }
    Ok(PanelData {
        levels: levels.clone(),
        y_star,
        y_lag_star,
        t_max,
        k_z,
    })
}

/// Stacked panel estimates and first-stage diagnostics.
pub struct PanelEstimates {
    /// Nonrobust first-stage F, `pi' Z'Z pi / (k_z * sigma2_v)` with
    /// `sigma2_v = vhat'vhat / (n(T-2))`.
    pub f_nonrobust: f64,
    /// Robust F with the by-unit clustered `Omega*_v`.
    pub f_robust: f64,
    pub ols: Estimate,
    pub two_sls: Estimate,
    pub gmm2: Estimate,
    pub gmmf: Estimate,
}

/// Stacked OLS, 2SLS, two-step GMM and GMMf on the FOD panel, with the
/// weight matrices `Omega*_v = sum_i Z_i' vhat_i vhat_i' Z_i` (first-stage
/// residuals) and `Omega*_u` (2SLS residuals) clustered by unit. Variances
/// are likewise clustered.
pub fn panel_estimators(pd: &PanelData) -> Result<PanelEstimates> {
    let n = pd.n();
    let rows = pd.n_periods();
    let k = pd.k_z();
    let nr = (n * rows) as f64;

    let mut zz = DMatrix::<f64>::zeros(k, k);
    let mut zx = DVector::<f64>::zeros(k);
    let mut zy = DVector::<f64>::zeros(k);
    let (mut xx, mut xy, mut yy_unused) = (0.0f64, 0.0f64, 0.0f64);
    let blocks: Vec<DMatrix<f64>> = (0..n).map(|i| pd.z_block(i)).collect();
    for i in 0..n {
        let zi = &blocks[i];
        zz += zi.transpose() * zi;
        for j in 0..rows {
            let (xij, yij) = (pd.y_lag_star[(i, j)], pd.y_star[(i, j)]);
            for c in 0..k {
                zx[c] += zi[(j, c)] * xij;
                zy[c] += zi[(j, c)] * yij;
            }
            xx += xij * xij;
            xy += xij * yij;
            yy_unused += yij * yij;
        }
    }
    let _ = yy_unused;
    if xx <= 0.0 {
        return Err(Error::ZeroRegressor);
    }

    let zz_chol = spd_chol(&zz, "Z'Z (panel)")?;
    let a = zz_chol.solve(&zx); // (Z'Z)^-1 Z'x
    let q = zx.dot(&a);
    if q <= 1e-14 * xx {
        return Err(Error::NoFirstStageSignal);
    }
    let pi_hat = &a;
    let g_2sls = a.dot(&zy) / q;
    let g_ols = xy / xx;

    // second pass: first-stage and 2SLS residuals per unit, clustered grams
    let mut omega_v = DMatrix::<f64>::zeros(k, k);
    let mut omega_u = DMatrix::<f64>::zeros(k, k);
    let mut ssv = 0.0f64;
    let mut ols_meat = 0.0f64;
    let mut score_2sls: Vec<f64> = Vec::with_capacity(n); // per-unit (P_Z x)_i' uhat_i
    for i in 0..n {
        let zi = &blocks[i];
        let mut zv = DVector::<f64>::zeros(k);
        let mut zu = DVector::<f64>::zeros(k);
        let mut su = 0.0f64;
        for j in 0..rows {
            let (xij, yij) = (pd.y_lag_star[(i, j)], pd.y_star[(i, j)]);
            let fit: f64 = (0..k).map(|c| zi[(j, c)] * pi_hat[c]).sum();
            let v = xij - fit;
            let u = yij - g_2sls * xij;
            ssv += v * v;
            ols_meat += {
                let uo = yij - g_ols * xij;
                xij * xij * uo * uo
            };
            su += fit * u;
            for c in 0..k {
                zv[c] += zi[(j, c)] * v;
                zu[c] += zi[(j, c)] * u;
            }
        }
        omega_v += &zv * zv.transpose();
        omega_u += &zu * zu.transpose();
        score_2sls.push(su);
    }

    let sigma2_v = ssv / nr;
    if sigma2_v <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let f_nonrobust = q / (k as f64 * sigma2_v);

    let ov_chol = spd_chol(&omega_v, "Omega_v (panel)")?;
    let c_v = ov_chol.solve(&zx);
    let denom_v = zx.dot(&c_v);
    let f_robust = denom_v / k as f64;
    let g_gmmf = zx.dot(&ov_chol.solve(&zy)) / denom_v;

    let ou_chol = spd_chol(&omega_u, "Omega_u (panel)")?;
    let c_u = ou_chol.solve(&zx);
    let denom_u = zx.dot(&c_u);
    if denom_u <= 0.0 {
        return Err(Error::NoFirstStageSignal);
    }
    let g_gmm2 = zx.dot(&ou_chol.solve(&zy)) / denom_u;

    // clustered variances; gmm2 uses the standard two-step formula
    let var_2sls = score_2sls.iter().map(|s| s * s).sum::<f64>() / (q * q);
    let mut meat_f = 0.0f64;
    let mut meat_2 = 0.0f64;
    for i in 0..n {
        let zi = &blocks[i];
        let mut sf = 0.0f64;
        let mut s2 = 0.0f64;
        for j in 0..rows {
            let (xij, yij) = (pd.y_lag_star[(i, j)], pd.y_star[(i, j)]);
            let zrow = zi.row(j);
            let uf = yij - g_gmmf * xij;
            let u2 = yij - g_gmm2 * xij;
            let wf: f64 = (0..k).map(|c| zrow[c] * c_v[c]).sum();
            let w2: f64 = (0..k).map(|c| zrow[c] * c_u[c]).sum();
            sf += wf * uf;
            s2 += w2 * u2;
        }
        meat_f += sf * sf;
        meat_2 += s2 * s2;
    }
    let var_gmmf = meat_f / (denom_v * denom_v);
    let var_gmm2 = meat_2 / (denom_u * denom_u);

    let est = |method, beta, var: f64| Estimate {
        method,
        beta_hat: beta,
        var_robust: Some(var),
        var_nonrobust: None,
        weights: None,
    };
    Ok(PanelEstimates {
        f_nonrobust,
        f_robust,
        ols: est(Method::Ols, g_ols, ols_meat / (xx * xx)),
        two_sls: est(Method::TwoSls, g_2sls, var_2sls),
        gmm2: est(Method::Gmm2, g_gmm2, var_gmm2),
        gmmf: est(Method::Gmmf, g_gmmf, var_gmmf),
    })
}

/// Per-period 2SLS decomposition of the stacked estimator.
pub struct CrossSection {
    /// Periods `t = 2..T-1` in order.
    pub periods: Vec<usize>,
    /// Cross-sectional IV estimates `gamma_t`.
    pub gamma_t: Vec<f64>,
    /// 2SLS weights `q_t / sum_l q_l`, `q_t = x_t' P_{Z_t} x_t`.
    pub w_2sls: Vec<f64>,
    /// Nonrobust per-period first-stage F.
    pub f_t: Vec<f64>,
    /// Period first-stage variances `vhat_t' vhat_t / n`.
    pub sigma2_v_t: Vec<f64>,
}

/// Per-period cross-sectional 2SLS estimates, weights and diagnostics.
/// Because period instrument blocks are column-exclusive, the stacked 2SLS
/// estimator is exactly `sum_t w_2sls_t * gamma_t`.
pub fn cross_section_decomposition(pd: &PanelData) -> Result<CrossSection> {
    let n = pd.n();
    let mut periods = Vec::new();
    let mut gamma_t = Vec::new();
    let mut q_t = Vec::new();
    let mut f_t = Vec::new();
    let mut sigma2_v_t = Vec::new();
    for (j, t) in (2..pd.t_max()).enumerate() {
        let zt = pd.z_t(t);
        let xt = pd.y_lag_star.column(j).into_owned();
        let yt = pd.y_star.column(j).into_owned();
        let zz = zt.transpose() * &zt;
        let chol = spd_chol(&zz, &format!("Z_t'Z_t (t = {t})"))?;
        let zx = zt.transpose() * &xt;
        let zy = zt.transpose() * &yt;
        let a = chol.solve(&zx);
        let q = zx.dot(&a);
        if q <= 0.0 {
            return Err(Error::NoFirstStageSignal);
        }
        let v = &xt - &zt * &a;
        let s2 = v.dot(&v) / n as f64;
        if s2 <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        periods.push(t);
        gamma_t.push(a.dot(&zy) / q);
        f_t.push(q / ((t - 1) as f64 * s2));
        sigma2_v_t.push(s2);
        q_t.push(q);
    }
    let total: f64 = q_t.iter().sum();
    let w_2sls = q_t.iter().map(|q| q / total).collect();
    Ok(CrossSection {
        periods,
        gamma_t,
        w_2sls,
        f_t,
        sigma2_v_t,
    })
}

/// Weighted average of the cross-sectional estimators with weights
/// `(q_t / sigma2_v_t) / sum_l (q_l / sigma2_v_l)`: reweights 2SLS by the
/// period-specific first-stage error variances.
pub fn sigma_v_weighted(pd: &PanelData) -> Result<Estimate> {
    let cs = cross_section_decomposition(pd)?;
    sigma_v_weighted_from(&cs)
}

/// Same as [`sigma_v_weighted`] but reusing an existing decomposition.
pub fn sigma_v_weighted_from(cs: &CrossSection) -> Result<Estimate> {
    let total_q: f64 = cs.w_2sls.iter().sum(); // = 1; keeps formula explicit below
    let _ = total_q;
    let raw: Vec<f64> = cs
        .w_2sls
        .iter()
        .zip(&cs.sigma2_v_t)
        .map(|(w, s2)| w / s2)
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let weights: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let beta = weights
        .iter()
        .zip(&cs.gamma_t)
        .map(|(w, g)| w * g)
        .sum::<f64>();
    Ok(Estimate {
        method: Method::SigmaVWeighted,
        beta_hat: beta,
        var_robust: None,
        var_nonrobust: None,
        weights: Some(weights),
    })
}
