//! Data-generating processes for the grouped-data and AR(1) panel
//! Monte Carlo experiments.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Grouped-data design: group probabilities, first-stage coefficients and
/// per-group error covariances.
///
/// `sigma_uu`/`sigma_uv` may be absent: the structural error covariances of
/// the published grouped designs live in an external supplementary table, so
/// the shipped configs carry only `(pi, sigma_vv)`. Generation then produces
/// first-stage-only data (`u = 0`), enough for every F-statistic and weight
/// decomposition but not for structural estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupedDesign {
    #[serde(rename = "S")]
    pub s: usize,
    pub probs: Vec<f64>,
    pub pi: Vec<f64>,
    pub sigma_uu: Option<Vec<f64>>,
    pub sigma_uv: Option<Vec<f64>>,
    pub sigma_vv: Vec<f64>,
    pub beta: f64,
    pub scale_d: f64,
}

impl GroupedDesign {
    pub fn validate(&self) -> Result<()> {
        let s = self.s;
        if s == 0 {
            return Err(Error::InvalidConfig("S must be positive".into()));
        }
        if self.probs.len() != s || self.pi.len() != s || self.sigma_vv.len() != s {
            return Err(Error::InvalidConfig("probs, pi, sigma_vv must each have S entries".into()));
        }
        if self.probs.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidConfig("group probabilities must be positive".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("probs sum to {total}, expected 1")));
        }
        if self.sigma_vv.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidConfig("sigma_vv entries must be positive".into()));
        }
        match (&self.sigma_uu, &self.sigma_uv) {
            (None, None) => {}
            (Some(uu), Some(uv)) => {
                if uu.len() != s || uv.len() != s {
                    return Err(Error::InvalidConfig("sigma_uu, sigma_uv must each have S entries".into()));
                }
                if uu.iter().any(|&v| v <= 0.0) {
                    return Err(Error::InvalidConfig("sigma_uu entries must be positive".into()));
                }
                for i in 0..s {
                    // each Sigma_s must be positive semidefinite
                    if uv[i] * uv[i] > uu[i] * self.sigma_vv[i] + 1e-12 {
                        return Err(Error::InvalidConfig(format!(
                            "Sigma_{} is indefinite: sigma_uv^2 > sigma_uu * sigma_vv",
                            i + 1
                        )));
                    }
                }
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "sigma_uu and sigma_uv must be supplied together".into(),
                ))
            }
        }
        Ok(())
    }

    /// True if the structural error covariances are present.
    pub fn has_structural(&self) -> bool {
        self.sigma_uu.is_some()
    }

    /// Effective first-stage coefficients `pi * scale_d`.
    pub fn effective_pi(&self) -> Vec<f64> {
        self.pi.iter().map(|p| p * self.scale_d).collect()
    }

    /// Limit concentration parameters per thousand observations,
    /// `1000 * pi_s^2 / sigma2_v_s` at the effective pi.
    pub fn mu2_per_thousand(&self) -> Vec<f64> {
        self.effective_pi()
            .iter()
            .zip(&self.sigma_vv)
            .map(|(p, v)| 1000.0 * p * p / v)
            .collect()
    }
}

/// AR(1) panel design with time-varying shock standard deviations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelDesign {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub gamma: f64,
    pub sigma_u: Vec<f64>,
}

impl PanelDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        if self.t < 3 {
            return Err(Error::InvalidConfig("T must be at least 3".into()));
        }
        if self.gamma.abs() >= 1.0 {
            return Err(Error::InvalidConfig("|gamma| must be below 1".into()));
        }
        if self.sigma_u.len() != self.t {
            return Err(Error::InvalidConfig(format!(
                "sigma_u must have T = {} entries",
                self.t
            )));
        }
        if self.sigma_u.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidConfig("sigma_u entries must be positive".into()));
        }
        Ok(())
    }
}

/// Grouped draw with, when the design is first-stage-only, `y = x * beta`.
pub struct GeneratedGrouped {
    pub dataset: Dataset,
    /// False when `u` could not be drawn (no structural covariances).
    pub has_structural: bool,
}

/// Draws one grouped-data sample of size `n`.
///
/// Per observation: group via inverse-CDF on a single uniform, errors via
/// the 2x2 Cholesky factor of `Sigma_s`, then `x = pi_s * scale_d + v`,
/// `y = x * beta + u`. A realized group with fewer than two members aborts
/// the draw (the caller counts it) rather than redrawing.
pub fn gen_grouped<R: Rng>(design: &GroupedDesign, n: usize, rng: &mut R) -> Result<GeneratedGrouped> {
    design.validate()?;
    let s = design.s;
    if n < 2 * s {
        return Err(Error::InvalidConfig("n too small for the group count".into()));
    }
    let mut cum = Vec::with_capacity(s);
    let mut acc = 0.0;
    for &p in &design.probs {
        acc += p;
        cum.push(acc);
    }
    cum[s - 1] = 1.0;

    let pi = design.effective_pi();
    let has_structural = design.has_structural();
    // Cholesky of [[suu, suv], [suv, svv]]: u = l11 a; v = l21 a + l22 b
    let chol: Vec<(f64, f64, f64)> = (0..s)
        .map(|g| match (&design.sigma_uu, &design.sigma_uv) {
            (Some(uu), Some(uv)) => {
                let l11 = uu[g].sqrt();
                let l21 = uv[g] / l11;
                let l22 = (design.sigma_vv[g] - l21 * l21).max(0.0).sqrt();
                (l11, l21, l22)
            }
            _ => (0.0, 0.0, design.sigma_vv[g].sqrt()),
        })
        .collect();

    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let mut counts = vec![0usize; s];
    for _ in 0..n {
        let u01: f64 = rng.gen();
        let g = cum.partition_point(|&c| c < u01).min(s - 1);
        counts[g] += 1;
        let a: f64 = rng.sample(StandardNormal);
        let (uerr, verr) = if has_structural {
            let b: f64 = rng.sample(StandardNormal);
            let (l11, l21, l22) = chol[g];
            (l11 * a, l21 * a + l22 * b)
        } else {
            (0.0, chol[g].2 * a)
        };
        let xi = pi[g] + verr;
        x.push(xi);
        y.push(xi * design.beta + uerr);
        groups.push(g);
    }
    if let Some(g) = counts.iter().position(|&c| c < 2) {
        return Err(Error::DegenerateGroup { group: g + 1 });
    }
    let mut z = DMatrix::zeros(n, s);
    for (i, &g) in groups.iter().enumerate() {
        z[(i, g)] = 1.0;
    }
    Ok(GeneratedGrouped {
        dataset: Dataset::new(y, x, z)?,
        has_structural,
    })
}

/// Draws one AR(1) panel: returns `n x (T+1)` levels, column `t` holding
/// `y_t` with `y_0` the stationary-style initial condition
/// `N(eta/(1-gamma), 1/(1-gamma^2))`.
pub fn gen_ar1_panel<R: Rng>(design: &PanelDesign, rng: &mut R) -> Result<DMatrix<f64>> {
    design.validate()?;
    let (n, t_max, gamma) = (design.n, design.t, design.gamma);
    let mut y = DMatrix::zeros(n, t_max + 1);
    let init_sd = (1.0 / (1.0 - gamma * gamma)).sqrt();
    for i in 0..n {
        let eta: f64 = rng.sample(StandardNormal);
        let z0: f64 = rng.sample(StandardNormal);
        y[(i, 0)] = eta / (1.0 - gamma) + init_sd * z0;
        for t in 1..=t_max {
            let u: f64 = rng.sample(StandardNormal);
            y[(i, t)] = gamma * y[(i, t - 1)] + eta + design.sigma_u[t - 1] * u;
        }
    }
    Ok(y)
}
