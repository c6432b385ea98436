//! Weak-instrument-asymptotics limit simulators: expected group weights
//! under the noncentral-chi-squared first-stage limits, and the limiting
//! relative-bias and Wald-size functionals.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng::{pairwise_sum, substream};

/// Grouped weak-instrument limit: per-group `sigma2_v` and concentration
/// parameters `mu2`, with the draw budget.
#[derive(Debug, Clone)]
pub struct WiaGroupConfig {
    pub sigma2_v: Vec<f64>,
    pub mu2: Vec<f64>,
    pub draws: u64,
}

/// Scalar weak-instrument limit: instrument count, concentration `lambda2 =
/// lambda'lambda`, endogeneity `rho`, draw budget. `lambda` enters only
/// through its norm (rotational invariance), so it is materialized as
/// `(sqrt(lambda2), 0, ..., 0)`.
#[derive(Debug, Clone)]
pub struct WiaLimitConfig {
    pub k_z: usize,
    pub lambda2: f64,
    pub rho: f64,
    pub draws: u64,
}

impl WiaGroupConfig {
    fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::InvalidConfig("draws must be at least 1".into()));
        }
        if self.sigma2_v.is_empty() || self.sigma2_v.len() != self.mu2.len() {
            return Err(Error::InvalidConfig(
                "sigma2_v and mu2 must be nonempty and equal-length".into(),
            ));
        }
        if self.sigma2_v.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidConfig("sigma2_v entries must be positive".into()));
        }
        if self.mu2.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig("mu2 entries must be nonnegative".into()));
        }
        Ok(())
    }
}

impl WiaLimitConfig {
    fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::InvalidConfig("draws must be at least 1".into()));
        }
        if self.k_z == 0 {
            return Err(Error::InvalidConfig("k_z must be at least 1".into()));
        }
        if self.lambda2 < 0.0 {
            return Err(Error::InvalidConfig("lambda2 must be nonnegative".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig("rho must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Draws per RNG substream: results are reduced in chunk-index order, so the
/// outcome is independent of the number of worker threads.
const CHUNK: u64 = 8192;

/// Runs `draws` simulation draws split into fixed-size chunks, each chunk on
/// `substream(master_seed, chunk_index)`, accumulating `dims` statistics.
/// Chunk totals are reduced by fixed-order pairwise summation.
fn chunked_sums<F>(draws: u64, master_seed: u64, dims: usize, body: F) -> Vec<f64>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let n_chunks = draws.div_ceil(CHUNK);
    let chunk_totals: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(master_seed, c);
            let in_chunk = CHUNK.min(draws - c * CHUNK);
            let mut acc = vec![0.0f64; dims];
            for _ in 0..in_chunk {
                body(&mut rng, &mut acc);
            }
            acc
        })
        .collect();
    (0..dims)
        .map(|d| {
            let col: Vec<f64> = chunk_totals.iter().map(|t| t[d]).collect();
            pairwise_sum(&col)
        })
        .collect()
}

/// Expected limiting weights of 2SLS and GMMf per group.
#[derive(Debug, Clone)]
pub struct WiaWeights {
    pub w_2sls: Vec<f64>,
    pub w_gmmf: Vec<f64>,
}

/// Monte Carlo expectations of the limiting group weights: with
/// `F_s = (mu_s + T_s)^2`, `T_s` i.i.d. standard normal,
/// `w_2sls_s = sigma2_v_s F_s / sum_l sigma2_v_l F_l` and
/// `w_gmmf_s = F_s / sum_l F_l`.
pub fn wia_weights(cfg: &WiaGroupConfig, master_seed: u64) -> Result<WiaWeights> {
    cfg.validate()?;
    let s = cfg.mu2.len();
    let mu: Vec<f64> = cfg.mu2.iter().map(|m| m.sqrt()).collect();
    let sums = chunked_sums(cfg.draws, master_seed, 2 * s, |rng, acc| {
        let mut f = vec![0.0f64; s];
        let (mut tot2, mut totg) = (0.0f64, 0.0f64);
        for g in 0..s {
            let t: f64 = rng.sample(StandardNormal);
            let fg = (mu[g] + t) * (mu[g] + t);
            f[g] = fg;
            tot2 += cfg.sigma2_v[g] * fg;
            totg += fg;
        }
        for g in 0..s {
            acc[g] += cfg.sigma2_v[g] * f[g] / tot2;
            acc[s + g] += f[g] / totg;
        }
    });
    let n = cfg.draws as f64;
    Ok(WiaWeights {
        w_2sls: sums[..s].iter().map(|v| v / n).collect(),
        w_gmmf: sums[s..].iter().map(|v| v / n).collect(),
    })
}

/// Sample from the first-stage F limit `(mu + T)^2 ~ chi2_1(mu2)`.
pub fn f_limit_sample(mu2: f64, draws: u64, master_seed: u64) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::InvalidConfig("draws must be at least 1".into()));
    }
    if mu2 < 0.0 {
        return Err(Error::InvalidConfig("mu2 must be nonnegative".into()));
    }
    let mu = mu2.sqrt();
    let n_chunks = draws.div_ceil(CHUNK);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(master_seed, c);
            let in_chunk = CHUNK.min(draws - c * CHUNK);
            (0..in_chunk)
                .map(|_| {
                    let t: f64 = rng.sample(StandardNormal);
                    (mu + t) * (mu + t)
                })
                .collect()
        })
        .collect();
    Ok(chunks.concat())
}

/// Limiting relative bias `E[(lambda + z_v)'z_v / (lambda + z_v)'(lambda + z_v)]`
/// with `z_v ~ N(0, I_kz)`; `cfg.rho` is not used.
pub fn relbias_limit(cfg: &WiaLimitConfig, master_seed: u64) -> Result<f64> {
    cfg.validate()?;
    let l = cfg.lambda2.sqrt();
    let k = cfg.k_z;
    let sums = chunked_sums(cfg.draws, master_seed, 1, |rng, acc| {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for j in 0..k {
            let zv: f64 = rng.sample(StandardNormal);
            let w = if j == 0 { l + zv } else { zv };
            num += w * zv;
            den += w * w;
        }
        acc[0] += num / den;
    });
    Ok(sums[0] / cfg.draws as f64)
}

/// Limiting rejection probability of the nominal-level-`alpha` robust Wald
/// test: with `eta1 = (lambda + z_v)'(lambda + z_v)`,
/// `eta2 = (lambda + z_v)'z_u`, `z_u = rho z_v + sqrt(1 - rho^2) eps`,
/// `W = (eta2^2 / eta1) / (1 - 2 rho eta2/eta1 + (eta2/eta1)^2)` compared
/// against the chi2_1 `1 - alpha` quantile.
pub fn wald_size_limit(cfg: &WiaLimitConfig, alpha: f64, master_seed: u64) -> Result<f64> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::InvalidConfig("alpha must lie in (0, 1)".into()));
    }
    let crit = ChiSquared::new(1.0)
        .expect("chi2_1")
        .inverse_cdf(1.0 - alpha);
    let l = cfg.lambda2.sqrt();
    let (k, rho) = (cfg.k_z, cfg.rho);
    let orth = (1.0 - rho * rho).max(0.0).sqrt();
    let sums = chunked_sums(cfg.draws, master_seed, 1, |rng, acc| {
        let mut eta1 = 0.0f64;
        let mut eta2 = 0.0f64;
        for j in 0..k {
            let zv: f64 = rng.sample(StandardNormal);
            let eps: f64 = rng.sample(StandardNormal);
            let zu = rho * zv + orth * eps;
            let w = if j == 0 { l + zv } else { zv };
            eta1 += w * w;
            eta2 += w * zu;
        }
        let r = eta2 / eta1;
        let denom = 1.0 - 2.0 * rho * r + r * r;
        // denom -> 0 only as W -> infinity; count it as a rejection
        let w_stat = if denom > 0.0 {
            (eta2 * eta2 / eta1) / denom
        } else {
            f64::INFINITY
        };
        if w_stat > crit {
            acc[0] += 1.0;
        }
    });
    Ok(sums[0] / cfg.draws as f64)
}
