//! Monte Carlo replication engine: runs independent replications of a
//! grouped or panel design on per-replication RNG substreams, aggregates
//! estimator means, standard deviations, rejection frequencies and relative
//! biases, and drives heteroskedasticity sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::grouped_view;
use crate::designs::{gen_ar1_panel, gen_grouped, GroupedDesign, PanelDesign};
use crate::error::{Error, Result};
use crate::estimators::{
    first_stage, gmm_two_step, gmmf, ols, two_sls, wald, CHI2_1_CRIT_5PCT,
};
use crate::firststage::diagnostics;
use crate::panel::{build_panel, cross_section_decomposition, panel_estimators, sigma_v_weighted_from};
use crate::rng::substream;

/// Which experiment a Monte Carlo run draws from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    Grouped {
        #[serde(flatten)]
        design: GroupedDesign,
        n: usize,
    },
    Panel(PanelDesign),
}

/// Replication run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig {
    pub design: DesignSpec,
    #[serde(default = "default_reps")]
    pub reps: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Null value for the Wald tests; defaults to the design truth.
    #[serde(default)]
    pub beta0: Option<f64>,
}

fn default_reps() -> u64 {
    10_000
}

impl McConfig {
    fn truth(&self) -> f64 {
        match &self.design {
            DesignSpec::Grouped { design, .. } => design.beta,
            DesignSpec::Panel(p) => p.gamma,
        }
    }

    fn null(&self) -> f64 {
        self.beta0.unwrap_or_else(|| self.truth())
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        match &self.design {
            DesignSpec::Grouped { design, n } => {
                design.validate()?;
                if *n < 2 * design.s {
                    return Err(Error::InvalidConfig("n too small for the group count".into()));
                }
                Ok(())
            }
            DesignSpec::Panel(p) => p.validate(),
        }
    }
}

/// One output cell: a statistic, optionally tied to an estimator, with its
/// replication mean, standard deviation (divisor R) and, for estimators
/// with a robust variance, the 5%-level Wald rejection frequency.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub statistic: String,
    pub estimator: String,
    pub mean: f64,
    pub sd: f64,
    pub rejfreq: Option<f64>,
}

/// Aggregated Monte Carlo output.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub rows: Vec<SummaryRow>,
    /// Replications that completed.
    pub effective_reps: u64,
    /// Replications aborted by a counted data/estimation error.
    pub aborts: u64,
    /// `(estimator, |mean - truth| / |mean_ols - truth|)`.
    pub relbias: Vec<(String, f64)>,
}

impl McSummary {
    pub fn row(&self, statistic: &str, estimator: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.statistic == statistic && r.estimator == estimator)
    }

    pub fn relbias_of(&self, estimator: &str) -> Option<f64> {
        self.relbias
            .iter()
            .find(|(e, _)| e == estimator)
            .map(|(_, v)| *v)
    }
}

#[derive(Clone)]
struct ColumnSpec {
    statistic: String,
    estimator: String,
    tracks_rejection: bool,
}

fn col(statistic: &str, estimator: &str, tracks_rejection: bool) -> ColumnSpec {
    ColumnSpec {
        statistic: statistic.to_string(),
        estimator: estimator.to_string(),
        tracks_rejection,
    }
}

struct RepRecord {
    values: Vec<f64>,
    rejects: Vec<Option<bool>>,
}

/// Streamed mean/variance accumulator (Welford), divisor `count`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Aggregator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Aggregator {
    pub(crate) fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }

    pub(crate) fn mean(&self) -> f64 {
        self.mean
    }

    pub(crate) fn sd(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}

fn grouped_schema(design: &GroupedDesign) -> Vec<ColumnSpec> {
    let mut schema = vec![col("F", "", false), col("F_eff", "", false), col("F_r", "", false)];
    for s in 1..=design.s {
        schema.push(col(&format!("F_pi_{s}"), "", false));
    }
    for s in 1..=design.s {
        schema.push(col(&format!("sigma2_v_{s}"), "", false));
    }
    for s in 1..=design.s {
        schema.push(col(&format!("w_{s}"), "2sls", false));
    }
    for s in 1..=design.s {
        schema.push(col(&format!("w_{s}"), "gmmf", false));
    }
    if design.has_structural() {
        for est in ["ols", "2sls", "gmmf", "gmm2"] {
            schema.push(col("beta", est, true));
        }
    }
    schema
}

fn panel_schema(p: &PanelDesign) -> Vec<ColumnSpec> {
    let mut schema = vec![col("F", "", false), col("F_r", "", false)];
    for est in ["ols", "2sls", "gmm2", "gmmf"] {
        schema.push(col("gamma", est, true));
    }
    schema.push(col("gamma", "sigma_v", false));
    for t in 2..p.t {
        schema.push(col(&format!("sigma2_v_t_{t}"), "", false));
    }
    for t in 2..p.t {
        schema.push(col(&format!("F_t_{t}"), "", false));
    }
    for t in 2..p.t {
        schema.push(col(&format!("w_t_{t}"), "2sls", false));
    }
    for t in 2..p.t {
        schema.push(col(&format!("w_t_{t}"), "sigma_v", false));
    }
    schema
}

fn schema_of(cfg: &McConfig) -> Vec<ColumnSpec> {
    match &cfg.design {
        DesignSpec::Grouped { design, .. } => grouped_schema(design),
        DesignSpec::Panel(p) => panel_schema(p),
    }
}

fn reject_at_5pct(e: &crate::estimators::Estimate, beta0: f64) -> Result<bool> {
    Ok(wald(e, beta0)? > CHI2_1_CRIT_5PCT)
}

fn grouped_rep(
    design: &GroupedDesign,
    n: usize,
    beta0: f64,
    rep: u64,
    master_seed: u64,
) -> Result<RepRecord> {
    let mut rng = substream(master_seed, rep);
    let gen = gen_grouped(design, n, &mut rng)?;
    let d = &gen.dataset;
    let gv = grouped_view(d)?;
    let fs = first_stage(d, Some(&gv))?;
    let diag = diagnostics(d, &fs, Some(&gv))?;
    let e_2sls = two_sls(d, Some(&gv))?;
    let e_gmmf = gmmf(d, &fs, Some(&gv))?;

    let mut values = Vec::new();
    let mut rejects = Vec::new();
    let mut push = |v: f64| {
        values.push(v);
    };
    push(diag.f_nonrobust);
    push(diag.f_effective);
    push(diag.f_robust);
    let f_group = diag
        .f_group
        .as_ref()
        .ok_or_else(|| Error::InvalidData("grouped diagnostics missing per-group F".into()))?;
    for &f in f_group {
        push(f);
    }
    let s2 = fs
        .sigma2_v_s
        .as_ref()
        .ok_or_else(|| Error::InvalidData("grouped first stage missing sigma2_v_s".into()))?;
    for &v in s2 {
        push(v);
    }
    let w2 = e_2sls
        .weights
        .clone()
        .ok_or_else(|| Error::InvalidData("2SLS weights missing".into()))?;
    for v in w2 {
        push(v);
    }
    let wg = e_gmmf
        .weights
        .clone()
        .ok_or_else(|| Error::InvalidData("GMMf weights missing".into()))?;
    for v in wg {
        push(v);
    }
    rejects.resize(values.len(), None);
    if gen.has_structural {
        let e_ols = ols(d.y(), d.x())?;
        let e_gmm2 = gmm_two_step(d)?;
        for e in [&e_ols, &e_2sls, &e_gmmf, &e_gmm2] {
            values.push(e.beta_hat);
            rejects.push(Some(reject_at_5pct(e, beta0)?));
        }
    }
    Ok(RepRecord { values, rejects })
}

fn panel_rep(design: &PanelDesign, beta0: f64, rep: u64, master_seed: u64) -> Result<RepRecord> {
    let mut rng = substream(master_seed, rep);
    let levels = gen_ar1_panel(design, &mut rng)?;
    let pd = build_panel(&levels)?;
    let est = panel_estimators(&pd)?;
    let cs = cross_section_decomposition(&pd)?;
    let e_sv = sigma_v_weighted_from(&cs)?;

    let mut values = vec![est.f_nonrobust, est.f_robust];
    let mut rejects: Vec<Option<bool>> = vec![None, None];
    for e in [&est.ols, &est.two_sls, &est.gmm2, &est.gmmf] {
        values.push(e.beta_hat);
        rejects.push(Some(reject_at_5pct(e, beta0)?));
    }
    values.push(e_sv.beta_hat);
    rejects.push(None);
    let w_sv = e_sv
        .weights
        .ok_or_else(|| Error::InvalidData("sigma_v weights missing".into()))?;
    for block in [&cs.sigma2_v_t, &cs.f_t, &cs.w_2sls, &w_sv] {
        for &v in block.iter() {
            values.push(v);
            rejects.push(None);
        }
    }
    Ok(RepRecord { values, rejects })
}

/// Runs `cfg.reps` replications, replication `r` on
/// `substream(master_seed, r)`. Replications that fail with a data error
/// (for example a degenerate group draw) are counted as aborts, never
/// redrawn; the summary reports the effective replication count.
pub fn run(cfg: &McConfig) -> Result<McSummary> {
    cfg.validate()?;
    let schema = schema_of(cfg);
    let beta0 = cfg.null();
    let records: Vec<Result<RepRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| match &cfg.design {
            DesignSpec::Grouped { design, n } => grouped_rep(design, *n, beta0, r, cfg.master_seed),
            DesignSpec::Panel(p) => panel_rep(p, beta0, r, cfg.master_seed),
        })
        .collect();

    let mut aggs = vec![Aggregator::default(); schema.len()];
    let mut rej_counts = vec![0u64; schema.len()];
    let mut effective = 0u64;
    let mut aborts = 0u64;
    for rec in &records {
        match rec {
            Ok(rec) => {
                if rec.values.len() != schema.len() {
                    return Err(Error::InvalidData("replication record width mismatch".into()));
                }
                effective += 1;
                for (i, &v) in rec.values.iter().enumerate() {
                    aggs[i].push(v);
                    if rec.rejects[i] == Some(true) {
                        rej_counts[i] += 1;
                    }
                }
            }
            Err(_) => aborts += 1,
        }
    }
    if effective == 0 {
        return Err(Error::InvalidData("every replication aborted".into()));
    }

    let rows: Vec<SummaryRow> = schema
        .iter()
        .enumerate()
        .map(|(i, c)| SummaryRow {
            statistic: c.statistic.clone(),
            estimator: c.estimator.clone(),
            mean: aggs[i].mean(),
            sd: aggs[i].sd(),
            rejfreq: c
                .tracks_rejection
                .then(|| rej_counts[i] as f64 / effective as f64),
        })
        .collect();

    let truth = cfg.truth();
    let beta_stat = match &cfg.design {
        DesignSpec::Grouped { .. } => "beta",
        DesignSpec::Panel(_) => "gamma",
    };
    let mut relbias = Vec::new();
    let ols_mean = rows
        .iter()
        .find(|r| r.statistic == beta_stat && r.estimator == "ols")
        .map(|r| r.mean);
    if let Some(ols_mean) = ols_mean {
        let denom = (ols_mean - truth).abs();
        if denom > 0.0 {
            for r in &rows {
                if r.statistic == beta_stat && r.estimator != "ols" {
                    relbias.push((r.estimator.clone(), (r.mean - truth).abs() / denom));
                }
            }
        }
    }

    Ok(McSummary {
        rows,
        effective_reps: effective,
        aborts,
        relbias,
    })
}

/// One sweep point: the grid value with the headline diagnostics of its run.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub grid_value: f64,
    pub mean_f: f64,
    pub mean_f_r: f64,
    /// `(estimator, relative bias)` in schema order.
    pub relbias: Vec<(String, f64)>,
    /// `(estimator, rejection frequency)` for estimators with Wald tests.
    pub rejfreq: Vec<(String, f64)>,
    pub summary: McSummary,
}

/// Which design knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Grouped designs: the first-stage scale multiplier `scale_d`.
    ScaleD,
    /// Panel designs: the period-3 shock standard deviation `sigma_u_3`.
    SigmaU3,
}

/// Default panel sweep grid `sigma_u_3 = 1, 1.3, ..., 6.1`.
pub fn default_panel_grid() -> Vec<f64> {
    (0..18).map(|i| 1.0 + 0.3 * i as f64).collect()
}

/// Runs one full summary per grid value, varying `param`. Replication `r`
/// uses the same substream at every grid point (common random numbers).
pub fn sweep(cfg: &McConfig, param: SweepParam, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    if grid.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidConfig("sweep grid values must be positive".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &g in grid {
        let mut point_cfg = cfg.clone();
        match (&mut point_cfg.design, param) {
            (DesignSpec::Grouped { design, .. }, SweepParam::ScaleD) => design.scale_d = g,
            (DesignSpec::Panel(p), SweepParam::SigmaU3) => {
                if p.t < 3 {
                    return Err(Error::InvalidConfig("panel sweep needs T >= 3".into()));
                }
                p.sigma_u[2] = g;
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "sweep parameter does not match the design kind".into(),
                ))
            }
        }
        let summary = run(&point_cfg)?;
        let mean_of = |stat: &str| summary.row(stat, "").map(|r| r.mean).unwrap_or(f64::NAN);
        let rejfreq = summary
            .rows
            .iter()
            .filter_map(|r| r.rejfreq.map(|f| (r.estimator.clone(), f)))
            .collect();
        out.push(SweepPoint {
            grid_value: g,
            mean_f: mean_of("F"),
            mean_f_r: mean_of("F_r"),
            relbias: summary.relbias.clone(),
            rejfreq,
            summary,
        });
    }
    Ok(out)
}
