//! Replication recipes for the published tables, and the CSV emission
//! shared by the CLI: one row per summary cell, written deterministically.

use std::io::Write;
use std::str::FromStr;

use crate::designs::GroupedDesign;
use crate::error::{Error, Result};
use crate::mc::{self, DesignSpec, McConfig, SweepPoint};
use crate::wia::{wia_weights, WiaGroupConfig};

/// Shipped grouped design, moderate endogeneity (first-stage parameters and
/// variances only; structural covariances are external inputs).
pub const MODERATE_CONFIG: &str = include_str!("../../../configs/moderate.json");
/// Shipped grouped design, high endogeneity (first-stage-only, as above).
pub const HIGH_CONFIG: &str = include_str!("../../../configs/high.json");
/// Shipped AR(1) panel design.
pub const PANEL_CONFIG: &str = include_str!("../../../configs/panel.json");

/// Sentinel emitted for cells that need the structural error covariances,
/// which are not part of the shipped first-stage-only configs.
pub const REQUIRES_SIGMA_U: &str = "requires-sigma-u";

/// Identifier of a reproducible table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableId {
    Table1,
    Table2,
    Table3,
    Table4,
    Table5,
    TableA1,
    TableA2,
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table1" => Ok(TableId::Table1),
            "table2" => Ok(TableId::Table2),
            "table3" => Ok(TableId::Table3),
            "table4" => Ok(TableId::Table4),
            "table5" => Ok(TableId::Table5),
            "tablea1" => Ok(TableId::TableA1),
            "tablea2" => Ok(TableId::TableA2),
            other => Err(Error::InvalidConfig(format!(
                "unknown table id {other:?}; expected table1..table5, tableA1, tableA2"
            ))),
        }
    }
}

/// One output cell, already rendered: numeric fields are either a decimal
/// string, empty, or the [`REQUIRES_SIGMA_U`] sentinel.
#[derive(Debug, Clone)]
pub struct OutRow {
    pub statistic: String,
    pub estimator: String,
    pub mean: String,
    pub sd: String,
    pub rejfreq: String,
}

/// Deterministic numeric rendering used in all CSV output.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.10e}")
}

fn row(statistic: &str, estimator: &str, mean: String, sd: String, rejfreq: String) -> OutRow {
    OutRow {
        statistic: statistic.to_string(),
        estimator: estimator.to_string(),
        mean,
        sd,
        rejfreq,
    }
}

fn value_row(statistic: &str, estimator: &str, v: f64) -> OutRow {
    row(statistic, estimator, fmt_num(v), String::new(), String::new())
}

/// A replication result: the table cells plus human-facing notes (for
/// example which cells are conditional on external covariances).
pub struct Replication {
    pub rows: Vec<OutRow>,
    pub notes: Vec<String>,
}

fn parse_design(json: &str) -> Result<DesignSpec> {
    Ok(serde_json::from_str(json)?)
}

fn grouped_of(spec: &DesignSpec) -> Result<&GroupedDesign> {
    match spec {
        DesignSpec::Grouped { design, .. } => Ok(design),
        DesignSpec::Panel(_) => Err(Error::InvalidConfig(
            "this table needs a grouped design config".into(),
        )),
    }
}

fn mc_rows_from(summary: &mc::McSummary) -> Vec<OutRow> {
    summary
        .rows
        .iter()
        .map(|r| OutRow {
            statistic: r.statistic.clone(),
            estimator: r.estimator.clone(),
            mean: fmt_num(r.mean),
            sd: fmt_num(r.sd),
            rejfreq: r.rejfreq.map(fmt_num).unwrap_or_default(),
        })
        .collect()
}

fn table1(draws: u64, seed: u64) -> Result<Replication> {
    let configs = [
        (vec![5.0, 5.0], vec![5.76, 5.76]),
        (vec![5.0, 0.1], vec![5.76, 5.76]),
        (vec![5.0, 0.1], vec![1.96, 5.76]),
    ];
    let mut rows = Vec::new();
    for (c, (sigma2_v, mu2)) in configs.into_iter().enumerate() {
        let w = wia_weights(
            &WiaGroupConfig {
                sigma2_v,
                mu2,
                draws,
            },
            seed,
        )?;
        for (s, (&w2, &wg)) in w.w_2sls.iter().zip(&w.w_gmmf).enumerate() {
            rows.push(value_row(&format!("config{}_w_{}", c + 1, s + 1), "2sls", w2));
            rows.push(value_row(&format!("config{}_w_{}", c + 1, s + 1), "gmmf", wg));
        }
    }
    Ok(Replication {
        rows,
        notes: vec![format!("limiting weight expectations from {draws} draws")],
    })
}

/// Grouped estimation-results table (Tables 2 / A2 layout). With a
/// first-stage-only config the estimator columns are emitted as sentinels.
fn grouped_estimation_table(design_json: &str, reps: u64, seed: u64) -> Result<Replication> {
    let spec = parse_design(design_json)?;
    let has_structural = grouped_of(&spec)?.has_structural();
    let cfg = McConfig {
        design: spec,
        reps,
        master_seed: seed,
        beta0: None,
    };
    let summary = mc::run(&cfg)?;
    let mut rows: Vec<OutRow> = mc_rows_from(&summary)
        .into_iter()
        .filter(|r| matches!(r.statistic.as_str(), "F" | "F_eff" | "F_r" | "beta"))
        .collect();
    let mut notes = vec![format!(
        "effective replications: {} ({} aborted)",
        summary.effective_reps, summary.aborts
    )];
    if !has_structural {
        for est in ["ols", "2sls", "gmmf", "gmm2"] {
            rows.push(row(
                "beta",
                est,
                REQUIRES_SIGMA_U.into(),
                REQUIRES_SIGMA_U.into(),
                REQUIRES_SIGMA_U.into(),
            ));
        }
        notes.push(
            "estimator cells are conditional on external structural covariances \
             (sigma_uu, sigma_uv) absent from the shipped config"
                .into(),
        );
    } else {
        for (est, rb) in &summary.relbias {
            rows.push(value_row("relbias", est, *rb));
        }
    }
    Ok(Replication { rows, notes })
}

/// Grouped group-information table (Tables 3 / A1 layout): design constants
/// plus replication means of the per-group F-statistics and both weights.
fn grouped_information_table(design_json: &str, reps: u64, seed: u64) -> Result<Replication> {
    let spec = parse_design(design_json)?;
    let design = grouped_of(&spec)?.clone();
    let cfg = McConfig {
        design: spec,
        reps,
        master_seed: seed,
        beta0: None,
    };
    let summary = mc::run(&cfg)?;
    let mut rows = Vec::new();
    let mu2 = design.mu2_per_thousand();
    for s in 1..=design.s {
        rows.push(value_row(&format!("pi_{s}"), "", design.effective_pi()[s - 1]));
        rows.push(value_row(&format!("sigma2_v_{s}"), "", design.sigma_vv[s - 1]));
        rows.push(value_row(&format!("mu2_n_{s}"), "", mu2[s - 1]));
    }
    for r in mc_rows_from(&summary) {
        if r.statistic.starts_with("F_pi_") || r.statistic.starts_with("w_") {
            rows.push(r);
        }
    }
    Ok(Replication {
        rows,
        notes: vec![format!(
            "effective replications: {} ({} aborted); mu2_n_s = 1000 pi_s^2 / sigma2_v_s",
            summary.effective_reps, summary.aborts
        )],
    })
}

fn panel_table(design_json: &str, reps: u64, seed: u64, per_period: bool) -> Result<Replication> {
    let cfg = McConfig {
        design: parse_design(design_json)?,
        reps,
        master_seed: seed,
        beta0: None,
    };
    if !matches!(cfg.design, DesignSpec::Panel(_)) {
        return Err(Error::InvalidConfig("this table needs a panel design config".into()));
    }
    let summary = mc::run(&cfg)?;
    let mut rows: Vec<OutRow> = mc_rows_from(&summary)
        .into_iter()
        .filter(|r| {
            let periodic = r.statistic.starts_with("sigma2_v_t_")
                || r.statistic.starts_with("F_t_")
                || r.statistic.starts_with("w_t_");
            periodic == per_period
        })
        .collect();
    if !per_period {
        for (est, rb) in &summary.relbias {
            rows.push(value_row("relbias", est, *rb));
        }
    }
    Ok(Replication {
        rows,
        notes: vec![format!(
            "effective replications: {} ({} aborted)",
            summary.effective_reps, summary.aborts
        )],
    })
}

/// Runs one table's replication recipe. `config_json` overrides the shipped
/// design for the Monte Carlo tables; Table 1 takes no design.
pub fn replicate(
    table: TableId,
    config_json: Option<&str>,
    reps: u64,
    seed: u64,
) -> Result<Replication> {
    let pick = |shipped: &'static str| config_json.unwrap_or(shipped).to_string();
    match table {
        TableId::Table1 => {
            if config_json.is_some() {
                return Err(Error::InvalidConfig("table1 takes no design config".into()));
            }
            table1(reps, seed)
        }
        TableId::Table2 => grouped_estimation_table(&pick(MODERATE_CONFIG), reps, seed),
        TableId::Table3 => grouped_information_table(&pick(MODERATE_CONFIG), reps, seed),
        TableId::Table4 => panel_table(&pick(PANEL_CONFIG), reps, seed, false),
        TableId::Table5 => panel_table(&pick(PANEL_CONFIG), reps, seed, true),
        TableId::TableA1 => grouped_information_table(&pick(HIGH_CONFIG), reps, seed),
        TableId::TableA2 => grouped_estimation_table(&pick(HIGH_CONFIG), reps, seed),
    }
}

/// Writes summary rows as `statistic,estimator,mean,sd,rejfreq`.
pub fn write_rows_csv<W: Write>(out: W, rows: &[OutRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["statistic", "estimator", "mean", "sd", "rejfreq"])?;
    for r in rows {
        w.write_record([&r.statistic, &r.estimator, &r.mean, &r.sd, &r.rejfreq])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Writes sweep output, one row per grid point:
/// `grid_value,mean_F,mean_Fr,relbias_<est>...,rejfreq_<est>...`.
pub fn write_sweep_csv<W: Write>(out: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidData("empty sweep".into()))?;
    let mut header = vec!["grid_value".to_string(), "mean_F".to_string(), "mean_Fr".to_string()];
    for (est, _) in &first.relbias {
        header.push(format!("relbias_{est}"));
    }
    for (est, _) in &first.rejfreq {
        header.push(format!("rejfreq_{est}"));
    }
    w.write_record(&header)?;
    for p in points {
        let mut rec = vec![fmt_num(p.grid_value), fmt_num(p.mean_f), fmt_num(p.mean_f_r)];
        for (_, v) in &p.relbias {
            rec.push(fmt_num(*v));
        }
        for (_, v) in &p.rejfreq {
            rec.push(fmt_num(*v));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}
