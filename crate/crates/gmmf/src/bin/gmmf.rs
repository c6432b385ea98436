//! Command-line front end: table replications, heteroskedasticity sweeps,
//! weak-instrument limit simulators and estimation on user CSV data.

use std::fs::File;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gmmf::dataset::{grouped_view, load_dataset, Dataset, GroupedView};
use gmmf::error::Error;
use gmmf::estimators::{
    first_stage, gmm_two_step, gmmf, ols, two_sls, wald, Estimate, CHI2_1_CRIT_5PCT,
};
use gmmf::firststage::diagnostics;
use gmmf::mc::{self, DesignSpec, McConfig, SweepParam};
use gmmf::report::{self, fmt_num, OutRow, TableId};
use gmmf::wia::{self, WiaGroupConfig, WiaLimitConfig};

#[derive(Parser)]
#[command(
    name = "gmmf",
    version,
    about = "IV/GMM estimation with first-stage-residual weight matrices: \
             replication tables, sweeps, weak-instrument limits, and CSV estimation"
)]
struct Cli {
    /// Worker thread count (never changes numeric results).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Replication / draw count.
    #[arg(long, default_value_t = 10_000)]
    reps: u64,
    /// Master RNG seed; replication r uses substream (seed, r).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output path (human-readable report always goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Re-run a published table (table1..table5, tableA1, tableA2).
    Replicate {
        table: String,
        /// JSON design config overriding the shipped one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sweep a design knob and emit one summary row per grid value.
    Sweep {
        /// JSON design config (defaults to the shipped panel design).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Which knob the grid varies.
        #[arg(long, value_enum, default_value_t = SweepKnob::SigmaU3)]
        param: SweepKnob,
        /// Comma-separated grid values (default: the published sigma_u_3
        /// grid 1, 1.3, ..., 6.1).
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Weak-instrument-asymptotics limit simulators.
    #[command(subcommand)]
    Wia(WiaCmd),
    /// Estimate on a user CSV file.
    Estimate {
        /// Input CSV with a header row.
        #[arg(long)]
        data: PathBuf,
        /// Outcome column name.
        #[arg(long)]
        y: String,
        /// Endogenous regressor column name.
        #[arg(long)]
        x: String,
        /// Comma-separated instrument column names.
        #[arg(long, value_delimiter = ',')]
        z: Vec<String>,
        /// Null value for the Wald tests.
        #[arg(long, default_value_t = 0.0)]
        beta0: f64,
        /// Comma-separated estimator subset (ols, 2sls, gmmf, gmm2).
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        /// Print the per-group weight decomposition (grouped data only).
        #[arg(long)]
        weights: bool,
        /// CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKnob {
    /// Grouped designs: first-stage scale multiplier.
    ScaleD,
    /// Panel designs: period-3 shock standard deviation.
    SigmaU3,
}

impl From<SweepKnob> for SweepParam {
    fn from(k: SweepKnob) -> Self {
        match k {
            SweepKnob::ScaleD => SweepParam::ScaleD,
            SweepKnob::SigmaU3 => SweepParam::SigmaU3,
        }
    }
}

#[derive(Subcommand)]
enum WiaCmd {
    /// Expected limiting group weights of 2SLS and GMMf.
    Weights {
        /// Comma-separated per-group first-stage variances.
        #[arg(long, value_delimiter = ',')]
        sigma2_v: Vec<f64>,
        /// Comma-separated per-group concentration parameters.
        #[arg(long, value_delimiter = ',')]
        mu2: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sample moments of the first-stage F limit (mu + T)^2.
    Flimit {
        #[arg(long)]
        mu2: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Limiting relative bias E[(lambda+z)'z / ||lambda+z||^2].
    Relbias {
        #[arg(long)]
        lambda2: f64,
        #[arg(long, default_value_t = 1)]
        kz: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Limiting rejection probability of the robust Wald test.
    Waldsize {
        #[arg(long)]
        lambda2: f64,
        #[arg(long, default_value_t = 1)]
        kz: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .is_err()
        {
            eprintln!("error: could not configure {t} worker threads");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> gmmf::Result<()> {
    match cmd {
        Cmd::Replicate { table, config, run } => cmd_replicate(&table, config, run),
        Cmd::Sweep {
            config,
            param,
            grid,
            run,
        } => cmd_sweep(config, param, grid, run),
        Cmd::Wia(wia_cmd) => cmd_wia(wia_cmd),
        Cmd::Estimate {
            data,
            y,
            x,
            z,
            beta0,
            estimators,
            weights,
            out,
        } => cmd_estimate(&data, &y, &x, &z, beta0, estimators, weights, out),
    }
}

fn write_out(out: Option<PathBuf>, rows: &[OutRow]) -> gmmf::Result<()> {
    if let Some(path) = out {
        report::write_rows_csv(File::create(&path)?, rows)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_rows(rows: &[OutRow]) {
    println!("{:<18} {:<10} {:>16} {:>16} {:>10}", "statistic", "estimator", "mean", "sd", "rejfreq");
    let short = |s: &str| -> String {
        s.parse::<f64>()
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|_| s.to_string())
    };
    for r in rows {
        println!(
            "{:<18} {:<10} {:>16} {:>16} {:>10}",
            r.statistic,
            r.estimator,
            short(&r.mean),
            short(&r.sd),
            short(&r.rejfreq)
        );
    }
}

fn cmd_replicate(table: &str, config: Option<PathBuf>, run: RunArgs) -> gmmf::Result<()> {
    let id: TableId = table.parse()?;
    let config_json = config.map(std::fs::read_to_string).transpose()?;
    let rep = report::replicate(id, config_json.as_deref(), run.reps, run.seed)?;
    print_rows(&rep.rows);
    for note in &rep.notes {
        println!("note: {note}");
    }
    write_out(run.out, &rep.rows)
}

fn cmd_sweep(
    config: Option<PathBuf>,
    param: SweepKnob,
    grid: Option<Vec<f64>>,
    run: RunArgs,
) -> gmmf::Result<()> {
    let json = match config {
        Some(p) => std::fs::read_to_string(p)?,
        None => report::PANEL_CONFIG.to_string(),
    };
    let design: DesignSpec = serde_json::from_str(&json)?;
    let cfg = McConfig {
        design,
        reps: run.reps,
        master_seed: run.seed,
        beta0: None,
    };
    let grid = grid.unwrap_or_else(mc::default_panel_grid);
    let points = mc::sweep(&cfg, param.into(), &grid)?;
    println!("{:>10} {:>10} {:>10}  relbias / rejfreq per estimator", "grid", "mean_F", "mean_Fr");
    for p in &points {
        let rb: Vec<String> = p
            .relbias
            .iter()
            .map(|(e, v)| format!("{e}={v:.3}"))
            .collect();
        let rj: Vec<String> = p
            .rejfreq
            .iter()
            .map(|(e, v)| format!("{e}={v:.3}"))
            .collect();
        println!(
            "{:>10.3} {:>10.3} {:>10.3}  {} | {}",
            p.grid_value,
            p.mean_f,
            p.mean_f_r,
            rb.join(" "),
            rj.join(" ")
        );
    }
    if let Some(path) = run.out {
        report::write_sweep_csv(File::create(&path)?, &points)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_wia(cmd: WiaCmd) -> gmmf::Result<()> {
    let (rows, out) = match cmd {
        WiaCmd::Weights {
            sigma2_v,
            mu2,
            run,
        } => {
            let w = wia::wia_weights(
                &WiaGroupConfig {
                    sigma2_v,
                    mu2,
                    draws: run.reps,
                },
                run.seed,
            )?;
            let mut rows = Vec::new();
            for (s, (&w2, &wg)) in w.w_2sls.iter().zip(&w.w_gmmf).enumerate() {
                rows.push(out_value(&format!("w_{}", s + 1), "2sls", w2));
                rows.push(out_value(&format!("w_{}", s + 1), "gmmf", wg));
            }
            (rows, run.out)
        }
        WiaCmd::Flimit { mu2, run } => {
            let mut sample = wia::f_limit_sample(mu2, run.reps, run.seed)?;
            sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sample.len();
            let q = |p: f64| sample[(((n - 1) as f64) * p).round() as usize];
            let mean = sample.iter().sum::<f64>() / n as f64;
            let rows = vec![
                out_value("mean", "", mean),
                out_value("q05", "", q(0.05)),
                out_value("q50", "", q(0.50)),
                out_value("q95", "", q(0.95)),
            ];
            (rows, run.out)
        }
        WiaCmd::Relbias { lambda2, kz, run } => {
            let v = wia::relbias_limit(
                &WiaLimitConfig {
                    k_z: kz,
                    lambda2,
                    rho: 0.0,
                    draws: run.reps,
                },
                run.seed,
            )?;
            (vec![out_value("relbias", "", v)], run.out)
        }
        WiaCmd::Waldsize {
            lambda2,
            kz,
            rho,
            alpha,
            run,
        } => {
            let v = wia::wald_size_limit(
                &WiaLimitConfig {
                    k_z: kz,
                    lambda2,
                    rho,
                    draws: run.reps,
                },
                alpha,
                run.seed,
            )?;
            (vec![out_value("wald_size", "", v)], run.out)
        }
    };
    print_rows(&rows);
    write_out(out, &rows)
}

fn out_value(statistic: &str, estimator: &str, v: f64) -> OutRow {
    OutRow {
        statistic: statistic.to_string(),
        estimator: estimator.to_string(),
        mean: fmt_num(v),
        sd: String::new(),
        rejfreq: String::new(),
    }
}

fn estimate_one(
    name: &str,
    d: &Dataset,
    gv: Option<&GroupedView>,
    fs: &gmmf::estimators::FirstStage,
) -> gmmf::Result<Estimate> {
    match name {
        "ols" => ols(d.y(), d.x()),
        "2sls" => two_sls(d, gv),
        "gmmf" => gmmf(d, fs, gv),
        "gmm2" => gmm_two_step(d),
        other => Err(Error::InvalidConfig(format!(
            "unknown estimator {other:?}; expected ols, 2sls, gmmf, gmm2"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_estimate(
    data: &PathBuf,
    y: &str,
    x: &str,
    z: &[String],
    beta0: f64,
    estimators: Option<Vec<String>>,
    want_weights: bool,
    out: Option<PathBuf>,
) -> gmmf::Result<()> {
    if z.is_empty() {
        return Err(Error::InvalidConfig("at least one instrument column is required".into()));
    }
    let d = load_dataset(data, y, x, z)?;
    let gv = grouped_view(&d).ok();
    if want_weights && gv.is_none() {
        let mut err = std::io::stderr();
        let _ = writeln!(
            err,
            "warning: instruments are not mutually exclusive group indicators; \
             weight decomposition omitted"
        );
    }
    let fs = first_stage(&d, gv.as_ref())?;
    let diag = diagnostics(&d, &fs, gv.as_ref())?;
    let names = estimators.unwrap_or_else(|| {
        ["ols", "2sls", "gmmf", "gmm2"].iter().map(|s| s.to_string()).collect()
    });

    let mut rows = vec![
        out_value("F", "", diag.f_nonrobust),
        out_value("F_eff", "", diag.f_effective),
        out_value("F_r", "", diag.f_robust),
    ];
    if let Some(fg) = &diag.f_group {
        for (s, &f) in fg.iter().enumerate() {
            rows.push(out_value(&format!("F_pi_{}", s + 1), "", f));
        }
    }
    println!("n = {}, k_z = {}{}", d.n(), d.k_z(), if gv.is_some() { " (grouped)" } else { "" });
    let mut estimates = Vec::new();
    for name in &names {
        let e = estimate_one(name, &d, gv.as_ref(), &fs)?;
        let se = e.var_robust.map(|v| v.sqrt());
        let w = wald(&e, beta0).ok();
        println!(
            "{:<6} beta_hat = {:>12.6}  robust se = {}  Wald(beta0 = {beta0}) = {}{}",
            name,
            e.beta_hat,
            se.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
            w.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            w.map(|v| if v > CHI2_1_CRIT_5PCT { " [reject at 5%]" } else { "" })
                .unwrap_or("")
        );
        rows.push(OutRow {
            statistic: "beta".into(),
            estimator: name.clone(),
            mean: fmt_num(e.beta_hat),
            sd: se.map(fmt_num).unwrap_or_default(),
            rejfreq: w.map(fmt_num).unwrap_or_default(),
        });
        estimates.push((name.clone(), e));
    }
    if want_weights {
        if let Some(gv) = &gv {
            println!("group weight decomposition:");
            println!("{:<8} {:>8} {}", "group", "n_s", "weights per estimator");
            for (name, e) in &estimates {
                if let Some(w) = &e.weights {
                    for (s, &v) in w.iter().enumerate() {
                        rows.push(out_value(&format!("w_{}", s + 1), name, v));
                    }
                    let rendered: Vec<String> = w.iter().map(|v| format!("{v:.4}")).collect();
                    println!("{:<8} {:>8} {}", name, gv.n_s().len(), rendered.join(" "));
                }
            }
        }
    }
    print_rows(&rows);
    write_out(out, &rows)
}
