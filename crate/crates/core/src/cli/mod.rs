//! Batch front end: `fit`, `simulate`, `coverage` and `summarize`.
//!
//! Failures are reported on one line as `error[<class>]: <detail>` and map
//! to exit codes 2 (configuration), 3 (data), 4 (numerical) and 5 (no
//! admissible model).

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::design::build_design;
use crate::error::{Error, Result};
use crate::inference::sandwich;
use crate::panel_data::{complete_cases, load_csv, summarize, write_csv};
use crate::robust_loss::LossConfig;
use crate::selection::sweep;
use crate::simulate::{coverage_study, generate};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "mqmix", version, about = "Finite mixtures of M-quantile regressions for longitudinal panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep K for every q level and write coefficient, mixing, selection and classification tables.
    Fit(Overrides),
    /// Generate a synthetic panel and its ground truth.
    Simulate(Overrides),
    /// Repeated simulation and fitting with Wald-interval coverage.
    Coverage(Overrides),
    /// Describe a panel.
    Summarize(Overrides),
}

#[derive(Debug, Args, Default)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Long-format panel CSV (overrides [data] path).
    #[arg(long)]
    data: Option<PathBuf>,
    /// M-quantile levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<f64>>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Huber tuning constant.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Coverage replicates.
    #[arg(long)]
    replicates: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data.path = Some(d.clone());
        }
        if let Some(q) = &self.q {
            cfg.model.q = q.clone();
        }
        if let Some(k) = self.k_min {
            cfg.model.k_min = k;
        }
        if let Some(k) = self.k_max {
            cfg.model.k_max = k;
        }
        if let Some(c) = self.c {
            cfg.model.c = c;
        }
        if let Some(s) = self.seed {
            cfg.start.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.start.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(r) = self.replicates {
            cfg.coverage.replicates = r;
        }
        Ok(cfg)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let detail = e.to_string();
            let line = detail.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("error[config]: {}", line.trim_start_matches("error: "));
            return 2;
        }
    };
    let outcome = match &cli.command {
        Command::Fit(o) => o.resolve().and_then(|c| with_workers(&c, || run_fit(&c))),
        Command::Simulate(o) => o.resolve().and_then(|c| run_simulate(&c, o.q.as_ref().map(|q| q[0]))),
        Command::Coverage(o) => o.resolve().and_then(|c| with_workers(&c, || run_coverage_study(&c, o.q.as_ref().map(|q| q[0])))),
        Command::Summarize(o) => o.resolve().and_then(|c| run_summarize(&c)),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let class = e.class();
            eprintln!("error[{}]: {}", class.tag(), e.to_string().replace('\n', " "));
            class.exit_code()
        }
    }
}

fn with_workers<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.start.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "tool": "mqmix",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.start.seed,
        "workers": rayon::current_num_threads(),
        "config": cfg,
        "run": extra,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Fits every configured q level and writes the result tables.
pub fn run_fit(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let started = Instant::now();
    let path = cfg.data.path.as_ref().ok_or_else(|| Error::Config("no data path ([data] path or --data)".into()))?;
    let mut data = load_csv(path, &cfg.data.schema)?;
    let n_loaded = data.n_units();
    if cfg.data.complete_cases {
        let t_full = cfg.data.t_full.unwrap_or_else(|| data.max_occasions());
        data = complete_cases(&data, t_full)?;
    }
    let roles = cfg.roles_for(data.covariate_names())?;
    let bundle = build_design(&data, &roles, cfg.design_options())?;
    if let Some(w) = bundle.rank_warning() {
        eprintln!("warning: {w}");
    }
    let dir = &cfg.output.dir;
    prepare_dir(dir)?;

    let mut fits = Vec::new();
    let mut runs = Vec::new();
    for &q in &cfg.model.q {
        let t0 = Instant::now();
        let loss = LossConfig::new(q, cfg.model.c)?;
        let outcome = sweep(&bundle, loss, cfg.model.k_min..=cfg.model.k_max, &cfg.em, cfg.start.d, cfg.start.seed, cfg.sweep_options())?;
        let cov = match sandwich(&outcome.chosen, &bundle) {
            Ok(c) => Some(c),
            Err(e) => {
                eprintln!("warning: q={}: standard errors unavailable: {e}", report::format_q(q));
                None
            }
        };
        runs.push((q, t0.elapsed().as_secs_f64(), cov.is_none()));
        fits.push((outcome, cov));
    }
    let levels: Vec<report::FittedLevel<'_>> =
        fits.iter().map(|(o, c)| report::FittedLevel { bundle: &bundle, fit: &o.chosen, selection: &o.report, cov: c.as_ref() }).collect();
    let mut files = Vec::new();
    for l in &levels {
        files.extend(report::write_level(dir, l)?);
    }
    std::fs::write(dir.join("summary.txt"), report::summary_table(&levels))?;
    files.push("summary.txt".into());
    let levels_json: Vec<_> = runs
        .iter()
        .zip(&fits)
        .map(|((q, secs, no_se), (o, _))| {
            json!({
                "q": q,
                "chosen_k": o.report.chosen_k,
                "loglik": o.chosen.loglik,
                "converged": o.chosen.converged,
                "standard_errors": !no_se,
                "seconds": secs,
            })
        })
        .collect();
    write_manifest(
        dir,
        "fit",
        cfg,
        json!({
            "data": path,
            "units_loaded": n_loaded,
            "units_used": data.n_units(),
            "observations_used": data.n_observations(),
            "columns": bundle.labels(),
            "levels": levels_json,
            "files": files,
            "seconds": started.elapsed().as_secs_f64(),
        }),
    )
}

/// Writes `panel.csv` and `truth.json` for the configured scenario.
pub fn run_simulate(cfg: &RunConfig, q: Option<f64>) -> Result<()> {
    let started = Instant::now();
    let mut sc = cfg.scenario()?;
    if let Some(q) = q {
        sc.q = q;
        sc.validate()?;
    }
    let (data, truth) = generate(&sc)?;
    let dir = &cfg.output.dir;
    prepare_dir(dir)?;
    write_csv(&data, dir.join("panel.csv"))?;
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&truth)? + "\n")?;
    write_manifest(
        dir,
        "simulate",
        cfg,
        json!({
            "units": data.n_units(),
            "observations": data.n_observations(),
            "files": ["panel.csv", "truth.json"],
            "seconds": started.elapsed().as_secs_f64(),
        }),
    )
}

/// Simulation study of Wald-interval coverage at the true `K`.
pub fn run_coverage_study(cfg: &RunConfig, q: Option<f64>) -> Result<()> {
    let started = Instant::now();
    let mut sc = cfg.scenario()?;
    if let Some(q) = q {
        sc.q = q;
        sc.validate()?;
    }
    let report = coverage_study(&sc, cfg.coverage.replicates, cfg.design_options(), &cfg.em, cfg.start.d)?;
    let dir = &cfg.output.dir;
    prepare_dir(dir)?;
    let files = report::write_coverage(dir, &report)?;
    let failed = report.replicates.iter().filter(|r| r.error.is_some()).count();
    write_manifest(
        dir,
        "coverage",
        cfg,
        json!({
            "scenario": sc,
            "replicates": cfg.coverage.replicates,
            "failed": failed,
            "files": files,
            "seconds": started.elapsed().as_secs_f64(),
        }),
    )
}

/// Prints a description of the panel; with `--out`, also writes it as JSON.
pub fn run_summarize(cfg: &RunConfig) -> Result<()> {
    let path = cfg.data.path.as_ref().ok_or_else(|| Error::Config("no data path ([data] path or --data)".into()))?;
    let data = load_csv(path, &cfg.data.schema)?;
    let s = summarize(&data);
    print!("{}", report::summary_text(&s));
    let dir = &cfg.output.dir;
    if dir != &config::OutputSection::default().dir {
        prepare_dir(dir)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&s)? + "\n")?;
    }
    Ok(())
}
