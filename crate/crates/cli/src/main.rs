mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};
use mdbc::diagnostics::run_diagnostics;
use mdbc::io;
use mdbc::pipeline::{self, Profile, RunConfig};
use mdbc::resample::resample_ensemble;
use mdbc::uncertainty::{certainty_scores, cluster_count_posterior, coclustering_matrix};
use mdbc::{data, Error, FittedModel};

#[derive(Parser)]
#[command(name = "mdbc", version, about = "Uncertainty in density-based clustering via martingale posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration field, e.g. `--set resample.chains=50`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,

    /// Size preset applied before the configuration file.
    #[arg(long, global = true, default_value = "desk")]
    profile: Profile,

    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the `data` section.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the configured model and write it as JSON.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run predictive resampling from a fitted model.
    Resample {
        #[arg(long)]
        model: PathBuf,
        /// Training sample size; taken from the data when omitted.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster the data under the trained density and every resample.
    Cluster {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory written by `resample`.
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Co-clustering matrix, certainty scores and cluster-count posterior.
    Uncertainty {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// All stages end to end.
    Pipeline {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical checks of the resampling theory.
    Diagnostics {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Negative control: shift every score coordinate by one.
        #[arg(long)]
        corrupt_score: bool,
    },
    /// Print the resolved configuration.
    Config,
}

enum Failure {
    Config(String),
    Check(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Check(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Check(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Contract(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot size thread pool: {e}")))?;
    }
    let mut sets = cli.set.clone();
    // command-line paths are overrides like any other
    match &cli.command {
        Command::Fit { data: Some(d), .. } | Command::Cluster { data: Some(d), .. } | Command::Resample { data: Some(d), .. } => {
            sets.push(format!("paths.data={}", d.display()));
        }
        Command::Pipeline { out: Some(o) } | Command::Diagnostics { out: Some(o), .. } => {
            sets.push(format!("paths.out={}", o.display()));
        }
        _ => {}
    }
    if let Command::Diagnostics { corrupt_score: true, .. } = &cli.command {
        sets.push("diagnostics.score_identity.corrupt=true".into());
    }
    let env_seed = std::env::var("MDBC_SEED").ok();
    let cfg = config::resolve(cli.profile, cli.config.as_deref(), &sets, env_seed.as_deref()).map_err(Failure::Config)?;
    info!("configuration hash {}", cfg.hash());

    match cli.command {
        Command::GenData { out } => gen_data(&cfg, &out),
        Command::Fit { out, .. } => fit(&cfg, &out),
        Command::Resample { model, n, out, .. } => resample(&cfg, &model, n, &out),
        Command::Cluster { ensemble, out, .. } => cluster(&cfg, &ensemble, &out),
        Command::Uncertainty { labels, out } => uncertainty(&labels, &out),
        Command::Pipeline { .. } => run_pipeline(&cfg),
        Command::Diagnostics { .. } => diagnostics(&cfg),
        Command::Config => {
            // a closed pipe (e.g. `| head`) is not an error here
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&cfg).expect("config serialises"));
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let raw = RunConfig {
        data: mdbc::pipeline::DataConfig {
            standardize: false,
            ..cfg.data.clone()
        },
        paths: mdbc::pipeline::PathsConfig {
            data: None,
            ..cfg.paths.clone()
        },
        ..cfg.clone()
    };
    let ds = pipeline::prepare_data(&raw)?;
    data::write_dataset(out, &ds)?;
    println!("wrote {} points to {}", ds.len(), out.display());
    Ok(())
}

fn fit(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let ds = pipeline::prepare_data(cfg)?;
    let (fitted, warnings) = pipeline::fit_model(cfg, &ds.points)?;
    for w in warnings {
        warn!("{w}");
    }
    std::fs::write(out, fitted.to_json()?)?;
    println!("wrote model with {} parameters to {}", fitted.theta.len(), out.display());
    Ok(())
}

fn resample(cfg: &RunConfig, model: &Path, n: Option<usize>, out: &Path) -> Result<(), Failure> {
    let fitted = FittedModel::from_json(&std::fs::read_to_string(model)?)?;
    let n = match (n, &cfg.paths.data) {
        (Some(n), _) => n,
        (None, Some(_)) => pipeline::prepare_data(cfg)?.len(),
        (None, None) => return Err(Failure::Config("resample needs --n or --data for the sample size".into())),
    };
    let rcfg = pipeline::resample_config(cfg, n);
    let chains = resample_ensemble(&fitted.model, &fitted.theta, &rcfg)?;
    ensure_dir(out)?;
    let meta = io::EnsembleMeta {
        model: fitted.model,
        theta0: fitted.theta,
        resample: rcfg,
    };
    io::write_ensemble(out, &meta, &chains)?;
    println!("wrote {} resamples to {}", chains.len(), out.display());
    Ok(())
}

fn cluster(cfg: &RunConfig, ensemble: &Path, out: &Path) -> Result<(), Failure> {
    let ds = pipeline::prepare_data(cfg)?;
    let (meta, thetas) = io::read_ensemble(ensemble)?;
    let co = pipeline::cluster_all(&cfg.clustering, &ds.points, &meta.model, &meta.theta0, &thetas)?;
    for w in &co.warnings {
        warn!("{w}");
    }
    ensure_dir(out)?;
    io::write_labelings(&out.join("labels.csv"), &co.labelings)?;
    io::write_labelings(&out.join("labels_trained.csv"), std::slice::from_ref(&co.trained))?;
    if let Some(p) = &co.persistence {
        io::write_persistence(&out.join("persistence.csv"), p)?;
    }
    if let Some(p) = &co.levelset {
        io::write_json(&out.join("levelset_params.json"), p)?;
    }
    println!(
        "trained density: {} clusters; {} resamples clustered into {}",
        co.trained.k,
        co.labelings.len(),
        out.display()
    );
    Ok(())
}

fn uncertainty(labels: &Path, out: &Path) -> Result<(), Failure> {
    let ls = io::read_labelings(labels)?;
    let m = coclustering_matrix(&ls)?;
    let s = certainty_scores(&m);
    let post = cluster_count_posterior(&ls)?;
    ensure_dir(out)?;
    io::write_cocluster(&out.join("cocluster.bin"), &m)?;
    io::write_certainty(&out.join("certainty.csv"), &s)?;
    io::write_json(&out.join("cluster_counts.json"), &post)?;
    println!("cluster-count posterior: {}", serde_json::to_string(&post.frequencies).expect("map serialises"));
    Ok(())
}

fn run_pipeline(cfg: &RunConfig) -> Result<(), Failure> {
    match pipeline::run_pipeline(cfg) {
        Ok(out) => {
            for s in &out.manifest.stages {
                info!("{} finished in {:.2}s", s.name, s.seconds);
                for w in &s.warnings {
                    warn!("{}: {w}", s.name);
                }
            }
            println!(
                "{} points, {} resamples; trained clusters: {}; cluster-count posterior {}",
                out.data.len(),
                out.clusters.labelings.len(),
                out.clusters.trained.k,
                serde_json::to_string(&out.posterior.frequencies).expect("map serialises")
            );
            println!("artifacts in {}", cfg.paths.out.display());
            Ok(())
        }
        Err(e) => Err(match e.source {
            Error::Contract(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }),
    }
}

fn diagnostics(cfg: &RunConfig) -> Result<(), Failure> {
    let report = run_diagnostics(&cfg.diagnostics)?;
    let out = &cfg.paths.out;
    ensure_dir(out)?;
    io::write_json(&out.join("diagnostics.json"), &report)?;
    io::write_json(&out.join("contraction.json"), &report.contraction)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!("failed checks: {}", report.failed().join(", "))))
    }
}
