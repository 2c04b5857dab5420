//! `samv` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error.

mod commands;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use thiserror::Error;

use commands::{execute, Job};
use manifest::{sha256_hex, OutputDir, RunManifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "samv", version, about = "Sparse asymptotic minimum variance array processing")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory under which run directories are created when --out is
    /// not given.
    #[arg(long, global = true, env = "SAMV_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,

    /// Suppress progress output.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize snapshots from a scenario config.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a spatial spectrum from a snapshot CSV.
    Estimate {
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        estimator: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo sweep over SNR.
    Sweep {
        config: PathBuf,
        /// Override the trial count of the config.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Range-Doppler imaging of a synthetic scene.
    Rdimage {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the Kronecker identities and update equivalences numerically.
    Selftest {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-run the command recorded in a manifest and compare outputs.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_input(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn default_dir(root: &Path, job: &Job, config: &Path) -> PathBuf {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "config".into());
    match job {
        Job::Estimate { estimator, .. } => root.join(format!("estimate-{stem}-{estimator}")),
        _ => root.join(format!("{}-{stem}", job.name())),
    }
}

/// Run `job` into `out_dir` and write its manifest.
fn run_job(job: &Job, config_path: &str, config: &str, out_dir: PathBuf, quiet: bool) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let mut out = OutputDir::create(out_dir)?;
    let outcome = execute(job, config, &mut out, quiet)?;
    let (data_path, data_sha256, estimator) = match job {
        Job::Estimate {
            estimator,
            data_path,
            data,
        } => (
            Some(data_path.clone()),
            Some(sha256_hex(data.as_bytes())),
            Some(estimator.clone()),
        ),
        _ => (None, None, None),
    };
    let manifest = RunManifest {
        command: job.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: config_path.to_string(),
        config_sha256: sha256_hex(config.as_bytes()),
        config: config.to_string(),
        data_path,
        data_sha256,
        estimator,
        trials: match job {
            Job::Sweep { trials } => *trials,
            _ => None,
        },
        seed: outcome.seed,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: out.files.clone(),
        failures: outcome.failures,
    };
    let path = manifest.write(&out.root)?;
    if !quiet {
        eprintln!("wrote {}", path.display());
    }
    Ok(manifest)
}

fn replay(manifest_path: &Path, out: Option<PathBuf>, root: &Path, quiet: bool) -> Result<(), CliError> {
    let recorded = RunManifest::read(manifest_path)?;
    if sha256_hex(recorded.config.as_bytes()) != recorded.config_sha256 {
        return Err(CliError::Usage("manifest config does not match its digest".into()));
    }
    let job = match recorded.command.as_str() {
        "simulate" => Job::Simulate,
        "sweep" => Job::Sweep {
            trials: recorded.trials,
        },
        "rdimage" => Job::RdImage,
        "estimate" => {
            let (Some(data_path), Some(estimator)) = (&recorded.data_path, &recorded.estimator) else {
                return Err(CliError::Usage("estimate manifest lacks data path or estimator".into()));
            };
            let data = read_input(Path::new(data_path), "data file")?;
            if Some(sha256_hex(data.as_bytes())) != recorded.data_sha256 {
                return Err(CliError::Usage(format!("{data_path} changed since the recorded run")));
            }
            Job::Estimate {
                estimator: estimator.clone(),
                data_path: data_path.clone(),
                data,
            }
        }
        other => return Err(CliError::Usage(format!("unknown command '{other}' in manifest"))),
    };
    let dir = out.unwrap_or_else(|| {
        let name = manifest_path
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| job.name().to_string());
        root.join(format!("replay-{name}"))
    });
    let fresh = run_job(&job, &recorded.config_path, &recorded.config, dir, quiet)?;
    let mut mismatches = Vec::new();
    for want in &recorded.outputs {
        match fresh.outputs.iter().find(|f| f.path == want.path) {
            Some(got) if got.sha256 == want.sha256 => {}
            Some(_) => mismatches.push(format!("{} differs", want.path)),
            None => mismatches.push(format!("{} missing", want.path)),
        }
    }
    if mismatches.is_empty() && fresh.outputs.len() == recorded.outputs.len() {
        println!("replay identical: {} outputs", fresh.outputs.len());
        Ok(())
    } else {
        Err(CliError::Runtime(format!("replay differs: {}", mismatches.join(", "))))
    }
}

fn selftest(instances: usize, seed: u64) -> Result<(), CliError> {
    let report = samv::selftest::run_identity_suite(instances, seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut failed = 0;
    for check in &report {
        let status = if check.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!check.passed());
        println!(
            "{status} {:<42} max rel. error {:.2e} (tol {:.0e}, {} instances)",
            check.name, check.max_error, check.tolerance, check.instances
        );
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{failed} identity checks failed")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot start thread pool: {e}")))?;
    }
    let root = cli.output_root;
    let (job, config, out) = match cli.command {
        Command::Selftest { instances, seed } => return selftest(instances, seed),
        Command::Replay { manifest, out } => return replay(&manifest, out, &root, cli.quiet),
        Command::Simulate { config, out } => (Job::Simulate, config, out),
        Command::Sweep { config, trials, out } => (Job::Sweep { trials }, config, out),
        Command::Rdimage { config, out } => (Job::RdImage, config, out),
        Command::Estimate {
            config,
            data,
            estimator,
            out,
        } => {
            // Reject a bad estimator name before touching any file.
            estimator
                .parse::<samv::harness::EstimatorKind>()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let text = read_input(&data, "data file")?;
            let job = Job::Estimate {
                estimator,
                data_path: data.to_string_lossy().into_owned(),
                data: text,
            };
            (job, config, out)
        }
    };
    let text = read_input(&config, "config")?;
    let dir = out.unwrap_or_else(|| default_dir(&root, &job, &config));
    run_job(&job, &config.to_string_lossy(), &text, dir, cli.quiet).map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
