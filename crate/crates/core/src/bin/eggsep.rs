use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eggsep::harness::suites::{reproduce, ReproduceOptions, Scale, Suite};
use eggsep::harness::{default_run_dir, load_dataset, parse_shape, run_to_dir, ExperimentConfig, Method};
use eggsep::metrics::MetricReport;
use eggsep::tensor::read_egt;
use eggsep::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "eggsep", version, about = "Separate an unobserved source from mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as a directory.
    GenData {
        config: PathBuf,
        /// Overrides `dataset.out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment.
    Run {
        config: PathBuf,
        /// Overrides `experiment.out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a preset suite over methods and seeds.
    Reproduce {
        /// images-synthetic, denoise, tones or mnist.
        suite: String,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Tiny sizes for a quick end-to-end check.
        #[arg(long)]
        smoke: bool,
        /// Directory with the MNIST IDX files.
        #[arg(long)]
        idx_dir: Option<PathBuf>,
    },
    /// Score stacked estimates against stacked references.
    Eval {
        estimates: PathBuf,
        truth: PathBuf,
        /// Sample shape ROWSxCOLS when the files hold flattened rows.
        #[arg(long)]
        shape: Option<String>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Ok(seed) = std::env::var("EGGSEP_SEED") {
        let seed = seed
            .parse()
            .map_err(|_| Error::Config(format!("EGGSEP_SEED `{seed}` is not an integer")))?;
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn samples(t: Tensor, shape: Option<[usize; 2]>) -> Result<Vec<Tensor>> {
    let n = *t.shape().first().ok_or_else(|| Error::Config("scalar tensor".into()))?;
    let per: Vec<usize> = match shape {
        Some(s) => s.to_vec(),
        None => t.shape()[1..].to_vec(),
    };
    let flat = t.reshape(&[n, t.len() / n.max(1)])?;
    flat.unstack_rows(&per)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(&config)?;
            let out = out
                .or(cfg.dataset_out.clone())
                .ok_or_else(|| Error::Config("missing `dataset.out` (or --out)".into()))?;
            let ds = load_dataset(&cfg)?;
            ds.save(&out)?;
            println!(
                "wrote {} observed, {} mixtures, {} eval to {}",
                ds.observed_b.len(),
                ds.mixtures_y.len(),
                ds.eval.len(),
                out.display()
            );
        }
        Command::Run { config, out } => {
            let mut cfg = load_config(&config)?;
            if out.is_some() {
                cfg.out = out;
            }
            let dir = default_run_dir(&cfg);
            let outcome = run_to_dir(&cfg, &dir)?;
            let h = &outcome.report.headline;
            let ssim = h.ssim.map(|s| format!(" ssim {s:.4}")).unwrap_or_default();
            println!(
                "{} seed {}: {} psnr {:.3}{ssim} sdr {:.3} -> {}",
                cfg.method,
                cfg.seed,
                h.target,
                h.psnr,
                h.sdr_median,
                dir.display()
            );
        }
        Command::Reproduce {
            suite,
            out,
            jobs,
            seeds,
            methods,
            smoke,
            idx_dir,
        } => {
            let mut opts = ReproduceOptions::new(suite.parse::<Suite>()?, out);
            opts.jobs = jobs;
            if let Some(s) = seeds {
                opts.seeds = s;
            }
            if let Some(m) = methods {
                opts.methods = m.iter().map(|m| m.parse::<Method>()).collect::<Result<_>>()?;
            }
            if smoke {
                opts.scale = Scale::Smoke;
            }
            opts.idx_dir = idx_dir;
            let results = reproduce(&opts)?;
            print!("{}", fs::read_to_string(opts.out.join("table.csv")).unwrap_or_default());
            let failed = results.iter().filter(|r| r.headline.is_err()).count();
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} runs failed")));
            }
        }
        Command::Eval { estimates, truth, shape } => {
            let shape = shape.as_deref().map(parse_shape).transpose()?;
            let est = samples(read_egt(&estimates)?, shape)?;
            let refs = samples(read_egt(&truth)?, shape)?;
            let refs: Vec<&Tensor> = refs.iter().collect();
            let report = MetricReport::evaluate(&est, &refs)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
