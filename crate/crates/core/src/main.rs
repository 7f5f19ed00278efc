use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robust_location::distributions::estimate_rho_elliptical;
use robust_location::experiment::{
    fit_scaling_exponent, run_experiment, write_csv, EstimatorKind, ExperimentConfig,
};
use robust_location::filters::{
    filter_higher_moment, filter_second_moment, near_optimal_pipeline, FilterConfig,
};
use robust_location::losses::{HuberParams, LossKind};
use robust_location::{Dataset, Error};

#[derive(Parser)]
#[command(name = "robloc", about = "Robust location estimation experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for experiment cells (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one dataset from a config and write it to a file.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Contamination level; defaults to the first grid entry.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Estimate the location of one dataset file and print diagnostics.
    Estimate {
        dataset: PathBuf,
        #[arg(long, default_value = "filter2")]
        estimator: String,
        /// Declared contamination budget.
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        /// Moment order for filterk.
        #[arg(long)]
        k: Option<usize>,
        /// Optional config supplying loss and calibration parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full experiment grid and write a CSV.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Bench plus a fitted error-scaling exponent per filter estimator.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter(_) | Error::MalformedDataset(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(3),
            }
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Gen { config, seed, out, eps } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.base_seed = seed;
            let eps = eps.unwrap_or(cfg.eps_grid[0]);
            if !(0.0..=0.3).contains(&eps) {
                return Err(Error::Config(format!("eps must be in [0, 0.3], got {eps}")));
            }
            cfg.eps_grid = vec![eps];
            let data = robust_location::experiment::generate_dataset(&cfg, eps, cfg.seed_for(0, 0))?;
            data.save(&out)?;
            println!("wrote {} samples ({}-dimensional) to {}", data.n(), data.dim(), out.display());
            Ok(())
        }
        Command::Estimate { dataset, estimator, eps, k, config } => {
            let data = Dataset::load(&dataset)?;
            let kind_cfg = match config {
                Some(path) => Some(ExperimentConfig::load(&path)?),
                None => None,
            };
            let est = EstimatorKind::parse(&estimator)?;
            let k = k.unwrap_or(match est {
                EstimatorKind::FilterK(k) => k,
                _ => 1,
            });
            let (h, sigma, alpha, threshold_constant) = match &kind_cfg {
                Some(c) => (c.huber_clip(), c.sigma_for(k), c.alpha, c.threshold_constant),
                None => (2.0, 2.0, 0.5, 10.0),
            };
            let kind = match kind_cfg.as_ref().map(|c| c.loss) {
                Some(robust_location::experiment::LossShape::NormBall) => {
                    LossKind::NormBall(HuberParams::new(h)?)
                }
                _ => LossKind::Entrywise(HuberParams::new(h)?),
            };
            let fcfg = FilterConfig::new(kind, sigma, eps)?.with_k(k).with_alpha(alpha);
            let mut fcfg = fcfg;
            fcfg.threshold_constant = threshold_constant;
            let out = match est {
                EstimatorKind::Filter2 => filter_second_moment(&data, &fcfg)?,
                EstimatorKind::FilterK(_) => filter_higher_moment(&data, &fcfg)?,
                EstimatorKind::NearOptimal => near_optimal_pipeline(&data, &fcfg)?,
                EstimatorKind::Mean | EstimatorKind::CoordMedian => {
                    return Err(Error::Config(
                        "estimate supports the filter estimators; use bench for baselines".into(),
                    ));
                }
            };
            let mu: Vec<String> = out.mu_hat.iter().map(|v| format!("{v:.6}")).collect();
            println!("mu_hat = [{}]", mu.join(", "));
            println!(
                "iterations = {}, converged = {}, guard_value = {:.6e}",
                out.iterations, out.converged, out.guard_value
            );
            if let Some(truth) = &data.truth {
                println!("error = {:.6}", (&out.mu_hat - &truth.mu_star).norm());
            }
            if est == EstimatorKind::NearOptimal {
                // diagnostic: the norm-quantile scale estimate on the raw data
                let b = estimate_rho_elliptical(&data, alpha)?;
                println!("norm quantile b = {b:.6}");
            }
            Ok(())
        }
        Command::Bench { config, out, seed } => {
            let rows = bench(config, out, seed)?;
            println!("{} rows", rows.len());
            Ok(())
        }
        Command::Sweep { config, out, seed } => {
            let rows = bench(config.clone(), out, seed)?;
            let cfg = ExperimentConfig::load(&config)?;
            for est in &cfg.estimators {
                let name = est.name();
                match fit_scaling_exponent(&rows, &name) {
                    Ok(slope) => println!("{name}: slope = {slope:.3}"),
                    Err(e) => println!("{name}: no fit ({e})"),
                }
            }
            Ok(())
        }
    }
}

fn bench(
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<Vec<robust_location::experiment::ReportRow>, Error> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(seed) = seed {
        cfg.base_seed = seed;
    }
    let rows = run_experiment(&cfg)?;
    let out = out.or_else(|| cfg.out.as_ref().map(PathBuf::from));
    match out {
        Some(path) => {
            write_csv(&rows, &path)?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", robust_location::experiment::rows_to_csv(&rows)),
    }
    Ok(rows)
}
