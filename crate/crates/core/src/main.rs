use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latent_eval::dataset::Dataset;
use latent_eval::fixtures::write_bundle;
use latent_eval::inversion::{invert_best, InversionConfig};
use latent_eval::likelihood::{estimate_combined, sigma_sweep, LikelihoodConfig};
use latent_eval::report::{run_pipeline, sample_seeds, sweep_csv, EvalConfig, RunMode, SweepCurve};
use latent_eval::{GeneratorSpec, Result, Tensor};

#[derive(Parser)]
#[command(name = "latent-eval", version, about = "Reconstruction and likelihood evaluation of latent generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run inversion and likelihood over a dataset and write all reports.
    Evaluate(EvaluateArgs),
    /// Invert one sample and print the result as JSON.
    Invert(SampleArgs),
    /// Invert one sample under the constraint and estimate its likelihood.
    Likelihood(SampleArgs),
    /// Print the mean distortion at each σ of the grid around one sample.
    Sweep(SweepArgs),
    /// Write the fixture generators, datasets and a default config.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    generator: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    psnr_threshold_db: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, conflicts_with = "both")]
    constrained_only: bool,
    #[arg(long)]
    both: bool,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Skip the latent-prior constraint (`invert` only).
    #[arg(long)]
    unconstrained: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    draws: Option<usize>,
}

fn load_config(common: &Common) -> Result<EvalConfig> {
    let mut config = match &common.config {
        Some(path) => EvalConfig::load(path)?,
        None => EvalConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(db) = common.psnr_threshold_db {
        config.likelihood.psnr_threshold_db = db;
    }
    config.validate()?;
    Ok(config)
}

fn load_sample(common: &Common, index: usize) -> Result<(GeneratorSpec, Tensor)> {
    let spec = GeneratorSpec::load(&common.generator)?;
    let data = Dataset::load(&common.dataset)?;
    let sample = data.samples.get(index).ok_or_else(|| {
        latent_eval::Error::Dataset(format!("index {index} out of range for {} samples", data.len()))
    })?;
    let target = Tensor::from_vec(sample.clone());
    if target.len() != spec.output_len() {
        return Err(latent_eval::Error::Dataset(format!(
            "sample length {} does not match generator output length {}",
            target.len(),
            spec.output_len()
        )));
    }
    Ok((spec, target))
}

fn invert_constrained(spec: &GeneratorSpec, target: &Tensor, config: &EvalConfig, seed: u64) -> Result<latent_eval::inversion::InversionResult> {
    let cfg = InversionConfig {
        constrained: true,
        ..config.inversion.clone()
    };
    invert_best(spec, target, &cfg, seed)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evaluate(args) => {
            let mut config = load_config(&args.common)?;
            if let Some(w) = args.workers {
                config.workers = w;
            }
            if args.constrained_only {
                config.mode = RunMode::ConstrainedOnly;
            } else if args.both {
                config.mode = RunMode::Both;
            }
            config.svg |= args.svg;
            let report = run_pipeline(&args.common.generator, &args.common.dataset, &config, &args.out)?;
            eprintln!(
                "evaluated {} samples ({} failed); outputs in {}",
                report.metadata.sample_count,
                report.metadata.failed_count,
                args.out.display()
            );
        }
        Command::Invert(args) => {
            let config = load_config(&args.common)?;
            let (spec, target) = load_sample(&args.common, args.index)?;
            let seeds = sample_seeds(config.seed, args.index);
            let result = if args.unconstrained {
                let cfg = InversionConfig {
                    constrained: false,
                    ..config.inversion.clone()
                };
                invert_best(&spec, &target, &cfg, seeds.unconstrained)?
            } else {
                invert_constrained(&spec, &target, &config, seeds.constrained)?
            };
            println!("{}", serde_json::to_string_pretty(&result).expect("serializable"));
        }
        Command::Likelihood(args) => {
            let config = load_config(&args.common)?;
            let (spec, target) = load_sample(&args.common, args.index)?;
            let seeds = sample_seeds(config.seed, args.index);
            let inverted = invert_constrained(&spec, &target, &config, seeds.constrained)?;
            let lcfg = LikelihoodConfig {
                seed: seeds.likelihood,
                ..config.likelihood.clone()
            };
            let estimate = estimate_combined(&spec, &inverted.z_star, &lcfg)?;
            let out = serde_json::json!({
                "sample_id": args.index,
                "psnr_constrained_db": inverted.final_psnr_db,
                "z_star": inverted.z_star,
                "log10_unnormalized_likelihood": estimate.log10_unnormalized(),
                "estimate": estimate,
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
        }
        Command::Sweep(args) => {
            let config = load_config(&args.common)?;
            let (spec, target) = load_sample(&args.common, args.index)?;
            let seeds = sample_seeds(config.seed, args.index);
            let inverted = invert_constrained(&spec, &target, &config, seeds.constrained)?;
            let grid = config.likelihood.sigma_grid.values();
            let draws = args.draws.unwrap_or(config.sweep_draws);
            let points = sigma_sweep(&spec, &inverted.z_star, &grid, draws, seeds.sweep)?;
            print!(
                "{}",
                sweep_csv(&SweepCurve {
                    sample_id: args.index,
                    points
                })
            );
        }
        Command::Fixtures { out } => {
            for path in write_bundle(&out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
