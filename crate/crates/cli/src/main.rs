//! `fastvit` command-line tool: build, fuse, verify, inspect and benchmark models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fastvit_core::archive::{load_tensor, load_weights, save_logits, save_weights};
use fastvit_core::bench::{self, BenchOptions, DEFAULT_SIZES};
use fastvit_core::init::random_tensor;
use fastvit_core::tensor::max_abs_diff;
use fastvit_core::zoo::VariantConfig;
use fastvit_core::{cost_report, threads, Error, Mode, Model, ReparamNotice};

#[derive(Parser)]
#[command(name = "fastvit", version, about = "FastViT models with structural reparameterization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Train,
    Inference,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Train => Mode::Train,
            ModeArg::Inference => Mode::Inference,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Pooling,
}

fn preset(name: &str) -> Result<VariantConfig, String> {
    VariantConfig::preset(name)
        .map_err(|_| format!("unknown variant; choose one of {}", VariantConfig::preset_names().join(", ")))
}

#[derive(Subcommand)]
enum Command {
    /// Build a seeded model and write it as an archive.
    Build {
        #[arg(long, value_parser = preset)]
        variant: VariantConfig,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        mode: ModeArg,
        /// Also fill norm statistics, biases and layer scales with seeded random values.
        #[arg(long)]
        random_stats: bool,
    },
    /// Reparameterize a train-structure archive into its inference structure.
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare train and fused logits on seeded random inputs.
    Verify {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        fused: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 20)]
        inputs: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Parameter and MAC counts with a per-layer table.
    Stats {
        #[arg(long, value_parser = preset)]
        variant: VariantConfig,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, value_enum, default_value = "inference")]
        mode: ModeArg,
        #[arg(long)]
        json: bool,
    },
    /// Latency sweep over input sizes.
    Bench {
        #[arg(long, value_parser = preset)]
        variant: VariantConfig,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "inference")]
        mode: ModeArg,
        /// Also measure the same recipe with pooling mixers and report the latency ratio.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads (overrides FVWT_THREADS).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a model on a tensor archive and write the logits.
    Forward {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn build_in_mode(config: &VariantConfig, seed: u64, mode: Mode) -> Result<Model, Error> {
    let model = Model::build(config, seed)?;
    match mode {
        Mode::Train => Ok(model),
        Mode::Inference => model.reparameterize(),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Build {
            variant,
            seed,
            out,
            mode,
            random_stats,
        } => {
            let mut model = Model::build(&variant, seed)?;
            if random_stats {
                model.randomize_statistics(seed);
            }
            if matches!(mode, ModeArg::Inference) {
                model = model.reparameterize()?;
            }
            save_weights(&model, &out)?;
            println!(
                "{} ({}) with {} parameters -> {}",
                model.config.name,
                bench::mode_str(model.mode),
                model.param_count(),
                out.display()
            );
        }
        Command::Fuse { input, out } => {
            let model = load_weights(&input)?;
            let (fused, notices) = model.reparameterize_with_notices()?;
            for (name, notice) in &notices {
                if let ReparamNotice::PartiallyFused(why) = notice {
                    eprintln!("warning: {name} only partially fused: {why}");
                }
            }
            save_weights(&fused, &out)?;
            println!(
                "{}: {} -> {} parameters -> {}",
                fused.config.name,
                model.param_count(),
                fused.param_count(),
                out.display()
            );
        }
        Command::Verify {
            train,
            fused,
            size,
            inputs,
            tol,
            seed,
        } => {
            let a = load_weights(&train)?;
            let b = load_weights(&fused)?;
            let mut worst = 0.0f32;
            for i in 0..inputs {
                let x = random_tensor([1, a.config.in_channels, size, size], seed.wrapping_add(i as u64));
                let ya = a.forward(&x)?;
                let yb = b.forward(&x)?;
                worst = worst.max(max_abs_diff(&ya.data, &yb.data));
            }
            println!("max_abs_deviation {worst:e} over {inputs} inputs at {size}x{size} (tol {tol:e})");
            if !(worst <= tol) {
                return Err(Error::Config(format!("deviation {worst:e} exceeds tolerance {tol:e}")));
            }
        }
        Command::Stats {
            variant,
            size,
            mode,
            json,
        } => {
            let model = build_in_mode(&variant, 0, mode.into())?;
            let report = cost_report(&model, (size, size))?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Bench {
            variant,
            sizes,
            iters,
            warmup,
            csv,
            mode,
            baseline,
            seed,
            threads: _,
        } => {
            let mode = Mode::from(mode);
            let mut models = vec![build_in_mode(&variant, seed, mode)?];
            if baseline.is_some() {
                models.push(build_in_mode(&variant.with_pooling_mixers(), seed, mode)?);
            }
            let refs: Vec<&Model> = models.iter().collect();
            let opts = BenchOptions {
                warmup,
                iters,
                batch: 1,
                seed,
            };
            let cells = bench::resolution_sweep(&refs, &sizes, &opts);
            let ratio = (models.len() == 2).then(|| (models[0].config.name.as_str(), models[1].config.name.as_str()));
            print!("{}", bench::sweep_table(&cells, ratio));
            println!("host: {}, threads: {}", bench::host_descriptor(), threads::current_threads());
            if let Some(path) = csv {
                let ok: Vec<_> = cells.iter().filter_map(|c| c.result.as_ref().ok().cloned()).collect();
                bench::write_csv(&path, &ok)?;
            }
            if let Some(bad) = cells.iter().find(|c| c.result.is_err()) {
                return Err(Error::Bench(format!(
                    "some cells failed, first: {} at {}: {}",
                    bad.model,
                    bad.size,
                    bad.result.as_ref().unwrap_err()
                )));
            }
        }
        Command::Forward { model, input, out } => {
            let m = load_weights(&model)?;
            let (_, x) = load_tensor(&input)?;
            let y = m.forward(&x)?;
            save_logits(&out, y.batch, y.dim, &y.data)?;
            println!("logits {}x{} -> {}", y.batch, y.dim, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let explicit = match cli.command {
        Command::Bench { threads, .. } => threads,
        _ => None,
    };
    match threads::init_global_pool(explicit).and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
