use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dfp::diffusion::{generate_dataset, DiffusionParams};
use dfp::error::{Error, Result};
use dfp::eval::{eval_protocol, fit_chain, purity_from_paths, RunConfig};
use dfp::fragmentation::DivergenceSchedule;
use dfp::inference::{geweke_test, GewekeConfig, Hyperpriors, ObsPrecision, SamplerConfig, TauUpdate};
use dfp::io::{export_newick, export_run_json, load_csv, read_run_json, write_points_csv, CsvOptions, Dataset, LabelColumn};

/// Dirichlet fragmentation process mixture models: prior simulation,
/// collapsed Gibbs fitting and evaluation.
#[derive(Parser, Debug)]
#[command(name = "dfp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a tree and data points from the prior.
    Sample(SampleArgs),
    /// Fit the model to a CSV file.
    Fit(FitArgs),
    /// Held-out log-likelihood on a seeded split.
    Eval(EvalArgs),
    /// Dendrogram purity of a fitted run against class labels.
    Purity(PurityArgs),
    /// Joint-distribution check of the sampler.
    Geweke(GewekeArgs),
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, env = "DFP_SEED", default_value_t = 0)]
    seed: u64,
    /// Points CSV; standard output if omitted.
    #[arg(long)]
    out_points: Option<PathBuf>,
    #[arg(long)]
    out_tree: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Column holding class labels, by header name or zero-based index.
    #[arg(long)]
    label_col: Option<String>,
    /// Rescale every feature to zero mean and unit variance.
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        load_csv(
            &self.data,
            &CsvOptions {
                header: None,
                label: self.label_col.as_deref().map(LabelColumn::parse),
                standardize: self.standardize,
            },
        )
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Divergence-function horizon; defaults to depth + 1.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    sweeps: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    #[arg(long, env = "DFP_SEED", default_value_t = 0)]
    seed: u64,
    /// Hold c at this value.
    #[arg(long)]
    fixed_c: Option<f64>,
    /// Hold τ at this value.
    #[arg(long)]
    fixed_tau: Option<f64>,
    /// Observation precision: `shared` (τ), `sampled`, or a number.
    #[arg(long, default_value = "shared")]
    obs: String,
    /// Use the literal per-edge Gamma(1, Δ²/2) kernel for τ.
    #[arg(long)]
    literal_tau: bool,
    #[arg(long, default_value_t = 1.0)]
    a_c: f64,
    #[arg(long, default_value_t = 1.0)]
    b_c: f64,
    #[arg(long, default_value_t = 1.0)]
    a_tau: f64,
    #[arg(long, default_value_t = 1.0)]
    b_tau: f64,
}

impl ModelArgs {
    fn config(&self, holdout_fraction: f64, chains: usize) -> Result<RunConfig> {
        let obs = match self.obs.as_str() {
            "shared" => ObsPrecision::Shared,
            "sampled" => ObsPrecision::Sampled,
            v => ObsPrecision::Fixed(
                v.parse()
                    .map_err(|_| Error::Config(format!("--obs expects shared, sampled or a number, got {v:?}")))?,
            ),
        };
        let cfg = RunConfig {
            sampler: SamplerConfig {
                depth: self.depth,
                horizon: self.horizon,
                hyper: Hyperpriors {
                    a_c: self.a_c,
                    b_c: self.b_c,
                    a_tau: self.a_tau,
                    b_tau: self.b_tau,
                },
                fixed_c: self.fixed_c,
                fixed_tau: self.fixed_tau,
                obs,
                tau_update: if self.literal_tau {
                    TauUpdate::Literal
                } else {
                    TauUpdate::Conjugate
                },
            },
            sweeps: self.sweeps,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            holdout_fraction,
            chains,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Run summary JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Final tree as Newick.
    #[arg(long)]
    out_tree: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    /// Independent chains, run concurrently and pooled.
    #[arg(long, default_value_t = 1)]
    chains: usize,
}

#[derive(Args, Debug)]
struct PurityArgs {
    /// Run summary written by `fit --out`.
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct GewekeArgs {
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, env = "DFP_SEED", default_value_t = 0)]
    seed: u64,
    /// Halve the rate of the τ update to show the test catching it.
    #[arg(long)]
    corrupt: bool,
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(a) => {
            let sched = DivergenceSchedule::new(a.c, a.depth)?;
            let params = DiffusionParams::shared(a.tau, a.dims)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let data = generate_dataset(a.n, &sched, &params, &mut rng)?;
            let csv = write_points_csv(&data.points, None);
            match &a.out_points {
                Some(p) => write_out(p, &csv)?,
                None => print!("{csv}"),
            }
            if let Some(p) = &a.out_tree {
                write_out(p, &format!("{}\n", export_newick(&data.tree)))?;
            }
            eprintln!(
                "sampled {} points, {} leaves, {} nodes, depth {}",
                a.n,
                data.tree.leaves().len(),
                data.tree.len(),
                a.depth
            );
        }
        Command::Fit(a) => {
            let ds = a.data.load()?;
            let cfg = a.model.config(0.0, 1)?;
            let fit = fit_chain(&ds.points, &cfg, cfg.seed, false)?;
            if let Some(p) = &a.out {
                write_out(p, &export_run_json(&fit.record(&cfg))?)?;
            }
            if let Some(p) = &a.out_tree {
                write_out(p, &format!("{}\n", export_newick(fit.state.tree())))?;
            }
            let mut state = fit.state;
            let last = state.trace_row()?;
            println!(
                "sweeps {} leaves {} c {:.4} tau {:.4} obs_tau {:.4} log_joint {:.3}",
                last.sweep, last.leaves, last.c, last.tau, last.obs_tau, last.log_joint
            );
        }
        Command::Eval(a) => {
            let ds = a.data.load()?;
            let cfg = a.model.config(a.holdout, a.chains)?;
            let report = eval_protocol(&ds.points, &cfg)?;
            println!("{report}");
        }
        Command::Purity(a) => {
            let ds = a.data.load()?;
            let labels = ds
                .labels
                .ok_or_else(|| Error::Config("purity needs --label-col".into()))?;
            let text = fs::read_to_string(&a.run).map_err(|source| Error::File {
                path: a.run.clone(),
                source,
            })?;
            let record = read_run_json(&text)?;
            println!("{:.4}", purity_from_paths(&record.assignments, &labels)?);
        }
        Command::Geweke(a) => {
            let cfg = GewekeConfig {
                n: a.n,
                depth: a.depth,
                samples: a.samples,
                seed: a.seed,
                tau_update: if a.corrupt {
                    TauUpdate::HalvedRate
                } else {
                    TauUpdate::Conjugate
                },
                ..GewekeConfig::default()
            };
            let report = geweke_test(&cfg)?;
            print!("{report}");
            println!("max |z| = {:.2}", report.max_abs_z());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
