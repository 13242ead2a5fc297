use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use htbandits::grids::{static_geometric_grid, static_minimax_grid};
use htbandits::harness::io::{self, MANIFEST_FILE};
use htbandits::harness::{
    derive_seed, replicate, ExperimentConfig, GridSpec, PolicySpec, RunRecord,
};
use htbandits::lipschitz::{LipschitzFamily, LipschitzInstance};
use htbandits::rewards::{
    make_adaptive_lowerbound_family, make_static_lowerbound_family, nu_law, FiniteArmInstance,
    InstanceFamily, RewardDistribution,
};

mod analyze;

/// Batched heavy-tailed bandit experiments.
#[derive(Debug, Parser)]
#[command(name = "htbandit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every replication of one experiment config
    Run(RunArgs),
    /// Run a config at several values of one parameter
    Sweep(SweepArgs),
    /// Print the points of a static grid as JSON
    Grid(GridArgs),
    /// Print a generated instance or instance family as JSON
    Instances {
        #[command(subcommand)]
        family: FamilyCommand,
    },
    /// Summarize result directories and fit a scaling exponent
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, created if absent
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Worker threads (0 = one per core)
    #[arg(long, value_name = "N", env = "HTBANDIT_JOBS", default_value_t = 0)]
    jobs: usize,
    /// Override the config's base seed
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Overwrite existing results
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    #[value(name = "T")]
    T,
    #[value(name = "M")]
    M,
    #[value(name = "epsilon")]
    Epsilon,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter to vary
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated axis values
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    Minimax,
    Geometric,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Horizon
    #[arg(long = "T", value_name = "T")]
    horizon: u64,
    /// Number of batches
    #[arg(long = "M", value_name = "M")]
    batches: usize,
    /// Tail parameter (minimax grid only)
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = Which::Minimax)]
    which: Which,
}

#[derive(Debug, Subcommand)]
enum FamilyCommand {
    /// Arms with the two-point laws nu(delta) for each listed delta
    Nu {
        #[arg(long, default_value_t = 0.25)]
        delta0: f64,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
    },
    /// Arms with shifted Pareto laws, one per listed shift
    Pareto {
        #[arg(long)]
        shape: f64,
        #[arg(long)]
        scale: f64,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        shifts: Vec<f64>,
    },
    /// K instances for the static-grid lower bound
    StaticLowerbound {
        #[arg(long = "K", value_name = "K")]
        arms: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
    },
    /// Instances and schedules for the adaptive-grid lower bound
    AdaptiveLowerbound {
        #[arg(long = "K", value_name = "K")]
        arms: usize,
        #[arg(long = "M", value_name = "M")]
        batches: usize,
        #[arg(long = "T", value_name = "T")]
        horizon: u64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.25)]
        delta0: f64,
    },
    /// Cone-shaped mean on [0,1]^d
    Peak {
        /// Comma-separated coordinates of the maximizer
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        center: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        height: f64,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Flat-topped cone on [0,1]^d
    Plateau {
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        center: Vec<f64>,
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 1.0)]
        height: f64,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Constant mean on [0,1]^d
    Constant {
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.0)]
        value: f64,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Lipschitz static-grid lower-bound instance I_{k,i}
    LipschitzStatic {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        d_z: f64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Previous grid point t_{k-1}
        #[arg(long)]
        prev_time: f64,
        /// Instance index i, starting at 1
        #[arg(long)]
        index: usize,
    },
    /// Lipschitz adaptive-grid lower-bound instance (means only)
    LipschitzAdaptive {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        d_z: f64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long = "T", value_name = "T")]
        horizon: f64,
        #[arg(long = "M", value_name = "M")]
        batches: usize,
        #[arg(long)]
        j: usize,
        #[arg(long, default_value_t = 0)]
        k: usize,
    },
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// Add centered Pareto noise with this shape
    #[arg(long, requires = "noise_scale")]
    noise_shape: Option<f64>,
    /// Scale of the Pareto noise
    #[arg(long, requires = "noise_shape")]
    noise_scale: Option<f64>,
}

impl NoiseArgs {
    fn law(&self) -> Option<RewardDistribution> {
        match (self.noise_shape, self.noise_scale) {
            (Some(shape), Some(scale)) => Some(RewardDistribution::ParetoShifted {
                shape,
                scale,
                shift: 0.0,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Glob matching result directories, manifests or sweep.csv files
    #[arg(long, value_name = "GLOB")]
    results: String,
    /// Fit log(mean regret) against log(x)
    #[arg(long)]
    fit: bool,
}

/// Bad input, reported with exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<htbandits::Error>() {
            return if e.is_config() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(&args.common),
        Command::Sweep(args) => sweep(&args),
        Command::Grid(args) => grid(&args),
        Command::Instances { family } => instances(&family),
        Command::Analyze(args) => analyze::analyze(&args.results, args.fit),
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut config = io::load_config(&common.config).map_err(|e| {
        let code = if e.is_config() || matches!(e, htbandits::Error::Io { .. }) {
            usage(e.to_string())
        } else {
            e.into()
        };
        code.context(format!("loading {}", common.config.display()))
    })?;
    if let Some(seed) = common.seed {
        config.base_seed = seed;
    }
    Ok(config)
}

fn check_out(dir: &Path, force: bool) -> Result<()> {
    if dir.join(MANIFEST_FILE).exists() && !force {
        return Err(usage(format!(
            "{} already holds results; pass --force to overwrite",
            dir.display()
        )));
    }
    Ok(())
}

fn execute(config: &ExperimentConfig, jobs: usize, dir: &Path) -> Result<RunRecord> {
    config.prepare()?;
    let start = Instant::now();
    let record = replicate(config, jobs)?;
    io::export(&record, config, start.elapsed().as_secs_f64(), dir)?;
    Ok(record)
}

fn run(common: &Common) -> Result<()> {
    let config = load(common)?;
    check_out(&common.out, common.force)?;
    let record = execute(&config, common.jobs, &common.out)?;
    let s = record.stats;
    println!(
        "{} replications: mean {} std {} q05 {} q50 {} q95 {}",
        record.final_regrets.len(),
        s.mean,
        s.std,
        s.q05,
        s.q50,
        s.q95
    );
    println!("wrote {}", common.out.display());
    Ok(())
}

fn with_axis(config: &ExperimentConfig, axis: Axis, value: f64) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    let as_int = |name: &str| -> Result<u64> {
        if value >= 1.0 && value.fract() == 0.0 && value < 2f64.powi(63) {
            Ok(value as u64)
        } else {
            Err(usage(format!("{name} value {value} is not a positive integer")))
        }
    };
    match axis {
        Axis::T => {
            c.horizon = as_int("T")?;
            if let PolicySpec::BaseH {
                grid: GridSpec::Explicit { .. },
            } = c.policy
            {
                return Err(usage("cannot sweep T with an explicit grid"));
            }
        }
        Axis::M => {
            let m = as_int("M")? as usize;
            match &mut c.policy {
                PolicySpec::BaseH { grid } => match grid {
                    GridSpec::Minimax { batches } | GridSpec::Geometric { batches } => *batches = m,
                    GridSpec::Explicit { .. } => {
                        return Err(usage("cannot sweep M with an explicit grid"))
                    }
                },
                PolicySpec::BlinH { batches, .. } => *batches = Some(m),
            }
        }
        Axis::Epsilon => c.spec.epsilon = value,
    }
    Ok(c)
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let common = &args.common;
    let config = load(common)?;
    let dir = &common.out;
    if dir.join("sweep.csv").exists() && !common.force {
        return Err(usage(format!(
            "{} already holds a sweep; pass --force to overwrite",
            dir.display()
        )));
    }
    let axis_name = args.axis.to_possible_value().unwrap().get_name().to_string();
    let points: Vec<(f64, ExperimentConfig, PathBuf)> = args
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = with_axis(&config, args.axis, v)?;
            c.base_seed = derive_seed(config.base_seed, i as u64);
            c.prepare()?;
            let sub = dir.join(format!("{axis_name}={v}"));
            check_out(&sub, common.force)?;
            Ok((v, c, sub))
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut table = String::from("axis_value,mean_regret,std\n");
    for (v, c, sub) in &points {
        let record = execute(c, common.jobs, sub)?;
        println!("{axis_name}={v}: mean {} std {}", record.stats.mean, record.stats.std);
        table.push_str(&format!("{v},{},{}\n", record.stats.mean, record.stats.std));
    }
    let path = dir.join("sweep.csv");
    std::fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn grid(args: &GridArgs) -> Result<()> {
    let g = match args.which {
        Which::Minimax => static_minimax_grid(args.horizon, args.batches, args.epsilon)?,
        Which::Geometric => static_geometric_grid(args.horizon, args.batches)?,
    };
    println!("{}", serde_json::to_string(&g.points)?);
    Ok(())
}

fn finite_doc(inst: FiniteArmInstance) -> Result<String> {
    let doc = serde_json::json!({ "type": "finite", "arms": inst.arms() });
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn lipschitz_doc(inst: LipschitzInstance) -> Result<String> {
    let mut doc = serde_json::to_value(&inst)?;
    doc.as_object_mut()
        .expect("instance is an object")
        .insert("type".into(), "lipschitz".into());
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn instances(family: &FamilyCommand) -> Result<()> {
    let text = match family {
        FamilyCommand::Nu {
            delta0,
            deltas,
            epsilon,
        } => {
            let arms = deltas
                .iter()
                .map(|&d| nu_law(*delta0, d, *epsilon))
                .collect::<htbandits::Result<Vec<_>>>()?;
            finite_doc(FiniteArmInstance::new(arms)?)?
        }
        FamilyCommand::Pareto {
            shape,
            scale,
            shifts,
        } => {
            let arms = shifts
                .iter()
                .map(|&shift| RewardDistribution::ParetoShifted {
                    shape: *shape,
                    scale: *scale,
                    shift,
                })
                .collect();
            finite_doc(FiniteArmInstance::new(arms)?)?
        }
        FamilyCommand::StaticLowerbound {
            arms,
            delta,
            epsilon,
        } => {
            let instances = make_static_lowerbound_family(*arms, *delta, *epsilon)?;
            serde_json::to_string_pretty(&InstanceFamily::StaticLowerbound {
                arms: *arms,
                delta: *delta,
                epsilon: *epsilon,
                instances,
            })?
        }
        FamilyCommand::AdaptiveLowerbound {
            arms,
            batches,
            horizon,
            epsilon,
            delta0,
        } => {
            let fam = make_adaptive_lowerbound_family(*arms, *batches, *horizon, *epsilon, *delta0)?;
            for j in &fam.collisions {
                eprintln!("warning: T_{j} collides with T_{} after flooring", j - 1);
            }
            serde_json::to_string_pretty(&InstanceFamily::AdaptiveLowerbound(fam))?
        }
        FamilyCommand::Peak {
            center,
            height,
            width,
            noise,
        } => lipschitz_doc(LipschitzInstance::new(
            LipschitzFamily::Peak {
                center: center.clone(),
                height: *height,
                width: *width,
            },
            noise.law(),
        )?)?,
        FamilyCommand::Plateau {
            center,
            radius,
            height,
            width,
            noise,
        } => lipschitz_doc(LipschitzInstance::new(
            LipschitzFamily::Plateau {
                center: center.clone(),
                radius: *radius,
                height: *height,
                width: *width,
            },
            noise.law(),
        )?)?,
        FamilyCommand::Constant { d, value, noise } => lipschitz_doc(LipschitzInstance::new(
            LipschitzFamily::Constant { d: *d, value: *value },
            noise.law(),
        )?)?,
        FamilyCommand::LipschitzStatic {
            d,
            d_z,
            epsilon,
            prev_time,
            index,
        } => lipschitz_doc(LipschitzInstance::new(
            LipschitzFamily::StaticLowerbound {
                d: *d,
                d_z: *d_z,
                epsilon: *epsilon,
                prev_time: *prev_time,
                index: *index,
            },
            None,
        )?)?,
        FamilyCommand::LipschitzAdaptive {
            d,
            d_z,
            epsilon,
            horizon,
            batches,
            j,
            k,
        } => lipschitz_doc(LipschitzInstance::new(
            LipschitzFamily::AdaptiveLowerbound {
                d: *d,
                d_z: *d_z,
                epsilon: *epsilon,
                horizon: *horizon,
                batches: *batches,
                j: *j,
                k: *k,
            },
            None,
        )?)?,
    };
    println!("{text}");
    Ok(())
}
