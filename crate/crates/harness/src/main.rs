use clap::{Args, Parser, Subcommand};
use nlmc_harness::commands;
use nlmc_harness::config::{ExperimentConfig, Preset};
use nlmc_harness::manifest::RunOutput;
use nlmc_harness::Result;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "nlmc", version, about = "Nonlocal multi-continuum upscaling experiments")]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each flag mirrors a config key and wins
/// over the config file.
#[derive(Args, Clone)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base configuration when no file is given: test1, test2 or convergence.
    #[arg(long)]
    preset: Option<String>,
    /// Override any key, e.g. `--set media.contrast=1e4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// output.dir
    #[arg(long)]
    output: Option<PathBuf>,
    /// media.seed
    #[arg(long)]
    seed: Option<u64>,
    /// grid.fine_cells
    #[arg(long)]
    fine_cells: Option<usize>,
    /// grid.coarse_cells
    #[arg(long)]
    coarse_cells: Option<usize>,
    /// nlmc.layers
    #[arg(long)]
    layers: Option<usize>,
    /// time.steps
    #[arg(long)]
    steps: Option<usize>,
    /// output.exec = sequential
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Monotone elliptic fine-grid solve.
    SolveFine(Common),
    /// Linear constrained basis and upscaled matrix.
    BuildBasis(Common),
    /// Linear NLMC through the basis system.
    SolveNlmc(Common),
    /// Localized nonlinear NLMC.
    SolveNonlinear(Common),
    /// Space-time NLMC for the unsaturated equation.
    SolveSpacetime(Common),
    /// Transmissibility dataset from a fine run.
    GenDataset(Common),
    /// Train a per-class regressor.
    TrainSurrogate {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV from `gen-dataset`; generated on the fly when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Unsaturated-flow comparison of fine, NL and upscaled models.
    RunTest1(Common),
    /// Two-phase comparison of fine, NL and upscaled models.
    RunTest2(Common),
    /// Energy-error sweep over coarse sizes and layer counts.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Also compare against the global (unlocalized) method.
        #[arg(long)]
        global: bool,
    },
}

fn resolve(c: &Common, default: Preset) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(p)) => ExperimentConfig::preset(Preset::parse(p)?),
        (None, None) => ExperimentConfig::preset(default),
    };
    cfg.apply_overrides(&c.overrides)?;
    let mut flags = Vec::new();
    if let Some(v) = &c.output {
        flags.push(format!("output.dir={:?}", v.display().to_string()));
    }
    let numeric = [
        ("media.seed", c.seed.map(|v| v as usize)),
        ("grid.fine_cells", c.fine_cells),
        ("grid.coarse_cells", c.coarse_cells),
        ("nlmc.layers", c.layers),
        ("time.steps", c.steps),
    ];
    for (k, v) in numeric {
        if let Some(v) = v {
            flags.push(format!("{k}={v}"));
        }
    }
    if c.sequential {
        flags.push("output.exec=\"sequential\"".into());
    }
    cfg.apply_overrides(&flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (name, common, default) = match &cli.command {
        Command::SolveFine(c) => ("solve-fine", c, Preset::Convergence),
        Command::BuildBasis(c) => ("build-basis", c, Preset::Convergence),
        Command::SolveNlmc(c) => ("solve-nlmc", c, Preset::Convergence),
        Command::SolveNonlinear(c) => ("solve-nonlinear", c, Preset::Convergence),
        Command::SolveSpacetime(c) => ("solve-spacetime", c, Preset::Test1),
        Command::GenDataset(c) => ("gen-dataset", c, Preset::Test1),
        Command::TrainSurrogate { common, .. } => ("train-surrogate", common, Preset::Test1),
        Command::RunTest1(c) => ("run-test1", c, Preset::Test1),
        Command::RunTest2(c) => ("run-test2", c, Preset::Test2),
        Command::Convergence { common, .. } => ("convergence", common, Preset::Convergence),
    };
    let cfg = resolve(common, default)?;
    let mut out = RunOutput::create(&cfg.output_dir().join(name))?;
    match &cli.command {
        Command::SolveFine(_) => commands::solve_fine(&cfg, &mut out)?,
        Command::BuildBasis(_) => commands::build_basis(&cfg, &mut out)?,
        Command::SolveNlmc(_) => commands::solve_nlmc(&cfg, &mut out)?,
        Command::SolveNonlinear(_) => commands::solve_nonlinear(&cfg, &mut out)?,
        Command::SolveSpacetime(_) => commands::solve_spacetime(&cfg, &mut out)?,
        Command::GenDataset(_) => commands::gen_dataset(&cfg, &mut out)?,
        Command::TrainSurrogate { dataset, .. } => commands::train_surrogate(&cfg, dataset.as_deref(), &mut out)?,
        Command::RunTest1(_) => commands::test1(&cfg, &mut out)?,
        Command::RunTest2(_) => commands::test2(&cfg, &mut out)?,
        Command::Convergence { global, .. } => commands::convergence(&cfg, *global, &mut out)?,
    }
    let dir = out.dir.clone();
    out.finish(name, &cfg)?;
    println!("{}", dir.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
