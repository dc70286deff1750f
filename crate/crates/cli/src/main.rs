use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shapeharmony_cli::stages;
use shapeharmony_cli::{CliError, GroundTruth, PipelineConfig, Stage};

/// Dense shape correspondence, interpolation trajectories and shape models.
///
/// Settings come from a JSON config (`--config`), with flags taking
/// precedence. Outputs go to `<outdir>/<stage>/`.
#[derive(Parser)]
#[command(name = "shapeharmony", version)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Optimize features and export hard maps both ways.
    Match,
    /// Optimize interpolation trajectories from the match stage's maps.
    Interpolate,
    /// Adapt trajectory frames and export the final map.
    Tta,
    /// Score the available maps against the ground truth.
    Eval,
    /// Build a shape model and report generality and specificity.
    Ssm,
    /// Run every stage in order.
    Pipeline,
}

#[derive(Args)]
struct Opts {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Worker threads; 1 is the deterministic mode, 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    #[arg(long, global = true)]
    mesh_x: Option<PathBuf>,
    #[arg(long, global = true)]
    mesh_y: Option<PathBuf>,
    /// Ground truth: `identity`, `none` or a hard-map file.
    #[arg(long, global = true)]
    gt: Option<String>,
    /// Basis size.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trajectory steps T.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    match_iters: Option<usize>,
    #[arg(long, global = true)]
    interp_iters: Option<usize>,
    #[arg(long, global = true)]
    tta_iters: Option<usize>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    lambda_d: Option<f64>,
    #[arg(long, global = true)]
    init_jitter: Option<f64>,
    /// Corresponded mesh for the shape model; repeat for each shape.
    #[arg(long = "shape", global = true)]
    shapes: Vec<PathBuf>,
    /// Shape-model mode count.
    #[arg(long, global = true)]
    modes: Option<usize>,
}

impl Opts {
    fn apply(&self, cfg: &mut PipelineConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut cfg.outdir, &self.outdir);
        set(&mut cfg.mesh_x, &self.mesh_x);
        set(&mut cfg.mesh_y, &self.mesh_y);
        if let Some(gt) = &self.gt {
            cfg.gt = GroundTruth::parse(gt);
        }
        set(&mut cfg.k, &self.k);
        set(&mut cfg.seed, &self.seed);
        set(&mut cfg.interpolate.steps, &self.steps);
        set(&mut cfg.matching.iters, &self.match_iters);
        set(&mut cfg.interpolate.iters, &self.interp_iters);
        set(&mut cfg.tta.iters, &self.tta_iters);
        set(&mut cfg.matching.temperature, &self.temperature);
        set(&mut cfg.tta.lambda_d, &self.lambda_d);
        set(&mut cfg.init_jitter, &self.init_jitter);
        if !self.shapes.is_empty() {
            cfg.ssm.shapes = self.shapes.clone();
        }
        if self.modes.is_some() {
            cfg.ssm.modes = self.modes;
        }
    }
}

fn stages_of(command: Command, cfg: &PipelineConfig) -> Vec<Stage> {
    match command {
        Command::Match => vec![Stage::Match],
        Command::Interpolate => vec![Stage::Interpolate],
        Command::Tta => vec![Stage::Tta],
        Command::Eval => vec![Stage::Eval],
        Command::Ssm => vec![Stage::Ssm],
        Command::Pipeline => {
            let mut s = vec![Stage::Match, Stage::Interpolate, Stage::Tta, Stage::Ssm];
            if cfg.gt != GroundTruth::None {
                s.push(Stage::Eval);
            }
            s
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.opts.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cli.opts.apply(&mut cfg);
    if cli.opts.dump_config {
        println!(
            "{}",
            serde_json::to_string_pretty(&cfg).expect("config serializes")
        );
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no subcommand given (try --help)".into()));
    };
    cfg.validate(&stages_of(command, &cfg))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.opts.threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    match command {
        Command::Match => stages::run_match(&cfg).map(drop),
        Command::Interpolate => stages::run_interpolate(&cfg),
        Command::Tta => stages::run_tta(&cfg),
        Command::Eval => stages::run_eval(&cfg).map(drop),
        Command::Ssm => stages::run_ssm(&cfg).map(drop),
        Command::Pipeline => stages::run_pipeline(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
