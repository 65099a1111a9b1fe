//! `hyplan`: benchmark generation, training, evaluation and reporting.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hyplan_core::calibration::CalibrationTable;
use hyplan_core::harness::{
    compute_metrics, evaluate, read_logs, run_scene, seed_from_env, train_procedure, write_csv, write_logs,
    ControlMode, Method, Recording, RunConfig,
};
use hyplan_core::learner::{load_params, save_params, ModelMeta};
use hyplan_core::meter::ClockMode;
use hyplan_core::pathplan::Lattice;
use hyplan_core::scenarios::{generate_benchmark, split_benchmark, ParamGrid, Scene};
use hyplan_core::NavPpo;

#[derive(Parser)]
#[command(name = "hyplan", version, about = "Learning-assisted POMDP planning benchmark")]
struct Cli {
    /// `key = value` file overriding the default run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Clock for planning budgets and timings.
    #[arg(long, global = true)]
    clock: Option<Clock>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Clock {
    Wall,
    Counted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitName {
    Train,
    Calib,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the scene benchmark.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// e.g. `templates=1,2;speeds=0.5,1.0;dists=10,20`
        #[arg(long)]
        grid: Option<String>,
    },
    /// Train the network on the training split and calibrate it.
    Train {
        #[arg(long)]
        scenes: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Output calibration table.
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate methods and write the metrics CSV.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated method names.
        #[arg(long, default_value = "hyplan")]
        method: String,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Metrics CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Episode log (JSON lines) output.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run one scene and dump its episode log and planner traces.
    Plan {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "hyplan")]
        method: String,
        /// Scene id; the first scene of the file when omitted.
        #[arg(long)]
        scene: Option<String>,
        /// Episode log (JSON lines) output.
        #[arg(long)]
        out: PathBuf,
        /// Per-decision planner traces (JSON) output.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Rebuild the metrics CSV from episode logs.
    Report {
        /// Episode log files.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    seed: u64,
    grid: ParamGrid,
    scenes: Vec<Scene>,
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.config {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg = cfg.with_overrides(&text)?;
    }
    if let Some(c) = cli.clock {
        cfg.clock = match c {
            Clock::Wall => ClockMode::Wall,
            Clock::Counted => ClockMode::Counted,
        };
    }
    Ok(cfg)
}

/// `--seed`, then the environment, then the configured value.
fn resolve_seed(flag: Option<u64>, cfg: &mut RunConfig) {
    if let Some(s) = flag.or_else(seed_from_env) {
        cfg.seed = s;
    }
}

fn read_scenes(path: &Path) -> Result<SceneFile> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn select(file: SceneFile, split: SplitName) -> Vec<Scene> {
    if split == SplitName::All {
        return file.scenes;
    }
    let s = split_benchmark(&file.scenes, file.seed);
    match split {
        SplitName::Train => s.train,
        SplitName::Calib => s.calib,
        _ => s.test,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

struct Artifacts {
    net: Option<(NavPpo, ModelMeta)>,
    calib: Option<CalibrationTable<f64>>,
}

fn load_artifacts(run: &RunArgs) -> Result<Artifacts> {
    let net = match &run.model {
        Some(p) => Some(load_params::<f32>(p, None).with_context(|| format!("loading model {}", p.display()))?),
        None => None,
    };
    let calib = match &run.calib {
        Some(p) => Some(CalibrationTable::load(p).with_context(|| format!("loading calibration {}", p.display()))?),
        None => None,
    };
    Ok(Artifacts { net, calib })
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods = list.split(',').map(str::trim).filter(|m| !m.is_empty()).map(str::parse).collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        bail!("no method given");
    }
    Ok(methods)
}

fn write_or_print(out: &Option<PathBuf>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            write(&mut w)?;
            w.flush()?;
        }
        None => write(&mut std::io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli)?;
    match cli.command {
        Command::Gen { out, seed, grid } => {
            resolve_seed(seed, &mut cfg);
            let grid: ParamGrid = match grid {
                Some(g) => g.parse()?,
                None => ParamGrid::default(),
            };
            let scenes = generate_benchmark(&grid, cfg.seed)?;
            let n = scenes.len();
            let mut w = create(&out)?;
            serde_json::to_writer(&mut w, &SceneFile { seed: cfg.seed, grid, scenes })?;
            w.flush()?;
            log::info!("wrote {n} scenes to {}", out.display());
        }
        Command::Train { scenes, out, calib, seed } => {
            resolve_seed(seed, &mut cfg);
            let file = read_scenes(&scenes)?;
            let split = split_benchmark(&file.scenes, file.seed);
            let trained = train_procedure(&split.train, &split.calib, &cfg, None)?;
            save_params(&trained.net, &trained.meta, &out)?;
            trained.calib.save(&calib)?;
            let r = &trained.report;
            log::info!(
                "{} episodes, {} updates, {} skipped, {} calibration samples, {:.0} s",
                r.episodes,
                r.updates,
                r.skipped_nonfinite,
                r.calib_samples,
                r.training_seconds
            );
        }
        Command::Eval { run, method, split, out, trace } => {
            resolve_seed(run.seed, &mut cfg);
            let methods = parse_methods(&method)?;
            let art = load_artifacts(&run)?;
            let scenes = select(read_scenes(&run.scenes)?, split);
            let mut rows = Vec::new();
            let mut all_logs = Vec::new();
            for m in methods {
                let net = art.net.as_ref().map(|(n, meta)| (n, meta));
                let (row, logs) = evaluate(&scenes, m, &cfg, net, art.calib.as_ref())?;
                rows.push(row);
                all_logs.extend(logs);
            }
            if let Some(p) = &trace {
                let mut w = create(p)?;
                write_logs(&all_logs, &mut w)?;
                w.flush()?;
            }
            write_or_print(&out, |w| Ok(write_csv(&rows, w)?))?;
        }
        Command::Plan { run, method, scene, out, trace } => {
            resolve_seed(run.seed, &mut cfg);
            let m: Method = method.parse()?;
            let art = load_artifacts(&run)?;
            if m.needs_model() && art.net.is_none() {
                return Err(hyplan_core::harness::HarnessError::MissingModel(m).into());
            }
            if m.needs_calibration() && art.calib.is_none() {
                return Err(hyplan_core::harness::HarnessError::MissingCalibration(m).into());
            }
            let file = read_scenes(&run.scenes)?;
            let sc = match &scene {
                Some(id) => file.scenes.iter().find(|s| &s.scene_id == id).with_context(|| format!("no scene `{id}`"))?,
                None => file.scenes.first().context("scene file is empty")?,
            };
            let lattice = Lattice::new(cfg.path.clone());
            let rec = Recording { traces: trace.is_some(), ..Recording::default() };
            let net = art.net.as_ref().map(|n| &n.0);
            let ep = run_scene(sc, ControlMode::for_method(m), m.as_str(), &cfg, &lattice, net, art.calib.as_ref(), rec)?;
            let mut w = create(&out)?;
            write_logs(std::slice::from_ref(&ep.log), &mut w)?;
            w.flush()?;
            if let Some(p) = &trace {
                let mut w = create(p)?;
                serde_json::to_writer(&mut w, &ep.traces)?;
                w.flush()?;
            }
            log::info!("{}: {:?} after {} steps", sc.scene_id, ep.log.summary.outcome, ep.log.summary.steps);
        }
        Command::Report { logs, out } => {
            let mut all = Vec::new();
            for p in &logs {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                all.extend(read_logs(BufReader::new(f))?);
            }
            let mut methods: Vec<String> = all.iter().map(|l| l.summary.method.clone()).collect();
            methods.sort();
            methods.dedup();
            let rows: Vec<_> = methods
                .iter()
                .map(|m| {
                    let mine: Vec<_> = all.iter().filter(|l| &l.summary.method == m).cloned().collect();
                    compute_metrics(m, &mine, mine[0].summary.training_days)
                })
                .collect();
            write_or_print(&out, |w| Ok(write_csv(&rows, w)?))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
