//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::decoder::{Decoder, Gait, HighLevelAction};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSpec, GaitLock, GoalSeeker, NeuralPolicy, Policy};
use crate::export::export_run;
use crate::terrain::{export_heightfield, export_png, sample_tile, TerrainFamily};
use crate::trainer::checkpoint::Checkpoint;
use crate::trainer::Trainer;

#[derive(Debug, Parser)]
#[command(name = "gaitnav", version, about = "Hierarchical gait-conditioned navigation testbed")]
pub struct Cli {
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Configuration file; unspecified keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads for environment stepping (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one terrain tile and write its height field and optionally a PNG.
    GenTerrain(GenTerrainArgs),
    /// Train the high-level policy.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a scripted policy at fixed levels.
    Eval(EvalArgs),
    /// Inspect the command decoder.
    Decode(DecodeArgs),
    /// Export metrics, trajectories and gait usage of a run.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenTerrainArgs {
    #[arg(long)]
    pub family: TerrainFamily,
    /// Zero-based difficulty level.
    #[arg(long)]
    pub level: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Height-field output: raw f32 heights plus `.meta.json` and `.cells` sidecars.
    #[arg(long)]
    pub out: PathBuf,
    /// Grayscale PNG rendering of the same tile.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Continue from this checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Iterations to run in this invocation (default: up to max_iterations).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value = "runs/default")]
    pub run_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Policy checkpoint; omit to evaluate the scripted goal seeker.
    #[arg(long, value_name = "CKPT")]
    pub checkpoint: Option<PathBuf>,
    /// Force every action onto one gait.
    #[arg(long)]
    pub gait: Option<Gait>,
    /// Comma-separated families (default: all).
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<TerrainFamily>,
    /// Zero-based levels as a list `5,6,7` or a range `5-9`.
    #[arg(long, default_value = "5-9")]
    pub levels: String,
    /// Episodes per (family, level) cell.
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run every episode to its end instead of stopping at the first reach.
    #[arg(long)]
    pub full_episodes: bool,
    /// Write the report as line-delimited JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Print the gait bins and channel bounds.
    #[arg(long)]
    pub probe: bool,
    /// Decode a comma-separated 13-vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    pub action: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated families to roll out (default: all).
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<TerrainFamily>,
    #[arg(long, default_value = "5-9")]
    pub levels: String,
    #[arg(long, default_value_t = 5)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `"5-9"` or `"1,4,6"`.
pub fn parse_levels(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Usage(format!("cannot parse levels `{s}`"));
    if let Some((a, b)) = s.split_once('-') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.env.workers = w;
    }
    if let Some(Command::Train(t)) = &cli.command {
        if let Some(s) = t.seed {
            cfg.trainer.seed = s;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn families_or_all(f: &[TerrainFamily]) -> Vec<TerrainFamily> {
    if f.is_empty() {
        TerrainFamily::ALL.to_vec()
    } else {
        f.to_vec()
    }
}

/// Runs a parsed command line, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(&cli)?;
    if cli.print_config {
        write!(out, "{}", cfg.to_toml_string()?)?;
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Usage("no subcommand given; see --help".into()));
    };
    match command {
        Command::GenTerrain(a) => {
            let tile = sample_tile(&cfg.terrain, a.level, a.family, a.seed)?;
            export_heightfield(&tile, &a.out)?;
            if let Some(p) = &a.png {
                export_png(&tile.field, p)?;
            }
            writeln!(
                out,
                "{} level {} (d = {:.3}) seed {} -> {}",
                tile.family,
                tile.level,
                tile.difficulty,
                tile.seed,
                a.out.display()
            )?;
            for p in &tile.params {
                writeln!(out, "  {:<16} {:.4}", p.name, p.value)?;
            }
        }
        Command::Train(a) => {
            let trainer = match &a.resume {
                Some(p) => Trainer::resume(cfg, Checkpoint::load(p)?)?,
                None => Trainer::new(cfg)?,
            };
            let mut trainer = trainer.with_run_dir(&a.run_dir)?;
            let metrics = trainer.train(a.iterations)?;
            if let Some(m) = metrics.last() {
                writeln!(
                    out,
                    "iteration {}: mean reward {:.4}, success rate {:.3}, mean level {:.2}",
                    m.iteration, m.mean_reward, m.success_rate, m.mean_level
                )?;
            }
            writeln!(out, "run directory {}", a.run_dir.display())?;
        }
        Command::Eval(a) => {
            let stack = cfg.build_stack()?;
            let a_max = cfg.decoder.a_max;
            let base: Box<dyn Policy> = match &a.checkpoint {
                Some(p) => {
                    let ckpt = Checkpoint::load(p)?;
                    ckpt.ensure_compatible(&cfg)?;
                    Box::new(NeuralPolicy::new(ckpt.policy))
                }
                None => Box::new(GoalSeeker::new(a_max)),
            };
            let mut policy: Box<dyn Policy> = match a.gait {
                Some(gait) => Box::new(GaitLock {
                    inner: base,
                    gait,
                    a_max,
                }),
                None => base,
            };
            let spec = EvalSpec {
                families: families_or_all(&a.families),
                levels: parse_levels(&a.levels)?,
                episodes: a.episodes,
                seed: a.seed,
                stop_on_reach: !a.full_episodes,
            };
            let report = evaluate(&stack, policy.as_mut(), &spec)?;
            write!(out, "{}", report.table())?;
            if let Some(p) = &a.out {
                report.save(p)?;
                writeln!(out, "report written to {}", p.display())?;
            }
        }
        Command::Decode(a) => {
            let decoder = Decoder::new(&cfg.decoder)?;
            if !a.probe && a.action.is_none() {
                return Err(Error::Usage("decode needs --probe or --action".into()));
            }
            if a.probe {
                write!(out, "{}", decoder.probe())?;
            }
            if let Some(v) = &a.action {
                let c = decoder.decode(&HighLevelAction::from_slice(v)?)?;
                for (ch, value) in decoder.bounds().channels.iter().zip(c.continuous) {
                    writeln!(out, "{:<18} {:+.4} {}", ch.name, value, ch.unit)?;
                }
                writeln!(out, "gait               {} {:?}", c.gait, c.gait_embedding)?;
            }
        }
        Command::Export(a) => {
            let spec = EvalSpec {
                families: families_or_all(&a.families),
                levels: parse_levels(&a.levels)?,
                episodes: a.episodes,
                seed: a.seed,
                stop_on_reach: false,
            };
            let s = export_run(&a.run_dir, &a.out, &spec)?;
            writeln!(
                out,
                "{} metrics, {} trajectory and {} gait-usage records written to {}",
                s.metrics_records,
                s.trajectory_records,
                s.gait_usage_records,
                a.out.display()
            )?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
