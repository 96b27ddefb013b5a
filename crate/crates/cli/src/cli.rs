//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hyperada::acquisition::Strategy;
use hyperada::mixing::DacsDirection;
use hyperada::selftest::{render_table, run_all, SelftestOptions, SuiteReport};
use hyperada::Modality;

use crate::augment::{dacs, hfa_preview, polarmix, DacsArgs, DacsOrigin, PolarMixArgs};
use crate::config::{strategy_name, Overrides, RunConfig};
use crate::dataset::{save_dataset, synthetic};
use crate::error::{exit_code, usage, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use crate::report;
use crate::select::select;
use crate::simulate::{simulate, write_config, write_json};

#[derive(Debug, Parser)]
#[command(name = "hyperada", version, about = "Hyperbolic active domain adaptation toolkit")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the geometry, solver and loss property suites.
    Selftest(SelftestArgs),
    /// Pretrain, then run the acquisition and adaptation rounds.
    Simulate(SimulateArgs),
    /// Apply one mixing or augmentation transform.
    #[command(subcommand)]
    Augment(AugmentCommand),
    /// Score and select cells for every budget round without training.
    Select(SelectArgs),
    /// Summarize finished run directories.
    Report(ReportArgs),
    /// Write a synthetic dataset directory.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the reports as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Test hook: run the suites with a zero boundary guard.
    #[arg(long, hide = true)]
    pub fault_zero_ball_eps: bool,
}

/// Options shared by every command that resolves a run configuration.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub modality: Option<Modality>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory (default: runs/<modality>-<strategy>-seed<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run the four-row component ladder instead of a single run.
    #[arg(long)]
    pub ablate: bool,
}

#[derive(Debug, Subcommand)]
pub enum AugmentCommand {
    /// Sector swap of scan B into scan A plus optional instance pasting.
    Polarmix(PolarMixCli),
    /// Cut-paste mixing of a source image with a pseudo-labeled target.
    Dacs(DacsCli),
    /// Fit class distributions to embeddings and draw synthetic samples.
    HfaPreview(HfaPreviewCli),
}

#[derive(Debug, Args)]
pub struct PolarMixCli {
    /// Stem of scan A (`A.bin`, `A.label`).
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Output stem.
    #[arg(long)]
    pub out: PathBuf,
    /// Sector start in radians (default: drawn from the seed).
    #[arg(long, allow_negative_numbers = true)]
    pub theta0: Option<f64>,
    /// Sector width in radians.
    #[arg(long, default_value_t = PI)]
    pub sigma: f64,
    /// Classes of B pasted as rotated copies.
    #[arg(long, value_delimiter = ',')]
    pub paste_classes: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DacsCli {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Source image stem (`S.img.hyt`, `S.lbl.hyt`).
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Confidence percentile of target pixels pasted.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_parser = parse_direction, default_value = "target-onto-source")]
    pub direction: DacsDirection,
    /// Model checkpoint; a model is pretrained on the source image when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HfaPreviewCli {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Directory of labeled images or scans.
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Directory of images or scans.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub voxels_per_scan: Option<usize>,
    /// Model checkpoint; a freshly seeded model is used when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output JSON file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_direction(s: &str) -> Result<DacsDirection, String> {
    match s {
        "target-onto-source" => Ok(DacsDirection::TargetOntoSource),
        "source-onto-target" => Ok(DacsDirection::SourceOntoTarget),
        other => Err(format!("unknown direction `{other}` (target-onto-source or source-onto-target)")),
    }
}

fn resolve(args: &ConfigArgs, strategy: Option<Strategy>, data_dir: Option<&Path>) -> Result<RunConfig> {
    RunConfig::resolve(
        args.config.as_deref(),
        &Overrides {
            modality: args.modality,
            strategy,
            seed: args.seed,
            data_dir: data_dir.map(Path::to_path_buf),
        },
    )
}

/// Parses `args`, runs the command and returns the exit code. Output goes
/// to `out`, diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            let _ = writeln!(err, "error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Selftest(a) => {
            let opts = SelftestOptions {
                seed: a.seed,
                instances: a.instances,
                ball_eps: if a.fault_zero_ball_eps { 0.0 } else { SelftestOptions::default().ball_eps },
            };
            let reports = run_all(&opts);
            if a.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&reports)?)?;
            } else {
                write!(out, "{}", render_table(&reports))?;
            }
            Ok(if reports.iter().all(SuiteReport::passed) { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Simulate(a) => {
            let cfg = resolve(&a.cfg, a.strategy, a.data.as_deref())?;
            let dir = a.out.unwrap_or_else(|| {
                let suffix = if a.ablate { "-ablation" } else { "" };
                PathBuf::from("runs").join(format!(
                    "{}-{}-seed{}{suffix}",
                    cfg.modality,
                    strategy_name(cfg.strategy),
                    cfg.seed
                ))
            });
            let summary = simulate(&cfg, &dir, a.ablate)?;
            write!(out, "{summary}")?;
            writeln!(out, "wrote {}", dir.display())?;
            Ok(EXIT_OK)
        }
        Command::Augment(AugmentCommand::Polarmix(a)) => {
            let prov = polarmix(&PolarMixArgs {
                a: &a.a,
                b: &a.b,
                out: &a.out,
                theta0: a.theta0,
                sigma: a.sigma,
                paste_classes: a.paste_classes,
                seed: a.seed,
            })?;
            let from_b = prov.points.iter().filter(|p| p.cloud == 1).count();
            writeln!(out, "{} points ({from_b} from B) -> {}", prov.points.len(), a.out.display())?;
            Ok(EXIT_OK)
        }
        Command::Augment(AugmentCommand::Dacs(a)) => {
            let cfg = resolve(&a.cfg, None, None)?;
            if cfg.modality != Modality::Rgb {
                return Err(usage("dacs mixes images; use --modality rgb"));
            }
            let prov = dacs(
                &cfg,
                &DacsArgs {
                    source: &a.source,
                    target: &a.target,
                    out: &a.out,
                    tau: a.tau.unwrap_or(cfg.training.tau_percentile),
                    direction: a.direction,
                    checkpoint: a.checkpoint.as_deref(),
                },
            )?;
            let from_target = prov.pixels.iter().filter(|&&p| p == DacsOrigin::Target).count();
            writeln!(out, "{from_target} of {} pixels from the target -> {}", prov.pixels.len(), a.out.display())?;
            Ok(EXIT_OK)
        }
        Command::Augment(AugmentCommand::HfaPreview(a)) => {
            let cfg = resolve(&a.cfg, None, None)?;
            let p = hfa_preview(&cfg, &a.input, &a.out, a.checkpoint.as_deref())?;
            for (c, v) in &p.classes {
                writeln!(out, "class {c}: {} samples from {} cells", v.samples.len(), v.support)?;
            }
            Ok(EXIT_OK)
        }
        Command::Select(a) => {
            let mut cfg = resolve(&a.cfg, a.strategy, None)?;
            if let Some(r) = a.rounds {
                cfg.budget.rounds = r;
            }
            if let Some(f) = a.fraction {
                cfg.budget.fraction = f;
            }
            if let Some(v) = a.voxels_per_scan {
                cfg.budget.voxels_per_scan = v;
            }
            cfg.validate()?;
            let sel = select(&cfg, &a.input, a.checkpoint.as_deref())?;
            match &a.out {
                Some(p) => {
                    write_json(p, &sel)?;
                    writeln!(out, "selected {:?} cells per item -> {}", sel.cumulative, p.display())?;
                }
                None => writeln!(out, "{}", serde_json::to_string_pretty(&sel)?)?,
            }
            Ok(EXIT_OK)
        }
        Command::Report(a) => {
            let runs = a.runs.iter().map(|d| report::load(d)).collect::<Result<Vec<_>>>()?;
            write!(out, "{}", report::render(&runs))?;
            Ok(EXIT_OK)
        }
        Command::Generate(a) => {
            let cfg = resolve(&a.cfg, None, None)?;
            let data = synthetic(&cfg)?;
            save_dataset(&a.out, &data)?;
            write_config(&cfg, &a.out).context("writing dataset config")?;
            writeln!(out, "wrote {} dataset to {}", cfg.modality, a.out.display())?;
            Ok(EXIT_OK)
        }
    }
}
