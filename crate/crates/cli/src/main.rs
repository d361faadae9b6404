use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use gainlab::flossing::pretrain_floss;
use gainlab::harness::{emit_outputs, replot, run_cells, run_figure_suite, Arm, ExperimentConfig, SuiteResults};
use gainlab::lyapunov::{lyapunov_spectrum, LyapunovOptions};
use gainlab::numerics::RngStream;
use gainlab::rnn::{init_params, load_checkpoint, save_checkpoint, CheckpointMeta};
use gainlab::tasks::TaskKind;

#[derive(Parser)]
#[command(name = "gainlab", version, about = "Train leaky ReLU RNNs with BPTT or e-prop and measure their Lyapunov exponents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train single runs (every given rule × gain × seed at one lr).
    Train(Common),
    /// Flossing pretraining from a fresh initialization.
    Floss(Common),
    /// Lyapunov spectrum of a checkpoint or of a fresh initialization.
    Lyapunov {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to analyse instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of exponents.
        #[arg(long, short)]
        k: Option<usize>,
    },
    /// Full gain × seed sweep with learning-rate selection.
    Sweep(Common),
    /// Redraw the SVG plots from the CSVs in `--out`.
    Plot {
        #[arg(long)]
        out: PathBuf,
    },
    /// Every rule × task × flossing combination at tiny scale.
    Smoke {
        #[arg(long, default_value = "smoke-out")]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config, or a bundled preset name (desk-romo, desk-2af, desk-dms, smoke).
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// bptt, eprop or eprop+floss.
    #[arg(long)]
    rule: Option<String>,
    /// romo, 2af or dms.
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(c) if Path::new(c).exists() => {
                ExperimentConfig::from_json_file(Path::new(c)).with_context(|| format!("loading {c}"))?
            }
            Some(c) => ExperimentConfig::preset(c)?,
            None => ExperimentConfig::desk(self.task.unwrap_or(TaskKind::Romo)),
        };
        if let (Some(task), Some(_)) = (self.task, &self.config) {
            cfg = cfg.with_task(task);
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
            cfg.lr_seeds.retain(|&s| s != seed);
        }
        if let Some(gain) = self.gain {
            cfg.gains = vec![gain];
        }
        if let Some(lr) = self.lr {
            cfg.lrs = vec![lr];
        }
        if let Some(iters) = self.iters {
            cfg.iters = iters;
        }
        if let Some(rule) = &self.rule {
            let arm = Arm::parse(rule)?;
            cfg.rules = vec![arm.rule];
            if !arm.floss {
                cfg.floss = None;
            } else if cfg.floss.is_none() {
                cfg.floss = Some(Default::default());
            }
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn arms(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<Arm>> {
        Ok(match &self.rule {
            Some(r) => vec![Arm::parse(r)?],
            None => cfg.arms(),
        })
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{}", cfg.name)))
}

fn finish(results: &SuiteResults, dir: &Path) -> anyhow::Result<ExitCode> {
    let files = emit_outputs(results, dir).with_context(|| format!("writing results to {}", dir.display()))?;
    println!("wrote {} files to {}", files.len(), dir.display());
    for c in &results.cells {
        let lam = |e: &Option<gainlab::lyapunov::LyapunovEstimate>| e.as_ref().map_or(f64::NAN, |e| e.max());
        println!(
            "{:<12} gain={:<5} lr={:<7} seed={:<4} final_loss={:.5} lambda_before={:+.4} lambda_after={:+.4}",
            c.arm.label(),
            c.gain,
            c.lr,
            c.seed,
            c.final_loss,
            lam(&c.lyap_before),
            lam(&c.lyap_after)
        );
    }
    if results.is_partial() {
        for f in &results.failures {
            eprintln!("failed: {f}");
        }
        eprintln!("{} failures; see {}", results.failures.len(), dir.join("manifest.json").display());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(common: &Common) -> anyhow::Result<ExitCode> {
    let mut cfg = common.config()?;
    if cfg.lrs.len() != 1 {
        cfg.lrs = vec![common.lr.unwrap_or(1e-3)];
    }
    let lr = cfg.lrs[0];
    let arms = common.arms(&cfg)?;
    let mut jobs = Vec::new();
    for &a in &arms {
        for &g in &cfg.gains {
            jobs.extend(cfg.seeds.iter().map(|&s| (a, g, lr, s)));
        }
    }
    let results = run_cells(&cfg, &jobs)?;
    let dir = out_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    for c in &results.cells {
        if let Some(p) = &c.params {
            let path = dir.join(format!("{}_g{}_s{}.ckpt", c.arm.label().replace('+', "_"), c.gain, c.seed));
            save_checkpoint(&path, p, CheckpointMeta { seed: c.seed, gain: c.gain })?;
        }
    }
    finish(&results, &dir)
}

fn cmd_floss(common: &Common) -> anyhow::Result<ExitCode> {
    let cfg = common.config()?;
    let fc = cfg.floss.unwrap_or_default();
    let dir = out_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    let mut wr = std::fs::File::create(dir.join("floss.csv"))?;
    use std::io::Write;
    writeln!(wr, "iteration,gain,seed,loss")?;
    for &gain in &cfg.gains {
        for &seed in &cfg.seeds {
            let p = init_params(cfg.arch(), gain, &mut RngStream::with_stream(seed, 1))?;
            let report = pretrain_floss(&p, &fc, &cfg.stream(), &mut RngStream::with_stream(seed, 3))?;
            for (i, l) in report.history.iter().enumerate() {
                writeln!(wr, "{i},{gain},{seed},{l}")?;
            }
            let lam = |q| -> anyhow::Result<Vec<f64>> {
                let opts = LyapunovOptions { k: fc.k, ..cfg.lyapunov };
                Ok(lyapunov_spectrum(q, &cfg.stream(), &opts, &mut RngStream::with_stream(seed, 4))?.lambdas)
            };
            println!(
                "gain={gain} seed={seed} floss_loss {:.5} -> {:.5}  lambdas {:?} -> {:?}",
                report.history.first().copied().unwrap_or(f64::NAN),
                report.history.last().copied().unwrap_or(f64::NAN),
                lam(&p)?,
                lam(&report.params)?
            );
            let path = dir.join(format!("floss_g{gain}_s{seed}.ckpt"));
            save_checkpoint(&path, &report.params, CheckpointMeta { seed, gain })?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_lyapunov(common: &Common, checkpoint: Option<&Path>, k: Option<usize>) -> anyhow::Result<ExitCode> {
    let cfg = common.config()?;
    let opts = LyapunovOptions { k: k.unwrap_or(cfg.lyapunov.k), ..cfg.lyapunov };
    let nets = match checkpoint {
        Some(path) => {
            let (p, meta) = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
            vec![(p, meta.gain, meta.seed)]
        }
        None => {
            let mut nets = Vec::new();
            for &gain in &cfg.gains {
                for &seed in &cfg.seeds {
                    nets.push((init_params(cfg.arch(), gain, &mut RngStream::with_stream(seed, 1))?, gain, seed));
                }
            }
            nets
        }
    };
    for (p, gain, seed) in nets {
        let est = lyapunov_spectrum(&p, &cfg.stream(), &opts, &mut RngStream::with_stream(seed, 4))?;
        let lambdas: Vec<String> = est.lambdas.iter().map(|l| format!("{l:+.5}")).collect();
        println!("gain={gain} seed={seed} lambdas=[{}]{}", lambdas.join(", "), if est.diverged { " (diverged)" } else { "" });
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(common: &Common) -> anyhow::Result<ExitCode> {
    let cfg = common.config()?;
    log::info!("sweep {} (config {})", cfg.name, cfg.digest());
    let results = run_figure_suite(&cfg)?;
    finish(&results, &out_dir(&cfg))
}

fn cmd_smoke(out: &Path) -> anyhow::Result<ExitCode> {
    let base = ExperimentConfig::preset("smoke")?;
    let mut code = ExitCode::SUCCESS;
    for task in TaskKind::ALL {
        let mut cfg = base.clone();
        cfg.task = gainlab::tasks::TaskConfig::defaults(task);
        cfg.name = format!("smoke-{task}");
        let results = run_figure_suite(&cfg)?;
        if finish(&results, &out.join(task.name()))? != ExitCode::SUCCESS {
            code = ExitCode::from(2);
        }
    }
    Ok(code)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::Floss(c) => cmd_floss(&c),
        Command::Lyapunov { common, checkpoint, k } => cmd_lyapunov(&common, checkpoint.as_deref(), k),
        Command::Sweep(c) => cmd_sweep(&c),
        Command::Plot { out } => {
            let files = replot(&out)?;
            println!("wrote {} plots to {}", files.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Smoke { out } => cmd_smoke(&out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
