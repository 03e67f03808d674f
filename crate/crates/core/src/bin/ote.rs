use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gcote::config::RunConfig;
use gcote::data::Split;
use gcote::eval::{render, ReportFormat};
use gcote::numeric::Precision;
use gcote::ote::Variant;
use gcote::pipeline::{self, RunError};
use gcote::train::Stage;

/// Orthogonal transform embeddings with graph context.
#[derive(Debug, Parser)]
#[command(name = "ote", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a dataset, write its vocabulary and statistics.
    Prepare {
        /// TOML file of expected counts; any mismatch is an error.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
    /// Pretrain a model.
    Train {
        /// Continue from `pretrain.last.ckpt` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Fine-tune a pretrained model with graph context.
    Finetune {
        /// Continue from `finetune.last.ckpt` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Filtered link-prediction metrics of a checkpoint.
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
        /// Also write the report as TOML to this file.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Structural, gradient and pattern checks on a checkpoint or a fresh model.
    Verify,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Toml,
}

/// Settings shared by every command. Flags override the config file or preset.
#[derive(Debug, Args)]
struct RunArgs {
    /// Flat TOML run config.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Start from a reference regime: fb15k-237 or wn18rr.
    #[arg(long, global = true)]
    preset: Option<String>,

    #[arg(long, global = true, env = "OTE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "OTE_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "OTE_CHECKPOINT")]
    checkpoint: Option<PathBuf>,

    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    sub_dim: Option<usize>,
    /// ote, ote-noscale, lne or rotate.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    max_steps: Option<u64>,
    #[arg(long, global = true)]
    finetune_learning_rate: Option<f64>,
    #[arg(long, global = true)]
    finetune_max_steps: Option<u64>,
    #[arg(long, global = true)]
    margin: Option<f64>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    negatives: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    valid_interval: Option<u64>,
    #[arg(long, global = true)]
    patience: Option<u32>,
    #[arg(long, global = true)]
    log_interval: Option<u64>,
    #[arg(long, global = true)]
    det_check_interval: Option<u64>,
    /// Context pairs sampled per side while fine-tuning; 0 uses all.
    #[arg(long, global = true)]
    neighbor_cap: Option<usize>,
    #[arg(long, global = true)]
    freeze_neighbors: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// 32 or 64.
    #[arg(long, global = true)]
    precision: Option<Precision>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Keep wall-clock times out of written files.
    #[arg(long, global = true)]
    deterministic: bool,
}

macro_rules! apply {
    ($cfg:ident, $args:ident, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v.into(); })*
    };
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, RunError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::default(),
        };
        if let Some(d) = &self.data_dir {
            cfg.data_dir = Some(d.clone());
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        apply!(
            cfg,
            self,
            out_dir,
            dim,
            sub_dim,
            variant,
            learning_rate,
            max_steps,
            finetune_learning_rate,
            finetune_max_steps,
            margin,
            temperature,
            negatives,
            batch_size,
            valid_interval,
            patience,
            log_interval,
            det_check_interval,
            neighbor_cap,
            seed,
            precision,
            threads
        );
        cfg.freeze_neighbors |= self.freeze_neighbors;
        cfg.deterministic |= self.deterministic;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    let cfg = cli.run.resolve()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| RunError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Prepare { expect } => {
            let stats = pipeline::prepare(&cfg, expect.as_deref())?;
            println!("{}", pipeline::render_stats(&stats));
        }
        Command::Train { resume } => summarize(pipeline::run_stage(&cfg, Stage::Pretrain, resume)?),
        Command::Finetune { resume } => summarize(pipeline::run_stage(&cfg, Stage::Finetune, resume)?),
        Command::Eval {
            split,
            format,
            report_out,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Valid => Split::Valid,
                SplitArg::Test => Split::Test,
            };
            let report = pipeline::evaluate_checkpoint(&cfg, split)?;
            let format = match format {
                FormatArg::Table => ReportFormat::Table,
                FormatArg::Toml => ReportFormat::Toml,
            };
            print!("{}", render(&report, format, &cfg.variant.to_string())?);
            if let Some(path) = report_out {
                let text = render(&report, ReportFormat::Toml, "")?;
                std::fs::write(&path, text).map_err(|source| RunError::Io { path, source })?;
            }
        }
        Command::Verify => {
            let report = pipeline::verify(&cfg)?;
            println!("{report}");
            if !report.passed() {
                return Err(RunError::Invariant {
                    failed: report.failures().count(),
                });
            }
        }
    }
    Ok(())
}

fn summarize(s: pipeline::StageSummary) {
    println!("stage       {}", s.stage.name());
    println!("step        {}", s.step);
    if let Some(l) = s.final_loss {
        println!("last loss   {l:.6}");
    }
    if s.best_valid_mrr.is_finite() {
        println!("best mrr    {:.4}", s.best_valid_mrr);
    }
    if s.stopped_early {
        println!("stopped early");
    }
    println!("last        {}", s.last_checkpoint.display());
    println!("best        {}", s.best_checkpoint.display());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
