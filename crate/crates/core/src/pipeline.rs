//! The commands behind the `ote` binary: prepare, train, finetune, eval and
//! verify, each driven by a [`RunConfig`].
//!
//! Layout of an output directory:
//!
//! | file                   | written by           |
//! |------------------------|----------------------|
//! | `entities.dict`, `relations.dict`, `stats.toml` | prepare |
//! | `config.toml`          | train, finetune      |
//! | `{stage}.last.ckpt`    | train, finetune      |
//! | `{stage}.best.ckpt`    | train, finetune      |
//! | `{stage}.log`          | train, finetune      |

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::data::{DataError, Dataset, DatasetStats, Split};
use crate::eval::{evaluate, EvalReport, ReportError};
use crate::gc::Scorer;
use crate::numeric::{Precision, Real};
use crate::ote::{InitConfig, Model, OteError};
use crate::train::{
    inspect_checkpoint, load_checkpoint, save_checkpoint, train, CheckpointError, LogEntry, Stage, TrainError,
    TrainState,
};
use crate::verify::{verify_model, VerifyConfig, VerifyReport};

/// Process exit codes, one per failure class.
pub mod exit {
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const INVARIANT: i32 = 5;
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] OteError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("statistics differ from {path}:\n{mismatches}")]
    Expectation { path: PathBuf, mismatches: String },
    #[error("{failed} verification check(s) failed")]
    Invariant { failed: usize },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Usage(_) => exit::CONFIG,
            RunError::Checkpoint(e) => match e {
                CheckpointError::Precision { .. }
                | CheckpointError::Vocabulary { .. }
                | CheckpointError::Incompatible(_) => exit::CONFIG,
                _ => exit::DATA,
            },
            RunError::Train(e) => match e {
                TrainError::Config(_) | TrainError::Stage(_) => exit::CONFIG,
                TrainError::TooFewEntities => exit::DATA,
                TrainError::Model(OteError::Config(_)) => exit::CONFIG,
                TrainError::Model(_) | TrainError::NonFinite { .. } => exit::NUMERIC,
            },
            RunError::Model(OteError::Config(_)) => exit::CONFIG,
            RunError::Model(_) => exit::NUMERIC,
            RunError::Data(_) | RunError::Io { .. } | RunError::Report(_) | RunError::Expectation { .. } => exit::DATA,
            RunError::Invariant { .. } => exit::INVARIANT,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn data_dir(cfg: &RunConfig) -> Result<&Path, RunError> {
    let dir = cfg
        .data_dir
        .as_deref()
        .ok_or_else(|| RunError::Usage("no data directory given (--data-dir or OTE_DATA_DIR)".into()))?;
    if !dir.is_dir() {
        return Err(RunError::Usage(format!(
            "data directory {} does not exist",
            dir.display()
        )));
    }
    Ok(dir)
}

pub fn checkpoint_path(out_dir: &Path, stage: Stage, which: &str) -> PathBuf {
    out_dir.join(format!("{}.{which}.ckpt", stage.name()))
}

/// Expected statistics; only the keys present are compared.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsExpectation {
    pub entities: Option<usize>,
    pub relations: Option<usize>,
    pub train: Option<usize>,
    pub valid: Option<usize>,
    pub test: Option<usize>,
    pub valid_one_to_n: Option<usize>,
    pub valid_n_to_one: Option<usize>,
    pub valid_n_to_n: Option<usize>,
}

impl StatsExpectation {
    /// One line per differing count.
    pub fn mismatches(&self, s: &DatasetStats) -> Vec<String> {
        [
            ("entities", self.entities, s.entities),
            ("relations", self.relations, s.relations),
            ("train", self.train, s.train),
            ("valid", self.valid, s.valid),
            ("test", self.test, s.test),
            ("valid_one_to_n", self.valid_one_to_n, s.valid_one_to_n),
            ("valid_n_to_one", self.valid_n_to_one, s.valid_n_to_one),
            ("valid_n_to_n", self.valid_n_to_n, s.valid_n_to_n),
        ]
        .into_iter()
        .filter_map(|(k, want, got)| match want {
            Some(w) if w != got => Some(format!("  {k}: expected {w}, found {got}")),
            _ => None,
        })
        .collect()
    }
}

/// Loads the splits, writes the vocabulary and `stats.toml` to `out_dir`, and
/// compares the counts with `expect` when given.
pub fn prepare(cfg: &RunConfig, expect: Option<&Path>) -> Result<DatasetStats, RunError> {
    let data = Dataset::load(data_dir(cfg)?)?;
    let stats = data.stats();
    data.vocab.dump(&cfg.out_dir)?;
    let text = toml::to_string(&stats).map_err(ConfigError::from)?;
    write_file(&cfg.out_dir.join("stats.toml"), &text)?;
    if let Some(path) = expect {
        let raw = fs::read_to_string(path).map_err(io_err(path))?;
        let want: StatsExpectation = toml::from_str(&raw).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        let diff = want.mismatches(&stats);
        if !diff.is_empty() {
            return Err(RunError::Expectation {
                path: path.to_path_buf(),
                mismatches: diff.join("\n"),
            });
        }
    }
    Ok(stats)
}

pub fn render_stats(s: &DatasetStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "entities      {:>9}", s.entities);
    let _ = writeln!(out, "relations     {:>9}", s.relations);
    let _ = writeln!(out, "train         {:>9}", s.train);
    let _ = writeln!(out, "valid         {:>9}", s.valid);
    let _ = writeln!(out, "test          {:>9}", s.test);
    let _ = writeln!(out, "valid 1-to-N  {:>9}", s.valid_one_to_n);
    let _ = writeln!(out, "valid N-to-1  {:>9}", s.valid_n_to_one);
    let _ = writeln!(out, "valid N-to-N  {:>9}", s.valid_n_to_n);
    let _ = writeln!(out, "valid other   {:>9}", s.valid_other);
    let _ = write!(out, "mean degree   {:>9.2}", s.mean_train_degree);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: Stage,
    pub step: u64,
    pub final_loss: Option<f64>,
    pub best_valid_mrr: f64,
    pub stopped_early: bool,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Trains one stage, writing checkpoints, the log and the effective config.
///
/// Pretraining starts from a fresh model, or from `pretrain.last.ckpt` when
/// `resume` is set and the file exists. Fine-tuning starts from
/// `cfg.checkpoint`, falling back to `pretrain.best.ckpt` in the output
/// directory, and resumes from `finetune.last.ckpt` the same way.
pub fn run_stage(cfg: &RunConfig, stage: Stage, resume: bool) -> Result<StageSummary, RunError> {
    let data = Dataset::load(data_dir(cfg)?)?;
    let tc = cfg.train_config(stage)?;
    let model_cfg = cfg.model_config()?;
    let resume_from = checkpoint_path(&cfg.out_dir, stage, "last");
    let source = if resume && resume_from.is_file() {
        Some(resume_from)
    } else if stage == Stage::Finetune {
        let path = cfg
            .checkpoint
            .clone()
            .unwrap_or_else(|| checkpoint_path(&cfg.out_dir, Stage::Pretrain, "best"));
        if !path.is_file() {
            return Err(RunError::Usage(format!(
                "finetune needs a pretrain checkpoint; {} does not exist",
                path.display()
            )));
        }
        Some(path)
    } else {
        None
    };
    let precision = match &source {
        Some(path) => {
            let header = inspect_checkpoint(path)?;
            header.check_config(&model_cfg)?;
            header.check_vocabulary(&data.vocab)?;
            header.precision
        }
        None => cfg.precision,
    };
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    write_file(&cfg.out_dir.join("config.toml"), &cfg.to_toml()?)?;
    match precision {
        Precision::F32 => stage_impl::<f32>(cfg, &data, &tc, source.as_deref()),
        Precision::F64 => stage_impl::<f64>(cfg, &data, &tc, source.as_deref()),
    }
}

fn stage_impl<T: Real>(
    cfg: &RunConfig,
    data: &Dataset,
    tc: &crate::train::TrainConfig,
    source: Option<&Path>,
) -> Result<StageSummary, RunError> {
    let stage = tc.stage;
    let state = match source {
        None => {
            let model = Model::<T>::new(
                cfg.model_config()?,
                data.vocab.num_entities(),
                data.vocab.num_relations(),
                &InitConfig {
                    margin: cfg.margin,
                    seed: cfg.seed,
                },
            )?;
            TrainState::new(model, stage, cfg.seed)
        }
        Some(path) => {
            let loaded = TrainState::from_checkpoint(load_checkpoint::<T>(path)?);
            match (loaded.stage, stage) {
                (a, b) if a == b => loaded,
                (Stage::Pretrain, Stage::Finetune) => TrainState::finetune_from(loaded)?,
                (a, _) => {
                    return Err(RunError::Usage(format!(
                        "{} cannot continue from a {} checkpoint",
                        stage.name(),
                        a.name()
                    )))
                }
            }
        }
    };
    let resumed = state.stage == stage && state.step > 0;
    let prior_best = state.best_valid_mrr;
    log::info!(
        "{}: {} from step {} to {} ({}-bit, d={}, d_s={}, {})",
        stage.name(),
        if resumed { "resuming" } else { "starting" },
        state.step,
        tc.max_steps,
        T::PRECISION,
        cfg.dim,
        cfg.sub_dim,
        cfg.variant
    );
    let outcome = train(state, data, tc)?;

    let last_path = checkpoint_path(&cfg.out_dir, stage, "last");
    let best_path = checkpoint_path(&cfg.out_dir, stage, "best");
    save_checkpoint(&outcome.last.to_checkpoint(&data.vocab), &last_path)?;
    // a resumed run without a better validation keeps the earlier best file
    if !best_path.is_file() || outcome.best.best_valid_mrr > prior_best || outcome.best.best_valid_mrr.is_infinite() {
        save_checkpoint(&outcome.best.to_checkpoint(&data.vocab), &best_path)?;
    }
    append_log(
        &cfg.out_dir.join(format!("{}.log", stage.name())),
        &outcome.log,
        resumed,
        cfg.deterministic,
    )?;

    Ok(StageSummary {
        stage,
        step: outcome.last.step,
        final_loss: outcome.losses.last().copied(),
        best_valid_mrr: outcome.last.best_valid_mrr,
        stopped_early: outcome.stopped_early,
        last_checkpoint: last_path,
        best_checkpoint: best_path,
    })
}

/// Tab-separated `step loss valid_mrr valid_hits10 [elapsed_secs]`.
fn append_log(path: &Path, entries: &[LogEntry], append: bool, deterministic: bool) -> Result<(), RunError> {
    let mut text = String::new();
    if !(append && path.is_file()) {
        text.push_str("step\tloss\tvalid_mrr\tvalid_hits10");
        text.push_str(if deterministic { "\n" } else { "\telapsed_secs\n" });
    }
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    for e in entries {
        let _ = write!(
            text,
            "{}\t{:.6}\t{}\t{}",
            e.step,
            e.smoothed_loss,
            opt(e.valid_mrr),
            opt(e.valid_hits10)
        );
        if !deterministic {
            let _ = write!(text, "\t{:.1}", e.elapsed_secs);
        }
        text.push('\n');
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// The checkpoint `eval` and `verify` read: `cfg.checkpoint`, else the best
/// fine-tuned model, else the best pretrained one.
pub fn resolve_checkpoint(cfg: &RunConfig) -> Result<PathBuf, RunError> {
    if let Some(p) = &cfg.checkpoint {
        return if p.is_file() {
            Ok(p.clone())
        } else {
            Err(RunError::Usage(format!("checkpoint {} does not exist", p.display())))
        };
    }
    [Stage::Finetune, Stage::Pretrain]
        .into_iter()
        .map(|s| checkpoint_path(&cfg.out_dir, s, "best"))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            RunError::Usage(format!(
                "no checkpoint given and none found in {}",
                cfg.out_dir.display()
            ))
        })
}

/// Filtered link-prediction metrics of a checkpoint on one split. Fine-tuned
/// models are scored with their full graph context.
pub fn evaluate_checkpoint(cfg: &RunConfig, split: Split) -> Result<EvalReport, RunError> {
    let data = Dataset::load(data_dir(cfg)?)?;
    let path = resolve_checkpoint(cfg)?;
    let header = inspect_checkpoint(&path)?;
    header.check_vocabulary(&data.vocab)?;
    match header.precision {
        Precision::F32 => eval_impl::<f32>(&data, &path, split),
        Precision::F64 => eval_impl::<f64>(&data, &path, split),
    }
}

fn eval_impl<T: Real>(data: &Dataset, path: &Path, split: Split) -> Result<EvalReport, RunError> {
    let ck = load_checkpoint::<T>(path)?;
    let index = data.context_index();
    let scorer = match ck.header.stage {
        Stage::Pretrain => Scorer::plain(&ck.model)?,
        Stage::Finetune => Scorer::with_context(&ck.model, &index)?,
    };
    Ok(evaluate(
        &data.split(split).triples,
        &scorer,
        &data.filter_index(),
        &data.pair_counts(),
    ))
}

/// Size of the graph a fresh model is drawn for when no data directory is given.
const FRESH_ENTITIES: usize = 64;
const FRESH_RELATIONS: usize = 8;

/// Runs the property suite on `cfg.checkpoint`, or on a freshly initialized
/// model from `cfg` when no checkpoint is given.
pub fn verify(cfg: &RunConfig) -> Result<VerifyReport, RunError> {
    let vc = VerifyConfig {
        seed: cfg.seed,
        ..VerifyConfig::default()
    };
    if let Some(path) = &cfg.checkpoint {
        let header = inspect_checkpoint(path)?;
        let report = match header.precision {
            Precision::F32 => verify_model(&load_checkpoint::<f32>(path)?.model, &vc),
            Precision::F64 => verify_model(&load_checkpoint::<f64>(path)?.model, &vc),
        };
        return Ok(report);
    }
    let (n_e, n_r) = match &cfg.data_dir {
        Some(dir) => {
            let d = Dataset::load(dir)?;
            (d.vocab.num_entities(), d.vocab.num_relations())
        }
        None => (FRESH_ENTITIES, FRESH_RELATIONS),
    };
    let init = InitConfig {
        margin: cfg.margin,
        seed: cfg.seed,
    };
    let mc = cfg.model_config()?;
    Ok(match cfg.precision {
        Precision::F32 => verify_model(&Model::<f32>::new(mc, n_e, n_r, &init)?, &vc),
        Precision::F64 => verify_model(&Model::<f64>::new(mc, n_e, n_r, &init)?, &vc),
    })
}
