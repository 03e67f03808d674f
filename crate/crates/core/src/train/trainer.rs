use std::time::Instant;

use rand::seq::SliceRandom;

use crate::data::{Dataset, Vocabulary};
use crate::eval::evaluate;
use crate::gc::Scorer;
use crate::numeric::Real;
use crate::ote::{Model, OteError, BLOCK_NAMES};
use crate::rng::{derive_seed, stream_rng, Stream};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::{Checkpoint, CheckpointHeader};
use super::loss::{batch_loss_and_grad, Instance};
use super::negatives::sample_negatives;
use super::{Mode, Stage, TrainConfig, TrainError};

/// Everything needed to continue a run from where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub stage: Stage,
    pub step: u64,
    pub best_valid_mrr: f64,
    pub bad_evals: u32,
    pub seed: u64,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: Model<T>, stage: Stage, seed: u64) -> Self {
        let adam = AdamState::new(model.params());
        Self {
            model,
            adam,
            stage,
            step: 0,
            best_valid_mrr: f64::NEG_INFINITY,
            bad_evals: 0,
            seed,
        }
    }

    /// Starts fine-tuning from a pretrained state: same parameters, fresh
    /// optimizer, step counter and early-stopping record.
    pub fn finetune_from(pretrained: Self) -> Result<Self, TrainError> {
        if pretrained.stage != Stage::Pretrain {
            return Err(TrainError::Stage(format!(
                "fine-tuning starts from a pretrain checkpoint, got stage '{}'",
                pretrained.stage.name()
            )));
        }
        Ok(Self::new(pretrained.model, Stage::Finetune, pretrained.seed))
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Self {
        Self {
            model: ck.model,
            adam: ck.adam,
            stage: ck.header.stage,
            step: ck.header.step,
            best_valid_mrr: ck.header.best_valid_mrr,
            bad_evals: ck.header.bad_evals,
            seed: ck.header.seed,
        }
    }

    pub fn to_checkpoint(&self, vocab: &Vocabulary) -> Checkpoint<T> {
        let cfg = *self.model.config();
        Checkpoint {
            header: CheckpointHeader {
                precision: T::PRECISION,
                config: cfg,
                groups: cfg.groups(),
                stage: self.stage,
                step: self.step,
                num_entities: self.model.num_entities(),
                num_relations: self.model.num_relations(),
                entity_hash: vocab.entity_hash(),
                relation_hash: vocab.relation_hash(),
                best_valid_mrr: self.best_valid_mrr,
                bad_evals: self.bad_evals,
                seed: self.seed,
            },
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    /// Mean loss since the previous entry.
    pub smoothed_loss: f64,
    pub valid_mrr: Option<f64>,
    pub valid_hits10: Option<f64>,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub last: TrainState<T>,
    /// Snapshot with the highest validation MRR; the final state when no validation ran.
    pub best: TrainState<T>,
    /// Loss of every step taken in this call.
    pub losses: Vec<f64>,
    pub log: Vec<LogEntry>,
    pub stopped_early: bool,
    /// `(relation, group)` raw matrices redrawn for losing rank.
    pub reinitialized: Vec<(usize, usize)>,
}

/// Positions of a fixed per-epoch permutation of the training set. The batch
/// of a step depends only on (seed, step), so resumed runs see the same data.
struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    cached: Option<(u64, Vec<u32>)>,
}

impl BatchSampler {
    fn batch(&mut self, step: u64) -> Vec<usize> {
        (0..self.batch)
            .map(|i| {
                let p = step * self.batch as u64 + i as u64;
                let epoch = p / self.n as u64;
                if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut perm: Vec<u32> = (0..self.n as u32).collect();
                    perm.shuffle(&mut stream_rng(self.seed, Stream::Sampling, &[epoch]));
                    self.cached = Some((epoch, perm));
                }
                self.cached.as_ref().expect("filled above").1[(p % self.n as u64) as usize] as usize
            })
            .collect()
    }
}

fn reset_moments<T: Real>(adam: &mut AdamState<T>, model: &Model<T>, r: usize, g: usize) {
    let shape = *model.shape();
    let ds = shape.cfg.sub_dim;
    for state in [&mut adam.m, &mut adam.v] {
        let view = state.relation_mut(&shape, r);
        for (block, width) in [(view.matrix, ds * ds), (view.scale, ds), (view.reverse, ds * ds)] {
            if !block.is_empty() {
                block[g * width..(g + 1) * width]
                    .iter_mut()
                    .for_each(|v| *v = T::zero());
            }
        }
    }
}

/// Redraws every raw matrix whose determinant fell under the threshold and
/// clears its optimizer moments.
fn repair<T: Real>(state: &mut TrainState<T>, log: &mut Vec<(usize, usize)>) -> Result<(), TrainError> {
    for (r, g, det) in state.model.degenerate_matrices() {
        let fresh = state.model.reinit_group(r, g, state.seed)?;
        log::warn!(
            "step {}: relation {r} group {g} raw matrix |det| = {det:e}; redrawn (det {fresh:e})",
            state.step
        );
        reset_moments(&mut state.adam, &state.model, r, g);
        log.push((r, g));
    }
    Ok(())
}

/// Runs the stage in `cfg` from `state.step` up to `cfg.max_steps`.
///
/// Each step draws a batch, trains every positive against head and tail
/// corruptions, and applies one Adam update. Validation MRR is computed every
/// `valid_interval` steps; after `patience` non-improving validations in a
/// row the run stops.
pub fn train<T: Real>(
    mut state: TrainState<T>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if state.stage != cfg.stage {
        return Err(TrainError::Stage(format!(
            "state is at stage '{}' but the config asks for '{}'",
            state.stage.name(),
            cfg.stage.name()
        )));
    }
    let num_entities = state.model.num_entities();
    if num_entities < 2 {
        return Err(TrainError::TooFewEntities);
    }
    let train = &data.train.triples;
    if train.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let settings = cfg.loss_settings();
    let adam_cfg = AdamConfig::new(cfg.learning_rate);
    let index = data.context_index();
    let filter = data.filter_index();
    let counts = data.pair_counts();
    let mut sampler = BatchSampler {
        n: train.len(),
        batch: cfg.batch_size,
        seed: state.seed,
        cached: None,
    };

    let started = Instant::now();
    let mut best: Option<TrainState<T>> = None;
    let mut losses = Vec::new();
    let mut log = Vec::new();
    let mut window = Vec::new();
    let mut reinitialized = Vec::new();
    let mut stopped_early = false;

    while state.step < cfg.max_steps {
        let step = state.step;
        let instances: Vec<Instance> = sampler
            .batch(step)
            .into_iter()
            .enumerate()
            .flat_map(|(i, ti)| {
                let pos = train[ti];
                [Mode::Head, Mode::Tail].map(|mode| Instance {
                    positive: pos,
                    mode,
                    negatives: sample_negatives(&pos, cfg.negatives, mode, num_entities, state.seed, &[step, i as u64]),
                    weights: None,
                })
            })
            .collect();
        if cfg.det_check_interval > 0 && step.is_multiple_of(cfg.det_check_interval) {
            repair(&mut state, &mut reinitialized)?;
        }
        let ctx_seed = derive_seed(state.seed, Stream::Context, &[step]);
        let (loss, grads) = match batch_loss_and_grad(&state.model, Some(&index), &instances, &settings, ctx_seed) {
            Err(TrainError::Model(OteError::Degenerate { .. })) => {
                // a matrix lost rank between scheduled checks
                repair(&mut state, &mut reinitialized)?;
                batch_loss_and_grad(&state.model, Some(&index), &instances, &settings, ctx_seed)?
            }
            other => other?,
        };
        if !loss.is_finite() || !grads.all_finite() {
            let blocks = BLOCK_NAMES
                .iter()
                .zip(grads.blocks())
                .filter(|(_, b)| b.iter().any(|v| !v.is_finite()))
                .map(|(n, _)| *n)
                .collect::<Vec<_>>();
            log::error!("non-finite loss {loss} at step {step}; gradient blocks with non-finite values: {blocks:?}");
            return Err(TrainError::NonFinite { step, loss, blocks });
        }
        adam_step(state.model.params_mut(), &grads, &mut state.adam, &adam_cfg);
        state.step += 1;
        losses.push(loss);
        window.push(loss);

        let validate = cfg.valid_interval > 0 && state.step.is_multiple_of(cfg.valid_interval) && !data.valid.is_empty();
        let report = cfg.log_interval > 0 && state.step.is_multiple_of(cfg.log_interval);
        if validate || report {
            let mut entry = LogEntry {
                step: state.step,
                smoothed_loss: window.iter().sum::<f64>() / window.len().max(1) as f64,
                valid_mrr: None,
                valid_hits10: None,
                elapsed_secs: started.elapsed().as_secs_f64(),
            };
            window.clear();
            if validate {
                let scorer = match state.stage {
                    Stage::Pretrain => Scorer::plain(&state.model)?,
                    Stage::Finetune => Scorer::with_context(&state.model, &index)?,
                };
                let rep = evaluate(&data.valid.triples, &scorer, &filter, &counts);
                entry.valid_mrr = Some(rep.overall.mrr);
                entry.valid_hits10 = Some(rep.overall.hits10);
                if rep.overall.mrr > state.best_valid_mrr {
                    state.best_valid_mrr = rep.overall.mrr;
                    state.bad_evals = 0;
                    best = Some(state.clone());
                } else {
                    state.bad_evals += 1;
                }
            }
            match (entry.valid_mrr, entry.valid_hits10) {
                (Some(mrr), Some(h10)) => log::info!(
                    "[{}] step {} loss {:.4} valid mrr {:.4} h@10 {:.4} {:.1}s",
                    state.stage.name(),
                    entry.step,
                    entry.smoothed_loss,
                    mrr,
                    h10,
                    entry.elapsed_secs
                ),
                _ => log::info!(
                    "[{}] step {} loss {:.4} {:.1}s",
                    state.stage.name(),
                    entry.step,
                    entry.smoothed_loss,
                    entry.elapsed_secs
                ),
            }
            log.push(entry);
            if validate && state.bad_evals >= cfg.patience {
                log::info!(
                    "early stop at step {} after {} non-improving validations",
                    state.step,
                    state.bad_evals
                );
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| state.clone()),
        last: state,
        losses,
        log,
        stopped_early,
        reinitialized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Triple;
    use crate::ote::{InitConfig, ModelConfig, Variant};

    fn toy() -> Dataset {
        let train = vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 0, 2),
            Triple::new(2, 0, 3),
            Triple::new(3, 1, 0),
            Triple::new(4, 1, 5),
            Triple::new(5, 1, 4),
            Triple::new(6, 0, 7),
            Triple::new(7, 1, 6),
        ];
        Dataset::from_ids(8, 2, train, vec![Triple::new(0, 0, 2)], vec![])
    }

    fn cfg(steps: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            margin: 4.0,
            negatives: 4,
            batch_size: 4,
            max_steps: steps,
            valid_interval: 0,
            log_interval: 0,
            det_check_interval: 50,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn fresh() -> TrainState<f64> {
        let mc = ModelConfig::new(8, 4, Variant::Ote).unwrap();
        TrainState::new(
            Model::new(mc, 8, 2, &InitConfig { margin: 4.0, seed: 11 }).unwrap(),
            Stage::Pretrain,
            11,
        )
    }

    #[test]
    fn toy_loss_decreases() {
        let out = train(fresh(), &toy(), &cfg(500)).unwrap();
        let smooth = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let early = smooth(&out.losses[..50]);
        let late = smooth(&out.losses[450..]);
        assert!(late < early * 0.5, "early {early}, late {late}");
        assert_eq!(out.last.step, 500);
    }

    #[test]
    fn runs_are_reproducible() {
        let a = train(fresh(), &toy(), &cfg(40)).unwrap();
        let b = train(fresh(), &toy(), &cfg(40)).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.last, b.last);
    }

    #[test]
    fn resumed_run_matches_unbroken_run() {
        let data = toy();
        let whole = train(fresh(), &data, &cfg(60)).unwrap();
        let first = train(fresh(), &data, &cfg(25)).unwrap();
        let ck = first.last.to_checkpoint(&data.vocab);
        let bytes = super::super::checkpoint::encode_checkpoint(&ck);
        let resumed = TrainState::from_checkpoint(super::super::checkpoint::decode_checkpoint::<f64>(&bytes).unwrap());
        let second = train(resumed, &data, &cfg(60)).unwrap();
        assert_eq!([first.losses, second.losses].concat(), whole.losses);
        assert_eq!(second.last.model.params(), whole.last.model.params());
        assert_eq!(second.last.adam, whole.last.adam);
    }

    #[test]
    fn early_stopping_keeps_the_best_snapshot() {
        let mut c = cfg(400);
        c.valid_interval = 10;
        c.patience = 2;
        c.learning_rate = 0.5;
        let out = train(fresh(), &toy(), &c).unwrap();
        assert!(out.best.best_valid_mrr >= out.log.iter().filter_map(|e| e.valid_mrr).fold(0.0, f64::max));
        if out.stopped_early {
            assert_eq!(out.last.bad_evals, 2);
            assert!(out.best.step < out.last.step);
        }
    }

    #[test]
    fn finetune_requires_pretrain_stage() {
        let ft = TrainState::finetune_from(fresh()).unwrap();
        assert_eq!(ft.stage, Stage::Finetune);
        assert_eq!(ft.step, 0);
        assert!(TrainState::finetune_from(ft.clone()).is_err());
        let mut c = cfg(5);
        c.stage = Stage::Finetune;
        assert!(train(fresh(), &toy(), &c).is_err());
        let out = train(ft, &toy(), &c).unwrap();
        assert!(out.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn degenerate_matrices_are_redrawn() {
        let mut st = fresh();
        let shape = *st.model.shape();
        st.model.params_mut().relation_mut(&shape, 1).matrix[16..32]
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let mut c = cfg(1);
        c.det_check_interval = 1;
        let out = train(st, &toy(), &c).unwrap();
        assert_eq!(out.reinitialized, vec![(1, 1)]);
        assert!(out.last.model.degenerate_matrices().is_empty());
    }
}
