//! Margin loss with self-adversarial weights, and its hand-written gradient.
//!
//! Per positive and corruption mode:
//! `L = −Σ_j w_j log σ(d_j − γ) − log σ(γ − d_pos)` with the weights `w`
//! held constant. The batch loss is the mean over (positive, mode) instances.
//!
//! Gradients are gathered per chunk of instances into sparse maps keyed by
//! entity and relation. Chunks have a fixed size and are merged in order, so
//! the reduction is deterministic whatever the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::{ContextIndex, EntityId, Triple};
use crate::gc::{context_into, sample_neighbors, ScoreTerms, Side};
use crate::numeric::{gemv_t_acc, ger, Real};
use crate::ote::{Model, Params, Transforms};

use super::negatives::adversarial_weights;
use super::{Mode, Stage, TrainError};

const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub margin: f64,
    pub temperature: f64,
    pub stage: Stage,
    pub neighbor_cap: Option<usize>,
    pub freeze_neighbors: bool,
}

/// One positive with the corrupted entities for one mode. When `weights` is
/// `None` they are computed from the current distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub positive: Triple,
    pub mode: Mode,
    pub negatives: Vec<EntityId>,
    pub weights: Option<Vec<f64>>,
}

impl Instance {
    pub fn negative(&self, j: usize) -> Triple {
        let p = self.positive;
        match self.mode {
            Mode::Head => Triple::new(self.negatives[j], p.relation, p.tail),
            Mode::Tail => Triple::new(p.head, p.relation, self.negatives[j]),
        }
    }
}

/// `log σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss of one positive against its weighted negatives.
pub fn mode_loss(positive: f64, negatives: &[f64], weights: &[f64], margin: f64) -> f64 {
    let neg: f64 = negatives
        .iter()
        .zip(weights)
        .map(|(&d, &w)| -w * log_sigmoid(d - margin))
        .sum();
    neg - log_sigmoid(margin - positive)
}

/// Context representations (and the neighbors sampled for them) for the
/// entities one batch touches.
struct Contexts<'a, T> {
    index: &'a ContextIndex,
    tail: BTreeMap<EntityId, (Vec<usize>, Vec<T>)>,
    head: BTreeMap<EntityId, (Vec<usize>, Vec<T>)>,
}

impl<'a, T: Real> Contexts<'a, T> {
    fn build(
        model: &Model<T>,
        tr: &Transforms<T>,
        index: &'a ContextIndex,
        instances: &[Instance],
        cap: Option<usize>,
        seed: u64,
    ) -> Self {
        let mut tails = Vec::new();
        let mut heads = Vec::new();
        for inst in instances {
            tails.push(inst.positive.tail);
            heads.push(inst.positive.head);
            match inst.mode {
                Mode::Tail => tails.extend(&inst.negatives),
                Mode::Head => heads.extend(&inst.negatives),
            }
        }
        let build = |mut ents: Vec<EntityId>, side: Side| {
            ents.sort_unstable();
            ents.dedup();
            ents.into_par_iter()
                .map(|e| {
                    let len = match side {
                        Side::Tail => index.head_rel_pairs(e).len(),
                        Side::Head => index.rel_tail_pairs(e).len(),
                    };
                    let chosen = sample_neighbors(len, cap, seed, side, e);
                    let mut repr = vec![T::zero(); model.config().dim];
                    context_into(model, tr, index, side, e, &chosen, &mut repr);
                    (e, (chosen, repr))
                })
                .collect::<Vec<_>>()
                .into_iter()
                .collect()
        };
        Self {
            index,
            tail: build(tails, Side::Tail),
            head: build(heads, Side::Head),
        }
    }
}

/// Sparse gradient accumulator for one chunk.
struct GradAcc<T> {
    entity: BTreeMap<EntityId, Vec<T>>,
    forward: BTreeMap<u32, Vec<T>>,
    backward: BTreeMap<u32, Vec<T>>,
    ctx_tail: BTreeMap<EntityId, Vec<T>>,
    ctx_head: BTreeMap<EntityId, Vec<T>>,
    loss: f64,
}

fn slot<T: Real>(map: &mut BTreeMap<u32, Vec<T>>, key: u32, len: usize) -> &mut Vec<T> {
    map.entry(key).or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

impl<T: Real> GradAcc<T> {
    fn new() -> Self {
        Self {
            entity: BTreeMap::new(),
            forward: BTreeMap::new(),
            backward: BTreeMap::new(),
            ctx_tail: BTreeMap::new(),
            ctx_head: BTreeMap::new(),
            loss: 0.0,
        }
    }

    fn merge(&mut self, other: Self) {
        let pairs = [
            (&mut self.entity, other.entity),
            (&mut self.forward, other.forward),
            (&mut self.backward, other.backward),
            (&mut self.ctx_tail, other.ctx_tail),
            (&mut self.ctx_head, other.ctx_head),
        ];
        for (dst, src) in pairs {
            for (k, v) in src {
                match dst.get_mut(&k) {
                    Some(d) => add_into(d, &v),
                    None => {
                        dst.insert(k, v);
                    }
                }
            }
        }
        self.loss += other.loss;
    }
}

/// Forward intermediates of one triple: the distance and the unit difference
/// vectors of each term (zero where a group's difference vanishes).
struct Prepared<T> {
    total: T,
    units: [Vec<T>; 4],
}

struct Objective<'a, T> {
    model: &'a Model<T>,
    tr: &'a Transforms<T>,
    ctx: Option<&'a Contexts<'a, T>>,
}

impl<T: Real> Objective<'_, T> {
    fn forward(&self, t: &Triple) -> Prepared<T> {
        let cfg = self.model.config();
        let (d, ds) = (cfg.dim, cfg.sub_dim);
        let rt = self.tr.relation(t.relation as usize);
        let eh = self.model.entity(t.head as usize);
        let et = self.model.entity(t.tail as usize);
        let mut fwd = vec![T::zero(); d];
        let mut bwd = vec![T::zero(); d];
        rt.apply_forward(eh, &mut fwd);
        rt.apply_backward(et, &mut bwd);
        let diff = |a: &[T], b: &[T]| -> Vec<T> { a.iter().zip(b).map(|(&x, &y)| x - y).collect() };
        let mut units = [diff(&fwd, et), diff(&bwd, eh), Vec::new(), Vec::new()];
        if let Some(c) = self.ctx {
            units[2] = diff(&fwd, &c.tail[&t.tail].1);
            units[3] = diff(&bwd, &c.head[&t.head].1);
        }
        let mut dist = [T::zero(); 4];
        for (u, total) in units.iter_mut().zip(dist.iter_mut()) {
            for g in u.chunks_exact_mut(ds) {
                let norm = g.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
                *total += norm;
                if norm > T::zero() {
                    g.iter_mut().for_each(|v| *v /= norm);
                } else {
                    g.iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
        let terms = ScoreTerms {
            forward: dist[0],
            backward: dist[1],
            context_tail: dist[2],
            context_head: dist[3],
        };
        let total = if self.ctx.is_some() {
            terms.total()
        } else {
            terms.plain()
        };
        Prepared { total, units }
    }

    /// Adds `coef · ∂distance/∂(maps, entities, contexts)` into `acc`.
    fn backward(&self, t: &Triple, prep: &Prepared<T>, coef: T, acc: &mut GradAcc<T>) {
        let cfg = self.model.config();
        let (d, ds) = (cfg.dim, cfg.sub_dim);
        let sq = ds * ds;
        let map_len = cfg.groups() * sq;
        let rt = self.tr.relation(t.relation as usize);
        let eh = self.model.entity(t.head as usize);
        let et = self.model.entity(t.tail as usize);
        let [u_f, u_b, u_ct, u_ch] = &prep.units;
        let mut gf: Vec<T> = u_f.iter().map(|&v| coef * v).collect();
        let mut gb: Vec<T> = u_b.iter().map(|&v| coef * v).collect();
        let mut dh: Vec<T> = u_b.iter().map(|&v| -coef * v).collect();
        let mut dt: Vec<T> = u_f.iter().map(|&v| -coef * v).collect();
        if self.ctx.is_some() {
            add_into(&mut gf, &u_ct.iter().map(|&v| coef * v).collect::<Vec<_>>());
            add_into(&mut gb, &u_ch.iter().map(|&v| coef * v).collect::<Vec<_>>());
            let ct = slot(&mut acc.ctx_tail, t.tail, d);
            ct.iter_mut().zip(u_ct).for_each(|(c, &v)| *c -= coef * v);
            let ch = slot(&mut acc.ctx_head, t.head, d);
            ch.iter_mut().zip(u_ch).for_each(|(c, &v)| *c -= coef * v);
        }
        let fg = slot(&mut acc.forward, t.relation, map_len);
        for g in 0..cfg.groups() {
            let r = g * ds..(g + 1) * ds;
            ger(&gf[r.clone()], &eh[r.clone()], T::one(), &mut fg[g * sq..(g + 1) * sq]);
            gemv_t_acc(rt.forward_map(g), &gf[r.clone()], T::one(), &mut dh[r]);
        }
        let bg = slot(&mut acc.backward, t.relation, map_len);
        for g in 0..cfg.groups() {
            let r = g * ds..(g + 1) * ds;
            ger(&gb[r.clone()], &et[r.clone()], T::one(), &mut bg[g * sq..(g + 1) * sq]);
            gemv_t_acc(rt.backward_map(g), &gb[r.clone()], T::one(), &mut dt[r]);
        }
        add_into(slot(&mut acc.entity, t.head, d), &dh);
        add_into(slot(&mut acc.entity, t.tail, d), &dt);
    }

    fn instance(&self, inst: &Instance, settings: &LossSettings, scale: f64, acc: Option<&mut GradAcc<T>>) -> f64 {
        let pos = self.forward(&inst.positive);
        let negs: Vec<Prepared<T>> = (0..inst.negatives.len())
            .map(|j| self.forward(&inst.negative(j)))
            .collect();
        let d_pos = pos.total.f64();
        let d_neg: Vec<f64> = negs.iter().map(|p| p.total.f64()).collect();
        let weights = match &inst.weights {
            Some(w) => w.clone(),
            None => adversarial_weights(&d_neg, settings.temperature),
        };
        let gamma = settings.margin;
        let loss = mode_loss(d_pos, &d_neg, &weights, gamma);
        if let Some(acc) = acc {
            // ∂/∂d of −log σ(γ − d) is σ(d − γ); of −w log σ(d − γ) it is −w σ(γ − d)
            self.backward(&inst.positive, &pos, T::of(scale * sigmoid(d_pos - gamma)), acc);
            for (j, prep) in negs.iter().enumerate() {
                let c = -scale * weights[j] * sigmoid(gamma - d_neg[j]);
                self.backward(&inst.negative(j), prep, T::of(c), acc);
            }
            acc.loss += scale * loss;
        }
        loss
    }
}

fn contexts_for<'a, T: Real>(
    model: &Model<T>,
    tr: &Transforms<T>,
    index: Option<&'a ContextIndex>,
    instances: &[Instance],
    settings: &LossSettings,
    context_seed: u64,
) -> Result<Option<Contexts<'a, T>>, TrainError> {
    match settings.stage {
        Stage::Pretrain => Ok(None),
        Stage::Finetune => {
            let index = index.ok_or_else(|| TrainError::Stage("fine-tuning needs a context index".into()))?;
            Ok(Some(Contexts::build(
                model,
                tr,
                index,
                instances,
                settings.neighbor_cap,
                context_seed,
            )))
        }
    }
}

/// Mean instance loss at the current parameters.
pub fn batch_loss<T: Real>(
    model: &Model<T>,
    index: Option<&ContextIndex>,
    instances: &[Instance],
    settings: &LossSettings,
    context_seed: u64,
) -> Result<f64, TrainError> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let tr = model.transforms()?;
    let ctx = contexts_for(model, &tr, index, instances, settings, context_seed)?;
    let obj = Objective {
        model,
        tr: &tr,
        ctx: ctx.as_ref(),
    };
    let per_chunk: Vec<f64> = instances
        .par_chunks(CHUNK)
        .map(|chunk| chunk.iter().map(|i| obj.instance(i, settings, 1.0, None)).sum())
        .collect();
    Ok(per_chunk.into_iter().sum::<f64>() / instances.len() as f64)
}

/// Fills in each instance's adversarial weights from the current parameters,
/// so later evaluations treat them as constants.
pub fn fix_weights<T: Real>(
    model: &Model<T>,
    index: Option<&ContextIndex>,
    instances: &[Instance],
    settings: &LossSettings,
    context_seed: u64,
) -> Result<Vec<Instance>, TrainError> {
    let tr = model.transforms()?;
    let ctx = contexts_for(model, &tr, index, instances, settings, context_seed)?;
    let obj = Objective {
        model,
        tr: &tr,
        ctx: ctx.as_ref(),
    };
    Ok(instances
        .iter()
        .map(|inst| {
            let d: Vec<f64> = (0..inst.negatives.len())
                .map(|j| obj.forward(&inst.negative(j)).total.f64())
                .collect();
            Instance {
                weights: Some(adversarial_weights(&d, settings.temperature)),
                ..inst.clone()
            }
        })
        .collect())
}

/// Mean instance loss and its gradient with respect to every parameter block.
pub fn batch_loss_and_grad<T: Real>(
    model: &Model<T>,
    index: Option<&ContextIndex>,
    instances: &[Instance],
    settings: &LossSettings,
    context_seed: u64,
) -> Result<(f64, Params<T>), TrainError> {
    let mut grads = model.params().zeros_like();
    if instances.is_empty() {
        return Ok((0.0, grads));
    }
    let tr = model.transforms()?;
    let ctx = contexts_for(model, &tr, index, instances, settings, context_seed)?;
    let obj = Objective {
        model,
        tr: &tr,
        ctx: ctx.as_ref(),
    };
    let scale = 1.0 / instances.len() as f64;
    let mut acc = instances
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = GradAcc::new();
            for inst in chunk {
                obj.instance(inst, settings, scale, Some(&mut acc));
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(GradAcc::new(), |mut a, b| {
            a.merge(b);
            a
        });

    let cfg = *model.config();
    let (d, ds) = (cfg.dim, cfg.sub_dim);
    let sq = ds * ds;
    let map_len = cfg.groups() * sq;
    if let Some(ctx) = &ctx {
        // c = (Σ_i P_i x_i + e) / (n + 1): route the context gradient to e,
        // to each neighbor's map and, unless frozen, to each neighbor entity.
        for (&e, dc) in &acc.ctx_tail {
            let chosen = &ctx.tail[&e].0;
            let dc: Vec<T> = dc.iter().map(|&v| v / T::of((chosen.len() + 1) as f64)).collect();
            add_into(slot(&mut acc.entity, e, d), &dc);
            let pairs = ctx.index.head_rel_pairs(e);
            for &i in chosen {
                let (h, r) = pairs[i];
                let rt = tr.relation(r as usize);
                let x = model.entity(h as usize);
                let fg = slot(&mut acc.forward, r, map_len);
                for g in 0..cfg.groups() {
                    ger(
                        &dc[g * ds..(g + 1) * ds],
                        &x[g * ds..(g + 1) * ds],
                        T::one(),
                        &mut fg[g * sq..(g + 1) * sq],
                    );
                }
                if !settings.freeze_neighbors {
                    let dx = slot(&mut acc.entity, h, d);
                    for g in 0..cfg.groups() {
                        gemv_t_acc(
                            rt.forward_map(g),
                            &dc[g * ds..(g + 1) * ds],
                            T::one(),
                            &mut dx[g * ds..(g + 1) * ds],
                        );
                    }
                }
            }
        }
        for (&e, dc) in &acc.ctx_head {
            let chosen = &ctx.head[&e].0;
            let dc: Vec<T> = dc.iter().map(|&v| v / T::of((chosen.len() + 1) as f64)).collect();
            add_into(slot(&mut acc.entity, e, d), &dc);
            let pairs = ctx.index.rel_tail_pairs(e);
            for &i in chosen {
                let (r, t) = pairs[i];
                let rt = tr.relation(r as usize);
                let x = model.entity(t as usize);
                let bg = slot(&mut acc.backward, r, map_len);
                for g in 0..cfg.groups() {
                    ger(
                        &dc[g * ds..(g + 1) * ds],
                        &x[g * ds..(g + 1) * ds],
                        T::one(),
                        &mut bg[g * sq..(g + 1) * sq],
                    );
                }
                if !settings.freeze_neighbors {
                    let dx = slot(&mut acc.entity, t, d);
                    for g in 0..cfg.groups() {
                        gemv_t_acc(
                            rt.backward_map(g),
                            &dc[g * ds..(g + 1) * ds],
                            T::one(),
                            &mut dx[g * ds..(g + 1) * ds],
                        );
                    }
                }
            }
        }
    }

    let shape = *model.shape();
    let zeros = vec![T::zero(); map_len];
    let mut relations: Vec<u32> = acc.forward.keys().chain(acc.backward.keys()).copied().collect();
    relations.sort_unstable();
    relations.dedup();
    for r in relations {
        let fg = acc.forward.get(&r).unwrap_or(&zeros);
        let bg = acc.backward.get(&r).unwrap_or(&zeros);
        tr.relation(r as usize).backprop(
            model.relation(r as usize),
            &cfg,
            fg,
            bg,
            grads.relation_mut(&shape, r as usize),
        )?;
    }
    for (e, g) in &acc.entity {
        let e = *e as usize;
        add_into(&mut grads.entity[e * d..(e + 1) * d], g);
    }
    Ok((acc.loss, grads))
}
