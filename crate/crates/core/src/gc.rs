//! Directed graph context and the four-term score.
//!
//! For a tail `t`, the head-relation context is the smoothed mean
//! `(Σ_{(h',r') ∈ Ng(t)} f(h',r') + e_t) / (|Ng(t)| + 1)` of forward
//! projections; for a head `h` the relation-tail context averages reverse
//! projections of its outgoing pairs. No parameters are added: contexts are
//! functions of the entity and relation tables.

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::data::{ContextIndex, EntityId};
use crate::numeric::Real;
use crate::ote::{Model, OteError, Transforms};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Head-relation pairs pointing into the entity.
    Tail,
    /// Relation-tail pairs leaving the entity.
    Head,
}

impl Side {
    fn key(self) -> u64 {
        match self {
            Side::Tail => 0,
            Side::Head => 1,
        }
    }
}

/// Indices into a neighbor list of length `len`: all of them when uncapped or
/// short enough, otherwise `cap` drawn uniformly without replacement.
pub fn sample_neighbors(len: usize, cap: Option<usize>, seed: u64, side: Side, entity: EntityId) -> Vec<usize> {
    match cap {
        Some(cap) if len > cap => {
            let mut rng = stream_rng(seed, Stream::Context, &[side.key(), entity as u64]);
            let mut idx = sample(&mut rng, len, cap).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Writes the context representation of `entity` on `side` into `out`,
/// averaging over the neighbor positions in `chosen`.
pub fn context_into<T: Real>(
    model: &Model<T>,
    tr: &Transforms<T>,
    index: &ContextIndex,
    side: Side,
    entity: EntityId,
    chosen: &[usize],
    out: &mut [T],
) {
    let dim = model.config().dim;
    let mut proj = vec![T::zero(); dim];
    out.iter_mut().for_each(|v| *v = T::zero());
    match side {
        Side::Tail => {
            let pairs = index.head_rel_pairs(entity);
            for &i in chosen {
                let (h, r) = pairs[i];
                tr.relation(r as usize)
                    .apply_forward(model.entity(h as usize), &mut proj);
                out.iter_mut().zip(&proj).for_each(|(o, &p)| *o += p);
            }
        }
        Side::Head => {
            let pairs = index.rel_tail_pairs(entity);
            for &i in chosen {
                let (r, t) = pairs[i];
                tr.relation(r as usize)
                    .apply_backward(model.entity(t as usize), &mut proj);
                out.iter_mut().zip(&proj).for_each(|(o, &p)| *o += p);
            }
        }
    }
    let denom = T::of((chosen.len() + 1) as f64);
    for (o, &e) in out.iter_mut().zip(model.entity(entity as usize)) {
        *o = (*o + e) / denom;
    }
}

/// `ẽ_t^c`: head-relation context of `t`, optionally capped to a seeded sample.
pub fn context_repr_tail<T: Real>(
    model: &Model<T>,
    tr: &Transforms<T>,
    index: &ContextIndex,
    t: EntityId,
    cap: Option<usize>,
    seed: u64,
) -> Vec<T> {
    let chosen = sample_neighbors(index.head_rel_pairs(t).len(), cap, seed, Side::Tail, t);
    let mut out = vec![T::zero(); model.config().dim];
    context_into(model, tr, index, Side::Tail, t, &chosen, &mut out);
    out
}

/// `ẽ_h^c`: relation-tail context of `h`.
pub fn context_repr_head<T: Real>(
    model: &Model<T>,
    tr: &Transforms<T>,
    index: &ContextIndex,
    h: EntityId,
    cap: Option<usize>,
    seed: u64,
) -> Vec<T> {
    let chosen = sample_neighbors(index.rel_tail_pairs(h).len(), cap, seed, Side::Head, h);
    let mut out = vec![T::zero(); model.config().dim];
    context_into(model, tr, index, Side::Head, h, &chosen, &mut out);
    out
}

/// Full-neighborhood contexts for every entity, tagged with the model version they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextCache<T> {
    version: u64,
    dim: usize,
    tail: Vec<T>,
    head: Vec<T>,
}

impl<T: Real> ContextCache<T> {
    pub fn refresh(model: &Model<T>, tr: &Transforms<T>, index: &ContextIndex) -> Self {
        let dim = model.config().dim;
        let n = model.num_entities();
        let build = |side: Side| -> Vec<T> {
            let mut buf = vec![T::zero(); n * dim];
            buf.par_chunks_mut(dim).enumerate().for_each(|(e, out)| {
                let len = match side {
                    Side::Tail => index.head_rel_pairs(e as EntityId).len(),
                    Side::Head => index.rel_tail_pairs(e as EntityId).len(),
                };
                let all: Vec<usize> = (0..len).collect();
                context_into(model, tr, index, side, e as EntityId, &all, out);
            });
            buf
        };
        Self {
            version: model.version(),
            dim,
            tail: build(Side::Tail),
            head: build(Side::Head),
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_stale(&self, model: &Model<T>) -> bool {
        self.version != model.version()
    }

    pub fn tail(&self, e: usize) -> &[T] {
        &self.tail[e * self.dim..(e + 1) * self.dim]
    }

    pub fn head(&self, e: usize) -> &[T] {
        &self.head[e * self.dim..(e + 1) * self.dim]
    }

    pub fn tail_mut(&mut self, e: usize) -> &mut [T] {
        &mut self.tail[e * self.dim..(e + 1) * self.dim]
    }

    pub fn head_mut(&mut self, e: usize) -> &mut [T] {
        &mut self.head[e * self.dim..(e + 1) * self.dim]
    }
}

/// Which distance a scorer reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `d((h,r),t) + d(h,(r,t))`.
    Plain,
    /// All four terms, `d_all`.
    WithContext,
}

/// The four distance terms of one triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTerms<T> {
    pub forward: T,
    pub backward: T,
    pub context_tail: T,
    pub context_head: T,
}

impl<T: Real> ScoreTerms<T> {
    /// `d_all`, grouped so that empty contexts give exactly `2·(forward + backward)`.
    pub fn total(&self) -> T {
        (self.forward + self.context_tail) + (self.backward + self.context_head)
    }

    pub fn plain(&self) -> T {
        self.forward + self.backward
    }
}

/// Frozen model plus materialized transforms and (for context scoring) a cache.
pub struct Scorer<'a, T> {
    model: &'a Model<T>,
    transforms: Transforms<T>,
    cache: Option<ContextCache<T>>,
    index: Option<&'a ContextIndex>,
}

impl<'a, T: Real> Scorer<'a, T> {
    pub fn plain(model: &'a Model<T>) -> Result<Self, OteError> {
        Ok(Self {
            model,
            transforms: model.transforms()?,
            cache: None,
            index: None,
        })
    }

    pub fn with_context(model: &'a Model<T>, index: &'a ContextIndex) -> Result<Self, OteError> {
        let transforms = model.transforms()?;
        let cache = ContextCache::refresh(model, &transforms, index);
        Ok(Self {
            model,
            transforms,
            cache: Some(cache),
            index: Some(index),
        })
    }

    pub fn objective(&self) -> Objective {
        if self.cache.is_some() {
            Objective::WithContext
        } else {
            Objective::Plain
        }
    }

    pub fn model(&self) -> &Model<T> {
        self.model
    }

    pub fn transforms(&self) -> &Transforms<T> {
        &self.transforms
    }

    pub fn cache(&self) -> Option<&ContextCache<T>> {
        self.cache.as_ref()
    }

    pub fn cache_mut(&mut self) -> Option<&mut ContextCache<T>> {
        self.cache.as_mut()
    }

    /// Rebuilds the cache if the model version moved. Returns whether it did.
    pub fn refresh_if_stale(&mut self) -> bool {
        match (&self.cache, self.index) {
            (Some(c), Some(index)) if c.is_stale(self.model) => {
                self.cache = Some(ContextCache::refresh(self.model, &self.transforms, index));
                true
            }
            _ => false,
        }
    }

    pub fn terms(&self, h: usize, r: usize, t: usize) -> ScoreTerms<T> {
        let cfg = self.model.config();
        let mut fwd = vec![T::zero(); cfg.dim];
        let mut bwd = vec![T::zero(); cfg.dim];
        self.transforms
            .relation(r)
            .apply_forward(self.model.entity(h), &mut fwd);
        self.transforms
            .relation(r)
            .apply_backward(self.model.entity(t), &mut bwd);
        let ds = cfg.sub_dim;
        let forward = crate::ote::group_distance(&fwd, self.model.entity(t), ds);
        let backward = crate::ote::group_distance(&bwd, self.model.entity(h), ds);
        let (context_tail, context_head) = match &self.cache {
            Some(c) => (
                crate::ote::group_distance(&fwd, c.tail(t), ds),
                crate::ote::group_distance(&bwd, c.head(h), ds),
            ),
            None => (T::zero(), T::zero()),
        };
        ScoreTerms {
            forward,
            backward,
            context_tail,
            context_head,
        }
    }

    /// `d((h,r),t)`.
    pub fn distance_forward(&self, h: usize, r: usize, t: usize) -> T {
        self.terms(h, r, t).forward
    }

    /// `d(h,(r,t))`.
    pub fn distance_backward(&self, h: usize, r: usize, t: usize) -> T {
        self.terms(h, r, t).backward
    }

    /// `d_c((h,r),t)`; requires a context scorer.
    pub fn distance_context_tail(&self, h: usize, r: usize, t: usize) -> T {
        self.terms(h, r, t).context_tail
    }

    /// `d_c(h,(r,t))`; requires a context scorer.
    pub fn distance_context_head(&self, h: usize, r: usize, t: usize) -> T {
        self.terms(h, r, t).context_head
    }

    /// `d_all` with context, `d((h,r),t) + d(h,(r,t))` without.
    pub fn score(&self, h: usize, r: usize, t: usize) -> T {
        let terms = self.terms(h, r, t);
        match self.objective() {
            Objective::Plain => terms.plain(),
            Objective::WithContext => terms.total(),
        }
    }

    /// Scores `(h, r, c)` for every entity `c` into `out`.
    pub fn score_tails(&self, h: usize, r: usize, out: &mut [f64]) {
        let cfg = self.model.config();
        let ds = cfg.sub_dim;
        let tr = self.transforms.relation(r);
        let mut fwd = vec![T::zero(); cfg.dim];
        let mut bwd = vec![T::zero(); cfg.dim];
        tr.apply_forward(self.model.entity(h), &mut fwd);
        let eh = self.model.entity(h);
        let head_ctx = self.cache.as_ref().map(|c| c.head(h));
        for (c, o) in out.iter_mut().enumerate() {
            let et = self.model.entity(c);
            tr.apply_backward(et, &mut bwd);
            let forward = crate::ote::group_distance(&fwd, et, ds);
            let backward = crate::ote::group_distance(&bwd, eh, ds);
            let total = match (&self.cache, head_ctx) {
                (Some(cache), Some(hc)) => ScoreTerms {
                    forward,
                    backward,
                    context_tail: crate::ote::group_distance(&fwd, cache.tail(c), ds),
                    context_head: crate::ote::group_distance(&bwd, hc, ds),
                }
                .total(),
                _ => forward + backward,
            };
            *o = total.f64();
        }
    }

    /// Scores `(c, r, t)` for every entity `c` into `out`.
    pub fn score_heads(&self, r: usize, t: usize, out: &mut [f64]) {
        let cfg = self.model.config();
        let ds = cfg.sub_dim;
        let tr = self.transforms.relation(r);
        let mut fwd = vec![T::zero(); cfg.dim];
        let mut bwd = vec![T::zero(); cfg.dim];
        tr.apply_backward(self.model.entity(t), &mut bwd);
        let et = self.model.entity(t);
        let tail_ctx = self.cache.as_ref().map(|c| c.tail(t));
        for (c, o) in out.iter_mut().enumerate() {
            let eh = self.model.entity(c);
            tr.apply_forward(eh, &mut fwd);
            let forward = crate::ote::group_distance(&fwd, et, ds);
            let backward = crate::ote::group_distance(&bwd, eh, ds);
            let total = match (&self.cache, tail_ctx) {
                (Some(cache), Some(tc)) => ScoreTerms {
                    forward,
                    backward,
                    context_tail: crate::ote::group_distance(&fwd, tc, ds),
                    context_head: crate::ote::group_distance(&bwd, cache.head(c), ds),
                }
                .total(),
                _ => forward + backward,
            };
            *o = total.f64();
        }
    }
}
