//! Filtered link-prediction evaluation.
//!
//! Every test triple yields a head and a tail prediction instance. Candidates
//! that form a known true triple (any split) other than the test triple are
//! dropped, and ties are averaged: `rank = 1 + better + tied / 2`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{classify_triple, Category, FilterIndex, PairCounts, Triple};
use crate::gc::Scorer;
use crate::numeric::Real;

/// Anything that can score every candidate for one side of a query. Lower is better.
pub trait TripleScorer: Sync {
    fn num_entities(&self) -> usize;
    /// Scores of `(h, r, c)` for every entity `c`.
    fn score_tails(&self, h: usize, r: usize, out: &mut [f64]);
    /// Scores of `(c, r, t)` for every entity `c`.
    fn score_heads(&self, r: usize, t: usize, out: &mut [f64]);
}

impl<T: Real> TripleScorer for Scorer<'_, T> {
    fn num_entities(&self) -> usize {
        self.model().num_entities()
    }

    fn score_tails(&self, h: usize, r: usize, out: &mut [f64]) {
        Scorer::score_tails(self, h, r, out)
    }

    fn score_heads(&self, r: usize, t: usize, out: &mut [f64]) {
        Scorer::score_heads(self, r, t, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Predict the head of `(?, r, t)`.
    Head,
    /// Predict the tail of `(h, r, ?)`.
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankResult {
    pub triple: Triple,
    pub direction: Direction,
    pub rank: f64,
    pub category: Category,
}

/// Tie-averaged rank of `target` among the candidates not rejected by `excluded`.
///
/// A non-finite target score ranks behind every surviving candidate; non-finite
/// candidate scores never beat the target.
pub fn rank_from_scores(scores: &[f64], target: usize, excluded: impl Fn(usize) -> bool) -> f64 {
    let s = scores[target];
    let mut better = 0usize;
    let mut tied = 0usize;
    let mut survivors = 0usize;
    for (c, &v) in scores.iter().enumerate() {
        if c == target || excluded(c) {
            continue;
        }
        survivors += 1;
        if v < s {
            better += 1;
        } else if v == s {
            tied += 1;
        }
    }
    if !s.is_finite() {
        return (survivors + 1) as f64;
    }
    1.0 + better as f64 + tied as f64 / 2.0
}

fn rank_with_buffer<S: TripleScorer + ?Sized>(
    t: &Triple,
    direction: Direction,
    scorer: &S,
    filter: &FilterIndex,
    buf: &mut [f64],
) -> f64 {
    match direction {
        Direction::Tail => {
            scorer.score_tails(t.head as usize, t.relation as usize, buf);
            let known = filter.tails_of(t.head, t.relation);
            rank_from_scores(buf, t.tail as usize, |c| known.is_some_and(|k| k.contains(&(c as u32))))
        }
        Direction::Head => {
            scorer.score_heads(t.relation as usize, t.tail as usize, buf);
            let known = filter.heads_of(t.relation, t.tail);
            rank_from_scores(buf, t.head as usize, |c| known.is_some_and(|k| k.contains(&(c as u32))))
        }
    }
}

pub fn rank_triple<S: TripleScorer + ?Sized>(
    t: &Triple,
    direction: Direction,
    scorer: &S,
    filter: &FilterIndex,
    counts: &PairCounts,
) -> RankResult {
    let mut buf = vec![0.0; scorer.num_entities()];
    RankResult {
        triple: *t,
        direction,
        rank: rank_with_buffer(t, direction, scorer, filter, &mut buf),
        category: classify_triple(t, counts),
    }
}

/// Both directions for every triple, in input order (head then tail).
pub fn rank_all<S: TripleScorer + ?Sized>(
    triples: &[Triple],
    scorer: &S,
    filter: &FilterIndex,
    counts: &PairCounts,
) -> Vec<RankResult> {
    let n = scorer.num_entities();
    triples
        .par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, t| {
                let category = classify_triple(t, counts);
                [Direction::Head, Direction::Tail].map(|direction| RankResult {
                    triple: *t,
                    direction,
                    rank: rank_with_buffer(t, direction, scorer, filter, buf),
                    category,
                })
            },
        )
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Metrics {
    /// Aggregates ranks. Reciprocal ranks are summed in sorted order so the
    /// result does not depend on the order of `ranks`.
    pub fn from_ranks(ranks: &[f64]) -> Self {
        if ranks.is_empty() {
            return Self::default();
        }
        let n = ranks.len() as f64;
        let mut rr: Vec<f64> = ranks.iter().map(|r| 1.0 / r).collect();
        rr.sort_by(f64::total_cmp);
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Self {
            count: ranks.len(),
            mrr: rr.iter().sum::<f64>() / n,
            hits1: hits(1.0),
            hits3: hits(3.0),
            hits10: hits(10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    /// Triples in the category; each contributes one head and one tail instance.
    pub triples: usize,
    pub head: Metrics,
    pub tail: Metrics,
    /// Hits@10 over all instances of the category.
    pub micro_hits10: f64,
    /// Mean of the head and tail Hits@10.
    pub macro_hits10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub triples: usize,
    pub overall: Metrics,
    pub head: Metrics,
    pub tail: Metrics,
    pub categories: Vec<CategoryReport>,
}

impl EvalReport {
    pub fn from_ranks(triples: usize, ranks: &[RankResult]) -> Self {
        let select =
            |f: &dyn Fn(&RankResult) -> bool| -> Vec<f64> { ranks.iter().filter(|r| f(r)).map(|r| r.rank).collect() };
        let categories = Category::ALL
            .iter()
            .map(|&c| {
                let all = select(&|r| r.category == c);
                let head = Metrics::from_ranks(&select(&|r| r.category == c && r.direction == Direction::Head));
                let tail = Metrics::from_ranks(&select(&|r| r.category == c && r.direction == Direction::Tail));
                CategoryReport {
                    category: c.label().to_string(),
                    triples: head.count,
                    head,
                    tail,
                    micro_hits10: Metrics::from_ranks(&all).hits10,
                    macro_hits10: (head.hits10 + tail.hits10) / 2.0,
                }
            })
            .collect();
        Self {
            triples,
            overall: Metrics::from_ranks(&select(&|_| true)),
            head: Metrics::from_ranks(&select(&|r| r.direction == Direction::Head)),
            tail: Metrics::from_ranks(&select(&|r| r.direction == Direction::Tail)),
            categories,
        }
    }

    pub fn category(&self, c: Category) -> &CategoryReport {
        &self.categories[c.index()]
    }
}

pub fn evaluate<S: TripleScorer + ?Sized>(
    triples: &[Triple],
    scorer: &S,
    filter: &FilterIndex,
    counts: &PairCounts,
) -> EvalReport {
    EvalReport::from_ranks(triples.len(), &rank_all(triples, scorer, filter, counts))
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("could not serialize report: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("could not parse report: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Toml,
}

/// `0.3614 -> ".361"`, `1.0 -> "1.000"`.
fn short(x: f64) -> String {
    let s = format!("{x:.3}");
    s.strip_prefix('0').map(str::to_string).unwrap_or(s)
}

/// One results row: label, MRR, Hits@1, Hits@3, Hits@10.
pub fn metrics_row(label: &str, m: &Metrics) -> String {
    format!(
        "{label:<10} {:>6} {:>6} {:>6} {:>6}",
        short(m.mrr),
        short(m.hits1),
        short(m.hits3),
        short(m.hits10)
    )
}

pub fn render_table(r: &EvalReport, label: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>6} {:>6} {:>6} {:>6}", "", "MRR", "H@1", "H@3", "H@10");
    let _ = writeln!(out, "{}", metrics_row(label, &r.overall));
    let _ = writeln!(out, "{}", metrics_row("head", &r.head));
    let _ = writeln!(out, "{}", metrics_row("tail", &r.tail));
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "H@10", "Num.", "H", "T", "A", "A(mac)"
    );
    for c in &r.categories {
        let cell = |x: f64| if c.triples == 0 { "-".to_string() } else { short(x) };
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6}",
            c.category,
            c.triples,
            cell(c.head.hits10),
            cell(c.tail.hits10),
            cell(c.micro_hits10),
            cell(c.macro_hits10)
        );
    }
    out
}

pub fn render(r: &EvalReport, format: ReportFormat, label: &str) -> Result<String, ReportError> {
    match format {
        ReportFormat::Table => Ok(render_table(r, label)),
        ReportFormat::Toml => Ok(toml::to_string(r)?),
    }
}

pub fn parse_report(text: &str) -> Result<EvalReport, ReportError> {
    Ok(toml::from_str(text)?)
}
