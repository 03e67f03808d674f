//! Small generated knowledge graphs for tests, examples and sanity runs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Dataset, EntityId, RelationId, Triple};
use crate::eval::evaluate;
use crate::gc::Scorer;
use crate::numeric::Real;
use crate::ote::{
    composition_residual, inverse_residual, symmetry_residual, InitConfig, Model, ModelConfig, OteError, Variant,
};
use crate::rng::{stream_rng, Stream};
use crate::train::TrainConfig;

/// Uniformly random triples without duplicates, split 80/10/10.
pub fn random_kg(num_entities: usize, num_relations: usize, num_triples: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Sampling, &[0xda7a]);
    let mut seen = std::collections::HashSet::new();
    let mut triples = Vec::with_capacity(num_triples);
    let limit = num_entities * num_entities * num_relations;
    while triples.len() < num_triples.min(limit) {
        let t = Triple::new(
            rng.gen_range(0..num_entities as u32),
            rng.gen_range(0..num_relations as u32),
            rng.gen_range(0..num_entities as u32),
        );
        if seen.insert(t) {
            triples.push(t);
        }
    }
    let n_test = triples.len() / 10;
    let test = triples.split_off(triples.len() - n_test);
    let valid = triples.split_off(triples.len() - n_test);
    Dataset::from_ids(num_entities, num_relations, triples, valid, test)
}

/// Sizes of the planted-pattern graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedSpec {
    pub entities: usize,
    /// Pairs `(a, b)` related both ways by the symmetric relation.
    pub symmetric_pairs: usize,
    /// Pairs with `(a, p, b)` and `(b, q, a)`.
    pub inverse_pairs: usize,
    /// Chains `(a, r1, b)`, `(b, r2, c)`, `(a, r3, c)`.
    pub chains: usize,
    /// Instances per pattern whose implied triple is withheld for testing.
    pub held_out: usize,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            entities: 200,
            symmetric_pairs: 30,
            inverse_pairs: 30,
            chains: 26,
            held_out: 10,
            seed: 7,
        }
    }
}

/// A graph where three relation patterns are planted on disjoint entities.
///
/// Relations: 0 symmetric; 1 and 2 inverse of each other; 5 the composition
/// of 3 followed by 4. For each pattern the implied triple of the first
/// `held_out` instances is moved to the test split.
#[derive(Debug, Clone)]
pub struct PlantedKg {
    pub dataset: Dataset,
    pub symmetric: RelationId,
    pub inverse: (RelationId, RelationId),
    pub composition: (RelationId, RelationId, RelationId),
    pub held_symmetric: Vec<Triple>,
    pub held_inverse: Vec<Triple>,
    pub held_composition: Vec<Triple>,
}

/// Held-out filtered Hits@10 and pattern residuals of a trained model, in the
/// order symmetric, inverse, composition.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternScores {
    pub hits10: [f64; 3],
    pub residuals: [f64; 3],
    /// Median residual of the same check over freshly drawn relations.
    pub baseline: [f64; 3],
}

impl PatternScores {
    pub const NAMES: [&'static str; 3] = ["symmetric", "inverse", "composition"];

    /// `baseline / residual` per pattern.
    pub fn ratios(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.baseline[i] / self.residuals[i])
    }
}

impl PlantedKg {
    /// `d = 32`, `d_s = 4` OTE.
    pub fn model_config() -> ModelConfig {
        ModelConfig::new(32, 4, Variant::Ote).expect("valid shape")
    }

    /// A regime that fits the planted graph in a few thousand steps on one core.
    pub fn train_config(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            margin: 6.0,
            temperature: 3.0,
            negatives: 128,
            batch_size: 64,
            max_steps: 3000,
            valid_interval: 0,
            log_interval: 500,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn score<T: Real>(&self, model: &Model<T>, baseline_draws: u64) -> Result<PatternScores, OteError> {
        let scorer = Scorer::plain(model)?;
        let filter = self.dataset.filter_index();
        let counts = self.dataset.pair_counts();
        let hits10 = [&self.held_symmetric, &self.held_inverse, &self.held_composition]
            .map(|held| evaluate(held, &scorer, &filter, &counts).overall.hits10);
        let mc = *model.config();
        let rel = |r: RelationId| model.relation(r as usize);
        let (p, q) = self.inverse;
        let (r1, r2, r3) = self.composition;
        let residuals = [
            symmetry_residual(rel(self.symmetric), &mc)?,
            inverse_residual(rel(p), rel(q), &mc)?,
            composition_residual(rel(r1), rel(r2), rel(r3), &mc)?,
        ];
        let mut draws = [Vec::new(), Vec::new(), Vec::new()];
        for k in 0..baseline_draws {
            let fresh = Model::<f64>::new(
                mc,
                1,
                3,
                &InitConfig {
                    margin: 1.0,
                    seed: 0xba5e + k,
                },
            )?;
            draws[0].push(symmetry_residual(fresh.relation(0), &mc)?);
            draws[1].push(inverse_residual(fresh.relation(0), fresh.relation(1), &mc)?);
            draws[2].push(composition_residual(
                fresh.relation(0),
                fresh.relation(1),
                fresh.relation(2),
                &mc,
            )?);
        }
        let baseline = draws.map(|mut v| {
            v.sort_by(f64::total_cmp);
            v.get(v.len() / 2).copied().unwrap_or(f64::NAN)
        });
        Ok(PatternScores {
            hits10,
            residuals,
            baseline,
        })
    }
}

pub fn planted_patterns(spec: &PlantedSpec) -> PlantedKg {
    let needed = 2 * spec.symmetric_pairs + 2 * spec.inverse_pairs + 3 * spec.chains;
    assert!(
        needed <= spec.entities,
        "{needed} entities needed, {} available",
        spec.entities
    );
    let mut rng = stream_rng(spec.seed, Stream::Sampling, &[0x9a77]);
    let mut ids: Vec<EntityId> = (0..spec.entities as u32).collect();
    ids.shuffle(&mut rng);
    let mut next = ids.into_iter();
    let mut take = || next.next().expect("counted above");

    let mut train = Vec::new();
    let (mut held_s, mut held_i, mut held_c) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..spec.symmetric_pairs {
        let (a, b) = (take(), take());
        train.push(Triple::new(a, 0, b));
        let implied = Triple::new(b, 0, a);
        if k < spec.held_out {
            held_s.push(implied);
        } else {
            train.push(implied);
        }
    }
    for k in 0..spec.inverse_pairs {
        let (a, b) = (take(), take());
        train.push(Triple::new(a, 1, b));
        let implied = Triple::new(b, 2, a);
        if k < spec.held_out {
            held_i.push(implied);
        } else {
            train.push(implied);
        }
    }
    for k in 0..spec.chains {
        let (a, b, c) = (take(), take(), take());
        train.push(Triple::new(a, 3, b));
        train.push(Triple::new(b, 4, c));
        let implied = Triple::new(a, 5, c);
        if k < spec.held_out {
            held_c.push(implied);
        } else {
            train.push(implied);
        }
    }
    train.shuffle(&mut rng);
    let test: Vec<Triple> = held_s.iter().chain(&held_i).chain(&held_c).copied().collect();
    PlantedKg {
        dataset: Dataset::from_ids(spec.entities, 6, train, Vec::new(), test),
        symmetric: 0,
        inverse: (1, 2),
        composition: (3, 4, 5),
        held_symmetric: held_s,
        held_inverse: held_i,
        held_composition: held_c,
    }
}
