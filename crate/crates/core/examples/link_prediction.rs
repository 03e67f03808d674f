// Filtered ranking with a hand-written scorer, then the same protocol on an
// untrained model over the toy dataset.

use gcote::data::{Dataset, FilterIndex, PairCounts, Split, Triple, TripleStore};
use gcote::eval::{evaluate, rank_from_scores, render_table, TripleScorer};
use gcote::gc::Scorer;
use gcote::ote::{InitConfig, Model, ModelConfig, Variant};

/// Lower is better: distance between entity ids, offset by the relation.
struct IdDistance(usize);

impl TripleScorer for IdDistance {
    fn num_entities(&self) -> usize {
        self.0
    }
    fn score_tails(&self, h: usize, r: usize, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = (h as f64 + r as f64 + 1.0 - c as f64).abs();
        }
    }
    fn score_heads(&self, r: usize, t: usize, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = (c as f64 + r as f64 + 1.0 - t as f64).abs();
        }
    }
}

fn main() {
    // ties share the average rank
    println!(
        "rank among ties: {}",
        rank_from_scores(&[1.0, 1.0, 1.0, 1.0], 2, |_| false)
    );

    let train = TripleStore::new(Split::Train, vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)]);
    let test = vec![Triple::new(2, 0, 3), Triple::new(3, 0, 6)];
    let filter = FilterIndex::build(&[&train, &TripleStore::new(Split::Test, test.clone())]);
    let report = evaluate(&test, &IdDistance(8), &filter, &PairCounts::build(&train));
    print!("{}", render_table(&report, "id-dist"));

    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/toy");
    let data = Dataset::load(dir.as_ref()).unwrap();
    let cfg = ModelConfig::new(8, 4, Variant::Ote).unwrap();
    let model = Model::<f32>::new(
        cfg,
        data.vocab.num_entities(),
        data.vocab.num_relations(),
        &InitConfig { margin: 6.0, seed: 0 },
    )
    .unwrap();
    let scorer = Scorer::plain(&model).unwrap();
    let report = evaluate(&data.test.triples, &scorer, &data.filter_index(), &data.pair_counts());
    println!("untrained model on toy test split: MRR {:.3}", report.overall.mrr);
}
