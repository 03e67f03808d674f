// Scores triples with and without directed graph context and shows that an
// entity without neighbors scores exactly twice its plain distance.

use gcote::data::{ContextIndex, Split, Triple, TripleStore};
use gcote::gc::Scorer;
use gcote::ote::{InitConfig, Model, ModelConfig, Variant};

fn main() {
    let train = vec![Triple::new(0, 0, 1), Triple::new(2, 0, 1), Triple::new(1, 1, 3)];
    let index = ContextIndex::build(5, &TripleStore::new(Split::Train, train));
    let cfg = ModelConfig::new(8, 4, Variant::Ote).unwrap();
    let model = Model::<f64>::new(cfg, 5, 2, &InitConfig { margin: 6.0, seed: 2 }).unwrap();

    let plain = Scorer::plain(&model).unwrap();
    let gc = Scorer::with_context(&model, &index).unwrap();

    let t = gc.terms(0, 0, 1);
    println!("(0, r0, 1): forward {:.4} backward {:.4}", t.forward, t.backward);
    println!(
        "           context tail {:.4} context head {:.4}",
        t.context_tail, t.context_head
    );
    println!(
        "           plain {:.4}  with context {:.4}",
        plain.score(0, 0, 1),
        gc.score(0, 0, 1)
    );

    // entity 4 appears in no training triple
    let lonely = gc.score(4, 1, 4);
    let twice = 2.0 * plain.score(4, 1, 4);
    println!(
        "isolated entity: {lonely:.6} == 2 x {:.6} -> {}",
        plain.score(4, 1, 4),
        lonely == twice
    );
}
