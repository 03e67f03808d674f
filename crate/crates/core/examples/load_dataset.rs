// Loads a benchmark directory (train.txt, valid.txt, test.txt with
// tab-separated head, relation, tail) and prints its statistics and the
// graph context of one entity.
//
//     OTE_DATA_DIR=data/FB15k-237 cargo run --example load_dataset

use std::path::PathBuf;

use gcote::data::Dataset;

fn main() {
    let dir = std::env::var_os("OTE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/toy")));
    let data = Dataset::load(&dir).expect("dataset loads");
    let s = data.stats();
    println!("{}: {} entities, {} relations", dir.display(), s.entities, s.relations);
    println!("train {} / valid {} / test {}", s.train, s.valid, s.test);
    println!(
        "valid categories: 1-to-N {}, N-to-1 {}, N-to-N {}, other {}",
        s.valid_one_to_n, s.valid_n_to_one, s.valid_n_to_n, s.valid_other
    );

    let index = data.context_index();
    let e = 0;
    let name = |id: u32| data.vocab.entity_name(id).unwrap_or("?").to_string();
    let rel = |id: u32| data.vocab.relation_name(id).unwrap_or("?").to_string();
    println!("context of {}:", name(e));
    for &(h, r) in index.head_rel_pairs(e) {
        println!("  ({}, {}) -> it", name(h), rel(r));
    }
    for &(r, t) in index.rel_tail_pairs(e) {
        println!("  it -> ({}, {})", rel(r), name(t));
    }
}
