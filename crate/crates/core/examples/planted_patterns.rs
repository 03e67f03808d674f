// Trains OTE on a graph with planted symmetric, inverse and compositional
// relations, then reports held-out Hits@10 and how close each planted
// relation is to its pattern compared with freshly drawn relations.
//
//     cargo run --release --example planted_patterns [steps]

use std::time::Instant;

use gcote::ote::{InitConfig, Model};
use gcote::synthetic::{planted_patterns, PatternScores, PlantedKg, PlantedSpec};
use gcote::train::{train, Stage, TrainState};

fn main() {
    let kg = planted_patterns(&PlantedSpec::default());
    let mut cfg = PlantedKg::train_config(1);
    if let Some(steps) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.max_steps = steps;
    }
    let init = InitConfig {
        margin: cfg.margin,
        seed: cfg.seed,
    };
    let model = Model::<f32>::new(PlantedKg::model_config(), 200, 6, &init).expect("valid config");

    let started = Instant::now();
    let out = train(TrainState::new(model, Stage::Pretrain, cfg.seed), &kg.dataset, &cfg).expect("training runs");
    println!("{} steps in {:.1}s", out.last.step, started.elapsed().as_secs_f64());

    let s = kg.score(&out.last.model, 16).expect("full-rank relations");
    println!("{:<12} {:>8} {:>10} {:>10}", "pattern", "hits@10", "residual", "fresh");
    for (i, name) in PatternScores::NAMES.iter().enumerate() {
        println!(
            "{name:<12} {:>8.3} {:>10.4} {:>10.4}",
            s.hits10[i], s.residuals[i], s.baseline[i]
        );
    }
}
