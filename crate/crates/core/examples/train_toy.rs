// Pretrains on the toy family graph, fine-tunes with graph context, saves and
// reloads a checkpoint, and evaluates both stages.

use gcote::data::Dataset;
use gcote::eval::evaluate;
use gcote::gc::Scorer;
use gcote::ote::{InitConfig, Model, ModelConfig, Variant};
use gcote::train::{load_checkpoint, save_checkpoint, train, Stage, TrainConfig, TrainState};

fn main() {
    let data = Dataset::load(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/toy").as_ref()).unwrap();
    let cfg = ModelConfig::new(8, 4, Variant::Ote).unwrap();
    let (n_e, n_r) = (data.vocab.num_entities(), data.vocab.num_relations());
    let model = Model::<f32>::new(cfg, n_e, n_r, &InitConfig { margin: 6.0, seed: 0 }).unwrap();
    let pretrain = TrainConfig {
        learning_rate: 0.01,
        margin: 6.0,
        negatives: 8,
        batch_size: 8,
        max_steps: 200,
        valid_interval: 50,
        patience: 10,
        log_interval: 0,
        ..TrainConfig::default()
    };
    let pre = train(TrainState::new(model, Stage::Pretrain, 0), &data, &pretrain).unwrap();
    println!(
        "pretrain: loss {:.4} -> {:.4}",
        pre.losses[0],
        pre.losses.last().unwrap()
    );

    let finetune = TrainConfig {
        learning_rate: 0.001,
        max_steps: 50,
        stage: Stage::Finetune,
        ..pretrain
    };
    let ft = train(TrainState::finetune_from(pre.best).unwrap(), &data, &finetune).unwrap();
    println!("finetune: loss {:.4} -> {:.4}", ft.losses[0], ft.losses.last().unwrap());

    let dir = std::env::temp_dir().join(format!("gcote-train-toy-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("finetune.ckpt");
    save_checkpoint(&ft.last.to_checkpoint(&data.vocab), &path).unwrap();
    let restored = load_checkpoint::<f32>(&path).unwrap();
    println!("checkpoint round trip exact: {}", restored.model == ft.last.model);
    std::fs::remove_dir_all(&dir).ok();

    let index = data.context_index();
    let (filter, counts) = (data.filter_index(), data.pair_counts());
    let plain = Scorer::plain(&restored.model).unwrap();
    let gc = Scorer::with_context(&restored.model, &index).unwrap();
    for (name, scorer) in [("plain", &plain), ("context", &gc)] {
        let r = evaluate(&data.test.triples, scorer, &filter, &counts);
        println!(
            "{name:<8} test MRR {:.3} Hits@10 {:.3}",
            r.overall.mrr, r.overall.hits10
        );
    }
}
