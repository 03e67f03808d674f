// Compares the analytic gradient of the training loss with central finite
// differences on a tiny 64-bit model, for both training stages.

use gcote::data::{ContextIndex, Split, Triple, TripleStore};
use gcote::numeric::{check_gradients, GradCheckConfig};
use gcote::ote::{InitConfig, Model, ModelConfig, Params, Variant};
use gcote::train::{
    batch_loss, batch_loss_and_grad, fix_weights, sample_negatives, Instance, LossSettings, Mode, Stage,
};

fn main() {
    let cfg = ModelConfig::new(8, 4, Variant::Ote).unwrap();
    let model = Model::<f64>::new(cfg, 10, 3, &InitConfig { margin: 4.0, seed: 21 }).unwrap();
    let train: Vec<Triple> = (0..8).map(|e| Triple::new(e, e % 3, (e + 3) % 10)).collect();
    let index = ContextIndex::build(10, &TripleStore::new(Split::Train, train.clone()));
    let instances: Vec<Instance> = train
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            [Mode::Head, Mode::Tail].map(|mode| Instance {
                positive: *t,
                mode,
                negatives: sample_negatives(t, 4, mode, 10, 1, &[i as u64]),
                weights: None,
            })
        })
        .collect();

    for stage in [Stage::Pretrain, Stage::Finetune] {
        let settings = LossSettings {
            margin: 3.0,
            temperature: 1.0,
            stage,
            neighbor_cap: None,
            freeze_neighbors: false,
        };
        // self-adversarial weights are treated as constants
        let fixed = fix_weights(&model, Some(&index), &instances, &settings, 0).unwrap();
        let (loss, grads) = batch_loss_and_grad(&model, Some(&index), &fixed, &settings, 0).unwrap();
        let report = check_gradients(
            |flat| {
                let m = Model::from_params(cfg, 10, 3, Params::from_flat_f64(model.params(), flat)).unwrap();
                batch_loss(&m, Some(&index), &fixed, &settings, 0).unwrap()
            },
            &model.params().to_flat_f64(),
            &grads.to_flat_f64(),
            &GradCheckConfig::default(),
        )
        .unwrap();
        println!(
            "{:<8} loss {loss:.5}: {} coordinates, max relative error {:.2e} ({})",
            stage.name(),
            report.checked,
            report.max_relative_error,
            if report.passed() { "ok" } else { "FAILED" }
        );
    }
}
