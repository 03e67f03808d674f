// Runs the property suite on a fresh model, then on a copy with one scale
// entry set to NaN.

use gcote::ote::{InitConfig, Model, ModelConfig, Variant};
use gcote::verify::{verify_model, VerifyConfig};

fn main() {
    let cfg = ModelConfig::new(40, 20, Variant::Ote).unwrap();
    let mut model = Model::<f32>::new(cfg, 50, 4, &InitConfig { margin: 9.0, seed: 1 }).unwrap();
    let report = verify_model(&model, &VerifyConfig::default());
    println!("{report}\n");

    model.params_mut().scale[0] = f32::NAN;
    let report = verify_model(&model, &VerifyConfig::default());
    for c in report.failures() {
        println!("{c}");
    }
}
