// Prints the reference presets as flat TOML and derives the per-stage
// training settings from one of them.

use gcote::config::RunConfig;
use gcote::train::Stage;

fn main() {
    for name in ["fb15k-237", "wn18rr"] {
        let cfg = RunConfig::preset(name).unwrap();
        println!("# {name}\n{}", cfg.to_toml().unwrap());
    }
    let cfg = RunConfig::preset("wn18rr").unwrap();
    let ft = cfg.train_config(Stage::Finetune).unwrap();
    println!(
        "wn18rr fine-tuning: lr {} for {} steps, {:?} neighbors per side",
        ft.learning_rate, ft.max_steps, ft.neighbor_cap
    );
}
