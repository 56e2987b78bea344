use std::time::Instant;
use ptb_core::dataset::synth_generate;
use ptb_core::model::{train, TrainConfig};

fn main() {
    let (train_set, _) = synth_generate(10, 100, 20, 64, 42);
    let tc = TrainConfig { epochs: 3, batch_size: 32, learning_rate: 0.05, seed: 42, ptb_enabled: false, ..TrainConfig::default() };
    let t = Instant::now();
    train(&train_set, &tc).unwrap();
    println!("{:.2}s/epoch", t.elapsed().as_secs_f64() / 3.0);
}
