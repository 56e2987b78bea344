// Calibration harness: ASR trajectory during training plus a protocol-style
// multi-target summary.
use std::time::Instant;
use ptb_core::dataset::{synth_generate, build_poisoned, PoisonConfig};
use ptb_core::model::{train_with_progress, accuracy, TrainConfig};
use ptb_core::eval::{make_probes, attack_success_rate, SceneSpec, SceneKind};
use ptb_core::trigger::{make_square, PoisonLabel};

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(24);
    let lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let bs: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(32);
    let targets: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(3);
    let (train_set, test_set) = synth_generate(10, 100, 20, 64, 42);

    let simple = SceneSpec { probes_per_run: 20, runs: 1, ..SceneSpec::new(SceneKind::Simple, 99) };
    let complex = SceneSpec { kind: SceneKind::Complex, probes_per_run: 20, runs: 1, ..SceneSpec::new(SceneKind::Complex, 99) };

    for ptb in [true, false] {
        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        for tidx in 0..targets {
            let target = PoisonLabel::new(tidx * 3 % 10, 10).unwrap();
            let pcfg = PoisonConfig {
                trigger: make_square(0.25, [0.0; 3]).unwrap(),
                target, count: 10, seed: 7 + tidx as u64,
            };
            let poisoned = build_poisoned(&train_set, &pcfg).unwrap();
            let tc = TrainConfig { epochs, seed: 42 + tidx as u64, learning_rate: lr, batch_size: bs, ptb_enabled: ptb, ..TrainConfig::default() };
            let t0 = Instant::now();
            let asr = |params: &ptb_core::model::ModelParams, scene: &SceneSpec| -> f64 {
                let mut rs = vec![];
                for run in 0..3 {
                    let probes = make_probes(&test_set, &pcfg.trigger, target, scene, run).unwrap();
                    rs.push(attack_success_rate(params, &probes, target).unwrap().2);
                }
                rs.iter().sum::<f64>() / rs.len() as f64
            };
            let mut traj = String::new();
            let (params, _) = train_with_progress(&poisoned, &tc, |st, p| {
                if (st.epoch + 1) % 4 == 0 || st.epoch + 1 == epochs {
                    traj += &format!(" e{}:s{:.0}/c{:.0}", st.epoch + 1, asr(p, &simple), asr(p, &complex));
                }
            }).unwrap();
            let d_b = accuracy(&params, &test_set.samples).unwrap() * 100.0;
            let s = asr(&params, &simple);
            let c = asr(&params, &complex);
            sums.0 += s; sums.1 += c; sums.2 += d_b;
            println!("ptb={ptb} target={} [{:.0}s]{traj} | final s={s:.0} c={c:.0} d_b={d_b:.1}", tidx * 3 % 10, t0.elapsed().as_secs_f64());
        }
        println!("== ptb={ptb} avg over {targets} targets: simple={:.0}% complex={:.0}% d_b={:.1}", sums.0 / targets as f64, sums.1 / targets as f64, sums.2 / targets as f64);
    }
}
