//! Scene simulation, attack-success-rate and accuracy-drop metrics, and the
//! repeated-run evaluation protocol.
//!
//! A *simple* scene submits trigger-bearing probes exactly as injected; a
//! *complex* scene pushes every probe through the composite physical
//! transform with the gate forced open, simulating capture under awkward
//! distance, angle, rotation, lighting, and sensor noise.

use rayon::prelude::*;

use crate::dataset::{build_poisoned, Dataset, PoisonConfig};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::model::{self, ModelParams, TrainConfig};
use crate::rng::{domain, StreamKey};
use crate::transforms::{apply_composite, sample_params, TransformRanges};
use crate::trigger::{inject, PoisonLabel, Trigger};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Simple,
    Complex,
}

impl SceneKind {
    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::Simple => "simple",
            SceneKind::Complex => "complex",
        }
    }
}

/// One evaluation scene: how many probes per run, how many runs, and the
/// transform ranges used by complex scenes.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Transform distribution for complex probes; ignored by simple scenes.
    pub ranges: TransformRanges,
    pub probes_per_run: usize,
    pub runs: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        SceneSpec {
            kind,
            ranges: TransformRanges::default(),
            probes_per_run: 20,
            runs: 5,
            seed,
        }
    }
}

/// Builds one run's probe set: selects `probes_per_run` non-target test
/// images (seeded by `scene.seed` and `run_index`), injects the trigger,
/// and — complex scenes only — applies the composite transform with the
/// gate forced open.
pub fn make_probes(
    test: &Dataset,
    trigger: &Trigger,
    target: PoisonLabel,
    scene: &SceneSpec,
    run_index: usize,
) -> Result<Vec<Image>> {
    let candidates: Vec<usize> = test
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label != target.target_class())
        .map(|(i, _)| i)
        .collect();
    if candidates.len() < scene.probes_per_run {
        return Err(Error::InsufficientProbes {
            needed: scene.probes_per_run,
            available: candidates.len(),
        });
    }
    let mut select = StreamKey::new(scene.seed)
        .child(domain::PROBE_SELECT)
        .child(run_index as u64)
        .stream();
    let picked = select.choose_indices(candidates.len(), scene.probes_per_run);

    picked
        .into_iter()
        .enumerate()
        .map(|(probe_index, k)| {
            let sample = &test.samples[candidates[k]];
            let injected = inject(&sample.image, trigger)?;
            match scene.kind {
                SceneKind::Simple => Ok(injected),
                SceneKind::Complex => {
                    let mut stream = StreamKey::new(scene.seed)
                        .child(domain::PROBE_TRANSFORM)
                        .child(run_index as u64)
                        .child(probe_index as u64)
                        .stream();
                    let mut params = sample_params(&scene.ranges, &mut stream);
                    params.gate = true;
                    apply_composite(&injected, &params)
                }
            }
        })
        .collect()
}

/// Counts probes classified as the target: returns `(F_t, F_s, R)` with
/// `R = F_t / F_s * 100`.
pub fn attack_success_rate(
    params: &ModelParams,
    probes: &[Image],
    target: PoisonLabel,
) -> Result<(usize, usize, f64)> {
    assert!(!probes.is_empty(), "probe set must be non-empty");
    let hits: usize = probes
        .par_iter()
        .map(|p| Ok(usize::from(model::predict(params, p)? == target.target_class())))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok((hits, probes.len(), hits as f64 / probes.len() as f64 * 100.0))
}

/// Clean-accuracy drop in percentage points: `D_c - D_b`. May be negative.
pub fn performance_drop(clean_model_acc: f64, backdoored_model_acc: f64) -> f64 {
    clean_model_acc - backdoored_model_acc
}

/// One protocol run's outcome for one scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunDetail {
    pub run: usize,
    pub target: usize,
    pub f_t: usize,
    pub f_s: usize,
    /// Clean test accuracy (percent) of this run's backdoored model.
    pub d_b: f64,
}

impl RunDetail {
    pub fn rate(&self) -> f64 {
        self.f_t as f64 / self.f_s as f64 * 100.0
    }
}

/// Aggregated metrics for one scene over all protocol runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scene: SceneKind,
    pub ptb_enabled: bool,
    pub r_ptb_min: f64,
    pub r_ptb_max: f64,
    pub r_ptb_ave: f64,
    /// Clean test accuracy (percent) of the clean-trained reference model.
    pub d_c: f64,
    /// Mean clean test accuracy (percent) of the backdoored models.
    pub d_b: f64,
    /// `d_c - d_b`.
    pub d_ptb: f64,
    pub per_run_details: Vec<RunDetail>,
}

/// Everything `run_protocol` produces: one report per scene plus the clean
/// reference accuracy so callers can reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutcome {
    pub reports: Vec<MetricsReport>,
    pub d_c: f64,
}

/// The repeated-run protocol: for each run, pick a target class (round-robin
/// from a seeded start), build the poisoned set, train, and evaluate every
/// scene; aggregate min/max/ave over runs. A clean model (count = 0) supplies
/// `D_c` unless `clean_acc_percent` is provided by the caller.
pub fn run_protocol(
    train_set: &Dataset,
    test_set: &Dataset,
    poison_cfg: &PoisonConfig,
    train_cfg: &TrainConfig,
    scenes: &[SceneSpec],
    clean_acc_percent: Option<f64>,
) -> Result<ProtocolOutcome> {
    assert!(!scenes.is_empty(), "need at least one scene");
    let runs = scenes[0].runs;
    assert!(
        scenes.iter().all(|s| s.runs == runs),
        "all scenes must agree on the run count"
    );

    let d_c = match clean_acc_percent {
        Some(v) => v,
        None => {
            let clean_cfg = TrainConfig {
                seed: StreamKey::new(train_cfg.seed).child(domain::RUN).child(u64::MAX).value(),
                ..train_cfg.clone()
            };
            let (clean_model, _) = model::train(train_set, &clean_cfg)?;
            model::accuracy(&clean_model, &test_set.samples)? * 100.0
        }
    };

    let start = StreamKey::new(poison_cfg.seed)
        .child(domain::TARGET_START)
        .stream()
        .index(train_set.num_classes);

    // runs are independent; each owns derived streams keyed by its index
    let run_results: Result<Vec<(Vec<(usize, usize)>, RunDetail)>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let target_class = (start + run) % train_set.num_classes;
            let target = PoisonLabel::new(target_class, train_set.num_classes)?;
            let run_poison = PoisonConfig {
                trigger: poison_cfg.trigger.clone(),
                target,
                count: poison_cfg.count,
                seed: StreamKey::new(poison_cfg.seed).child(domain::RUN).child(run as u64).value(),
            };
            let poisoned = build_poisoned(train_set, &run_poison)?;
            let run_train = TrainConfig {
                seed: StreamKey::new(train_cfg.seed).child(domain::RUN).child(run as u64).value(),
                ..train_cfg.clone()
            };
            let (params, _) = model::train(&poisoned, &run_train)?;
            let d_b = model::accuracy(&params, &test_set.samples)? * 100.0;

            let mut scene_counts = Vec::with_capacity(scenes.len());
            for scene in scenes {
                let probes = make_probes(test_set, &poison_cfg.trigger, target, scene, run)?;
                let (f_t, f_s, _) = attack_success_rate(&params, &probes, target)?;
                scene_counts.push((f_t, f_s));
            }
            Ok((
                scene_counts,
                RunDetail {
                    run,
                    target: target_class,
                    f_t: 0,
                    f_s: 0,
                    d_b,
                },
            ))
        })
        .collect();
    let run_results = run_results?;

    let mut reports = Vec::with_capacity(scenes.len());
    for (scene_idx, scene) in scenes.iter().enumerate() {
        let details: Vec<RunDetail> = run_results
            .iter()
            .map(|(counts, base)| RunDetail {
                f_t: counts[scene_idx].0,
                f_s: counts[scene_idx].1,
                ..*base
            })
            .collect();
        let rates: Vec<f64> = details.iter().map(|d| d.rate()).collect();
        let d_b = details.iter().map(|d| d.d_b).sum::<f64>() / details.len() as f64;
        reports.push(MetricsReport {
            scene: scene.kind,
            ptb_enabled: train_cfg.ptb_enabled,
            r_ptb_min: rates.iter().cloned().fold(f64::INFINITY, f64::min),
            r_ptb_max: rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            r_ptb_ave: rates.iter().sum::<f64>() / rates.len() as f64,
            d_c,
            d_b,
            d_ptb: performance_drop(d_c, d_b),
            per_run_details: details,
        });
    }
    Ok(ProtocolOutcome { reports, d_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_generate;
    use crate::model::ModelParams;
    use crate::trigger::make_square;

    fn setup() -> (Dataset, Dataset, Trigger) {
        let (train_set, test_set) = synth_generate(4, 10, 8, 16, 3);
        (train_set, test_set, make_square(0.25, [0.0; 3]).unwrap())
    }

    #[test]
    fn simple_probes_differ_only_inside_trigger_mask() {
        let (_, test_set, trigger) = setup();
        let target = PoisonLabel::new(0, 4).unwrap();
        let scene = SceneSpec {
            probes_per_run: 5,
            ..SceneSpec::new(SceneKind::Simple, 99)
        };
        let probes = make_probes(&test_set, &trigger, target, &scene, 0).unwrap();
        assert_eq!(probes.len(), 5);
        let (x0, y0) = trigger.placement(16, 16).unwrap();
        let stamp = trigger.stamp(16, 16, 3).unwrap();
        // every probe equals some non-target test image outside the mask
        for probe in &probes {
            let matched = test_set.samples.iter().any(|s| {
                s.label != 0
                    && (0..16).all(|y| {
                        (0..16).all(|x| {
                            let inside = x >= x0
                                && x < x0 + stamp.patch.width()
                                && y >= y0
                                && y < y0 + stamp.patch.height()
                                && stamp.mask_at(x - x0, y - y0);
                            inside || probe.pixel(x, y) == s.image.pixel(x, y)
                        })
                    })
            });
            assert!(matched, "probe does not match any test image outside the mask");
        }
    }

    #[test]
    fn complex_probes_with_identity_ranges_match_simple() {
        let (_, test_set, trigger) = setup();
        let target = PoisonLabel::new(1, 4).unwrap();
        let simple = SceneSpec {
            probes_per_run: 6,
            ..SceneSpec::new(SceneKind::Simple, 5)
        };
        let complex = SceneSpec {
            kind: SceneKind::Complex,
            ranges: TransformRanges::identity(),
            ..simple.clone()
        };
        let a = make_probes(&test_set, &trigger, target, &simple, 2).unwrap();
        let b = make_probes(&test_set, &trigger, target, &complex, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.max_abs_diff(y) <= 1e-6);
        }
    }

    #[test]
    fn distinct_run_indices_give_distinct_probe_sets() {
        let (_, test_set, trigger) = setup();
        let target = PoisonLabel::new(0, 4).unwrap();
        let scene = SceneSpec {
            probes_per_run: 10,
            ..SceneSpec::new(SceneKind::Complex, 5)
        };
        let a = make_probes(&test_set, &trigger, target, &scene, 0).unwrap();
        let b = make_probes(&test_set, &trigger, target, &scene, 1).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn probe_shortage_is_reported() {
        let (_, test_set, trigger) = setup();
        let target = PoisonLabel::new(0, 4).unwrap();
        let scene = SceneSpec {
            probes_per_run: 100,
            ..SceneSpec::new(SceneKind::Simple, 5)
        };
        assert!(matches!(
            make_probes(&test_set, &trigger, target, &scene, 0).unwrap_err(),
            Error::InsufficientProbes {
                needed: 100,
                available: 24
            }
        ));
    }

    #[test]
    fn asr_counts_and_identity() {
        let (_, test_set, trigger) = setup();
        let target = PoisonLabel::new(2, 4).unwrap();
        let scene = SceneSpec {
            probes_per_run: 20,
            ..SceneSpec::new(SceneKind::Simple, 7)
        };
        let probes = make_probes(&test_set, &trigger, target, &scene, 0).unwrap();

        // a model biased entirely toward the target class hits 100%
        let arch = crate::model::ArchDesc::new(16, 16, 3, 4);
        let mut always_target = ModelParams {
            arch,
            t: crate::model::ParamTensors::zeros(&arch),
        };
        always_target.t.fc2_b[2] = 10.0;
        let (f_t, f_s, r) = attack_success_rate(&always_target, &probes, target).unwrap();
        assert_eq!((f_t, f_s), (20, 20));
        assert_eq!(r, 100.0);

        // a model that never predicts the target scores 0%
        let mut never_target = ModelParams {
            arch,
            t: crate::model::ParamTensors::zeros(&arch),
        };
        never_target.t.fc2_b[0] = 10.0;
        let (f_t, _, r) = attack_success_rate(&never_target, &probes, target).unwrap();
        assert_eq!(f_t, 0);
        assert_eq!(r, 0.0);

        // 18 of 20 is 90%
        assert_eq!(18.0 / 20.0 * 100.0, 90.0);
    }

    #[test]
    fn performance_drop_identity() {
        assert_eq!(performance_drop(96.33, 96.33), 0.0);
        assert_eq!(performance_drop(90.0, 88.0), 2.0);
        assert!(performance_drop(90.0, 93.0) < 0.0);
    }

    #[test]
    fn protocol_shapes_and_determinism() {
        let (train_set, test_set, trigger) = setup();
        let poison_cfg = PoisonConfig {
            trigger,
            target: PoisonLabel::new(0, 4).unwrap(),
            count: 3,
            seed: 5,
        };
        let train_cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 11,
            ranges: TransformRanges::default(),
            ptb_enabled: true,
        };
        let scenes = vec![
            SceneSpec {
                probes_per_run: 8,
                runs: 3,
                ..SceneSpec::new(SceneKind::Simple, 21)
            },
            SceneSpec {
                kind: SceneKind::Complex,
                probes_per_run: 8,
                runs: 3,
                ..SceneSpec::new(SceneKind::Complex, 21)
            },
        ];
        let out = run_protocol(&train_set, &test_set, &poison_cfg, &train_cfg, &scenes, None)
            .unwrap();
        assert_eq!(out.reports.len(), 2);
        for report in &out.reports {
            assert_eq!(report.per_run_details.len(), 3);
            assert!(report.r_ptb_min <= report.r_ptb_ave);
            assert!(report.r_ptb_ave <= report.r_ptb_max);
            let mean: f64 = report
                .per_run_details
                .iter()
                .map(|d| d.rate())
                .sum::<f64>()
                / 3.0;
            assert_eq!(report.r_ptb_ave, mean);
            assert_eq!(report.d_ptb, report.d_c - report.d_b);
            // round-robin targets
            let t0 = report.per_run_details[0].target;
            assert_eq!(report.per_run_details[1].target, (t0 + 1) % 4);
            assert_eq!(report.per_run_details[2].target, (t0 + 2) % 4);
        }
        let again = run_protocol(&train_set, &test_set, &poison_cfg, &train_cfg, &scenes, None)
            .unwrap();
        assert_eq!(out, again);

        // supplying the clean accuracy skips the clean training, same result
        let reuse = run_protocol(
            &train_set,
            &test_set,
            &poison_cfg,
            &train_cfg,
            &scenes,
            Some(out.d_c),
        )
        .unwrap();
        assert_eq!(out, reuse);
    }
}
