//! The five subcommands: preview, poison, train, eval, sweep.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

use ptb_core::dataset::{self, Dataset, PoisonConfig, Split};
use ptb_core::eval::{
    attack_success_rate, make_probes, MetricsReport, RunDetail, SceneKind, SceneSpec,
};
use ptb_core::model::{self, ArchDesc, TrainConfig};
use ptb_core::ppm;
use ptb_core::rng::{domain, StreamKey};
use ptb_core::transforms::{
    apply_angle, apply_brightness, apply_composite, apply_distance, apply_rotation, sample_params,
};
use ptb_core::trigger::{inject, PoisonLabel};

use crate::config::{DataSource, ExperimentConfig};
use crate::report;

/// Writes through a temp file and renames, so output files are never
/// observed half-written.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Train/test datasets per the `[data]` section.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Synth {
            classes,
            per_class_train,
            per_class_test,
            side,
        } => Ok(dataset::synth_generate(
            *classes,
            *per_class_train,
            *per_class_test,
            *side,
            cfg.synth_seed(),
        )),
        DataSource::Dir { dir, test_dir } => {
            let train = dataset::load_dir_with_manifest(dir, Split::Train)?;
            let test = dataset::load_dir_with_manifest(test_dir, Split::Test)?;
            Ok((train, test))
        }
    }
}

fn poisoned_train_set(cfg: &ExperimentConfig, train: &Dataset) -> Result<Dataset> {
    if train.poisoned_count() > 0 || cfg.poison_count == 0 {
        // directory data from `poison` already carries its injections
        return Ok(train.clone());
    }
    let poison = PoisonConfig {
        trigger: cfg.build_trigger()?,
        target: PoisonLabel::new(cfg.poison_target, train.num_classes)?,
        count: cfg.poison_count,
        seed: cfg.poison_seed(),
    };
    Ok(dataset::build_poisoned(train, &poison)?)
}

/// Writes, per previewed sample, the original, the injected image, each
/// geometric/photometric transform of the injected image, and the full
/// gated composite (which also carries the noise step).
pub fn cmd_preview(cfg: &ExperimentConfig, sample_count: usize) -> Result<()> {
    let (train, _) = load_data(cfg)?;
    if sample_count > train.len() {
        return Err(anyhow!(
            "preview wants {sample_count} samples, dataset has {}",
            train.len()
        ));
    }
    let trigger = cfg.build_trigger()?;
    fs::create_dir_all(&cfg.out_dir)?;
    for i in 0..sample_count {
        let sample = &train.samples[i];
        let injected = inject(&sample.image, &trigger)?;
        let mut stream = StreamKey::new(cfg.seed)
            .child(domain::PREVIEW)
            .child(i as u64)
            .stream();
        let mut params = sample_params(&cfg.transforms, &mut stream);
        params.gate = true;

        let stages: [(&str, ptb_core::imaging::Image); 7] = [
            ("original", sample.image.clone()),
            ("injected", injected.clone()),
            ("distance", apply_distance(&injected, params.scale)?),
            (
                "angle",
                apply_angle(&injected, params.yaw_deg, params.pitch_deg)?,
            ),
            ("rotation", apply_rotation(&injected, params.rotation_deg)?),
            ("brightness", apply_brightness(&injected, params.brightness)?),
            ("noise_composite", apply_composite(&injected, &params)?),
        ];
        for (k, (name, image)) in stages.iter().enumerate() {
            let file = cfg
                .out_dir
                .join(format!("preview_{i:02}_{k}_{name}.ppm"));
            write_atomic(&file, &ppm::write_ppm(image))?;
        }
    }
    println!(
        "preview: wrote {} files to {}",
        7 * sample_count,
        cfg.out_dir.display()
    );
    Ok(())
}

/// Builds the poisoned training set and persists it in the loadable
/// directory layout plus `manifest.csv`.
pub fn cmd_poison(cfg: &ExperimentConfig) -> Result<()> {
    let (train, _) = load_data(cfg)?;
    let poisoned = poisoned_train_set(cfg, &train)?;
    let out = cfg.out_dir.join("poisoned");
    if out.exists() {
        fs::remove_dir_all(&out).with_context(|| format!("clearing {}", out.display()))?;
    }
    dataset::save_dir(&poisoned, &out)?;
    println!(
        "poison: {} samples ({} poisoned, target {}) -> {}",
        poisoned.len(),
        poisoned.poisoned_count(),
        cfg.poison_target,
        out.display()
    );
    Ok(())
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        seed: cfg.train_seed(),
        ranges: cfg.transforms,
        ptb_enabled: cfg.train.ptb_enabled,
    }
}

const EPOCH_HEADER: &str = "epoch,loss,clean_acc";

/// Trains per the config, emitting one `epoch,loss,clean_acc` line per epoch
/// and writing `model.ckpt` and `epochs.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let (train, _) = load_data(cfg)?;
    let data = poisoned_train_set(cfg, &train)?;
    let tc = train_config(cfg);
    println!("{EPOCH_HEADER}");
    let mut log = String::from(EPOCH_HEADER);
    log.push('\n');
    let (params, _) = model::train_with_progress(&data, &tc, |s, _| {
        let line = format!(
            "{},{:.6},{:.2}",
            s.epoch,
            s.mean_loss,
            s.clean_acc() * 100.0
        );
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    fs::create_dir_all(&cfg.out_dir)?;
    let ckpt = cfg.out_dir.join("model.ckpt");
    model::save(&params, &ckpt)?;
    write_atomic(&cfg.out_dir.join("epochs.csv"), log.as_bytes())?;
    println!("train: checkpoint -> {}", ckpt.display());
    Ok(())
}

fn scene_pair(cfg: &ExperimentConfig) -> [SceneSpec; 2] {
    let seed = cfg.eval_seed();
    [
        SceneSpec {
            kind: SceneKind::Simple,
            ranges: cfg.probe_ranges(),
            probes_per_run: cfg.eval.probes_per_run,
            runs: cfg.eval.runs,
            seed,
        },
        SceneSpec {
            kind: SceneKind::Complex,
            ranges: cfg.probe_ranges(),
            probes_per_run: cfg.eval.probes_per_run,
            runs: cfg.eval.runs,
            seed,
        },
    ]
}

/// Evaluates one checkpoint under both scenes and writes `eval.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let ckpt_path = checkpoint.unwrap_or_else(|| cfg.out_dir.join("model.ckpt"));
    let params = model::load(&ckpt_path)?;
    let (_, test) = load_data(cfg)?;
    let (h, w, c) = test.geometry();
    model::validate_arch(&params, &ArchDesc::new(h, w, c, test.num_classes))?;

    let trigger = cfg.build_trigger()?;
    let target = PoisonLabel::new(cfg.poison_target, test.num_classes)?;
    let d_b = model::accuracy(&params, &test.samples)? * 100.0;
    let d_c = match &cfg.eval.clean_checkpoint {
        Some(path) => {
            let clean = model::load(path)?;
            model::validate_arch(&clean, &ArchDesc::new(h, w, c, test.num_classes))?;
            Some(model::accuracy(&clean, &test.samples)? * 100.0)
        }
        None => None,
    };

    let mut reports = Vec::new();
    for scene in scene_pair(cfg) {
        let mut details = Vec::with_capacity(scene.runs);
        for run in 0..scene.runs {
            let probes = make_probes(&test, &trigger, target, &scene, run)?;
            let (f_t, f_s, _) = attack_success_rate(&params, &probes, target)?;
            details.push(RunDetail {
                run,
                target: target.target_class(),
                f_t,
                f_s,
                d_b,
            });
        }
        let rates: Vec<f64> = details.iter().map(|d| d.rate()).collect();
        reports.push(MetricsReport {
            scene: scene.kind,
            ptb_enabled: cfg.train.ptb_enabled,
            r_ptb_min: rates.iter().cloned().fold(f64::INFINITY, f64::min),
            r_ptb_max: rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            r_ptb_ave: rates.iter().sum::<f64>() / rates.len() as f64,
            d_c: d_c.unwrap_or(f64::NAN),
            d_b,
            d_ptb: d_c.map(|v| v - d_b).unwrap_or(f64::NAN),
            per_run_details: details,
        });
    }
    let csv = report::eval_csv(&reports, d_c);
    write_atomic(&cfg.out_dir.join("eval.csv"), csv.as_bytes())?;
    for r in &reports {
        println!(
            "eval: {} ave R_ptb {:.2}% (min {:.2}, max {:.2}), D_b {:.2}%",
            r.scene.name(),
            r.r_ptb_ave,
            r.r_ptb_min,
            r.r_ptb_max,
            d_b
        );
    }
    println!("eval: csv -> {}", cfg.out_dir.join("eval.csv").display());
    Ok(())
}

/// Runs the full protocol with and without the transform gate at each
/// injection count, writing `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, counts: &[usize]) -> Result<()> {
    if counts.is_empty() {
        return Err(anyhow!("sweep needs at least one injection count"));
    }
    let (train, test) = load_data(cfg)?;
    let trigger = cfg.build_trigger()?;
    let scenes = scene_pair(cfg);
    let base_train = train_config(cfg);

    let mut csv = String::from(report::SWEEP_CSV_HEADER);
    csv.push('\n');
    let mut d_c: Option<f64> = None;
    for &count in counts {
        for ptb in [false, true] {
            let poison = PoisonConfig {
                trigger: trigger.clone(),
                target: PoisonLabel::new(cfg.poison_target, train.num_classes)?,
                count,
                seed: cfg.poison_seed(),
            };
            let tc = TrainConfig {
                ptb_enabled: ptb,
                ..base_train.clone()
            };
            let outcome =
                ptb_core::eval::run_protocol(&train, &test, &poison, &tc, &scenes, d_c)?;
            d_c = Some(outcome.d_c);
            for report in &outcome.reports {
                let rates: Vec<(usize, usize)> = report
                    .per_run_details
                    .iter()
                    .map(|d| (d.f_t, d.f_s))
                    .collect();
                csv.push_str(&report::sweep_row(count, ptb, report.scene, &rates));
                println!(
                    "sweep: count {count} ptb {ptb} {} ave {:.2}%",
                    report.scene.name(),
                    report.r_ptb_ave
                );
            }
        }
    }
    write_atomic(&cfg.out_dir.join("sweep.csv"), csv.as_bytes())?;
    println!("sweep: csv -> {}", cfg.out_dir.join("sweep.csv").display());
    Ok(())
}
