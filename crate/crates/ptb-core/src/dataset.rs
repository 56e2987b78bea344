//! Labeled image datasets: directory loading, a self-contained synthetic
//! generator, poisoned-set construction, and directory persistence.
//!
//! The synthetic generator gives each class a distinct procedural texture
//! family (base shape + color palette with per-sample jitter) so that a
//! small classifier separates the classes comfortably. Everything is a pure
//! function of the seed.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::ppm;
use crate::rng::{domain, Stream, StreamKey};
use crate::trigger::{inject, relabel, PoisonLabel, Trigger};

/// One labeled image. `provenance_label` records the original class of a
/// poisoned sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    pub poisoned: bool,
    pub provenance_label: Option<usize>,
    pub id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// An ordered, immutable collection of samples with a shared geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub split: Split,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn poisoned_count(&self) -> usize {
        self.samples.iter().filter(|s| s.poisoned).count()
    }

    /// Geometry of the first sample; datasets are dimension-homogeneous.
    pub fn geometry(&self) -> (usize, usize, usize) {
        let img = &self.samples[0].image;
        (img.height(), img.width(), img.channels())
    }
}

/// Poisoning plan: which trigger, which target, how many injected copies.
#[derive(Debug, Clone)]
pub struct PoisonConfig {
    pub trigger: Trigger,
    pub target: PoisonLabel,
    pub count: usize,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// directory loading
// ---------------------------------------------------------------------------

/// Loads `<root>/<class_name>/<image>.ppm|.pgm`. Class names map to indices
/// in lexicographic order; samples are ordered by (class, filename) and ids
/// assigned sequentially. All images must share dimensions and channels.
pub fn load_dir(root: &Path, split: Split) -> Result<Dataset> {
    let read_err = |e: std::io::Error| Error::io(root.display().to_string(), e);
    let mut class_dirs: Vec<(String, std::path::PathBuf)> = fs::read_dir(root)
        .map_err(read_err)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if class_dirs.is_empty() {
        return Err(Error::EmptyClassDir(format!(
            "{} contains no class directories",
            root.display()
        )));
    }

    let mut samples = Vec::new();
    let mut expected: Option<(usize, usize, usize)> = None;
    let mut next_id = 0u64;
    for (class_idx, (_, dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<std::path::PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("ppm") | Some("pgm")
                )
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyClassDir(dir.display().to_string()));
        }
        for path in files {
            let bytes = fs::read(&path).map_err(|e| Error::UnreadableFile {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            let image = ppm::read_ppm(&bytes).map_err(|e| match e {
                Error::MalformedHeader { .. }
                | Error::TruncatedPayload { .. }
                | Error::UnsupportedMaxval { .. } => Error::UnreadableFile {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                },
                other => other,
            })?;
            let dims = (image.height(), image.width(), image.channels());
            match expected {
                None => expected = Some(dims),
                Some(exp) if exp != dims => {
                    return Err(Error::DimensionMismatch {
                        path: path.display().to_string(),
                        found_w: dims.1,
                        found_h: dims.0,
                        found_c: dims.2,
                        expected_w: exp.1,
                        expected_h: exp.0,
                        expected_c: exp.2,
                    })
                }
                _ => {}
            }
            samples.push(Sample {
                image,
                label: class_idx,
                poisoned: false,
                provenance_label: None,
                id: next_id,
            });
            next_id += 1;
        }
    }
    Ok(Dataset {
        num_classes: class_dirs.len(),
        class_names: class_dirs.into_iter().map(|(n, _)| n).collect(),
        samples,
        split,
    })
}

/// [`load_dir`], then applies a `manifest.csv` (`id,label,provenance_label,
/// poisoned`) if one exists at the root. Manifest rows correspond
/// positionally to the (class, filename) load order and restore the stable
/// ids and poisoned flags written by [`save_dir`].
pub fn load_dir_with_manifest(root: &Path, split: Split) -> Result<Dataset> {
    let mut ds = load_dir(root, split)?;
    let manifest = root.join("manifest.csv");
    if !manifest.exists() {
        return Ok(ds);
    }
    let text = fs::read_to_string(&manifest)
        .map_err(|e| Error::io(manifest.display().to_string(), e))?;
    let bad = |detail: String| Error::UnreadableFile {
        path: manifest.display().to_string(),
        detail,
    };
    let mut rows = text.lines();
    match rows.next() {
        Some("id,label,provenance_label,poisoned") => {}
        other => return Err(bad(format!("unexpected manifest header {other:?}"))),
    }
    let rows: Vec<&str> = rows.filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != ds.samples.len() {
        return Err(bad(format!(
            "manifest has {} rows, dataset has {} samples",
            rows.len(),
            ds.samples.len()
        )));
    }
    for (sample, row) in ds.samples.iter_mut().zip(rows) {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("malformed manifest row {row:?}")));
        }
        let id: u64 = fields[0].parse().map_err(|_| bad(format!("bad id in {row:?}")))?;
        let label: usize = fields[1]
            .parse()
            .map_err(|_| bad(format!("bad label in {row:?}")))?;
        if label != sample.label {
            return Err(bad(format!(
                "manifest label {label} disagrees with directory label {} for id {id}",
                sample.label
            )));
        }
        sample.id = id;
        sample.provenance_label = if fields[2].is_empty() {
            None
        } else {
            Some(
                fields[2]
                    .parse()
                    .map_err(|_| bad(format!("bad provenance in {row:?}")))?,
            )
        };
        sample.poisoned = match fields[3] {
            "true" => true,
            "false" => false,
            other => return Err(bad(format!("bad poisoned flag {other:?}"))),
        };
        if sample.poisoned && sample.provenance_label.is_none() {
            return Err(bad(format!("poisoned row {id} lacks a provenance label")));
        }
    }
    Ok(ds)
}

/// Writes the dataset in the [`load_dir`] layout plus `manifest.csv`.
/// Filenames embed zero-padded ids so the load order reproduces the
/// manifest order.
pub fn save_dir(dataset: &Dataset, root: &Path) -> Result<()> {
    let io_err = |p: &Path| {
        let p = p.display().to_string();
        move |e: std::io::Error| Error::io(p.clone(), e)
    };
    fs::create_dir_all(root).map_err(io_err(root))?;
    let ext = if dataset.samples.first().map(|s| s.image.channels()) == Some(1) {
        "pgm"
    } else {
        "ppm"
    };
    // (class, id) order mirrors the (class, filename) load order
    let mut order: Vec<usize> = (0..dataset.samples.len()).collect();
    order.sort_by_key(|&i| (dataset.samples[i].label, dataset.samples[i].id));

    let mut manifest = String::from("id,label,provenance_label,poisoned\n");
    for &i in &order {
        let s = &dataset.samples[i];
        let class_dir = root.join(&dataset.class_names[s.label]);
        fs::create_dir_all(&class_dir).map_err(io_err(&class_dir))?;
        let file = class_dir.join(format!("sample_{:06}.{ext}", s.id));
        fs::write(&file, ppm::write_ppm(&s.image)).map_err(io_err(&file))?;
        manifest.push_str(&format!(
            "{},{},{},{}\n",
            s.id,
            s.label,
            s.provenance_label.map(|p| p.to_string()).unwrap_or_default(),
            s.poisoned
        ));
    }
    let manifest_path = root.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

/// Per-class figure colors on a shared neutral-gray background, so class
/// evidence stays localized to the figure, the way a face dataset's identity
/// evidence is localized to the face. Classes `c` and `c + 5` share a shape
/// family, so their colors are chosen complementary; classes beyond ten
/// reuse entries with rotated channels.
const PALETTE: [[f64; 3]; 10] = [
    [0.95, 0.85, 0.20],
    [0.20, 0.90, 0.85],
    [0.90, 0.25, 0.80],
    [0.90, 0.45, 0.15],
    [0.30, 0.85, 0.30],
    [0.15, 0.25, 0.90],
    [0.90, 0.20, 0.25],
    [0.25, 0.80, 0.25],
    [0.20, 0.55, 0.95],
    [0.80, 0.25, 0.85],
];

const BACKGROUND_GRAY: f64 = 0.55;

fn palette_for(class: usize, attempt: usize) -> [f64; 3] {
    let fg = PALETTE[(class + attempt) % PALETTE.len()];
    let k = (class + attempt) / PALETTE.len();
    [fg[k % 3], fg[(k + 1) % 3], fg[(k + 2) % 3]]
}

/// Whether normalized point `(u, v)` is part of the class figure: one of
/// five shape masks with radii scaled so every family covers about the same
/// area; families 5..9 carve horizontal stripes out of the same silhouettes.
/// `cu, cv` center; `r` scale; `phase` stripe offset.
fn shape_covers(family: usize, u: f64, v: f64, cu: f64, cv: f64, r: f64, phase: f64) -> bool {
    let du = u - cu;
    let dv = v - cv;
    let inside = match (family % 10) % 5 {
        0 => du * du + dv * dv <= r * r,
        1 => {
            let r = 1.15 * r;
            let d2 = du * du + dv * dv;
            d2 <= r * r && d2 >= (0.50 * r) * (0.50 * r)
        }
        2 => {
            let r = 1.16 * r;
            (du.abs() <= 0.35 * r || dv.abs() <= 0.35 * r) && du.abs().max(dv.abs()) <= r
        }
        3 => du.abs() + dv.abs() <= 1.25 * r,
        _ => du.abs().max(dv.abs()) <= 0.88 * r,
    };
    if !inside {
        return false;
    }
    if family % 10 >= 5 {
        // duty cycle 0.65 keeps striped figures visible in the class mean
        ((v * 7.0 + phase).fract()) < 0.65
    } else {
        true
    }
}

fn render_sample(side: usize, class: usize, attempt: usize, stream: &mut Stream) -> Image {
    let fg = palette_for(class, attempt);
    // jitter draw order: center x2, scale, phase, gain, bg x3, fg x3, noise
    let cu = 0.5 + stream.uniform(-0.18, 0.18);
    let cv = 0.5 + stream.uniform(-0.18, 0.18);
    let r = 0.26 * (1.0 + stream.uniform(-0.25, 0.25));
    let phase = stream.unit_f64();
    // per-sample exposure: photographs of one subject differ in gain
    let gain = stream.uniform(0.8, 1.2);
    let mut bg_j = [0.0; 3];
    let mut fg_j = [0.0; 3];
    for v in bg_j.iter_mut() {
        *v = stream.uniform(-0.06, 0.06);
    }
    for v in fg_j.iter_mut() {
        *v = stream.uniform(-0.05, 0.05);
    }
    // muted figure colors keep the classes separable without letting class
    // evidence drown small localized cues
    let mute = |c: f64| BACKGROUND_GRAY + 0.6 * (c - BACKGROUND_GRAY);

    let mut pixels = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 + 0.5) / side as f64;
            let v = (y as f64 + 0.5) / side as f64;
            let base = if shape_covers(class, u, v, cu, cv, r, phase) {
                [
                    mute(fg[0]) + fg_j[0],
                    mute(fg[1]) + fg_j[1],
                    mute(fg[2]) + fg_j[2],
                ]
            } else {
                [
                    BACKGROUND_GRAY + bg_j[0],
                    BACKGROUND_GRAY + bg_j[1],
                    BACKGROUND_GRAY + bg_j[2],
                ]
            };
            for c in base {
                pixels.push((gain * c + 0.04 * stream.next_normal()).clamp(0.0, 1.0));
            }
        }
    }
    Image::from_pixels(side, side, 3, pixels).expect("synthetic pixels are clipped")
}

fn generate_split(
    num_classes: usize,
    per_class: usize,
    side: usize,
    seed: u64,
    attempt: usize,
    split: Split,
    id_base: u64,
) -> Dataset {
    let split_tag = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut samples = Vec::with_capacity(num_classes * per_class);
    let mut id = id_base;
    for class in 0..num_classes {
        for index in 0..per_class {
            let mut stream = StreamKey::new(seed)
                .child(domain::SYNTH)
                .child(attempt as u64)
                .child(split_tag)
                .child(class as u64)
                .child(index as u64)
                .stream();
            samples.push(Sample {
                image: render_sample(side, class, attempt, &mut stream),
                label: class,
                poisoned: false,
                provenance_label: None,
                id,
            });
            id += 1;
        }
    }
    Dataset {
        samples,
        num_classes,
        split,
        class_names: (0..num_classes).map(|c| format!("class_{c:02}")).collect(),
    }
}

/// Mean absolute per-value distance between two images.
fn mean_l1(a: &Image, b: &Image) -> f64 {
    let n = a.pixels().len() as f64;
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n
}

fn class_means(ds: &Dataset) -> Vec<Image> {
    let (h, w, c) = ds.geometry();
    (0..ds.num_classes)
        .map(|class| {
            let members: Vec<&Sample> = ds.samples.iter().filter(|s| s.label == class).collect();
            let mut acc = vec![0.0f64; h * w * c];
            for s in &members {
                for (a, v) in acc.iter_mut().zip(s.image.pixels()) {
                    *a += v;
                }
            }
            let n = members.len() as f64;
            Image::from_pixels(h, w, c, acc.into_iter().map(|v| v / n).collect())
                .expect("mean of unit-interval pixels stays in range")
        })
        .collect()
}

/// Generates deterministic train/test splits. Each class is a distinct
/// texture family; the palette is re-rolled if any two class means come
/// within 0.05 mean-L1 of each other.
pub fn synth_generate(
    num_classes: usize,
    per_class_train: usize,
    per_class_test: usize,
    side: usize,
    seed: u64,
) -> (Dataset, Dataset) {
    assert!(num_classes > 0 && per_class_train > 0 && per_class_test > 0 && side > 0);
    let mut attempt = 0usize;
    loop {
        let train = generate_split(
            num_classes,
            per_class_train,
            side,
            seed,
            attempt,
            Split::Train,
            0,
        );
        let means = class_means(&train);
        let mut min_sep = f64::INFINITY;
        for i in 0..means.len() {
            for j in (i + 1)..means.len() {
                min_sep = min_sep.min(mean_l1(&means[i], &means[j]));
            }
        }
        if min_sep > 0.05 || attempt >= 8 {
            let test = generate_split(
                num_classes,
                per_class_test,
                side,
                seed,
                attempt,
                Split::Test,
                (num_classes * per_class_train) as u64,
            );
            return (train, test);
        }
        attempt += 1;
    }
}

// ---------------------------------------------------------------------------
// poisoning
// ---------------------------------------------------------------------------

/// Builds a poisoned training set: picks `cfg.count` donor samples uniformly
/// at random from the non-target classes, injects the trigger, relabels to
/// the target, and appends the copies. Donors stay in the set untouched.
pub fn build_poisoned(train: &Dataset, cfg: &PoisonConfig) -> Result<Dataset> {
    let target = cfg.target.target_class();
    if target >= train.num_classes {
        return Err(Error::InvalidClassIndex {
            index: target,
            num_classes: train.num_classes,
        });
    }
    let eligible: Vec<usize> = train
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.poisoned && s.label != target)
        .map(|(i, _)| i)
        .collect();
    if cfg.count > eligible.len() {
        return Err(Error::InsufficientDonors {
            requested: cfg.count,
            available: eligible.len(),
        });
    }
    let mut stream = StreamKey::new(cfg.seed).child(domain::POISON).stream();
    let mut picks: Vec<usize> = stream
        .choose_indices(eligible.len(), cfg.count)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    picks.sort_unstable();

    let mut out = train.clone();
    let mut next_id = train.samples.iter().map(|s| s.id).max().unwrap_or(0) + 1;
    for donor_idx in picks {
        let donor = &train.samples[donor_idx];
        let mut poisoned = relabel(donor, cfg.target);
        poisoned.image = inject(&donor.image, &cfg.trigger)?;
        poisoned.id = next_id;
        next_id += 1;
        out.samples.push(poisoned);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trigger::make_square;

    fn small_synth() -> (Dataset, Dataset) {
        synth_generate(4, 6, 2, 32, 7)
    }

    #[test]
    fn synth_counts_and_determinism() {
        let (train, test) = small_synth();
        assert_eq!(train.len(), 24);
        assert_eq!(test.len(), 8);
        assert_eq!(train.num_classes, 4);
        let (train2, test2) = small_synth();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        // ids unique across both splits
        let mut ids: Vec<u64> = train.samples.iter().chain(&test.samples).map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 32);
    }

    #[test]
    fn synth_class_means_are_separated() {
        let (train, _) = small_synth();
        let means = class_means(&train);
        for i in 0..means.len() {
            for j in (i + 1)..means.len() {
                let d = mean_l1(&means[i], &means[j]);
                assert!(d > 0.05, "classes {i} and {j} too close: {d}");
            }
        }
    }

    #[test]
    fn save_then_load_round_trips_contents() {
        let (train, _) = small_synth();
        let t = make_square(0.25, [0.0; 3]).unwrap();
        let cfg = PoisonConfig {
            trigger: t,
            target: PoisonLabel::new(1, 4).unwrap(),
            count: 3,
            seed: 11,
        };
        let poisoned = build_poisoned(&train, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dir(&poisoned, dir.path()).unwrap();
        let loaded = load_dir_with_manifest(dir.path(), Split::Train).unwrap();
        assert_eq!(loaded.len(), poisoned.len());
        assert_eq!(loaded.poisoned_count(), 3);
        // same multiset of (id, label, poisoned, provenance); pixel data
        // matches after 8-bit quantization
        let mut got: Vec<(u64, usize, bool, Option<usize>)> = loaded
            .samples
            .iter()
            .map(|s| (s.id, s.label, s.poisoned, s.provenance_label))
            .collect();
        let mut want: Vec<(u64, usize, bool, Option<usize>)> = poisoned
            .samples
            .iter()
            .map(|s| (s.id, s.label, s.poisoned, s.provenance_label))
            .collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn load_dir_two_classes_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        for (class, val) in [("a", 0.2), ("b", 0.8)] {
            let class_dir = dir.path().join(class);
            fs::create_dir(&class_dir).unwrap();
            fs::write(
                class_dir.join("img.ppm"),
                ppm::write_ppm(&Image::constant(4, 4, 3, val)),
            )
            .unwrap();
        }
        let ds = load_dir(dir.path(), Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.class_names, vec!["a", "b"]);
        let again = load_dir(dir.path(), Split::Train).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn load_dir_rejects_mixed_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        fs::create_dir(&a).unwrap();
        fs::write(a.join("x.ppm"), ppm::write_ppm(&Image::zeros(4, 4, 3))).unwrap();
        fs::write(a.join("y.ppm"), ppm::write_ppm(&Image::zeros(8, 8, 3))).unwrap();
        assert!(matches!(
            load_dir(dir.path(), Split::Train).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn load_dir_rejects_empty_class() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        assert!(matches!(
            load_dir(dir.path(), Split::Train).unwrap_err(),
            Error::EmptyClassDir(_)
        ));
    }

    #[test]
    fn build_poisoned_appends_and_flags() {
        let (train, _) = small_synth();
        let cfg = PoisonConfig {
            trigger: make_square(0.25, [0.0; 3]).unwrap(),
            target: PoisonLabel::new(2, 4).unwrap(),
            count: 5,
            seed: 3,
        };
        let out = build_poisoned(&train, &cfg).unwrap();
        assert_eq!(out.len(), train.len() + 5);
        assert_eq!(out.poisoned_count(), 5);
        for s in out.samples.iter().filter(|s| s.poisoned) {
            assert_eq!(s.label, 2);
            assert_ne!(s.provenance_label, Some(2));
            assert!(s.provenance_label.is_some());
        }
        // clean samples bit-identical to their input counterparts
        for (a, b) in train.samples.iter().zip(&out.samples) {
            assert_eq!(a, b);
        }
        // reproducible donor choice
        let out2 = build_poisoned(&train, &cfg).unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn build_poisoned_zero_count_is_identity() {
        let (train, _) = small_synth();
        let cfg = PoisonConfig {
            trigger: make_square(0.25, [0.0; 3]).unwrap(),
            target: PoisonLabel::new(0, 4).unwrap(),
            count: 0,
            seed: 3,
        };
        assert_eq!(build_poisoned(&train, &cfg).unwrap(), train);
    }

    #[test]
    fn build_poisoned_rejects_donor_shortage() {
        let (train, _) = small_synth();
        let cfg = PoisonConfig {
            trigger: make_square(0.25, [0.0; 3]).unwrap(),
            target: PoisonLabel::new(0, 4).unwrap(),
            count: 19, // only 18 non-target samples exist
            seed: 3,
        };
        assert!(matches!(
            build_poisoned(&train, &cfg).unwrap_err(),
            Error::InsufficientDonors {
                requested: 19,
                available: 18
            }
        ));
    }
}
