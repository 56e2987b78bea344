//! Experiment configuration: a flat sectioned key-value text format.
//!
//! Grammar (one construct per line):
//!
//! ```text
//! file     := line*
//! line     := blank | comment | section | entry
//! comment  := ('#' | ';') any*
//! section  := '[' name ']'
//! entry    := key '=' value        # whitespace around tokens is ignored
//! ```
//!
//! Keys before the first section header are global (currently only `seed`).
//! Values are bare tokens: integers, reals, `true`/`false`, names, or
//! comma-separated tuples (`color = 0,0,0`). Unknown sections or keys are
//! errors. `--set section.key=value` (or `--set seed=N`) overrides entries
//! after the file is read; parsing the serialized form reproduces the same
//! configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ptb_core::rng::{domain, StreamKey};
use ptb_core::transforms::{ComposeMode, TransformRanges};
use ptb_core::trigger::{self, Trigger, TriggerShape};

/// Where the experiment's images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth {
        classes: usize,
        per_class_train: usize,
        per_class_test: usize,
        side: usize,
    },
    Dir {
        dir: PathBuf,
        test_dir: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerConfig {
    pub shape: TriggerShape,
    pub size_frac: f64,
    pub color: [f64; 3],
    pub anchor: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ptb_enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub probes_per_run: usize,
    pub runs: usize,
    pub clean_checkpoint: Option<PathBuf>,
}

/// The one config that drives every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub trigger: TriggerConfig,
    pub poison_target: usize,
    pub poison_count: usize,
    pub train: TrainSection,
    pub transforms: TransformRanges,
    /// Complex-scene probe ranges; `None` means "use the training ranges".
    pub eval_transforms: Option<TransformRanges>,
    pub eval: EvalSection,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            data: DataSource::Synth {
                classes: 10,
                per_class_train: 100,
                per_class_test: 20,
                side: 64,
            },
            trigger: TriggerConfig {
                shape: TriggerShape::Square,
                size_frac: 0.25,
                color: [0.0, 0.0, 0.0],
                anchor: trigger::anchor::FOREHEAD,
            },
            poison_target: 0,
            poison_count: 10,
            train: TrainSection {
                epochs: 30,
                batch_size: 64,
                learning_rate: 0.01,
                ptb_enabled: true,
            },
            transforms: TransformRanges::default(),
            eval_transforms: None,
            eval: EvalSection {
                probes_per_run: 20,
                runs: 5,
                clean_checkpoint: None,
            },
            out_dir: PathBuf::from("runs/out"),
        }
    }
}

/// Raw `(section, key) -> value` map, ordered for reproducible reporting.
pub type ConfigMap = BTreeMap<(String, String), String>;

/// Parses the textual form into a raw map. Global keys get section `""`.
pub fn parse_map(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| anyhow!("line {}: unterminated section header", lineno + 1))?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value, got {line:?}", lineno + 1))?;
        map.insert(
            (section.clone(), key.trim().to_string()),
            value.trim().to_string(),
        );
    }
    Ok(map)
}

/// Applies one `--set section.key=value` (or `--set seed=N`) override.
pub fn apply_set(map: &mut ConfigMap, spec: &str) -> Result<()> {
    let (path, value) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects section.key=value, got {spec:?}"))?;
    let (section, key) = match path.trim().split_once('.') {
        Some((s, k)) => (s.trim().to_string(), k.trim().to_string()),
        None => (String::new(), path.trim().to_string()),
    };
    map.insert((section, key), value.trim().to_string());
    Ok(())
}

fn parse_value<T: std::str::FromStr>(map: &ConfigMap, section: &str, key: &str, default: T) -> Result<T> {
    match map.get(&(section.to_string(), key.to_string())) {
        None => Ok(default),
        Some(raw) => raw
            .parse::<T>()
            .map_err(|_| anyhow!("[{section}] {key}: cannot parse {raw:?}")),
    }
}

fn parse_opt_path(map: &ConfigMap, section: &str, key: &str) -> Option<PathBuf> {
    map.get(&(section.to_string(), key.to_string()))
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn parse_tuple<const N: usize>(raw: &str, what: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != N {
        bail!("{what}: expected {N} comma-separated reals, got {raw:?}");
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse::<f64>()
            .map_err(|_| anyhow!("{what}: cannot parse component {p:?}"))?;
    }
    Ok(out)
}

fn known_keys() -> &'static [(&'static str, &'static [&'static str])] {
    &[
        ("", &["seed"]),
        (
            "data",
            &[
                "kind",
                "classes",
                "per_class_train",
                "per_class_test",
                "side",
                "dir",
                "test_dir",
            ],
        ),
        ("trigger", &["shape", "size_frac", "color", "anchor"]),
        ("poison", &["target", "count"]),
        ("train", &["epochs", "batch_size", "learning_rate", "ptb_enabled"]),
        (
            "transforms",
            &[
                "scale_min",
                "scale_max",
                "angle_max_deg",
                "rotation_max_deg",
                "brightness_min",
                "brightness_max",
                "sigma_max",
                "gate_p",
                "compose_mode",
            ],
        ),
        (
            "eval_transforms",
            &[
                "scale_min",
                "scale_max",
                "angle_max_deg",
                "rotation_max_deg",
                "brightness_min",
                "brightness_max",
                "sigma_max",
                "gate_p",
                "compose_mode",
            ],
        ),
        ("eval", &["probes_per_run", "runs", "clean_checkpoint"]),
        ("output", &["dir"]),
    ]
}

fn check_known(map: &ConfigMap) -> Result<()> {
    for (section, key) in map.keys() {
        let ok = known_keys()
            .iter()
            .any(|(s, keys)| s == section && keys.contains(&key.as_str()));
        if !ok {
            bail!("unknown config entry [{section}] {key}");
        }
    }
    Ok(())
}

fn ranges_from(map: &ConfigMap, section: &str, base: TransformRanges) -> Result<TransformRanges> {
    let compose_mode = match map
        .get(&(section.to_string(), "compose_mode".to_string()))
        .map(String::as_str)
    {
        None => base.compose_mode,
        Some("all") => ComposeMode::All,
        Some("sample_one") => ComposeMode::SampleOne,
        Some(other) => bail!("[{section}] compose_mode must be all or sample_one, got {other:?}"),
    };
    Ok(TransformRanges {
        scale_min: parse_value(map, section, "scale_min", base.scale_min)?,
        scale_max: parse_value(map, section, "scale_max", base.scale_max)?,
        angle_max_deg: parse_value(map, section, "angle_max_deg", base.angle_max_deg)?,
        rotation_max_deg: parse_value(map, section, "rotation_max_deg", base.rotation_max_deg)?,
        brightness_min: parse_value(map, section, "brightness_min", base.brightness_min)?,
        brightness_max: parse_value(map, section, "brightness_max", base.brightness_max)?,
        sigma_max: parse_value(map, section, "sigma_max", base.sigma_max)?,
        gate_p: parse_value(map, section, "gate_p", base.gate_p)?,
        compose_mode,
    })
}

impl ExperimentConfig {
    /// Builds the typed config from a raw map, validating every field.
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        check_known(map)?;
        let d = ExperimentConfig::default();

        let seed = parse_value(map, "", "seed", d.seed)?;

        let kind = map
            .get(&("data".into(), "kind".into()))
            .map(String::as_str)
            .unwrap_or("synth");
        let data = match kind {
            "synth" => DataSource::Synth {
                classes: parse_value(map, "data", "classes", 10)?,
                per_class_train: parse_value(map, "data", "per_class_train", 100)?,
                per_class_test: parse_value(map, "data", "per_class_test", 20)?,
                side: parse_value(map, "data", "side", 64)?,
            },
            "dir" => {
                let dir = parse_opt_path(map, "data", "dir")
                    .ok_or_else(|| anyhow!("[data] kind = dir requires a dir entry"))?;
                let test_dir = parse_opt_path(map, "data", "test_dir")
                    .ok_or_else(|| anyhow!("[data] kind = dir requires a test_dir entry"))?;
                DataSource::Dir { dir, test_dir }
            }
            other => bail!("[data] kind must be synth or dir, got {other:?}"),
        };

        let shape = match map
            .get(&("trigger".into(), "shape".into()))
            .map(String::as_str)
            .unwrap_or("square")
        {
            "square" => TriggerShape::Square,
            "triangle" => TriggerShape::Triangle,
            "glasses" => TriggerShape::Glasses,
            other => bail!("[trigger] shape must be square, triangle, or glasses, got {other:?}"),
        };
        let size_frac = parse_value(map, "trigger", "size_frac", d.trigger.size_frac)?;
        let color = match map.get(&("trigger".into(), "color".into())) {
            None => d.trigger.color,
            Some(raw) => parse_tuple::<3>(raw, "[trigger] color")?,
        };
        let anchor = match map
            .get(&("trigger".into(), "anchor".into()))
            .map(String::as_str)
        {
            None => default_anchor(shape, size_frac),
            Some("forehead") => trigger::anchor::FOREHEAD,
            Some("chin") => trigger::anchor::CHIN,
            Some(raw) => {
                let [x, y] = parse_tuple::<2>(raw, "[trigger] anchor")?;
                (x, y)
            }
        };

        let cfg = ExperimentConfig {
            seed,
            data,
            trigger: TriggerConfig {
                shape,
                size_frac,
                color,
                anchor,
            },
            poison_target: parse_value(map, "poison", "target", d.poison_target)?,
            poison_count: parse_value(map, "poison", "count", d.poison_count)?,
            train: TrainSection {
                epochs: parse_value(map, "train", "epochs", d.train.epochs)?,
                batch_size: parse_value(map, "train", "batch_size", d.train.batch_size)?,
                learning_rate: parse_value(map, "train", "learning_rate", d.train.learning_rate)?,
                ptb_enabled: parse_value(map, "train", "ptb_enabled", d.train.ptb_enabled)?,
            },
            transforms: ranges_from(map, "transforms", TransformRanges::default())?,
            eval_transforms: if map.keys().any(|(s, _)| s == "eval_transforms") {
                Some(ranges_from(
                    map,
                    "eval_transforms",
                    ranges_from(map, "transforms", TransformRanges::default())?,
                )?)
            } else {
                None
            },
            eval: EvalSection {
                probes_per_run: parse_value(map, "eval", "probes_per_run", d.eval.probes_per_run)?,
                runs: parse_value(map, "eval", "runs", d.eval.runs)?,
                clean_checkpoint: parse_opt_path(map, "eval", "clean_checkpoint"),
            },
            out_dir: parse_opt_path(map, "output", "dir").unwrap_or(d.out_dir),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_map(text)?)
    }

    /// Checks numeric invariants and — for directory data — path existence.
    pub fn validate(&self) -> Result<()> {
        self.transforms
            .validate()
            .map_err(|e| anyhow!("[transforms] {e}"))?;
        if let Some(r) = &self.eval_transforms {
            r.validate().map_err(|e| anyhow!("[eval_transforms] {e}"))?;
        }
        if !(self.trigger.size_frac > 0.0 && self.trigger.size_frac <= 1.0) {
            bail!("[trigger] size_frac must lie in (0, 1]");
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || self.train.learning_rate <= 0.0
        {
            bail!("[train] epochs, batch_size, and learning_rate must be positive");
        }
        if self.eval.probes_per_run == 0 || self.eval.runs == 0 {
            bail!("[eval] probes_per_run and runs must be positive");
        }
        match &self.data {
            DataSource::Synth {
                classes,
                per_class_train,
                per_class_test,
                side,
            } => {
                if *classes < 2 || *per_class_train == 0 || *per_class_test == 0 || *side < 4 {
                    bail!("[data] synth needs >= 2 classes, positive counts, side >= 4");
                }
                if self.poison_target >= *classes {
                    bail!(
                        "[poison] target {} is out of range for {} classes",
                        self.poison_target,
                        classes
                    );
                }
            }
            DataSource::Dir { dir, test_dir } => {
                for p in [dir, test_dir] {
                    if !p.exists() {
                        bail!("[data] path {} does not exist", p.display());
                    }
                }
            }
        }
        if let Some(ckpt) = &self.eval.clean_checkpoint {
            if !ckpt.exists() {
                bail!("[eval] clean_checkpoint {} does not exist", ckpt.display());
            }
        }
        Ok(())
    }

    /// Canonical textual form; parsing it reproduces this config exactly.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        s.push('\n');
        match &self.data {
            DataSource::Synth {
                classes,
                per_class_train,
                per_class_test,
                side,
            } => {
                let _ = writeln!(s, "[data]");
                let _ = writeln!(s, "kind = synth");
                let _ = writeln!(s, "classes = {classes}");
                let _ = writeln!(s, "per_class_train = {per_class_train}");
                let _ = writeln!(s, "per_class_test = {per_class_test}");
                let _ = writeln!(s, "side = {side}");
            }
            DataSource::Dir { dir, test_dir } => {
                let _ = writeln!(s, "[data]");
                let _ = writeln!(s, "kind = dir");
                let _ = writeln!(s, "dir = {}", dir.display());
                let _ = writeln!(s, "test_dir = {}", test_dir.display());
            }
        }
        let shape = match self.trigger.shape {
            TriggerShape::Square => "square",
            TriggerShape::Triangle => "triangle",
            TriggerShape::Glasses => "glasses",
        };
        let _ = writeln!(s, "\n[trigger]");
        let _ = writeln!(s, "shape = {shape}");
        let _ = writeln!(s, "size_frac = {}", self.trigger.size_frac);
        let _ = writeln!(
            s,
            "color = {},{},{}",
            self.trigger.color[0], self.trigger.color[1], self.trigger.color[2]
        );
        let _ = writeln!(
            s,
            "anchor = {},{}",
            self.trigger.anchor.0, self.trigger.anchor.1
        );
        let _ = writeln!(s, "\n[poison]");
        let _ = writeln!(s, "target = {}", self.poison_target);
        let _ = writeln!(s, "count = {}", self.poison_count);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", self.train.epochs);
        let _ = writeln!(s, "batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(s, "ptb_enabled = {}", self.train.ptb_enabled);
        write_ranges(&mut s, "transforms", &self.transforms);
        if let Some(r) = &self.eval_transforms {
            write_ranges(&mut s, "eval_transforms", r);
        }
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "probes_per_run = {}", self.eval.probes_per_run);
        let _ = writeln!(s, "runs = {}", self.eval.runs);
        if let Some(p) = &self.eval.clean_checkpoint {
            let _ = writeln!(s, "clean_checkpoint = {}", p.display());
        }
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        s
    }

    /// The trigger described by the `[trigger]` section.
    pub fn build_trigger(&self) -> Result<Trigger> {
        let mut t = match self.trigger.shape {
            TriggerShape::Square => trigger::make_square(self.trigger.size_frac, self.trigger.color),
            TriggerShape::Triangle => {
                trigger::make_triangle(self.trigger.size_frac, self.trigger.color)
            }
            TriggerShape::Glasses => {
                trigger::make_glasses(self.trigger.size_frac, self.trigger.color)
            }
        }
        .context("[trigger]")?;
        t.anchor_x = self.trigger.anchor.0;
        t.anchor_y = self.trigger.anchor.1;
        Ok(t)
    }

    /// Seed for a named consumer, derived from the global seed.
    pub fn derived_seed(&self, domain_tag: u64) -> u64 {
        StreamKey::new(self.seed).child(domain_tag).value()
    }

    pub fn poison_seed(&self) -> u64 {
        self.derived_seed(domain::POISON)
    }

    pub fn train_seed(&self) -> u64 {
        self.derived_seed(domain::INIT)
    }

    pub fn eval_seed(&self) -> u64 {
        self.derived_seed(domain::PROBE_SELECT)
    }

    pub fn synth_seed(&self) -> u64 {
        self.derived_seed(domain::SYNTH)
    }

    /// Ranges used for complex-scene probes.
    pub fn probe_ranges(&self) -> TransformRanges {
        self.eval_transforms.unwrap_or(self.transforms)
    }
}

fn default_anchor(shape: TriggerShape, size_frac: f64) -> (f64, f64) {
    match shape {
        TriggerShape::Square | TriggerShape::Triangle => trigger::anchor::FOREHEAD,
        TriggerShape::Glasses => ((1.0 - size_frac) / 2.0, 0.30),
    }
}

fn write_ranges(s: &mut String, section: &str, r: &TransformRanges) {
    let _ = writeln!(s, "\n[{section}]");
    let _ = writeln!(s, "scale_min = {}", r.scale_min);
    let _ = writeln!(s, "scale_max = {}", r.scale_max);
    let _ = writeln!(s, "angle_max_deg = {}", r.angle_max_deg);
    let _ = writeln!(s, "rotation_max_deg = {}", r.rotation_max_deg);
    let _ = writeln!(s, "brightness_min = {}", r.brightness_min);
    let _ = writeln!(s, "brightness_max = {}", r.brightness_max);
    let _ = writeln!(s, "sigma_max = {}", r.sigma_max);
    let _ = writeln!(s, "gate_p = {}", r.gate_p);
    let mode = match r.compose_mode {
        ComposeMode::All => "all",
        ComposeMode::SampleOne => "sample_one",
    };
    let _ = writeln!(s, "compose_mode = {mode}");
}

/// Reads and validates a config file, or the built-in default when no path
/// is given.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut map = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            parse_map(&text)?
        }
        None => parse_map(&ExperimentConfig::default().serialize())?,
    };
    for spec in sets {
        apply_set(&mut map, spec)?;
    }
    ExperimentConfig::from_map(&map)
}
