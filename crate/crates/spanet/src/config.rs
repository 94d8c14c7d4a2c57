//! Run configuration: `[section]` headers and `key = value` lines.
//!
//! Blank lines and lines starting with `#` or `;` are ignored. Values are
//! taken verbatim after trimming (optional surrounding double quotes are
//! removed). Unknown sections, unknown keys and repeated keys are errors.
//! [`RunConfig::to_text`] writes every key with its effective value, and
//! parsing that text gives back an equal config.
//!
//! | section    | key                | default                 |
//! |------------|--------------------|-------------------------|
//! | network    | preset             | `toy` (`toy`, `paper`)  |
//! |            | ratio              | 0.5                     |
//! |            | num_classes        | length of `data.classes`|
//! |            | input_size         | 64 toy, 512 paper       |
//! |            | attention_reduction| 8                       |
//! | training   | epochs             | 30                      |
//! |            | batch_size         | 32                      |
//! |            | loss               | `circle` (`cross_entropy`) |
//! |            | gamma, margin      | 32, 0.25                |
//! |            | weighting          | `self_paced` (`pinned`) |
//! |            | momentum           | 0.9                     |
//! |            | schedule           | `cosine` (`plateau`, `constant`) |
//! |            | lr                 | 0.001 circle, 0.01 cross-entropy |
//! |            | lr_min             | 0                       |
//! |            | period             | `epochs`                |
//! |            | plateau_factor     | 0.1                     |
//! |            | plateau_patience   | 5                       |
//! |            | augment            | false                   |
//! |            | seed               | 0                       |
//! | data       | manifest           | `data/manifest.csv`     |
//! |            | classes            | all eleven defect classes |
//! |            | mean, std          | 0.5, 0.5 (one value or three) |
//! |            | per_class          | 10                      |
//! |            | image_size         | 64                      |
//! |            | gen_seed           | 0                       |
//! |            | val_fraction       | 0                       |
//! |            | test_fraction      | 0.2                     |
//! |            | background, texture, noise, contrast | 110, 10, 4, 80 |
//! | output     | run_dir            | `runs/default`          |
//! |            | plot               | false                   |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use spanet_core::data::{DefectClass, GeneratorParams, Normalization};
use spanet_core::loss::{CircleLossConfig, Weighting};
use spanet_core::network::NetworkConfig;
use spanet_core::optim::LrSchedule;
use spanet_core::train::{LossKind, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossName {
    Circle,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleName {
    Cosine,
    Plateau,
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub preset: Preset,
    pub ratio: f64,
    pub num_classes: usize,
    pub input_size: usize,
    pub attention_reduction: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossName,
    pub gamma: f64,
    pub margin: f64,
    pub weighting: Weighting,
    pub momentum: f64,
    pub schedule: ScheduleName,
    pub lr: f64,
    pub lr_min: f64,
    pub period: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub augment: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub manifest: PathBuf,
    pub classes: Vec<String>,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub per_class: usize,
    pub image_size: usize,
    pub gen_seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub generator: GeneratorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub run_dir: PathBuf,
    pub plot: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub data: DataSection,
    pub output: OutputSection,
}

pub const DEFAULT_LR_CIRCLE: f64 = 0.001;
pub const DEFAULT_LR_CROSS_ENTROPY: f64 = 0.01;

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_entries(&[]).expect("defaults are valid")
    }
}

struct Entry<'a> {
    section: &'a str,
    key: &'a str,
    value: &'a str,
    line: usize,
}

fn split_lines(text: &str) -> Result<Vec<Entry<'_>>> {
    let mut entries: Vec<Entry> = Vec::new();
    let mut section: Option<&str> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with(';') {
            continue;
        }
        if let Some(name) = t.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| CliError::Config(format!("line {line}: unterminated section header {t:?}")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(CliError::Config(format!("line {line}: unknown section [{name}]")));
            }
            section = Some(name);
            continue;
        }
        let (key, value) = t
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {line}: expected `key = value`, got {t:?}")))?;
        let key = key.trim();
        let section = section.ok_or_else(|| CliError::Config(format!("line {line}: key {key} appears before any [section]")))?;
        let value = value.trim();
        let value = value.strip_prefix('"').and_then(|v| v.strip_suffix('"')).unwrap_or(value);
        if let Some(prev) = entries.iter().find(|e| e.section == section && e.key == key) {
            return Err(CliError::Config(format!(
                "line {line}: [{section}] {key} is already set on line {}",
                prev.line
            )));
        }
        entries.push(Entry { section, key, value, line });
    }
    Ok(entries)
}

const SECTIONS: [&str; 4] = ["network", "training", "data", "output"];

impl Entry<'_> {
    /// Where the entry came from: a file line, or 0 for a command-line override.
    fn origin(&self) -> String {
        if self.line == 0 {
            "override".into()
        } else {
            format!("line {}", self.line)
        }
    }
}

fn bad(e: &Entry, what: &str) -> CliError {
    CliError::Config(format!("{}: [{}] {}: {what}, got {:?}", e.origin(), e.section, e.key, e.value))
}

fn num<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| bad(e, "not a valid number"))
}

fn real(e: &Entry) -> Result<f64> {
    let v: f64 = num(e)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(e, "must be finite"))
    }
}

fn flag(e: &Entry) -> Result<bool> {
    match e.value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(e, "expected true or false")),
    }
}

fn triple(e: &Entry) -> Result<[f64; 3]> {
    let vals = e
        .value
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad(e, "expected one or three numbers")))
        .collect::<Result<Vec<_>>>()?;
    match vals[..] {
        [v] => Ok([v; 3]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(bad(e, "expected one or three numbers")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&split_lines(text)?)
    }

    /// Parses `text`, then applies `section.key=value` overrides, each
    /// replacing any value the text set for that key.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut entries = split_lines(text)?;
        for o in overrides {
            let err = || CliError::Config(format!("override {o:?}: expected section.key=value"));
            let (path, value) = o.split_once('=').ok_or_else(err)?;
            let (section, key) = path.trim().split_once('.').ok_or_else(err)?;
            let section = SECTIONS
                .iter()
                .find(|s| **s == section)
                .ok_or_else(|| CliError::Config(format!("override {o:?}: unknown section [{section}]")))?;
            entries.retain(|e| !(e.section == *section && e.key == key));
            entries.push(Entry { section, key, value: value.trim(), line: 0 });
        }
        Self::from_entries(&entries)
    }

    /// Reads a config file; `None` means all defaults.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        Self::parse_with_overrides(&text, overrides).map_err(|e| match (e, path) {
            (CliError::Config(msg), Some(p)) => CliError::Config(format!("{}: {msg}", p.display())),
            (other, _) => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut n = NetworkSection {
            preset: Preset::Toy,
            ratio: 0.5,
            num_classes: 0,
            input_size: 0,
            attention_reduction: spanet_core::blocks::AttentionConfig::DEFAULT_REDUCTION,
        };
        let mut t = TrainingSection {
            epochs: 30,
            batch_size: TrainConfig::DEFAULT_BATCH,
            loss: LossName::Circle,
            gamma: CircleLossConfig::default().gamma,
            margin: CircleLossConfig::default().margin,
            weighting: Weighting::SelfPaced,
            momentum: TrainConfig::DEFAULT_MOMENTUM,
            schedule: ScheduleName::Cosine,
            lr: f64::NAN,
            lr_min: 0.0,
            period: 0,
            plateau_factor: LrSchedule::PLATEAU_FACTOR,
            plateau_patience: LrSchedule::PLATEAU_PATIENCE,
            augment: false,
            seed: 0,
        };
        let mut d = DataSection {
            manifest: PathBuf::from("data/manifest.csv"),
            classes: DefectClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            mean: Normalization::default().mean,
            std: Normalization::default().std,
            per_class: 10,
            image_size: 64,
            gen_seed: 0,
            val_fraction: 0.0,
            test_fraction: 0.2,
            generator: GeneratorParams::default(),
        };
        let mut o = OutputSection { run_dir: PathBuf::from("runs/default"), plot: false };
        let (mut lr_set, mut period_set) = (false, false);

        for e in entries {
            match (e.section, e.key) {
                ("network", "preset") => {
                    n.preset = match e.value {
                        "toy" => Preset::Toy,
                        "paper" => Preset::Paper,
                        _ => return Err(bad(e, "expected toy or paper")),
                    }
                }
                ("network", "ratio") => n.ratio = real(e)?,
                ("network", "num_classes") => n.num_classes = num(e)?,
                ("network", "input_size") => n.input_size = num(e)?,
                ("network", "attention_reduction") => n.attention_reduction = num(e)?,
                ("training", "epochs") => t.epochs = num(e)?,
                ("training", "batch_size") => t.batch_size = num(e)?,
                ("training", "loss") => {
                    t.loss = match e.value {
                        "circle" => LossName::Circle,
                        "cross_entropy" => LossName::CrossEntropy,
                        _ => return Err(bad(e, "expected circle or cross_entropy")),
                    }
                }
                ("training", "gamma") => t.gamma = real(e)?,
                ("training", "margin") => t.margin = real(e)?,
                ("training", "weighting") => {
                    t.weighting = match e.value {
                        "self_paced" => Weighting::SelfPaced,
                        "pinned" => Weighting::Pinned,
                        _ => return Err(bad(e, "expected self_paced or pinned")),
                    }
                }
                ("training", "momentum") => t.momentum = real(e)?,
                ("training", "schedule") => {
                    t.schedule = match e.value {
                        "cosine" => ScheduleName::Cosine,
                        "plateau" => ScheduleName::Plateau,
                        "constant" => ScheduleName::Constant,
                        _ => return Err(bad(e, "expected cosine, plateau or constant")),
                    }
                }
                ("training", "lr") => {
                    t.lr = real(e)?;
                    lr_set = true;
                }
                ("training", "lr_min") => t.lr_min = real(e)?,
                ("training", "period") => {
                    t.period = num(e)?;
                    period_set = true;
                }
                ("training", "plateau_factor") => t.plateau_factor = real(e)?,
                ("training", "plateau_patience") => t.plateau_patience = num(e)?,
                ("training", "augment") => t.augment = flag(e)?,
                ("training", "seed") => t.seed = num(e)?,
                ("data", "manifest") => d.manifest = PathBuf::from(e.value),
                ("data", "classes") => {
                    d.classes = e.value.split(',').map(|c| c.trim().to_string()).collect();
                    if d.classes.iter().any(String::is_empty) {
                        return Err(bad(e, "class names must be non-empty"));
                    }
                }
                ("data", "mean") => d.mean = triple(e)?,
                ("data", "std") => d.std = triple(e)?,
                ("data", "per_class") => d.per_class = num(e)?,
                ("data", "image_size") => d.image_size = num(e)?,
                ("data", "gen_seed") => d.gen_seed = num(e)?,
                ("data", "val_fraction") => d.val_fraction = real(e)?,
                ("data", "test_fraction") => d.test_fraction = real(e)?,
                ("data", "background") => d.generator.background = real(e)?,
                ("data", "texture") => d.generator.texture = real(e)?,
                ("data", "noise") => d.generator.noise = real(e)?,
                ("data", "contrast") => d.generator.contrast = real(e)?,
                ("output", "run_dir") => o.run_dir = PathBuf::from(e.value),
                ("output", "plot") => o.plot = flag(e)?,
                (section, key) => {
                    return Err(CliError::Config(format!("{}: unknown key [{section}] {key}", e.origin())));
                }
            }
        }

        if !entries.iter().any(|e| e.section == "network" && e.key == "num_classes") {
            n.num_classes = d.classes.len();
        }
        if n.input_size == 0 && !entries.iter().any(|e| e.section == "network" && e.key == "input_size") {
            n.input_size = match n.preset {
                Preset::Toy => 64,
                Preset::Paper => 512,
            };
        }
        if !lr_set {
            t.lr = match t.loss {
                LossName::Circle => DEFAULT_LR_CIRCLE,
                LossName::CrossEntropy => DEFAULT_LR_CROSS_ENTROPY,
            };
        }
        if !period_set {
            t.period = t.epochs;
        }
        let cfg = RunConfig { network: n, training: t, data: d, output: o };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CliError::Config(m));
        let (n, t, d) = (&self.network, &self.training, &self.data);
        if n.num_classes != d.classes.len() {
            return err(format!(
                "[network] num_classes = {} but [data] classes lists {} names",
                n.num_classes,
                d.classes.len()
            ));
        }
        let mut keys: Vec<String> = d.classes.iter().map(|c| crate::manifest::name_key(c)).collect();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return err("[data] classes: duplicate class name".into());
        }
        if t.epochs == 0 {
            return err("[training] epochs must be positive".into());
        }
        if !(0.0..=1.0).contains(&d.val_fraction)
            || !(0.0..=1.0).contains(&d.test_fraction)
            || d.val_fraction + d.test_fraction > 1.0
        {
            return err("[data] val_fraction and test_fraction must be in [0, 1] and sum to at most 1".into());
        }
        if d.image_size < spanet_core::data::MIN_SIDE {
            return err(format!("[data] image_size must be at least {}", spanet_core::data::MIN_SIDE));
        }
        self.network_config().validate()?;
        self.train_config().validate()?;
        self.normalization().validate()?;
        Ok(())
    }

    pub fn network_config(&self) -> NetworkConfig {
        let n = &self.network;
        let mut cfg = match n.preset {
            Preset::Toy => NetworkConfig::toy(n.num_classes),
            Preset::Paper => NetworkConfig::paper(n.num_classes),
        };
        cfg.input_height = n.input_size;
        cfg.input_width = n.input_size;
        cfg.ratio = n.ratio;
        cfg.attention_reduction = n.attention_reduction;
        cfg
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        let loss = match t.loss {
            LossName::Circle => LossKind::Circle(CircleLossConfig { gamma: t.gamma, margin: t.margin, weighting: t.weighting }),
            LossName::CrossEntropy => LossKind::CrossEntropy,
        };
        let schedule = match t.schedule {
            ScheduleName::Cosine => LrSchedule::Cosine { lr_max: t.lr, lr_min: t.lr_min, period: t.period },
            ScheduleName::Plateau => LrSchedule::Plateau {
                lr: t.lr,
                factor: t.plateau_factor,
                patience: t.plateau_patience,
                lr_min: t.lr_min,
            },
            ScheduleName::Constant => LrSchedule::Constant { lr: t.lr },
        };
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            loss,
            momentum: t.momentum,
            schedule,
            augment: t.augment,
            seed: t.seed,
        }
    }

    pub fn normalization(&self) -> Normalization {
        Normalization { mean: self.data.mean, std: self.data.std }
    }

    /// The configured classes as generator classes; names outside the
    /// built-in taxonomy are a config error.
    pub fn defect_classes(&self) -> Result<Vec<DefectClass>> {
        self.data
            .classes
            .iter()
            .map(|c| {
                DefectClass::from_name(c)
                    .ok_or_else(|| CliError::Config(format!("[data] classes: {c:?} is not a defect class the generator knows")))
            })
            .collect()
    }

    /// Every key with its effective value.
    pub fn to_text(&self) -> String {
        let (n, t, d, o) = (&self.network, &self.training, &self.data, &self.output);
        let three = |v: [f64; 3]| format!("{}, {}, {}", v[0], v[1], v[2]);
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "[network]");
        let _ = writeln!(w, "preset = {}", match n.preset { Preset::Toy => "toy", Preset::Paper => "paper" });
        let _ = writeln!(w, "ratio = {}", n.ratio);
        let _ = writeln!(w, "num_classes = {}", n.num_classes);
        let _ = writeln!(w, "input_size = {}", n.input_size);
        let _ = writeln!(w, "attention_reduction = {}", n.attention_reduction);
        let _ = writeln!(w, "\n[training]");
        let _ = writeln!(w, "epochs = {}", t.epochs);
        let _ = writeln!(w, "batch_size = {}", t.batch_size);
        let _ = writeln!(w, "loss = {}", match t.loss { LossName::Circle => "circle", LossName::CrossEntropy => "cross_entropy" });
        let _ = writeln!(w, "gamma = {}", t.gamma);
        let _ = writeln!(w, "margin = {}", t.margin);
        let _ = writeln!(w, "weighting = {}", match t.weighting { Weighting::SelfPaced => "self_paced", Weighting::Pinned => "pinned" });
        let _ = writeln!(w, "momentum = {}", t.momentum);
        let _ = writeln!(
            w,
            "schedule = {}",
            match t.schedule { ScheduleName::Cosine => "cosine", ScheduleName::Plateau => "plateau", ScheduleName::Constant => "constant" }
        );
        let _ = writeln!(w, "lr = {}", t.lr);
        let _ = writeln!(w, "lr_min = {}", t.lr_min);
        let _ = writeln!(w, "period = {}", t.period);
        let _ = writeln!(w, "plateau_factor = {}", t.plateau_factor);
        let _ = writeln!(w, "plateau_patience = {}", t.plateau_patience);
        let _ = writeln!(w, "augment = {}", t.augment);
        let _ = writeln!(w, "seed = {}", t.seed);
        let _ = writeln!(w, "\n[data]");
        let _ = writeln!(w, "manifest = {}", d.manifest.display());
        let _ = writeln!(w, "classes = {}", d.classes.join(", "));
        let _ = writeln!(w, "mean = {}", three(d.mean));
        let _ = writeln!(w, "std = {}", three(d.std));
        let _ = writeln!(w, "per_class = {}", d.per_class);
        let _ = writeln!(w, "image_size = {}", d.image_size);
        let _ = writeln!(w, "gen_seed = {}", d.gen_seed);
        let _ = writeln!(w, "val_fraction = {}", d.val_fraction);
        let _ = writeln!(w, "test_fraction = {}", d.test_fraction);
        let _ = writeln!(w, "background = {}", d.generator.background);
        let _ = writeln!(w, "texture = {}", d.generator.texture);
        let _ = writeln!(w, "noise = {}", d.generator.noise);
        let _ = writeln!(w, "contrast = {}", d.generator.contrast);
        let _ = writeln!(w, "\n[output]");
        let _ = writeln!(w, "run_dir = {}", o.run_dir.display());
        let _ = writeln!(w, "plot = {}", o.plot);
        s
    }
}
