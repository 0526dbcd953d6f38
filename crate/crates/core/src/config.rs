//! Line-oriented `key = value` run configuration.
//!
//! Each line is a TOML key/value pair; `[section]` lines prefix the keys that follow.
//! Unknown keys, repeated keys, type mismatches and out-of-range values are errors
//! that carry the offending line and key.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::aligner::Stage1Schedule;
use crate::encoder::{EncoderKind, EncoderSpec, DEFAULT_SURROGATE_SEED};
use crate::error::{Error, Result};
use crate::geometry::{default_angles, Averaging, ViewSpec};
use crate::prompts::{SegResolution, Stage2Schedule};
use crate::synth::{AnomalyKind, Category, SynthSpec};

/// Which categories train and which are evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub train: Vec<Category>,
    /// Empty means every generated category not used for training.
    pub test: Vec<Category>,
}

impl Protocol {
    pub fn test_categories(&self, generated: &[Category]) -> Vec<Category> {
        if self.test.is_empty() {
            generated.iter().copied().filter(|c| !self.train.contains(c)).collect()
        } else {
            self.test.clone()
        }
    }
}

/// Config-list expansions, one report per point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sweep {
    pub view_counts: Vec<usize>,
    pub prompt_lengths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub out_dir: PathBuf,
    pub views: ViewSpec,
    pub averaging: Averaging,
    pub encoder: EncoderSpec,
    /// Directory of A3FC files named after the samples, used when the encoder is `cached`.
    pub feature_dir: Option<PathBuf>,
    pub aligner_hidden: usize,
    pub stage1: Stage1Schedule,
    pub stage2: Stage2Schedule,
    pub tau: f64,
    pub prompt_length: usize,
    pub alpha: f64,
    pub pro_limit: f64,
    pub synth: SynthSpec,
    pub protocol: Protocol,
    pub sweep: Sweep,
    pub bench_reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            out_dir: PathBuf::from("run"),
            views: ViewSpec::default(),
            averaging: Averaging::AllViews,
            encoder: EncoderSpec::default(),
            feature_dir: None,
            aligner_hidden: 64,
            stage1: Stage1Schedule::default(),
            stage2: Stage2Schedule::default(),
            tau: 0.07,
            prompt_length: 12,
            alpha: 0.5,
            pro_limit: 0.3,
            synth: SynthSpec::default(),
            protocol: Protocol { train: vec![Category::Sphere], test: Vec::new() },
            sweep: Sweep::default(),
            bench_reps: 30,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for data, initialization and shuffling"),
    ("threads", "worker threads, 0 = automatic"),
    ("out_dir", "experiment directory"),
    ("views.count", "number of views at the default angles"),
    ("views.angles", "explicit view angles in radians"),
    ("views.height", "render height in pixels"),
    ("views.width", "render width in pixels"),
    ("views.scale", "orthographic scale"),
    ("views.averaging", "`all` (divide by V) or `visible`"),
    ("encoder.kind", "`surrogate` or `cached`"),
    ("encoder.seed", "surrogate projection seed"),
    ("encoder.dim", "feature dimension d"),
    ("encoder.patch", "patch size in pixels"),
    ("encoder.stats_weight", "surrogate weight of patch statistics"),
    ("encoder.feature_dir", "directory of A3FC caches for the cached encoder"),
    ("aligner.hidden", "aligner MLP hidden width"),
    ("schedule.align_epochs", "stage 1 epochs E1"),
    ("schedule.scr_start", "first reweighted stage 1 epoch"),
    ("schedule.prompt_epochs", "stage 2 epochs E2"),
    ("schedule.con_start", "first contrastive stage 2 epoch"),
    ("scr.lambda", "reweighting strength λ"),
    ("scr.normalize", "normalize rows before the consistency matrix"),
    ("scr.detach", "treat SCR weights as constants"),
    ("train.lr", "Adam learning rate, both stages"),
    ("train.batch", "mini-batch size, both stages"),
    ("prompt.tau", "temperature τ"),
    ("prompt.length", "prompt length (metadata)"),
    ("prompt.lambda_con", "contrastive weight λ_con"),
    ("prompt.tau_in_maps", "divide 2D map logits by τ"),
    ("prompt.seg_resolution", "`image` or `patch`"),
    ("loss.dice_eps", "Dice smoothing"),
    ("loss.focal_gamma", "focal exponent"),
    ("loss.focal_alpha", "focal class weight"),
    ("fusion.alpha", "branch fusion weight α"),
    ("eval.pro_limit", "FPR integration limit for PRO"),
    ("synth.categories", "generated categories"),
    ("synth.points", "points per cloud"),
    ("synth.train_normal", "normal training samples per category"),
    ("synth.train_anomalous", "anomalous training samples per category"),
    ("synth.test_normal", "normal test samples per category"),
    ("synth.test_anomalous", "anomalous test samples per category"),
    ("synth.kinds", "anomaly kinds"),
    ("synth.fraction", "anomalous point fraction"),
    ("synth.depth", "anomaly displacement"),
    ("synth.noise", "surface jitter"),
    ("experiment.train", "training categories"),
    ("experiment.test", "test categories, default the rest"),
    ("sweep.view_counts", "view counts to sweep"),
    ("sweep.prompt_lengths", "prompt lengths to sweep"),
    ("bench.reps", "timed inference repetitions"),
];

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a Value,
}

impl Entry<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Config { line: self.line, key: self.key.to_string(), msg: msg.into() }
    }

    fn kind(&self) -> &'static str {
        self.value.type_str()
    }

    fn int(&self) -> Result<i64> {
        self.value.as_integer().ok_or_else(|| self.err(format!("expected an integer, found {}", self.kind())))
    }

    fn count(&self, min: usize) -> Result<usize> {
        let v = self.int()?;
        if v < min as i64 {
            return Err(self.err(format!("must be ≥ {min}, got {v}")));
        }
        Ok(v as usize)
    }

    fn float(&self) -> Result<f64> {
        match self.value {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(self.err(format!("expected a number, found {}", self.kind()))),
        }
    }

    fn float_in(&self, lo: f64, hi: f64, lo_open: bool) -> Result<f64> {
        let v = self.float()?;
        let ok = v <= hi && if lo_open { v > lo } else { v >= lo };
        if !ok || !v.is_finite() {
            let open = if lo_open { "(" } else { "[" };
            return Err(self.err(format!("must lie in {open}{lo}, {hi}], got {v}")));
        }
        Ok(v)
    }

    fn positive(&self) -> Result<f64> {
        self.float_in(0.0, f64::MAX, true)
    }

    fn boolean(&self) -> Result<bool> {
        self.value.as_bool().ok_or_else(|| self.err(format!("expected a boolean, found {}", self.kind())))
    }

    fn string(&self) -> Result<&str> {
        self.value.as_str().ok_or_else(|| self.err(format!("expected a string, found {}", self.kind())))
    }

    fn list(&self) -> Result<&Vec<Value>> {
        self.value.as_array().ok_or_else(|| self.err(format!("expected an array, found {}", self.kind())))
    }

    fn parsed<T: std::str::FromStr<Err = Error>>(&self) -> Result<Vec<T>> {
        self.list()?
            .iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| self.err("expected an array of strings"))?
                    .parse()
                    .map_err(|e: Error| self.err(e.to_string()))
            })
            .collect()
    }

    fn counts(&self, min: usize) -> Result<Vec<usize>> {
        self.list()?
            .iter()
            .map(|v| match v.as_integer() {
                Some(i) if i >= min as i64 => Ok(i as usize),
                _ => Err(self.err(format!("expected integers ≥ {min}"))),
            })
            .collect()
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = None;
    for (i, ch) in line.char_indices() {
        match (ch, in_str) {
            ('"' | '\'', None) => in_str = Some(ch),
            (c, Some(q)) if c == q => in_str = None,
            ('#', None) => return &line[..i],
            _ => {}
        }
    }
    line
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = inner.trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                    return Err(Error::Config { line: line_no, key: inner.to_string(), msg: "bad section name".into() });
                }
                section = name.to_string();
                continue;
            }
            let table: toml::Table = line.parse().map_err(|e: toml::de::Error| Error::Config {
                line: line_no,
                key: line.split('=').next().unwrap_or("").trim().to_string(),
                msg: e.message().to_string(),
            })?;
            let mut pairs = Vec::new();
            flatten(&section, &table, &mut pairs);
            for (key, value) in pairs {
                if let Some(first) = seen.insert(key.clone(), line_no) {
                    return Err(Error::Config { line: line_no, key, msg: format!("already set on line {first}") });
                }
                cfg.apply(&Entry { line: line_no, key: &key, value: &value })?;
            }
        }
        cfg.check(&seen)?;
        cfg.synth.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn apply(&mut self, e: &Entry) -> Result<()> {
        match e.key {
            "seed" => self.seed = e.int()? as u64,
            "threads" => self.threads = e.count(0)?,
            "out_dir" => self.out_dir = PathBuf::from(e.string()?),
            "views.count" => self.views.angles = default_angles(e.count(1)?),
            "views.angles" => {
                let a: Vec<f64> = e
                    .list()?
                    .iter()
                    .map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                    .collect::<Option<_>>()
                    .ok_or_else(|| e.err("expected an array of numbers"))?;
                if a.is_empty() {
                    return Err(e.err("at least one angle required"));
                }
                self.views.angles = a;
            }
            "views.height" => self.views.height = e.count(1)?,
            "views.width" => self.views.width = e.count(1)?,
            "views.scale" => self.views.scale = e.positive()?,
            "views.averaging" => {
                self.averaging = match e.string()? {
                    "all" => Averaging::AllViews,
                    "visible" => Averaging::VisibleViews,
                    s => return Err(e.err(format!("expected `all` or `visible`, got `{s}`"))),
                }
            }
            "encoder.kind" => {
                self.encoder.kind = match e.string()? {
                    "surrogate" => EncoderKind::Surrogate { seed: DEFAULT_SURROGATE_SEED },
                    "cached" => EncoderKind::Cached,
                    s => return Err(e.err(format!("expected `surrogate` or `cached`, got `{s}`"))),
                }
            }
            "encoder.seed" => self.encoder.kind = EncoderKind::Surrogate { seed: e.int()? as u64 },
            "encoder.dim" => self.encoder.dim = e.count(2)?,
            "encoder.patch" => self.encoder.patch_size = e.count(1)?,
            "encoder.stats_weight" => self.encoder.stats_weight = e.float_in(0.0, f64::MAX, false)?,
            "encoder.feature_dir" => self.feature_dir = Some(PathBuf::from(e.string()?)),
            "aligner.hidden" => self.aligner_hidden = e.count(1)?,
            "schedule.align_epochs" => self.stage1.epochs = e.count(0)?,
            "schedule.scr_start" => self.stage1.scr_start = e.count(0)?,
            "schedule.prompt_epochs" => self.stage2.epochs = e.count(0)?,
            "schedule.con_start" => self.stage2.con_start = e.count(0)?,
            "scr.lambda" => self.stage1.lambda = e.float_in(0.0, f64::MAX, false)?,
            "scr.normalize" => self.stage1.normalize_consistency = e.boolean()?,
            "scr.detach" => self.stage1.detach_weights = e.boolean()?,
            "train.lr" => {
                let lr = e.positive()?;
                self.stage1.adam.lr = lr;
                self.stage2.adam.lr = lr;
            }
            "train.batch" => {
                let b = e.count(1)?;
                self.stage1.batch_size = b;
                self.stage2.batch_size = b;
            }
            "prompt.tau" => self.tau = e.positive()?,
            "prompt.length" => self.prompt_length = e.count(1)?,
            "prompt.lambda_con" => self.stage2.lambda_con = e.float_in(0.0, f64::MAX, false)?,
            "prompt.tau_in_maps" => self.stage2.scoring.tau_in_maps = e.boolean()?,
            "prompt.seg_resolution" => {
                self.stage2.scoring.resolution = match e.string()? {
                    "image" => SegResolution::Image,
                    "patch" => SegResolution::Patch,
                    s => return Err(e.err(format!("expected `image` or `patch`, got `{s}`"))),
                }
            }
            "loss.dice_eps" => self.stage2.scoring.losses.dice_eps = e.positive()?,
            "loss.focal_gamma" => self.stage2.scoring.losses.focal_gamma = e.float_in(0.0, f64::MAX, false)?,
            "loss.focal_alpha" => self.stage2.scoring.losses.focal_alpha = e.float_in(0.0, 1.0, false)?,
            "fusion.alpha" => self.alpha = e.float_in(0.0, 1.0, false)?,
            "eval.pro_limit" => self.pro_limit = e.float_in(0.0, 1.0, true)?,
            "synth.categories" => self.synth.categories = e.parsed::<Category>()?,
            "synth.points" => self.synth.points = e.count(16)?,
            "synth.train_normal" => self.synth.train.normal = e.count(0)?,
            "synth.train_anomalous" => self.synth.train.anomalous = e.count(0)?,
            "synth.test_normal" => self.synth.test.normal = e.count(1)?,
            "synth.test_anomalous" => self.synth.test.anomalous = e.count(1)?,
            "synth.kinds" => self.synth.kinds = e.parsed::<AnomalyKind>()?,
            "synth.fraction" => self.synth.fraction = e.float_in(0.0, 0.3, true)?,
            "synth.depth" => self.synth.depth = e.positive()?,
            "synth.noise" => self.synth.noise = e.float_in(0.0, f64::MAX, false)?,
            "experiment.train" => self.protocol.train = e.parsed::<Category>()?,
            "experiment.test" => self.protocol.test = e.parsed::<Category>()?,
            "sweep.view_counts" => self.sweep.view_counts = e.counts(1)?,
            "sweep.prompt_lengths" => self.sweep.prompt_lengths = e.counts(1)?,
            "bench.reps" => self.bench_reps = e.count(30)?,
            _ => return Err(e.err("unknown key")),
        }
        Ok(())
    }

    /// Cross-key invariants, reported against the line of the key that breaks them.
    fn check(&self, seen: &HashMap<String, usize>) -> Result<()> {
        let at = |keys: &[&str]| -> (usize, String) {
            keys.iter()
                .find_map(|k| seen.get(*k).map(|&l| (l, k.to_string())))
                .unwrap_or((0, keys[0].to_string()))
        };
        let fail = |keys: &[&str], msg: String| {
            let (line, key) = at(keys);
            Err(Error::Config { line, key, msg })
        };
        if self.stage1.scr_start > self.stage1.epochs {
            return fail(
                &["schedule.scr_start", "schedule.align_epochs"],
                format!("activation after stage end ({} > {})", self.stage1.scr_start, self.stage1.epochs),
            );
        }
        if self.stage2.con_start > self.stage2.epochs {
            return fail(
                &["schedule.con_start", "schedule.prompt_epochs"],
                format!("activation after stage end ({} > {})", self.stage2.con_start, self.stage2.epochs),
            );
        }
        if !self.views.height.is_multiple_of(self.encoder.patch_size) || !self.views.width.is_multiple_of(self.encoder.patch_size) {
            return fail(
                &["encoder.patch", "views.height", "views.width"],
                format!(
                    "{}x{} images do not tile into {}-pixel patches",
                    self.views.height, self.views.width, self.encoder.patch_size
                ),
            );
        }
        if self.protocol.train.is_empty() {
            return fail(&["experiment.train"], "at least one training category required".into());
        }
        for c in self.protocol.train.iter().chain(&self.protocol.test) {
            if !self.synth.categories.contains(c) {
                return fail(
                    &["experiment.train", "experiment.test", "synth.categories"],
                    format!("category `{c}` is not generated"),
                );
            }
        }
        if self.protocol.test_categories(&self.synth.categories).is_empty() {
            return fail(&["experiment.test", "experiment.train"], "no test categories remain".into());
        }
        if self.synth.kinds.is_empty() {
            return fail(&["synth.kinds"], "at least one anomaly kind required".into());
        }
        if self.encoder.kind == EncoderKind::Cached && self.feature_dir.is_none() {
            return fail(&["encoder.kind"], "the cached encoder needs `encoder.feature_dir`".into());
        }
        Ok(())
    }

    /// Seeds derived from the master seed for each consumer.
    pub fn seeds(&self) -> Seeds {
        let s = self.seed;
        Seeds {
            synth: s,
            aligner: s.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
            stage1: s.wrapping_mul(0xBF58_476D_1CE4_E5B9).wrapping_add(2),
            prompts: s.wrapping_mul(0x94D0_49BB_1331_11EB).wrapping_add(3),
            stage2: s.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(4),
        }
    }

    /// Schedules with derived seeds and the shared optimizer settings filled in.
    pub fn schedules(&self) -> (Stage1Schedule, Stage2Schedule) {
        let seeds = self.seeds();
        let s1 = Stage1Schedule { seed: seeds.stage1, ..self.stage1.clone() };
        let s2 = Stage2Schedule { seed: seeds.stage2, ..self.stage2.clone() };
        (s1, s2)
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, out_dir: Option<PathBuf>, threads: Option<usize>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out_dir {
            self.out_dir = o;
        }
        if let Some(t) = threads {
            self.threads = t;
        }
        self.synth.seed = self.seed;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub synth: u64,
    pub aligner: u64,
    pub stage1: u64,
    pub prompts: u64,
    pub stage2: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_of(text: &str) -> (usize, String, String) {
        match RunConfig::parse(text) {
            Err(Error::Config { line, key, msg }) => (line, key, msg),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn dotted_and_sectioned_keys() {
        let c = RunConfig::parse("scr.lambda = 1.0\n[prompt]\ntau = 0.1 # comment\nlength = 8\n").unwrap();
        assert_eq!(c.stage1.lambda, 1.0);
        assert_eq!(c.tau, 0.1);
        assert_eq!(c.prompt_length, 8);
        let c = RunConfig::parse("scr.lambda = 2\nsynth.categories = [\"box\", \"torus\"]\nexperiment.train = [\"box\"]").unwrap();
        assert_eq!(c.stage1.lambda, 2.0);
        assert_eq!(c.protocol.test_categories(&c.synth.categories), vec![Category::Torus]);
    }

    #[test]
    fn activation_after_end() {
        let (line, key, msg) = err_of("\nschedule.scr_start = 300\n");
        assert_eq!((line, key.as_str()), (2, "schedule.scr_start"));
        assert!(msg.contains("activation after stage end"));
        let (_, key, _) = err_of("schedule.prompt_epochs = 5");
        assert_eq!(key, "schedule.prompt_epochs");
    }

    #[test]
    fn strict_errors_name_key_and_line() {
        assert_eq!(err_of("seed = 1\nfoo.bar = 3").0, 2);
        assert_eq!(err_of("scr.lambda = \"one\"").1, "scr.lambda");
        let (line, key, msg) = err_of("seed = 1\nseed = 2");
        assert_eq!((line, key.as_str()), (2, "seed"));
        assert!(msg.contains("line 1"));
        assert_eq!(err_of("fusion.alpha = 1.5").1, "fusion.alpha");
        assert_eq!(err_of("synth.fraction = 0").1, "synth.fraction");
        assert_eq!(err_of("views.count = ").0, 1);
        assert_eq!(err_of("synth.kinds = [\"scratch\"]").1, "synth.kinds");
    }

    #[test]
    fn hash_inside_string_is_kept() {
        let c = RunConfig::parse("out_dir = \"runs/#1\"").unwrap();
        assert_eq!(c.out_dir, PathBuf::from("runs/#1"));
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let sample = |k: &str| -> &str {
            match k {
                "out_dir" | "encoder.feature_dir" => "\"x\"",
                "views.averaging" => "\"visible\"",
                "encoder.kind" => "\"surrogate\"",
                "prompt.seg_resolution" => "\"patch\"",
                "views.angles" => "[0.0, 1.0]",
                "synth.categories" => "[\"sphere\", \"box\"]",
                "experiment.train" => "[\"sphere\"]",
                "experiment.test" => "[\"box\"]",
                "synth.kinds" => "[\"dent\"]",
                "sweep.view_counts" | "sweep.prompt_lengths" => "[1, 3]",
                "scr.normalize" | "scr.detach" | "prompt.tau_in_maps" => "true",
                "schedule.align_epochs" => "250",
                "schedule.prompt_epochs" => "15",
                "views.height" | "views.width" => "84",
                "encoder.patch" => "14",
                "synth.points" => "500",
                "fusion.alpha" | "loss.focal_alpha" | "eval.pro_limit" | "synth.fraction" => "0.2",
                "encoder.dim" => "8",
                "bench.reps" => "30",
                _ => "1",
            }
        };
        for (k, _) in KEYS {
            let text = format!("{k} = {}", sample(k));
            RunConfig::parse(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
        }
    }
}
