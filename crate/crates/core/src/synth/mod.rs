//! Deterministic synthetic shape datasets with labeled geometric anomalies.

mod anomaly;
mod shapes;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Sphere,
    Box,
    Cylinder,
    Torus,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Sphere, Category::Box, Category::Cylinder, Category::Torus];

    pub fn name(self) -> &'static str {
        match self {
            Category::Sphere => "sphere",
            Category::Box => "box",
            Category::Cylinder => "cylinder",
            Category::Torus => "torus",
        }
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
        match self {
            Category::Sphere => shapes::sphere(rng),
            Category::Box => shapes::rounded_box(rng),
            Category::Cylinder => shapes::rounded_cylinder(rng),
            Category::Torus => shapes::torus(rng),
        }
    }

    /// Three band colors.
    fn palette(self) -> [[f32; 3]; 3] {
        match self {
            Category::Sphere => [[0.85, 0.3, 0.25], [0.95, 0.8, 0.3], [0.3, 0.45, 0.85]],
            Category::Box => [[0.55, 0.75, 0.35], [0.9, 0.9, 0.85], [0.45, 0.3, 0.6]],
            Category::Cylinder => [[0.3, 0.7, 0.75], [0.9, 0.55, 0.2], [0.7, 0.7, 0.7]],
            Category::Torus => [[0.95, 0.6, 0.7], [0.35, 0.55, 0.3], [0.85, 0.85, 0.45]],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown category `{s}` (expected sphere, box, cylinder, torus)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AnomalyKind {
    Dent,
    Bump,
    Crack,
    MissingRegion,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [AnomalyKind::Dent, AnomalyKind::Bump, AnomalyKind::Crack, AnomalyKind::MissingRegion];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::Dent => "dent",
            AnomalyKind::Bump => "bump",
            AnomalyKind::Crack => "crack",
            AnomalyKind::MissingRegion => "missing-region",
        }
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown anomaly kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

/// Normal and anomalous sample counts for one split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSize {
    pub normal: usize,
    pub anomalous: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub categories: Vec<Category>,
    pub train: SplitSize,
    pub test: SplitSize,
    pub points: usize,
    pub kinds: Vec<AnomalyKind>,
    pub fraction: f64,
    /// Displacement of dents, bumps and cracks, relative to the shape's unit scale.
    pub depth: f64,
    /// Standard deviation of the per-point jitter along the normal.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            categories: Category::ALL.to_vec(),
            train: SplitSize { normal: 8, anomalous: 8 },
            test: SplitSize { normal: 6, anomalous: 6 },
            points: 4000,
            kinds: AnomalyKind::ALL.to_vec(),
            fraction: 0.06,
            depth: 0.2,
            noise: 0.003,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::invalid("no categories requested"));
        }
        if self.test.normal == 0 || self.test.anomalous == 0 {
            return Err(Error::invalid("test split needs at least one normal and one anomalous sample"));
        }
        if self.kinds.is_empty() {
            return Err(Error::invalid("no anomaly kinds"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 0.3) {
            return Err(Error::invalid(format!("anomaly fraction must lie in (0, 0.3], got {}", self.fraction)));
        }
        if self.points < 16 {
            return Err(Error::invalid(format!("at least 16 points per cloud required, got {}", self.points)));
        }
        if !(self.depth > 0.0 && self.depth.is_finite()) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("anomaly depth must be > 0 and noise ≥ 0"));
        }
        Ok(())
    }
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the dataset root, `<category>/<split>/<index>.a3pc`.
    pub path: PathBuf,
    pub split: Split,
    pub label: bool,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn category(&self) -> Result<Category> {
        self.path
            .components()
            .next()
            .and_then(|c| c.as_os_str().to_str())
            .ok_or_else(|| Error::invalid(format!("manifest path {} has no category", self.path.display())))?
            .parse()
    }
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.path.display(),
            e.split.name(),
            u8::from(e.label),
            e.seed
        ));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = |what: &str| Error::format("manifest", format!("line {}: {what}", n + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            let label = match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("label must be 0 or 1")),
            };
            Ok(ManifestEntry {
                path: PathBuf::from(f[0]),
                split: f[1].parse().map_err(|_| bad("bad split"))?,
                label,
                seed: f[3].parse().map_err(|_| bad("bad seed"))?,
            })
        })
        .collect()
}

pub fn load_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST_NAME);
    if !path.exists() {
        return Err(Error::MissingArtifact { stage: "gen", path });
    }
    parse_manifest(&fs::read_to_string(path)?)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_seed(base: u64, category: Category, split: Split, index: usize) -> u64 {
    mix(mix(mix(base) ^ category as u64) ^ ((split as u64) << 32 | index as u64))
}

/// Generates one cloud; the anomaly kind cycles through `spec.kinds` by index.
pub fn generate_sample(spec: &SynthSpec, category: Category, anomalous: bool, index: usize, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pts, normals): (Vec<[f64; 3]>, Vec<[f64; 3]>) = (0..spec.points).map(|_| category.sample(&mut rng)).unzip();
    if spec.noise > 0.0 {
        let noise = rand_distr::Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
        for (p, n) in pts.iter_mut().zip(&normals) {
            let e: f64 = rng.sample(noise);
            for k in 0..3 {
                p[k] += e * n[k];
            }
        }
    }
    let (kept, labels) = if anomalous {
        let kind = spec.kinds[index % spec.kinds.len()];
        anomaly::inject(kind, &mut pts, &normals, spec.fraction, spec.depth, &mut rng)
    } else {
        ((0..pts.len()).collect(), vec![0; pts.len()])
    };
    let points = kept.iter().map(|&i| pts[i].map(|v| v as f32)).collect();
    PointCloud::new(points, Some(labels))
}

/// Per-point albedo: category palette in bands along Y, jitter, and a dark tint on anomalous points.
pub fn colorize(cloud: &PointCloud, category: Category, seed: u64) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0xC0105));
    let palette = category.palette();
    let labels = cloud.labels();
    cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let band = ((f64::from(p[1]) + 2.0) * 2.5).floor() as usize % palette.len();
            let mut c = palette[band];
            for v in c.iter_mut() {
                *v = (*v + rng.random_range(-0.04f32..0.04)).clamp(0.0, 1.0);
            }
            if labels.is_some_and(|l| l[i] == 1) {
                let stain = [0.3f32, 0.18, 0.08];
                for k in 0..3 {
                    c[k] = 0.35 * c[k] + 0.65 * stain[k];
                }
            }
            c
        })
        .collect()
}

/// Writes every sample as A3PC under `root` plus the manifest; returns the manifest entries.
pub fn generate(spec: &SynthSpec, root: &Path) -> Result<Vec<ManifestEntry>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &category in &spec.categories {
        for (split, size) in [(Split::Train, spec.train), (Split::Test, spec.test)] {
            for index in 0..size.normal + size.anomalous {
                let anomalous = index >= size.normal;
                let seed = sample_seed(spec.seed, category, split, index);
                let path = PathBuf::from(category.name()).join(split.name()).join(format!("{index:03}.a3pc"));
                jobs.push((category, anomalous, index - if anomalous { size.normal } else { 0 }, ManifestEntry {
                    path,
                    split,
                    label: anomalous,
                    seed,
                }));
            }
        }
    }
    jobs.par_iter().try_for_each(|(category, anomalous, kind_index, entry)| {
        let cloud = generate_sample(spec, *category, *anomalous, *kind_index, entry.seed)?;
        let path = root.join(&entry.path);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        cloud.save(&path)
    })?;
    let entries: Vec<ManifestEntry> = jobs.into_iter().map(|j| j.3).collect();
    fs::create_dir_all(root)?;
    fs::write(root.join(MANIFEST_NAME), write_manifest(&entries))?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let e = vec![ManifestEntry { path: "box/test/001.a3pc".into(), split: Split::Test, label: true, seed: 17 }];
        let text = write_manifest(&e);
        assert_eq!(text, "box/test/001.a3pc\ttest\t1\t17\n");
        let back = parse_manifest(&text).unwrap();
        assert_eq!(back, e);
        assert_eq!(back[0].category().unwrap(), Category::Box);
        assert!(parse_manifest("a\tb\n").is_err());
    }

    #[test]
    fn normal_samples_have_no_labels_set() {
        let spec = SynthSpec { points: 400, ..SynthSpec::default() };
        for c in Category::ALL {
            let n = generate_sample(&spec, c, false, 0, 5).unwrap();
            assert!(!n.is_anomalous());
            let a = generate_sample(&spec, c, true, 1, 5).unwrap();
            assert!(a.is_anomalous());
        }
    }

    #[test]
    fn anomalous_points_are_stained() {
        let spec = SynthSpec { points: 300, ..SynthSpec::default() };
        let cloud = generate_sample(&spec, Category::Sphere, true, 0, 2).unwrap();
        let colors = colorize(&cloud, Category::Sphere, 2);
        let labels = cloud.labels().unwrap();
        for (c, &l) in colors.iter().zip(labels) {
            if l == 1 {
                assert!(c.iter().all(|&v| v < 0.55));
            }
        }
        assert_eq!(colors, colorize(&cloud, Category::Sphere, 2));
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::default().validate().is_ok());
        assert!(SynthSpec { fraction: 0.31, ..SynthSpec::default() }.validate().is_err());
        assert!(SynthSpec { test: SplitSize { normal: 0, anomalous: 2 }, ..SynthSpec::default() }.validate().is_err());
    }
}
