use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::synth::{ManifestEntry, MANIFEST_NAME};

/// Where every stage reads and writes.
///
/// ```text
/// <data>/manifest.tsv, <data>/<category>/<split>/<i>.a3pc      gen
/// <root>/views/<category>/<split>/<i>.a3vb                     render
/// <root>/features/<category>/<split>/<i>.a3fc                  encode
/// <experiment>/align/{aligner.a3ck, log.txt}                   align
/// <experiment>/prompt/{prompts.a3ck, log.txt}                  prompt
/// <experiment>/infer/<category>/<split>/<i>.<mode>.a3sc        infer
/// <experiment>/eval/{report.txt, report.csv}                   eval
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub data: PathBuf,
    pub root: PathBuf,
    pub experiment: PathBuf,
}

fn with_ext(rel: &Path, ext: &str) -> PathBuf {
    rel.with_extension(ext)
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        let root = cfg.out_dir.clone();
        Self { data: root.join("data"), experiment: root.join("experiments").join(experiment_tag(cfg)), root }
    }

    /// A layout that renders and encodes into `root` but reads clouds from `data`.
    pub fn with_data(cfg: &RunConfig, data: PathBuf, root: PathBuf) -> Self {
        Self { data, experiment: root.join("experiments").join(experiment_tag(cfg)), root }
    }

    pub fn manifest(&self) -> PathBuf {
        self.data.join(MANIFEST_NAME)
    }

    pub fn cloud(&self, e: &ManifestEntry) -> PathBuf {
        self.data.join(&e.path)
    }

    pub fn views(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join("views").join(with_ext(&e.path, "a3vb"))
    }

    pub fn features(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join("features").join(with_ext(&e.path, "a3fc"))
    }

    pub fn aligner(&self) -> PathBuf {
        self.experiment.join("align").join("aligner.a3ck")
    }

    pub fn prompts(&self) -> PathBuf {
        self.experiment.join("prompt").join("prompts.a3ck")
    }

    pub fn log(&self, stage: &str) -> PathBuf {
        self.experiment.join(stage).join("log.txt")
    }

    pub fn scores(&self, e: &ManifestEntry, mode: &str) -> PathBuf {
        self.experiment.join("infer").join(with_ext(&e.path, &format!("{mode}.a3sc")))
    }

    pub fn report(&self, ext: &str) -> PathBuf {
        self.experiment.join("eval").join(format!("report.{ext}"))
    }

    pub fn bench(&self) -> PathBuf {
        self.experiment.join("bench").join("report.txt")
    }

    pub fn scr_map(&self, e: &ManifestEntry, view: usize) -> PathBuf {
        self.experiment.join("scr").join(with_ext(&e.path, &format!("v{view}.a3sc")))
    }
}

/// `sphere` or `sphere+box`, with `-vs-<tests>` when test categories are explicit.
pub fn experiment_tag(cfg: &RunConfig) -> String {
    let join = |c: &[crate::synth::Category]| c.iter().map(|c| c.name()).collect::<Vec<_>>().join("+");
    let mut tag = join(&cfg.protocol.train);
    if !cfg.protocol.test.is_empty() {
        tag.push_str("-vs-");
        tag.push_str(&join(&cfg.protocol.test));
    }
    tag
}

/// Fails with the stage that produces `path` when it does not exist.
pub(crate) fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { stage, path })
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}
