//! Stage orchestration over an experiment directory.
//!
//! Score files written by `infer` hold the image score first, then one score per point.

mod bench;
mod layout;

pub use bench::{peak_memory_kb, BenchReport};
pub use layout::{experiment_tag, Layout};

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::str::FromStr;
use std::sync::Arc;

use log::info;
use rayon::prelude::*;

use crate::aligner::{consistency_matrix, scr_weights, train_stage1, AlignSample, AlignerParams, EpochLog};
use crate::autodiff::Checkpoint;
use crate::config::RunConfig;
use crate::encoder::{encode_views, load_cache, save_cache, EncoderKind, FeatureSet, Modality, SurrogateEncoder};
use crate::error::{Error, Result};
use crate::geometry::{make_views_with_colors, PointCloud, ViewBundle};
use crate::metrics::{fuse, load_scores, radius_regions, save_scores, EvalMode, MetricsReport, SamplePrediction, SampleTruth};
use crate::prompts::{score_branch, train_stage2, Branch, ProjectionMaps, PromptBank, Stage2Epoch, Stage2Sample};
use crate::synth::{colorize, generate, load_manifest, Category, ManifestEntry, Split};
use layout::require;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Gen,
    Render,
    Encode,
    Align,
    Prompt,
    Infer,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Gen, Stage::Render, Stage::Encode, Stage::Align, Stage::Prompt, Stage::Infer, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Render => "render",
            Stage::Encode => "encode",
            Stage::Align => "align",
            Stage::Prompt => "prompt",
            Stage::Infer => "infer",
            Stage::Eval => "eval",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

/// One branch's outputs in a score file: image score, then point scores.
fn pack(image: f64, points: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(points.len() + 1);
    v.push(image);
    v.extend_from_slice(points);
    v
}

fn mode_tag(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::Fused => "fused",
        EvalMode::AlignedOnly => "ra",
        EvalMode::RenderOnly => "r",
    }
}

fn pick(sets: Vec<FeatureSet>, modality: Modality, path: &std::path::Path) -> Result<FeatureSet> {
    sets.into_iter()
        .find(|s| s.modality == modality)
        .ok_or_else(|| Error::format("A3FC", format!("{} has no {} features", path.display(), modality.name())))
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: RunConfig,
    pub layout: Layout,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        let layout = Layout::new(&cfg);
        Self { cfg, layout }
    }

    pub fn with_layout(cfg: RunConfig, layout: Layout) -> Self {
        Self { cfg, layout }
    }

    /// Runs `stages` in pipeline order; returns the reports when `eval` ran.
    pub fn run(&self, stages: &[Stage]) -> Result<Option<Vec<MetricsReport>>> {
        let ordered: BTreeSet<Stage> = stages.iter().copied().collect();
        let mut reports = None;
        for stage in ordered {
            info!("stage {}", stage.name());
            match stage {
                Stage::Gen => {
                    self.gen()?;
                }
                Stage::Render => self.render()?,
                Stage::Encode => self.encode()?,
                Stage::Align => {
                    self.align()?;
                }
                Stage::Prompt => {
                    self.prompt()?;
                }
                Stage::Infer => self.infer()?,
                Stage::Eval => reports = Some(self.eval()?),
            }
        }
        Ok(reports)
    }

    pub fn manifest(&self) -> Result<Vec<ManifestEntry>> {
        require(self.layout.manifest(), "gen")?;
        load_manifest(&self.layout.data)
    }

    fn entries(&self, split: Split) -> Result<Vec<ManifestEntry>> {
        let all = self.manifest()?;
        let mut generated: Vec<Category> = Vec::new();
        for e in &all {
            let c = e.category()?;
            if !generated.contains(&c) {
                generated.push(c);
            }
        }
        let wanted = match split {
            Split::Train => self.cfg.protocol.train.clone(),
            Split::Test => self.cfg.protocol.test_categories(&generated),
        };
        let mut out = Vec::new();
        for e in all {
            if e.split == split && wanted.contains(&e.category()?) {
                out.push(e);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid(format!("no {} samples for the requested categories", split.name())));
        }
        Ok(out)
    }

    pub fn train_entries(&self) -> Result<Vec<ManifestEntry>> {
        self.entries(Split::Train)
    }

    pub fn test_entries(&self) -> Result<Vec<ManifestEntry>> {
        self.entries(Split::Test)
    }

    pub fn gen(&self) -> Result<Vec<ManifestEntry>> {
        let entries = generate(&self.cfg.synth, &self.layout.data)?;
        info!("generated {} clouds under {}", entries.len(), self.layout.data.display());
        Ok(entries)
    }

    /// Renders every manifest sample; training samples also get pseudo-RGB views.
    pub fn render(&self) -> Result<()> {
        let entries = self.manifest()?;
        self.cfg.views.validate(self.cfg.encoder.patch_size)?;
        entries.par_iter().try_for_each(|e| {
            let cloud = PointCloud::load(&require(self.layout.cloud(e), "gen")?)?;
            let colors = match e.split {
                Split::Train => Some(colorize(&cloud, e.category()?, e.seed)),
                Split::Test => None,
            };
            let views = make_views_with_colors(&cloud, &self.cfg.views, colors.as_deref())?;
            views.save(&self.layout.views(e))
        })?;
        info!("rendered {} samples", entries.len());
        Ok(())
    }

    /// Encodes rendering features for all samples and RGB features for training samples,
    /// or copies externally exported caches when the encoder is `cached`.
    pub fn encode(&self) -> Result<()> {
        let entries = self.manifest()?;
        match self.cfg.encoder.kind {
            EncoderKind::Cached => {
                let dir = self.cfg.feature_dir.as_ref().ok_or(Error::FeaturesMustBeLoaded)?;
                entries.par_iter().try_for_each(|e| {
                    let src = require(dir.join(e.path.with_extension("a3fc")), "feature export")?;
                    let sets = load_cache(&src)?;
                    save_cache(&sets, &self.layout.features(e))
                })?;
            }
            EncoderKind::Surrogate { .. } => {
                let encoder = SurrogateEncoder::new(&self.cfg.encoder)?;
                entries.par_iter().try_for_each(|e| {
                    let views = ViewBundle::load(&require(self.layout.views(e), "render")?)?;
                    let mut sets = vec![encode_views(&encoder, &views, Modality::Render)?];
                    if e.split == Split::Train {
                        sets.push(encode_views(&encoder, &views, Modality::Rgb)?);
                    }
                    save_cache(&sets, &self.layout.features(e))
                })?;
            }
        }
        info!("encoded {} samples", entries.len());
        Ok(())
    }

    fn load_features(&self, e: &ManifestEntry, modality: Modality) -> Result<FeatureSet> {
        let path = require(self.layout.features(e), "encode")?;
        pick(load_cache(&path)?, modality, &path)
    }

    pub fn load_aligner(&self) -> Result<AlignerParams> {
        AlignerParams::from_checkpoint(&Checkpoint::load(&require(self.layout.aligner(), "align")?)?)
    }

    pub fn load_prompts(&self) -> Result<PromptBank> {
        PromptBank::from_checkpoint(&Checkpoint::load(&require(self.layout.prompts(), "prompt")?)?)
    }

    /// Stage 1 on the training categories; writes the aligner checkpoint and a per-epoch log.
    pub fn align(&self) -> Result<Vec<EpochLog>> {
        let entries = self.train_entries()?;
        let data: Vec<AlignSample> = entries
            .par_iter()
            .map(|e| AlignSample::new(self.load_features(e, Modality::Render)?, self.load_features(e, Modality::Rgb)?))
            .collect::<Result<_>>()?;
        let (sched, _) = self.cfg.schedules();
        let dim = data[0].render.dim;
        let mut params = AlignerParams::new(dim, self.cfg.aligner_hidden, self.cfg.seeds().aligner)?;
        let logs = train_stage1(&data, &mut params, &sched)?;
        params.to_checkpoint().save(&self.layout.aligner())?;
        let mut text = String::from("epoch\tscr\tL_g\tL_l\tL_align\n");
        for l in &logs {
            let _ = writeln!(text, "{}\t{}\t{:.8}\t{:.8}\t{:.8}", l.epoch, u8::from(l.weighted), l.global, l.local, l.total);
        }
        write_text(&self.layout.log("align"), &text)?;
        if let Some(last) = logs.last() {
            info!("stage 1 finished: L_align {:.5}", last.total);
        }
        Ok(logs)
    }

    fn maps_for(&self, views: &ViewBundle, features: &FeatureSet) -> Result<Arc<ProjectionMaps>> {
        Ok(Arc::new(ProjectionMaps::new(views, features.grid, self.cfg.averaging)?))
    }

    /// Stage 2 with the trained aligner frozen; writes the prompt checkpoint and a per-epoch log.
    pub fn prompt(&self) -> Result<Vec<Stage2Epoch>> {
        let aligner = self.load_aligner()?;
        let entries = self.train_entries()?;
        let data: Vec<Stage2Sample> = entries
            .par_iter()
            .map(|e| {
                let cloud = PointCloud::load(&require(self.layout.cloud(e), "gen")?)?;
                let views = ViewBundle::load(&require(self.layout.views(e), "render")?)?;
                let render = self.load_features(e, Modality::Render)?;
                let aligned = aligner.align(&render)?;
                let maps = self.maps_for(&views, &render)?;
                Stage2Sample::new(render, aligned, &cloud, &views, maps)
            })
            .collect::<Result<_>>()?;
        let (_, sched) = self.cfg.schedules();
        let mut bank = PromptBank::new(aligner.dim, self.cfg.tau, self.cfg.prompt_length, self.cfg.seeds().prompts)?;
        let logs = train_stage2(&data, &mut bank, &sched)?;
        bank.to_checkpoint().save(&self.layout.prompts())?;
        let mut text = String::from("epoch\tcon\tL_cls\tL_seg\tL_con\ttotal\n");
        for l in &logs {
            let _ = writeln!(
                text,
                "{}\t{}\t{:.8}\t{:.8}\t{:.8}\t{:.8}",
                l.epoch,
                u8::from(l.contrastive),
                l.cls,
                l.seg,
                l.con,
                l.total
            );
        }
        write_text(&self.layout.log("prompt"), &text)?;
        Ok(logs)
    }

    /// Scores one sample from its views and rendering features only.
    pub fn infer_sample(
        &self,
        aligner: &AlignerParams,
        bank: &PromptBank,
        views: &ViewBundle,
        render: &FeatureSet,
    ) -> Result<[(f64, Vec<f64>); 3]> {
        let aligned = aligner.align(render)?;
        let maps = self.maps_for(views, render)?;
        let tau_in_maps = self.cfg.stage2.scoring.tau_in_maps;
        let ra = score_branch(&aligned, bank, Branch::Aligned, &maps, tau_in_maps)?;
        let r = score_branch(render, bank, Branch::Render, &maps, tau_in_maps)?;
        let (points, image) = fuse(&ra.points_a, ra.image_prob, &r.points_a, r.image_prob, self.cfg.alpha)?;
        Ok([(image, points), (ra.image_prob, ra.points_a), (r.image_prob, r.points_a)])
    }

    /// Writes fused and per-branch score files for every test sample.
    pub fn infer(&self) -> Result<()> {
        let aligner = self.load_aligner()?;
        let bank = self.load_prompts()?;
        let entries = self.test_entries()?;
        entries.par_iter().try_for_each(|e| {
            let views = ViewBundle::load(&require(self.layout.views(e), "render")?)?;
            let render = self.load_features(e, Modality::Render)?;
            let outputs = self.infer_sample(&aligner, &bank, &views, &render)?;
            for (mode, (image, points)) in EvalMode::ALL.into_iter().zip(outputs) {
                save_scores(&pack(image, &points), &self.layout.scores(e, mode_tag(mode)))?;
            }
            Ok::<_, Error>(())
        })?;
        info!("scored {} test samples", entries.len());
        Ok(())
    }

    /// Computes image and point metrics for all three modes and writes text and CSV reports.
    pub fn eval(&self) -> Result<Vec<MetricsReport>> {
        let entries = self.test_entries()?;
        let truths: Vec<SampleTruth> = entries
            .par_iter()
            .map(|e| {
                let cloud = PointCloud::load(&require(self.layout.cloud(e), "gen")?)?;
                let labels = cloud.labels().ok_or_else(|| Error::MissingLabels(e.path.display().to_string()))?.to_vec();
                let regions = radius_regions(cloud.points(), &labels)?;
                Ok(SampleTruth { label: labels.contains(&1), point_labels: labels, regions })
            })
            .collect::<Result<_>>()?;
        let mut reports = Vec::new();
        for mode in EvalMode::ALL {
            let preds: Vec<SamplePrediction> = entries
                .iter()
                .map(|e| {
                    let s = load_scores(&require(self.layout.scores(e, mode_tag(mode)), "infer")?)?;
                    let (first, rest) = s.split_first().ok_or_else(|| Error::format("A3SC", "empty score file"))?;
                    Ok(SamplePrediction {
                        image_score: f64::from(*first),
                        point_scores: rest.iter().map(|&v| f64::from(v)).collect(),
                    })
                })
                .collect::<Result<_>>()?;
            reports.push(MetricsReport::evaluate(mode, &preds, &truths, self.cfg.pro_limit)?);
        }
        write_text(&self.layout.report("txt"), &MetricsReport::to_text(&reports))?;
        write_text(&self.layout.report("csv"), &MetricsReport::to_csv(&reports))?;
        Ok(reports)
    }

    /// Writes per-view SCR weight maps `w_{i,n}` of every training sample; returns the file count.
    pub fn export_weights(&self) -> Result<usize> {
        let entries = self.train_entries()?;
        let lambda = self.cfg.stage1.lambda;
        let normalize = self.cfg.stage1.normalize_consistency;
        let counts: Vec<usize> = entries
            .par_iter()
            .map(|e| {
                let render = self.load_features(e, Modality::Render)?;
                let rgb = self.load_features(e, Modality::Rgb)?;
                let n = render.patches();
                for v in 0..render.views() {
                    let c = consistency_matrix(render.local(v), rgb.local(v), render.dim, normalize)?;
                    let (_, w) = scr_weights(&c, n, lambda)?;
                    save_scores(&w, &self.layout.scr_map(e, v))?;
                }
                Ok(render.views())
            })
            .collect::<Result<_>>()?;
        Ok(counts.iter().sum())
    }

    /// Times single-sample inference on the first test sample; see [`BenchReport`].
    pub fn bench(&self) -> Result<BenchReport> {
        let report = bench::run(self)?;
        write_text(&self.layout.bench(), &report.to_text())?;
        Ok(report)
    }
}

fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    layout::ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

/// One sweep point: view count, prompt length, and its reports.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub views: usize,
    pub prompt_length: usize,
    pub reports: Vec<MetricsReport>,
}

/// Expands `sweep.view_counts × sweep.prompt_lengths` (each defaulting to the base value)
/// and runs render through eval for each point under `<out_dir>/sweep/`, sharing the
/// generated data. Writes `sweep/summary.csv`.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    let base = Layout::new(cfg);
    require(base.manifest(), "gen")?;
    let view_counts = if cfg.sweep.view_counts.is_empty() { vec![cfg.views.view_count()] } else { cfg.sweep.view_counts.clone() };
    let lengths = if cfg.sweep.prompt_lengths.is_empty() { vec![cfg.prompt_length] } else { cfg.sweep.prompt_lengths.clone() };
    let mut points = Vec::new();
    let mut csv = String::from("views,prompt_length,mode,image_auroc,image_ap,point_auroc,pro\n");
    for &v in &view_counts {
        for &len in &lengths {
            let mut c = cfg.clone();
            c.views.angles = crate::geometry::default_angles(v);
            c.prompt_length = len;
            let root = cfg.out_dir.join("sweep").join(format!("v{v}-len{len}"));
            let p = Pipeline::with_layout(c.clone(), Layout::with_data(&c, base.data.clone(), root));
            let reports = p
                .run(&[Stage::Render, Stage::Encode, Stage::Align, Stage::Prompt, Stage::Infer, Stage::Eval])?
                .unwrap_or_default();
            for r in &reports {
                let _ = writeln!(
                    csv,
                    "{v},{len},{},{:.6},{:.6},{:.6},{:.6}",
                    r.mode.name(),
                    r.image_auroc,
                    r.image_ap,
                    r.point_auroc,
                    r.pro
                );
            }
            points.push(SweepPoint { views: v, prompt_length: len, reports });
        }
    }
    write_text(&cfg.out_dir.join("sweep").join("summary.csv"), &csv)?;
    Ok(points)
}
