use std::fmt::Write as _;
use std::time::Instant;

use super::layout::require;
use super::Pipeline;
use crate::encoder::{encode_views, load_cache, EncoderKind, Modality, SurrogateEncoder};
use crate::error::{Error, Result};
use crate::geometry::ViewBundle;

/// Single-sample (batch size 1) inference timing after one warm-up run.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub reps: usize,
    pub views: usize,
    pub points: usize,
    /// Whether the surrogate encoder ran inside the timed region.
    pub includes_encoding: bool,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Samples per second at the median latency.
    pub throughput: f64,
    pub peak_memory_kb: Option<u64>,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("[bench]\n");
        let _ = writeln!(out, "reps: {}", self.reps);
        let _ = writeln!(out, "batch_size: 1");
        let _ = writeln!(out, "views: {}", self.views);
        let _ = writeln!(out, "points: {}", self.points);
        let _ = writeln!(out, "includes_encoding: {}", self.includes_encoding);
        let _ = writeln!(out, "median_latency_ms: {:.3}", self.median_ms);
        let _ = writeln!(out, "min_latency_ms: {:.3}", self.min_ms);
        let _ = writeln!(out, "max_latency_ms: {:.3}", self.max_ms);
        let _ = writeln!(out, "throughput_per_s: {:.3}", self.throughput);
        match self.peak_memory_kb {
            Some(kb) => {
                let _ = writeln!(out, "peak_memory_kb: {kb}");
            }
            None => out.push_str("peak_memory_kb: unavailable\n"),
        }
        out
    }
}

/// Peak resident set size from `/proc/self/status`, where available.
pub fn peak_memory_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub(super) fn run(p: &Pipeline) -> Result<BenchReport> {
    let reps = p.cfg.bench_reps.max(1);
    let aligner = p.load_aligner()?;
    let bank = p.load_prompts()?;
    let entry = p.test_entries()?.into_iter().next().ok_or_else(|| Error::invalid("no test sample to time"))?;
    let views = ViewBundle::load(&require(p.layout.views(&entry), "render")?)?;
    let encoder = match p.cfg.encoder.kind {
        EncoderKind::Surrogate { .. } => Some(SurrogateEncoder::new(&p.cfg.encoder)?),
        EncoderKind::Cached => None,
    };
    let cached = load_cache(&require(p.layout.features(&entry), "encode")?)?
        .into_iter()
        .find(|s| s.modality == Modality::Render)
        .ok_or_else(|| Error::format("A3FC", "no rendering features"))?;
    let once = || -> Result<()> {
        let render = match &encoder {
            Some(enc) => encode_views(enc, &views, Modality::Render)?,
            None => cached.clone(),
        };
        p.infer_sample(&aligner, &bank, &views, &render)?;
        Ok(())
    };
    once()?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        once()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let median_ms = median(&times);
    Ok(BenchReport {
        reps,
        views: views.view_count(),
        points: views.point_count,
        includes_encoding: encoder.is_some(),
        median_ms,
        min_ms: times[0],
        max_ms: times[reps - 1],
        throughput: 1e3 / median_ms,
        peak_memory_kb: peak_memory_kb(),
    })
}
