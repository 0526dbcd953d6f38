//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Exits 0 regardless of failures unless `ACCEPTANCE_STRICT=1`, so the suite
//! can run under `cargo test` while an unmet target is still being worked on.

use std::fs;
use std::path::Path;
use std::time::Instant;

use mvad::aligner::{loss_align, loss_align_weighted, scr_weights, train_stage1, AlignSample, AlignerParams, Stage1Schedule};
use mvad::config::RunConfig;
use mvad::encoder::{FeatureSet, Modality};
use mvad::geometry::{back_project, make_views, project_labels, Averaging, ViewSpec};
use mvad::gradsuite::run_suite;
use mvad::metrics::{auroc, average_precision, pro, EvalMode, MetricsReport};
use mvad::pipeline::{Layout, Pipeline, Stage};
use mvad::prompts::{loss_con, predict_image, train_stage2, Branch, ProjectionMaps, PromptBank, Stage2Sample, Stage2Schedule, State};
use mvad::synth::{generate_sample, AnomalyKind, Category, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<(bool, String), String>;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let v: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        })
        .collect()
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Vec<f32> {
    (0..rows)
        .flat_map(|_| {
            let v = gaussian(rng, d);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(move |x| (x / n) as f32)
        })
        .collect()
}

fn feature_set(rng: &mut ChaCha8Rng, modality: Modality, views: usize, grid: (usize, usize), d: usize) -> FeatureSet {
    let n = grid.0 * grid.1;
    FeatureSet::new(modality, grid, d, unit_rows(rng, views, d), unit_rows(rng, views * n, d)).unwrap()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient_suite() -> Result<(bool, String), String> {
    let start = Instant::now();
    let results = run_suite(50, 2024).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let per: Vec<String> = results.iter().map(|r| format!("{} {:.1e}", r.objective.name(), r.max_rel_error)).collect();
    let ok = worst < 1e-4 && secs < 120.0 && results.iter().all(|r| r.instances >= 50);
    Ok((ok, format!("9 objectives x 50 instances, max rel error {worst:.2e}, {secs:.1}s [{}]", per.join(", "))))
}

fn fixed_points() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut perfect, mut reduction, mut half, mut con) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let rgb = feature_set(&mut rng, Modality::Rgb, 3, (3, 3), 8);
        let render = feature_set(&mut rng, Modality::Render, 3, (3, 3), 8);
        let same = FeatureSet { modality: Modality::Aligned, ..rgb.clone() };
        let lambda = rng.random_range(0.0..4.0);
        perfect = perfect
            .max(loss_align(&same, &rgb).map_err(err)?.total.abs())
            .max(loss_align_weighted(&same, &rgb, &render, lambda, true).map_err(err)?.total.abs());
        let other = feature_set(&mut rng, Modality::Aligned, 3, (3, 3), 8);
        let plain = loss_align(&other, &rgb).map_err(err)?.total;
        let zero = loss_align_weighted(&other, &rgb, &render, 0.0, rng.random_bool(0.5)).map_err(err)?.total;
        reduction = reduction.max((plain - zero).abs());

        let mut bank = PromptBank::new(8, rng.random_range(0.01..1.0), 12, rng.random()).map_err(err)?;
        let t = gaussian(&mut rng, 8);
        bank.set(Branch::Render, State::Normal, t.clone()).map_err(err)?;
        bank.set(Branch::Render, State::Anomalous, t).map_err(err)?;
        let (probs, mean) = predict_image(&render, &bank, Branch::Render).map_err(err)?;
        half = probs.iter().chain([&mean]).map(|p| (p - 0.5).abs()).fold(half, f64::max);

        // Cross-modal references swapped: both logits of each term coincide.
        let (m, r) = if rng.random_bool(0.5) { (Branch::Render, Branch::Aligned) } else { (Branch::Aligned, Branch::Render) };
        let (tn, ta) = (gaussian(&mut rng, 8), gaussian(&mut rng, 8));
        bank.set(m, State::Normal, tn.clone()).map_err(err)?;
        bank.set(m, State::Anomalous, ta.clone()).map_err(err)?;
        bank.set(r, State::Normal, ta).map_err(err)?;
        bank.set(r, State::Anomalous, tn).map_err(err)?;
        con = con.max((loss_con(&bank, m).map_err(err)? - std::f64::consts::LN_2).abs());
    }
    let ok = perfect < 1e-10 && reduction < 1e-12 && half < 1e-10 && con < 1e-10;
    Ok((
        ok,
        format!("200 draws: |L(F_R,F_R)| {perfect:.1e}, |L^w(λ=0) − L| {reduction:.1e}, |ŷ − ½| {half:.1e}, |L_con − ln 2| {con:.1e}"),
    ))
}

fn scr_bounds() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0usize;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=36);
        let lambda = rng.random_range(0.0..=4.0f64);
        if lambda == 0.0 {
            continue;
        }
        let c: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let (means, w) = scr_weights(&c, n, lambda).map_err(err)?;
        if w.iter().any(|&x| !(x > 1.0 && x < 1.0 + lambda)) {
            bad += 1;
            continue;
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
        if idx.windows(2).any(|p| w[p[1]] < w[p[0]]) {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("10000 draws, N ∈ [1, 36], λ ∈ (0, 4]: {bad} violations")))
}

fn geometry_round_trip() -> Result<(bool, String), String> {
    let spec = SynthSpec { points: 3000, ..SynthSpec::default() };
    let views = ViewSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut eligible, mut perfect, mut invariant) = (0, 0, 0);
    for i in 0..100 {
        let category = Category::ALL[i % 4];
        let cloud = generate_sample(&spec, category, true, i, 1000 + i as u64).map_err(err)?;
        let bundle = make_views(&cloud, &views).map_err(err)?;
        let masks = project_labels(&cloud, &bundle).map_err(err)?;
        let maps: Vec<Vec<f64>> = masks.masks.iter().map(|m| m.iter().map(|&y| f64::from(y)).collect()).collect();
        let scores = back_project(&maps, &bundle, Averaging::AllViews).map_err(err)?;
        let mut scrambled = maps.clone();
        for (m, v) in scrambled.iter_mut().zip(&bundle.views) {
            for (x, p) in m.iter_mut().zip(&v.pixel_to_point) {
                if p.is_none() {
                    *x = rng.random_range(-5.0..5.0);
                }
            }
        }
        if back_project(&scrambled, &bundle, Averaging::AllViews).map_err(err)? == scores {
            invariant += 1;
        }
        let labels = cloud.labels().unwrap();
        let vis = bundle.visibility_counts();
        if labels.iter().zip(&vis).any(|(&y, &v)| y == 1 && v == 0) {
            continue;
        }
        eligible += 1;
        let truth: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        if auroc(&scores, &truth).map_err(err)? == 1.0 {
            perfect += 1;
        }
    }
    let ok = eligible > 0 && perfect == eligible && invariant == 100;
    Ok((ok, format!("100 clouds: {perfect}/{eligible} with all anomalies visible reach AUROC 1.0, {invariant}/100 invariant to empty pixels")))
}

fn brute_auroc(s: &[f64], y: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in (0..s.len()).filter(|&i| y[i]) {
        for j in (0..s.len()).filter(|&j| !y[j]) {
            pairs += 1.0;
            wins += if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

/// Rank of `i` when sorting by score descending, ties by index ascending (1-based).
fn rank(s: &[f64], i: usize) -> usize {
    1 + (0..s.len()).filter(|&j| s[j] > s[i] || (s[j] == s[i] && j < i)).count()
}

fn brute_ap(s: &[f64], y: &[bool]) -> f64 {
    let pos: Vec<usize> = (0..s.len()).filter(|&i| y[i]).collect();
    pos.iter()
        .map(|&i| {
            let k = rank(s, i);
            pos.iter().filter(|&&j| rank(s, j) <= k).count() as f64 / k as f64
        })
        .sum::<f64>()
        / pos.len() as f64
}

fn brute_pro(s: &[f64], y: &[bool], regions: &[Vec<usize>], limit: f64) -> f64 {
    let neg = y.iter().filter(|&&v| !v).count() as f64;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let curve: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let fpr = (0..s.len()).filter(|&i| !y[i] && s[i] >= t).count() as f64 / neg;
            let overlap = regions
                .iter()
                .map(|r| r.iter().filter(|&&i| s[i] >= t).count() as f64 / r.len() as f64)
                .sum::<f64>()
                / regions.len() as f64;
            (fpr, overlap)
        })
        .collect();
    // Piecewise-linear through (0, y_0) and the curve, flat after its last point; clip each segment to [0, limit].
    let mut pts = vec![(0.0, curve[0].1)];
    pts.extend(curve);
    let last = *pts.last().unwrap();
    pts.push((last.0.max(limit), last.1));
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x1 <= x0 {
            continue;
        }
        let (a, b) = (x0.max(0.0), x1.min(limit));
        if b <= a {
            continue;
        }
        let at = |x: f64| y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        area += (b - a) * (at(a) + at(b)) / 2.0;
    }
    area / limit
}

fn metric_oracles() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(4..=200);
        let coarse = rng.random_bool(0.5);
        let s: Vec<f64> =
            (0..n).map(|_| if coarse { f64::from(rng.random_range(0..6u8)) / 5.0 } else { rng.random_range(0.0..1.0) }).collect();
        let rate = rng.random_range(0.05..0.6);
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(rate)).collect();
        y[0] = true;
        y[1] = false;
        let mut regions: Vec<Vec<usize>> = vec![Vec::new(); rng.random_range(1..=4)];
        for i in (0..n).filter(|&i| y[i]) {
            let r = rng.random_range(0..regions.len());
            regions[r].push(i);
        }
        regions.retain(|r| !r.is_empty());
        let limit = if rng.random_bool(0.5) { 0.3 } else { rng.random_range(0.01..=1.0) };
        worst = worst
            .max((auroc(&s, &y).map_err(err)? - brute_auroc(&s, &y)).abs())
            .max((average_precision(&s, &y).map_err(err)? - brute_ap(&s, &y)).abs())
            .max((pro(&s, &y, &regions, limit).map_err(err)? - brute_pro(&s, &y, &regions, limit)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst <= 1e-9 && secs < 60.0, format!("1000 instances ≤ 200 points: max |Δ| {worst:.1e}, {secs:.2}s")))
}

fn flips<T>(log: &[T], flag: impl Fn(&T) -> bool) -> Vec<usize> {
    log.windows(2).enumerate().filter(|(_, w)| flag(&w[0]) != flag(&w[1])).map(|(i, _)| i + 1).collect()
}

fn schedule_contract() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<AlignSample> = (0..2)
        .map(|_| {
            AlignSample::new(feature_set(&mut rng, Modality::Render, 2, (2, 2), 4), feature_set(&mut rng, Modality::Rgb, 2, (2, 2), 4))
                .unwrap()
        })
        .collect();
    let s1 = Stage1Schedule::default();
    let mut params = AlignerParams::new(4, 4, 0).map_err(err)?;
    let log1 = train_stage1(&data, &mut params, &s1).map_err(err)?;
    let f1 = flips(&log1, |e| e.weighted);

    let spec = SynthSpec { points: 600, kinds: vec![AnomalyKind::Bump], ..SynthSpec::default() };
    let vs = ViewSpec { angles: mvad::geometry::default_angles(2), height: 8, width: 8, scale: 0.9 };
    let samples: Vec<Stage2Sample> = (0..2)
        .map(|i| {
            let cloud = generate_sample(&spec, Category::Sphere, true, i, i as u64).unwrap();
            let views = make_views(&cloud, &vs).unwrap();
            let render = feature_set(&mut rng, Modality::Render, 2, (2, 2), 4);
            let aligned = FeatureSet { modality: Modality::Aligned, ..render.clone() };
            let maps = std::sync::Arc::new(ProjectionMaps::new(&views, (2, 2), Averaging::AllViews).unwrap());
            Stage2Sample::new(render, aligned, &cloud, &views, maps).unwrap()
        })
        .collect();
    let s2 = Stage2Schedule::default();
    let mut bank = PromptBank::new(4, 0.07, 12, 0).map_err(err)?;
    let log2 = train_stage2(&samples, &mut bank, &s2).map_err(err)?;
    let f2 = flips(&log2, |e| e.contrastive);
    let con_ok = log2.iter().all(|e| (e.con > 0.0) == e.contrastive);
    let ok = log1.len() == 250 && f1 == [200] && log2.len() == 15 && f2 == [10] && con_ok;
    Ok((ok, format!("stage 1: {} epochs, flips at {f1:?}; stage 2: {} epochs, flips at {f2:?}", log1.len(), log2.len())))
}

fn report_for(reports: &[MetricsReport], mode: EvalMode) -> &MetricsReport {
    reports.iter().find(|r| r.mode == mode).expect("all modes evaluated")
}

fn end_to_end() -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let start = Instant::now();
    let cfg = RunConfig { out_dir: dir.path().to_path_buf(), ..RunConfig::default() };
    Pipeline::new(cfg.clone()).run(&[Stage::Gen, Stage::Render, Stage::Encode]).map_err(err)?;
    let (mut pr, mut or, mut pro_ok) = (Vec::new(), Vec::new(), true);
    let mut lines = Vec::new();
    for category in Category::ALL {
        let mut c = cfg.clone();
        c.protocol.train = vec![category];
        let p = Pipeline::with_layout(c.clone(), Layout::new(&c));
        let reports = p.run(&[Stage::Align, Stage::Prompt, Stage::Infer, Stage::Eval]).map_err(err)?.unwrap_or_default();
        let fused = report_for(&reports, EvalMode::Fused);
        let best_branch = report_for(&reports, EvalMode::AlignedOnly).pro.max(report_for(&reports, EvalMode::RenderOnly).pro);
        pro_ok &= fused.pro >= best_branch - 0.02;
        pr.push(fused.point_auroc);
        or.push(fused.image_auroc);
        lines.push(format!(
            "{}: P-R {:.3} O-R {:.3} P-P {:.3} (best branch {:.3})",
            category.name(),
            fused.point_auroc,
            fused.image_auroc,
            fused.pro,
            best_branch
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mpr, mor) = (mean(&pr), mean(&or));
    let ok = secs < 600.0 && mpr >= 0.90 && mor >= 0.85 && pro_ok;
    Ok((
        ok,
        format!(
            "mean P-R {mpr:.3} (≥ 0.90), mean O-R {mor:.3} (≥ 0.85), fused P-P within 0.02 of best branch: {pro_ok}, {secs:.0}s; {}",
            lines.join("; ")
        ),
    ))
}

fn run_bytes(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let cfg = RunConfig { out_dir: dir.to_path_buf(), ..RunConfig::default() };
    let p = Pipeline::new(cfg);
    p.run(&Stage::ALL).map_err(err)?;
    [p.layout.report("txt"), p.layout.report("csv"), p.layout.aligner(), p.layout.prompts()]
        .iter()
        .map(|f| fs::read(f).map_err(err))
        .collect()
}

fn determinism() -> Result<(bool, String), String> {
    let (a, b) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    let start = Instant::now();
    let (x, y) = (run_bytes(a.path())?, run_bytes(b.path())?);
    let same = x == y;
    let size: usize = x.iter().map(Vec::len).sum();
    Ok((same, format!("two default runs: reports and checkpoints ({size} bytes) identical: {same}, {:.0}s", start.elapsed().as_secs_f64())))
}

fn main() {
    let checks: [(&'static str, Check); 8] = [
        ("gradient suite", gradient_suite),
        ("fixed points", fixed_points),
        ("SCR bounds", scr_bounds),
        ("geometry round trip", geometry_round_trip),
        ("metric oracles", metric_oracles),
        ("schedule contract", schedule_contract),
        ("end-to-end benchmark", end_to_end),
        ("determinism", determinism),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut outcomes = Vec::new();
    for (name, check) in checks {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        outcomes.push((name, pass));
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.1).map(|o| o.0).collect();
    println!("acceptance: {} passed, {} failed", outcomes.len() - failed.len(), failed.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
