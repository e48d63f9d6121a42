//! Acceptance checks, one line per criterion.
//!
//! Criteria 5, 6, 7 and 9 need the public QuickDraw simplified ndjson
//! files (`<category>.ndjson`) in the directory named by
//! `SDG_QUICKDRAW_DIR`; without it they report SKIP. `SDG_CATEGORIES`
//! (comma-separated) picks the ten classes, otherwise the first ten files
//! in name order are used. `SDG_ABLATION_EPOCHS` sets the shared ablation
//! budget (default 10).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdgraph::cli::{ablation_variants, cmd_gradcheck, cmd_prep, cmd_train, read_quickdraw, run_variants, AblationKind, Task};
use sdgraph::config::RunConfig;
use sdgraph::data::{pad_all, prepare, split_per_label};
use sdgraph::io::{format_stroke3_text, parse_stroke3, parse_stroke3_text, read_cache_from, to_stroke3, write_cache_to};
use sdgraph::preprocess::{cumulative_arc_length, resample_uniform, PaddedSketch, PreprocessConfig};
use sdgraph::sketch::{Point, Sketch, Stroke};
use sdgraph::synth::synth_dataset;
use sdgraph::tasks::{
    fit_layout, layout_padded, ranked_metrics, retrieval_eval, Classifier, DiffusionSchedule, EmbeddingTable, Generator, MetricsLog, TrainConfig,
};
use sdgraph::tensor::{fps_indices, knn_indices, set_precision, Precision};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<Outcome, Box<dyn std::error::Error>>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// ---------------------------------------------------------------- 1

fn gradient_suite() -> Check {
    let out = cmd_gradcheck(&RunConfig::default())?;
    let worst = out.entries.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|e| e.0.clone()).unwrap_or_default();
    Ok(verdict(
        out.max_rel_err < 1e-4 && out.elapsed_ms < 120_000,
        format!("{} checks, max rel err {:.2e} ({worst}), {:.1} s", out.entries.len(), out.max_rel_err, out.elapsed_ms as f64 / 1e3),
    ))
}

// ---------------------------------------------------------------- 2

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy FPS by full rescans: start at row 0, add the row whose nearest
/// chosen row is farthest, ties to the lowest index.
fn fps_oracle(x: &[f64], dim: usize, m: usize) -> Vec<usize> {
    let n = x.len() / dim;
    let row = |i: usize| &x[i * dim..(i + 1) * dim];
    let mut chosen = vec![0];
    while chosen.len() < m {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|i| !chosen.contains(i)) {
            let near = chosen.iter().map(|&c| sq(row(i), row(c))).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(d, _)| near > d) {
                best = Some((near, i));
            }
        }
        chosen.push(best.expect("m ≤ n").1);
    }
    chosen
}

fn ap_oracle(rel: &[bool], k: usize) -> (f64, f64) {
    let mut hits = 0.0;
    let mut precisions = Vec::new();
    for (i, &r) in rel.iter().take(k).enumerate() {
        if r {
            hits += 1.0;
            precisions.push(hits / (i + 1) as f64);
        }
    }
    let ap = if precisions.is_empty() { 0.0 } else { precisions.iter().sum::<f64>() / precisions.len() as f64 };
    (ap, hits / k as f64)
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut fps_bad = 0;
    let mut knn_bad = 0;
    for _ in 0..200 {
        let (n, dim) = (rng.random_range(1..=64), rng.random_range(1..=3));
        // Integer grid coordinates make exact distance ties common.
        let x: Vec<f64> = (0..n * dim).map(|_| f64::from(rng.random_range(-4i32..=4))).collect();
        let m = rng.random_range(1..=n);
        if fps_indices(&x, dim, m, None)? != fps_oracle(&x, dim, m) {
            fps_bad += 1;
        }
    }
    for _ in 0..200 {
        let (n, dim) = (rng.random_range(1..=64), rng.random_range(1..=3));
        let keys: Vec<f64> = (0..n * dim).map(|_| f64::from(rng.random_range(-4i32..=4))).collect();
        let queries: Vec<f64> = (0..4 * dim).map(|_| rng.random_range(-4.0..4.0)).collect();
        let k = rng.random_range(1..=n);
        let got = knn_indices(&queries, &keys, dim, k, None)?;
        for (qi, q) in queries.chunks(dim).enumerate() {
            let mut all: Vec<(f64, usize)> = keys.chunks(dim).map(|r| sq(q, r)).zip(0..).collect();
            all.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            if got[qi * k..(qi + 1) * k].iter().ne(all.iter().take(k).map(|p| &p.1)) {
                knn_bad += 1;
                break;
            }
        }
    }
    let mut ret_bad = 0;
    for _ in 0..1000 {
        let g = rng.random_range(1..=60);
        let mut gallery = EmbeddingTable::new(4);
        let label: Vec<bool> = (0..g).map(|_| rng.random_bool(0.3)).collect();
        for i in 0..g {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            gallery.push(i.to_string(), &v)?;
        }
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = rng.random_range(1..=g);
        let m = retrieval_eval(&[q.clone()], &gallery, |_, j| label[j], k)?;
        let mut order: Vec<usize> = (0..g).collect();
        let score = |j: usize| -> f64 { q.iter().zip(gallery.row(j)).map(|(a, b)| a * b).sum() };
        order.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).expect("finite").then(a.cmp(&b)));
        let rel: Vec<bool> = order.iter().map(|&j| label[j]).collect();
        let (ap, prec) = ap_oracle(&rel, k);
        let direct = ranked_metrics(&rel, k);
        if m.map_at_k != ap || m.prec_at_k != prec || direct.map_at_k != ap || m.acc_at_1 != f64::from(u8::from(rel[0])) {
            ret_bad += 1;
        }
    }
    Ok(verdict(
        fps_bad + knn_bad + ret_bad == 0,
        format!("mismatches: fps {fps_bad}/200, knn {knn_bad}/200, retrieval {ret_bad}/1000"),
    ))
}

// ---------------------------------------------------------------- 3

/// Arc-length position of every output point on the input polyline,
/// located by a forward walk over the input segments.
fn positions_on(input: &[Point], output: &[Point]) -> Option<Vec<f64>> {
    let cum = cumulative_arc_length(input);
    let mut seg = 0;
    let mut out = Vec::with_capacity(output.len());
    for p in output {
        loop {
            if seg + 1 >= input.len() {
                if p.dist(&input[input.len() - 1]) < 1e-9 {
                    out.push(cum[input.len() - 1]);
                    break;
                }
                return None;
            }
            let (a, b) = (input[seg], input[seg + 1]);
            let len = a.dist(&b);
            let t = if len > 0.0 { ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / (len * len) } else { 0.0 };
            let foot = Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
            if (-1e-9..=1.0 + 1e-9).contains(&t) && p.dist(&foot) < 1e-9 {
                out.push(cum[seg] + t * len);
                break;
            }
            seg += 1;
        }
    }
    Some(out)
}

fn resampling() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let delta = PreprocessConfig::default().resample_interval;
    let (mut worst_cv, mut measured, mut unlocated) = (0.0f64, 0, 0);
    let (mut erase_bad, mut preserve_bad) = (0, 0);
    for _ in 0..500 {
        let n = rng.random_range(2..30);
        let pts: Vec<Point> = (0..n).map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let stroke = Stroke::new(pts.clone());
        let r = resample_uniform(&stroke, delta, false)?;
        match positions_on(&pts, &r.points) {
            Some(pos) => {
                let gaps: Vec<f64> = pos.windows(2).map(|w| w[1] - w[0]).collect();
                let inner = &gaps[..gaps.len() - 1];
                if inner.len() >= 2 {
                    let mean = inner.iter().sum::<f64>() / inner.len() as f64;
                    let var = inner.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / inner.len() as f64;
                    worst_cv = worst_cv.max(var.sqrt() / mean);
                    measured += 1;
                }
            }
            None => unlocated += 1,
        }
        // Same geometry, extra vertices spliced into every segment.
        let mut dense = vec![pts[0]];
        for w in pts.windows(2) {
            let extra = rng.random_range(0..4);
            let mut ts: Vec<f64> = (0..extra).map(|_| rng.random_range(0.0..1.0)).collect();
            ts.sort_by(f64::total_cmp);
            dense.extend(ts.iter().map(|&t| Point::new(w[0].x + (w[1].x - w[0].x) * t, w[0].y + (w[1].y - w[0].y) * t)));
            dense.push(w[1]);
        }
        let dense = Stroke::new(dense);
        let rd = resample_uniform(&dense, delta, false)?;
        if rd.len() != r.len() || rd.points.iter().zip(&r.points).any(|(a, b)| a.dist(b) > 1e-9) {
            erase_bad += 1;
        }
        let kept = resample_uniform(&dense, delta, true)?;
        let differs = dense.len() != stroke.len();
        if kept != dense || (differs && kept.len() == r.len() && kept.points.iter().zip(&r.points).all(|(a, b)| a.dist(b) < 1e-9)) {
            preserve_bad += 1;
        }
    }
    Ok(verdict(
        worst_cv < 1e-6 && unlocated == 0 && erase_bad == 0 && preserve_bad == 0,
        format!(
            "worst gap rel. stdev {worst_cv:.2e} over {measured} strokes; unlocated {unlocated}; erasure failures {erase_bad}; preserve-mode failures {preserve_bad}"
        ),
    ))
}

// ---------------------------------------------------------------- 4

fn shuffle_invariance() -> Check {
    set_precision(Precision::F32);
    let result = (|| -> Check {
        let cfg = PreprocessConfig::default();
        let (sk, _) = prepare(&synth_dataset(10, 4), &cfg, 1)?;
        let padded = pad_all(&sk, &cfg)?;
        let model = Classifier::new(RunConfig::default().stage, 10, 4)?;
        let refs: Vec<&PaddedSketch> = padded.iter().collect();
        let base = model.log_probs(&refs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let shuffled: Vec<PaddedSketch> = padded
                .iter()
                .map(|p| {
                    let mut perm: Vec<usize> = (0..p.s_max).collect();
                    perm.shuffle(&mut rng);
                    p.permute_strokes(&perm)
                })
                .collect();
            let lp = model.log_probs(&shuffled.iter().collect::<Vec<_>>())?;
            for (a, b) in base.iter().flatten().zip(lp.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(verdict(worst <= 1e-4, format!("{} sketches x 20 permutations, max |Δ log p| {worst:.2e} (32-bit)", padded.len())))
    })();
    set_precision(Precision::F64);
    result
}

// ---------------------------------------------------------------- QuickDraw

fn quickdraw_dir() -> Option<PathBuf> {
    std::env::var_os("SDG_QUICKDRAW_DIR").map(PathBuf::from).filter(|p| p.is_dir())
}

fn skip_without_data() -> Outcome {
    Outcome::Skip("set SDG_QUICKDRAW_DIR to a directory of QuickDraw simplified *.ndjson files".into())
}

fn categories(dir: &Path) -> Result<Vec<String>, Box<dyn std::error::Error>> {
    if let Ok(list) = std::env::var("SDG_CATEGORIES") {
        return Ok(list.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect());
    }
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.path().file_name()?.to_str()?.strip_suffix(".ndjson").map(str::to_owned))
        .collect();
    names.sort();
    names.truncate(10);
    Ok(names)
}

/// Raw sketches of the chosen categories, `per_class` drawn at random from
/// each file.
fn load_raw(dir: &Path, names: &[String], per_class: usize, seed: u64) -> Result<Vec<Sketch>, Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        categories: names.to_vec(),
        ..RunConfig::default()
    };
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in names {
        let (mut sk, _, _) = read_quickdraw(&dir.join(format!("{name}.ndjson")), &cfg)?;
        sk.shuffle(&mut rng);
        sk.truncate(per_class);
        out.extend(sk);
    }
    Ok(out)
}

fn ablation_budget() -> usize {
    std::env::var("SDG_ABLATION_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(10)
}

// ---------------------------------------------------------------- 5

fn desk_classification() -> Check {
    let Some(dir) = quickdraw_dir() else { return Ok(skip_without_data()) };
    let names = categories(&dir)?;
    let cfg = RunConfig::default();
    // Headroom for sketches the preprocessing filters drop.
    let raw = load_raw(&dir, &names, 1300, 5)?;
    let (kept, _) = prepare(&raw, &cfg.preprocess, 0)?;
    let padded = pad_all(&kept, &cfg.preprocess)?;
    let (train, test) = split_per_label(&padded, |p| p.label, 1000, 100, 5);
    if train.len() < 1000 * names.len() || test.len() < 100 * names.len() {
        return Ok(Outcome::Fail(format!(
            "need 1000 train + 100 test sketches per class after preprocessing, got {} / {} over {} classes",
            train.len(),
            test.len(),
            names.len()
        )));
    }
    let mut model = Classifier::new(cfg.stage.clone(), names.len(), 5)?;
    let tc = TrainConfig { epochs: 30, ..cfg.train_config() };
    let t0 = Instant::now();
    let mut log = MetricsLog::default();
    let report = model.train(&train, &test, &tc, &mut log)?;
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    Ok(verdict(
        report.best_score >= 0.80 && minutes <= 60.0,
        format!(
            "{} classes, {} train / {} test: best test accuracy {:.4} (epoch {}), {minutes:.1} min",
            names.len(),
            train.len(),
            test.len(),
            report.best_score,
            report.best_epoch
        ),
    ))
}

// ---------------------------------------------------------------- 6, 7

fn ablation_base() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.train.epochs = ablation_budget();
    cfg.val_fraction = 100.0 / 1100.0;
    cfg
}

fn arch_ordering() -> Check {
    let Some(dir) = quickdraw_dir() else { return Ok(skip_without_data()) };
    let names = categories(&dir)?;
    let raw = load_raw(&dir, &names, 1100, 6)?;
    let base = ablation_base();
    let wanted = ["SG", "DG", "SG + DG", "(SG + SS) + (DG + PS) + IF"];
    let variants = ablation_variants(AblationKind::Arch, &base).into_iter().filter(|v| wanted.contains(&v.0.as_str())).collect();
    let t = run_variants(&raw, &base, variants, 1)?;
    let acc = |n: &str| t.get(n).map_or(f64::NAN, |r| r.mean());
    let full = acc(wanted[3]);
    let ok = acc("SG") + 0.01 <= full && acc("DG") + 0.01 <= full && acc("SG + DG") + 0.01 <= full;
    Ok(verdict(
        ok,
        format!(
            "{} epochs: SG {:.4}, DG {:.4}, SG+DG {:.4}, full {:.4}",
            base.train.epochs,
            acc("SG"),
            acc("DG"),
            acc("SG + DG"),
            full
        ),
    ))
}

fn info_ablations() -> Check {
    let Some(dir) = quickdraw_dir() else { return Ok(skip_without_data()) };
    let names = categories(&dir)?;
    let raw = load_raw(&dir, &names, 1100, 7)?;
    let base = ablation_base();
    let t = run_variants(&raw, &base, ablation_variants(AblationKind::Info, &base), 3)?;
    let baseline = t.get("Baseline").map_or(f64::NAN, |r| r.mean());
    let rows: Vec<_> = t.rows.iter().filter(|r| r.name != "Baseline").collect();
    let ok = rows.iter().all(|r| r.mean() + 0.01 <= baseline);
    let detail = rows.iter().map(|r| format!("{} {} {:.4}", r.name, r.process, r.mean())).collect::<Vec<_>>().join(", ");
    Ok(verdict(ok, format!("baseline {baseline:.4} (3 seeds, {} epochs); {detail}", base.train.epochs)))
}

// ---------------------------------------------------------------- 8

fn diffusion_algebra() -> Check {
    let s = DiffusionSchedule::linear(1000, 1e-4, 0.02)?;
    // Independent cumulative product of 1 − β_t, β linear in t ∈ 1..=N.
    let mut prod = 1.0;
    let mut oracle = Vec::new();
    for t in 1..=1000 {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0);
        oracle.push(prod);
    }
    let a1 = s.alpha_bar(1)?;
    let mut max_dev = 0.0f64;
    let mut monotone = true;
    for t in 1..=1000 {
        max_dev = max_dev.max((s.alpha_bar(t)? - oracle[t - 1]).abs() / oracle[t - 1]);
        if t > 1 && s.alpha_bar(t)? >= s.alpha_bar(t - 1)? {
            monotone = false;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut inv_err = 0.0f64;
    for _ in 0..200 {
        let x0: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let xt = s.q_sample(&x0, 1, &eps)?;
        let back = s.reverse_step(&xt, &eps, 1, &vec![0.0; 64])?;
        inv_err = inv_err.max(x0.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok(verdict(
        a1 == 0.9999 && a1 == oracle[0] && monotone && max_dev < 1e-12 && inv_err <= 1e-5,
        format!("ᾱ_1 = {a1}, max rel. deviation from product oracle {max_dev:.1e}, strictly decreasing: {monotone}, inversion error {inv_err:.1e}"),
    ))
}

// ---------------------------------------------------------------- 9

fn generation_smoke() -> Check {
    let Some(dir) = quickdraw_dir() else { return Ok(skip_without_data()) };
    let names = vec!["apple".to_owned()];
    if !dir.join("apple.ndjson").is_file() {
        return Ok(Outcome::Skip("apple.ndjson not in SDG_QUICKDRAW_DIR".into()));
    }
    let mut cfg = RunConfig::desk();
    cfg.diffusion_steps = 100;
    cfg.train.epochs = 10;
    let raw = load_raw(&dir, &names, 2600, 9)?;
    let (kept, _) = prepare(&raw, &cfg.preprocess, 0)?;
    let data = kept
        .iter()
        .take(2000)
        .map(|s| Ok(layout_padded(&fit_layout(s, cfg.gen_layout)?, cfg.gen_layout)?))
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
    let mut model = Generator::new(cfg.gen_stage(), cfg.gen_layout, cfg.schedule()?, cfg.seed)?;
    let report = model.train(&data, &cfg.train_config(), &mut MetricsLog::default())?;
    let (first, last) = (report.epoch_losses[0], *report.epoch_losses.last().expect("epochs"));
    let t0 = Instant::now();
    let samples = model.generate(100, 25, 9, false)?;
    let secs = t0.elapsed().as_secs_f64();
    let pts: Vec<Point> = samples.iter().flat_map(|s| s.points().copied()).collect();
    let finite = pts.iter().all(Point::is_finite);
    let inside = pts.iter().filter(|p| p.x.abs() <= 1.5 && p.y.abs() <= 1.5).count() as f64 / pts.len() as f64;
    Ok(verdict(
        last <= 0.5 * first && finite && inside >= 0.95 && secs <= 300.0,
        format!(
            "{} sketches: loss {first:.4} -> {last:.4}; {} samples finite: {finite}, {:.1}% in [-1.5, 1.5], sampled in {secs:.1} s",
            data.len(),
            samples.len(),
            100.0 * inside
        ),
    ))
}

// ---------------------------------------------------------------- 10

fn grid_sketch(rng: &mut ChaCha8Rng, scale: f64) -> Sketch {
    let strokes = (0..rng.random_range(1..8))
        .map(|_| {
            Stroke::new(
                (0..rng.random_range(1..40))
                    .map(|_| Point::new(f64::from(rng.random_range(0..256 * 64)) * scale, f64::from(rng.random_range(0..256 * 64)) * scale))
                    .collect(),
            )
        })
        .collect();
    let mut s = Sketch::new(strokes);
    s.label = rng.random_bool(0.8).then(|| rng.random_range(0..345));
    s
}

fn metrics_run(dir: &Path, tag: &str) -> Result<Vec<u8>, Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::desk();
    cfg.train.epochs = 2;
    // Same log path for every run: the path itself is echoed in the header.
    cfg.metrics = Some(dir.join("metrics.jsonl"));
    let cache = dir.join("tiny.sdg");
    let ckpt = dir.join(format!("{tag}.ckpt"));
    cmd_train(Task::Classify, &cache, &cfg, &ckpt)?;
    Ok(std::fs::read(dir.join("metrics.jsonl"))?)
}

fn format_round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    // QuickDraw-style integer coordinates and a finer dyadic grid.
    let sketches: Vec<Sketch> = (0..1000).map(|i| grid_sketch(&mut rng, if i % 2 == 0 { 1.0 / 64.0 } else { 1.0 })).collect();
    let mut s3_bad = 0;
    for s in &sketches {
        let origin = s.strokes[0].points[0];
        let mut back = parse_stroke3(&to_stroke3(s), origin)?;
        let mut text = parse_stroke3_text(&format_stroke3_text(s))?;
        back.label = s.label;
        text.label = s.label;
        if back != *s || text != *s {
            s3_bad += 1;
        }
    }
    let mut buf = Vec::new();
    write_cache_to(&sketches, &mut buf)?;
    let cache_ok = read_cache_from(&mut buf.as_slice())? == sketches;

    let dir = tempfile::tempdir()?;
    let ndjson: String = synth_dataset(3, 10)
        .iter()
        .map(|s| {
            let drawing: Vec<[Vec<f64>; 2]> =
                s.strokes.iter().map(|st| [st.points.iter().map(|p| p.x.round()).collect(), st.points.iter().map(|p| p.y.round()).collect()]).collect();
            let word = sdgraph::synth::CATEGORIES[s.label.unwrap_or(0) as usize];
            format!("{}\n", serde_json::json!({ "word": word, "drawing": drawing }))
        })
        .collect();
    std::fs::write(dir.path().join("tiny.ndjson"), ndjson)?;
    cmd_prep(&dir.path().join("tiny.ndjson"), &dir.path().join("tiny.sdg"), &RunConfig::desk(), 1, false)?;
    let (a, b) = (metrics_run(dir.path(), "a")?, metrics_run(dir.path(), "b")?);
    Ok(verdict(
        s3_bad == 0 && cache_ok && a == b && !a.is_empty(),
        format!(
            "stroke-3 mismatches {s3_bad}/1000, cache bit-exact: {cache_ok}, metrics logs identical: {} ({} bytes)",
            a == b,
            a.len()
        ),
    ))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 10] = [
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracle_equivalence),
        ("resampling", resampling),
        ("stroke-shuffle invariance", shuffle_invariance),
        ("desk-scale classification", desk_classification),
        ("architecture-ablation ordering", arch_ordering),
        ("effective-information ablations", info_ablations),
        ("diffusion algebra", diffusion_algebra),
        ("generation smoke", generation_smoke),
        ("format round-trips", format_round_trips),
    ];
    let only: Option<usize> = std::env::var("SDG_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let line = match check() {
            Ok(Outcome::Pass(d)) => format!("PASS  {d}"),
            Ok(Outcome::Skip(d)) => format!("SKIP  {d}"),
            Ok(Outcome::Fail(d)) => {
                failed += 1;
                format!("FAIL  {d}")
            }
            Err(e) => {
                failed += 1;
                format!("FAIL  error: {e}")
            }
        };
        println!("criterion {:>2} {name:<32} {line}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
