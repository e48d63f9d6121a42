//! Property tests over the public API.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdgraph::batch::SketchBatch;
use sdgraph::data::{pad_all, prepare};
use sdgraph::fusion::StageConfig;
use sdgraph::io::{format_stroke3_text, parse_stroke3, parse_stroke3_text, read_cache_from, to_stroke3, write_cache_to};
use sdgraph::preprocess::{pad_to_tensor, preprocess, resample_density, resample_uniform, PaddedSketch, PreprocessConfig};
use sdgraph::sketch::{Point, Sketch, Stroke};
use sdgraph::synth::synth_dataset;
use sdgraph::tasks::{ranked_metrics, sinusoidal_embed, Classifier, DiffusionSchedule, GenLayout, Generator};
use sdgraph::tensor::{fps_indices, knn_indices, Tape};

fn small_cfg() -> StageConfig {
    StageConfig {
        sparse_widths: vec![8, 12, 16],
        dense_widths: vec![8, 12, 16],
        stroke_hidden: 8,
        ..StageConfig::default()
    }
}

fn point() -> impl Strategy<Value = Point> {
    (-100.0..100.0f64, -100.0..100.0f64).prop_map(|(x, y)| Point::new(x, y))
}

fn polyline(max: usize) -> impl Strategy<Value = Stroke> {
    prop::collection::vec(point(), 2..max).prop_map(Stroke::new)
}

fn sketch() -> impl Strategy<Value = Sketch> {
    prop::collection::vec(polyline(12), 1..6).prop_map(Sketch::new)
}

fn gaps(s: &Stroke) -> Vec<f64> {
    s.points.windows(2).map(|w| w[0].dist(&w[1])).collect()
}

fn padded_pool() -> Vec<PaddedSketch> {
    let cfg = PreprocessConfig::default();
    let (raw, _) = prepare(&synth_dataset(2, 99), &cfg, 1).unwrap();
    pad_all(&raw, &cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stroke3_round_trip(s in sketch()) {
        let origin = s.strokes[0].points[0];
        let back = parse_stroke3(&to_stroke3(&s), origin).unwrap();
        prop_assert_eq!(back.strokes.len(), s.strokes.len());
        for (a, b) in s.points().zip(back.points()) {
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
        let text = parse_stroke3_text(&format_stroke3_text(&s)).unwrap();
        prop_assert_eq!(text.num_points(), s.num_points());
    }

    #[test]
    fn cache_round_trip_is_bit_exact(sketches in prop::collection::vec(sketch(), 0..5)) {
        let exact: Vec<Sketch> = sketches.iter().map(Sketch::to_f32_precision).collect();
        let mut buf = Vec::new();
        write_cache_to(&exact, &mut buf).unwrap();
        prop_assert_eq!(&buf[..4], b"SDG1");
        prop_assert_eq!(read_cache_from(&mut buf.as_slice()).unwrap(), exact);
    }

    #[test]
    fn uniform_resampling_has_equal_gaps(s in polyline(20), delta in 0.5..20.0f64) {
        prop_assume!(s.arc_length() > delta);
        let r = resample_uniform(&s, delta, false).unwrap();
        let g = gaps(&r);
        let inner = &g[..g.len() - 1];
        for &d in inner {
            prop_assert!((d - delta).abs() <= 1e-9 * delta.max(1.0) || d < delta);
        }
        prop_assert!(*g.last().unwrap() <= delta * (1.0 + 1e-9));
        prop_assert_eq!(r.points.first(), s.points.first());
        prop_assert_eq!(r.points.last(), s.points.last());
    }

    #[test]
    fn uniform_resampling_erases_point_frequency(a in point(), b in point(), extra in 1usize..20) {
        prop_assume!(a.dist(&b) > 1.0);
        let sparse = Stroke::new(vec![a, b]);
        let mid = |t: f64| Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
        // Same segment, points bunched towards the start.
        let dense = Stroke::new((0..=extra + 1).map(|i| mid((i as f64 / (extra + 1) as f64).powi(2))).collect());
        let (u1, u2) = (resample_uniform(&sparse, 0.3, false).unwrap(), resample_uniform(&dense, 0.3, false).unwrap());
        prop_assert_eq!(u1.len(), u2.len());
        for (p, q) in u1.points.iter().zip(&u2.points) {
            prop_assert!(p.dist(q) < 1e-9);
        }
        let (k1, k2) = (resample_density(&sparse, 12).unwrap(), resample_density(&dense, 12).unwrap());
        prop_assert!(k1.points.iter().zip(&k2.points).any(|(p, q)| p.dist(q) > 1e-6));
    }

    #[test]
    fn preprocess_is_normalized_and_deterministic(s in sketch()) {
        let cfg = PreprocessConfig::default();
        if let Ok(p) = preprocess(&s, &cfg) {
            let m = p.points().map(|q| q.x.abs().max(q.y.abs())).fold(0.0, f64::max);
            prop_assert!(m <= 1.0 + 1e-9);
            prop_assert_eq!(preprocess(&s, &cfg).unwrap(), p.clone());
            let pad = pad_to_tensor(&p, &cfg).unwrap();
            prop_assert!(pad.check().is_ok());
        }
    }

    #[test]
    fn knn_matches_full_sort(n in 1usize..64, dim in 1usize..4, k in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Coarse grid so that distance ties actually occur.
        let keys: Vec<f64> = (0..n * dim).map(|_| f64::from(rng.random_range(-3i32..=3))).collect();
        let queries: Vec<f64> = (0..3 * dim).map(|_| f64::from(rng.random_range(-3i32..=3))).collect();
        let k = k.min(n);
        let got = knn_indices(&queries, &keys, dim, k, None).unwrap();
        for (qi, q) in queries.chunks(dim).enumerate() {
            let mut all: Vec<(f64, usize)> = keys.chunks(dim).enumerate()
                .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = all.iter().take(k).map(|p| p.1).collect();
            prop_assert_eq!(&got[qi * k..(qi + 1) * k], &want[..]);
        }
    }

    #[test]
    fn ranked_metrics_match_definitions(rel in prop::collection::vec(any::<bool>(), 1..40), k in 1usize..40) {
        let m = ranked_metrics(&rel, k);
        let top: Vec<bool> = rel.iter().take(k).copied().collect();
        let hits = top.iter().filter(|&&r| r).count();
        let precisions: Vec<f64> = (0..top.len()).filter(|&i| top[i])
            .map(|i| top[..=i].iter().filter(|&&r| r).count() as f64 / (i + 1) as f64).collect();
        let ap = if precisions.is_empty() { 0.0 } else { precisions.iter().sum::<f64>() / precisions.len() as f64 };
        prop_assert!((m.map_at_k - ap).abs() < 1e-12);
        prop_assert_eq!(m.prec_at_k, hits as f64 / k as f64);
        prop_assert_eq!(m.acc_at_1 == 1.0, rel[0]);
    }

    #[test]
    fn sinusoidal_embedding_is_bounded(t in 0usize..5000, half in 1usize..32) {
        let e = sinusoidal_embed(t, 2 * half).unwrap();
        prop_assert!(e.iter().all(|v| v.abs() <= 1.0));
        for i in 0..half {
            prop_assert!((e[i] * e[i] + e[half + i] * e[half + i] - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fps_matches_greedy_reference(n in 1usize..64, dim in 1usize..4, m_frac in 0.0..1.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * dim).map(|_| f64::from(rng.random_range(-4i32..=4))).collect();
        let m = ((n as f64 * m_frac) as usize).max(1);
        let d = |i: usize, j: usize| -> f64 { (0..dim).map(|c| (x[i * dim + c] - x[j * dim + c]).powi(2)).sum() };
        let mut want = vec![0usize];
        while want.len() < m {
            // full rescan: distance of every row to its nearest chosen row
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for i in 0..n {
                if want.contains(&i) { continue; }
                let near = want.iter().map(|&c| d(i, c)).fold(f64::INFINITY, f64::min);
                if near > best.0 { best = (near, i); }
            }
            want.push(best.1);
        }
        prop_assert_eq!(fps_indices(&x, dim, m, None).unwrap(), want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Shuffling stroke rows and overwriting masked entries never changes
    /// the classifier's output.
    #[test]
    fn classifier_ignores_stroke_order_and_masked_values(seed in any::<u64>(), junk in -50.0..50.0f64) {
        let pool = padded_pool();
        let model = Classifier::new(small_cfg(), 10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sk = &pool[rng.random_range(0..pool.len())];
        let mut perm: Vec<usize> = (0..sk.s_max).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let mut shuffled = sk.permute_strokes(&perm);
        for (i, m) in shuffled.point_mask.clone().iter().enumerate() {
            if !m {
                shuffled.coords[2 * i] = junk;
                shuffled.coords[2 * i + 1] = -junk;
            }
        }
        let a = model.log_probs(&[sk]).unwrap();
        let b = model.log_probs(&[&shuffled]).unwrap();
        for (x, y) in a[0].iter().zip(&b[0]) {
            prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn log_probs_normalize() {
    let pool = padded_pool();
    let model = Classifier::new(small_cfg(), 10, 1).unwrap();
    let refs: Vec<&PaddedSketch> = pool.iter().take(6).collect();
    for row in model.log_probs(&refs).unwrap() {
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!(lse.abs() < 1e-9, "{lse}");
    }
}

#[test]
fn decoder_returns_one_row_per_input_point() {
    let layout = GenLayout::default();
    let cfg = StageConfig { time_dim: Some(8), ..small_cfg() };
    let g = Generator::new(cfg, layout, DiffusionSchedule::standard(10).unwrap(), 0).unwrap();
    let pool = padded_pool();
    // Ragged strokes are fine for the forward pass; only training needs the full layout.
    let refs: Vec<&PaddedSketch> = pool.iter().take(3).collect();
    let batch = SketchBatch::new(&refs).unwrap();
    let mut tape = Tape::with_params(&g.store);
    let out = g.forward(&mut tape, &batch, &[1, 5, 10], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(tape.shape(out), &[batch.num_points(), 2]);
}

#[test]
fn every_parameter_receives_gradient() {
    let pool = padded_pool();
    let model = Classifier::new(small_cfg(), 10, 2).unwrap();
    let refs: Vec<&PaddedSketch> = pool.iter().filter(|p| p.num_strokes() > 2).take(4).collect();
    let batch = SketchBatch::new(&refs).unwrap();
    let (_, grads) = model.loss(&batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut touched = vec![false; model.store.len()];
    for (id, g) in grads.params() {
        touched[id.index()] |= g.iter().any(|&v| v != 0.0);
    }
    let dead: Vec<&str> = model.store.iter().filter(|(id, _)| !touched[id.index()]).map(|(_, p)| p.name.as_str()).collect();
    assert!(dead.is_empty(), "no gradient reaches {dead:?}");
}
