//! Non-differentiable index selection: nearest neighbours, farthest point
//! sampling, masked maxima.
//!
//! Rows are `dim`-wide slices of a flat row-major buffer. Distances are
//! compared squared, which orders exactly like the Euclidean distance and
//! avoids rounding ties introduced by the square root.

use super::TensorError;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn unmasked(n: usize, mask: Option<&[bool]>) -> Vec<usize> {
    match mask {
        Some(m) => (0..n).filter(|&i| m[i]).collect(),
        None => (0..n).collect(),
    }
}

/// For each query row, the `k` unmasked key rows nearest to it, ascending
/// by (distance, index). Returns `Q × k` indices, row-major.
pub fn knn_indices(
    queries: &[f64],
    keys: &[f64],
    dim: usize,
    k: usize,
    key_mask: Option<&[bool]>,
) -> Result<Vec<usize>, TensorError> {
    assert!(dim > 0, "knn_indices: zero dimension");
    let candidates = unmasked(keys.len() / dim, key_mask);
    if k > candidates.len() {
        return Err(TensorError::TooFew {
            requested: k,
            available: candidates.len(),
        });
    }
    let mut out = Vec::with_capacity(queries.len() / dim * k);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(candidates.len());
    for q in queries.chunks_exact(dim) {
        scored.clear();
        scored.extend(candidates.iter().map(|&i| (sq_dist(q, &keys[i * dim..(i + 1) * dim]), i)));
        let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scored.len() && k > 0 {
            scored.select_nth_unstable_by(k - 1, by);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by);
        out.extend(scored.iter().take(k).map(|&(_, i)| i));
    }
    Ok(out)
}

/// Neighbourhoods of a point set over itself: row `i` of the result starts
/// with `i` and continues with the `k − 1` nearest other unmasked rows.
/// `k` is clamped to the number of unmasked rows. Masked rows get an empty
/// neighbourhood.
pub fn knn_indices_self_first(feats: &[f64], dim: usize, k: usize, mask: Option<&[bool]>) -> Vec<Vec<usize>> {
    let n = feats.len() / dim;
    let valid = unmasked(n, mask);
    let k = k.clamp(1, valid.len().max(1));
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(valid.len());
    (0..n)
        .map(|i| {
            if mask.is_some_and(|m| !m[i]) {
                return Vec::new();
            }
            let q = &feats[i * dim..(i + 1) * dim];
            scored.clear();
            scored.extend(
                valid
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (sq_dist(q, &feats[j * dim..(j + 1) * dim]), j)),
            );
            scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            std::iter::once(i).chain(scored.iter().take(k - 1).map(|&(_, j)| j)).collect()
        })
        .collect()
}

/// Greedy farthest point sampling: starts at the lowest-index unmasked row,
/// then repeatedly adds the unmasked row farthest from the chosen set, with
/// ties going to the lowest index.
pub fn fps_indices(feats: &[f64], dim: usize, m: usize, mask: Option<&[bool]>) -> Result<Vec<usize>, TensorError> {
    assert!(dim > 0, "fps_indices: zero dimension");
    let valid = unmasked(feats.len() / dim, mask);
    if m > valid.len() {
        return Err(TensorError::TooFew {
            requested: m,
            available: valid.len(),
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let row = |i: usize| &feats[i * dim..(i + 1) * dim];
    let mut chosen = vec![valid[0]];
    let mut taken = vec![false; valid.len()];
    taken[0] = true;
    let mut min_d: Vec<f64> = valid.iter().map(|&i| sq_dist(row(i), row(valid[0]))).collect();
    while chosen.len() < m {
        let mut best: Option<usize> = None;
        for (slot, &d) in min_d.iter().enumerate() {
            if !taken[slot] && best.is_none_or(|b| d > min_d[b]) {
                best = Some(slot);
            }
        }
        let b = best.expect("m ≤ unmasked rows");
        taken[b] = true;
        chosen.push(valid[b]);
        let c = row(valid[b]);
        for (slot, d) in min_d.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(valid[slot]), c));
        }
    }
    Ok(chosen)
}

/// Maximum over the unmasked entries of a row and its position; ties go to
/// the lowest index.
pub fn max_reduce(values: &[f64], mask: Option<&[bool]>) -> Result<(f64, usize), TensorError> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in values.iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, i));
        }
    }
    best.ok_or(TensorError::EmptyReduction("max_reduce"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_examples() {
        let keys = [0.0, 1.0, 5.0];
        assert_eq!(knn_indices(&[0.0], &keys, 1, 1, Some(&[false, true, true])).unwrap(), vec![1]);
        assert_eq!(knn_indices(&[4.0], &keys, 1, 3, None).unwrap(), vec![2, 1, 0]);
        assert!(matches!(
            knn_indices(&[0.0], &keys, 1, 2, Some(&[true, false, false])),
            Err(TensorError::TooFew { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let keys = [1.0, -1.0, 1.0];
        assert_eq!(knn_indices(&[0.0], &keys, 1, 3, None).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn self_first_neighbourhoods() {
        // rows 0 and 1 coincide; self must still come first.
        let f = [0.0, 0.0, 3.0];
        let nb = knn_indices_self_first(&f, 1, 2, None);
        assert_eq!(nb, vec![vec![0, 1], vec![1, 0], vec![2, 0]]);
        let nb = knn_indices_self_first(&f, 1, 10, Some(&[true, false, true]));
        assert_eq!(nb, vec![vec![0, 2], vec![], vec![2, 0]]);
    }

    #[test]
    fn fps_examples() {
        assert_eq!(fps_indices(&[0.0, 1.0, 10.0], 1, 2, None).unwrap(), vec![0, 2]);
        let all = fps_indices(&[0.0, 1.0, 10.0], 1, 3, None).unwrap();
        assert_eq!(all, vec![0, 2, 1]);
        assert_eq!(fps_indices(&[7.0, 1.0, 10.0], 1, 2, Some(&[false, true, true])).unwrap(), vec![1, 2]);
        assert!(fps_indices(&[0.0], 1, 2, None).is_err());
    }

    #[test]
    fn max_reduce_examples() {
        assert_eq!(max_reduce(&[3., 1., 4.], None).unwrap(), (4., 2));
        assert_eq!(max_reduce(&[3., 1., 4.], Some(&[true, true, false])).unwrap(), (3., 0));
        assert_eq!(max_reduce(&[2., 2.], None).unwrap(), (2., 0));
        assert!(max_reduce(&[1.], Some(&[false])).is_err());
    }
}
