//! Recovering occluded identities: K-sample tracklet affinity, the
//! detection × tracklet affinity matrix, and optimal assignment.

use crate::error::{Error, Result};
use crate::network::affinity_values;

/// `|D| × |T|` affinities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "{} entries for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(AffinityMatrix { rows, cols, data })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Indices of `k` evenly spaced samples from a tracklet of length `len`
/// (all of them when `len ≤ k`).
pub fn sample_indices(len: usize, k: usize) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    if k <= 1 {
        return vec![len - 1];
    }
    (0..k)
        .map(|i| ((i * (len - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

/// Mean affinity between `w_d` and `k` evenly spaced tracklet embeddings.
pub fn tracklet_affinity(tracklet: &[Vec<f64>], w_d: &[f64], k: usize) -> Result<f64> {
    if tracklet.is_empty() {
        return Err(Error::contract("tracklet_affinity on an empty tracklet"));
    }
    if k == 0 {
        return Err(Error::contract("tracklet_affinity needs K ≥ 1"));
    }
    let idx = sample_indices(tracklet.len(), k);
    Ok(idx.iter().map(|&i| affinity_values(w_d, &tracklet[i])).sum::<f64>() / idx.len() as f64)
}

pub fn build_cost_matrix(candidates: &[Vec<f64>], tracklets: &[&[Vec<f64>]], k: usize) -> Result<AffinityMatrix> {
    let mut data = Vec::with_capacity(candidates.len() * tracklets.len());
    for w_d in candidates {
        for t in tracklets {
            data.push(tracklet_affinity(t, w_d, k)?);
        }
    }
    AffinityMatrix::new(candidates.len(), tracklets.len(), data)
}

/// Maximum-total assignment. Rectangular inputs are padded with zero-valued
/// dummy rows/columns, so exactly `min(rows, cols)` pairs come back, sorted
/// by row.
pub fn hungarian(m: &AffinityMatrix) -> Result<Vec<(usize, usize)>> {
    if let Some(v) = m.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::contract(format!("hungarian: non-finite entry {v}")));
    }
    let n = m.rows.max(m.cols);
    if m.rows == 0 || m.cols == 0 {
        return Ok(Vec::new());
    }
    // minimize negated affinity; 1-based potentials as in the classic
    // shortest-augmenting-path formulation
    let cost = |i: usize, j: usize| -> f64 {
        if i < m.rows && j < m.cols {
            -m.at(i, j)
        } else {
            0.0
        }
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0 && p[j] - 1 < m.rows && j - 1 < m.cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(candidate index, tracklet index)`.
    pub recovered: Vec<(usize, usize)>,
    /// Candidate indices left unassigned.
    pub births: Vec<usize>,
}

/// Hungarian matching of candidates to occluded tracklets; matched pairs
/// with affinity below `alpha` are rejected and their candidates become
/// births.
pub fn associate(candidates: &[Vec<f64>], tracklets: &[&[Vec<f64>]], alpha: f64, k: usize) -> Result<Association> {
    let m = build_cost_matrix(candidates, tracklets, k)?;
    let pairs = hungarian(&m)?;
    let recovered: Vec<(usize, usize)> = pairs.into_iter().filter(|&(d, t)| m.at(d, t) >= alpha).collect();
    let births = (0..candidates.len())
        .filter(|d| !recovered.iter().any(|(r, _)| r == d))
        .collect();
    Ok(Association { recovered, births })
}

/// Best total over all injective row→column maps of the smaller side,
/// by enumeration. Exponential; test oracle only.
pub fn brute_force_max(m: &AffinityMatrix) -> f64 {
    fn rec(m: &AffinityMatrix, r: usize, used: &mut Vec<bool>, skips: usize) -> f64 {
        if r == m.rows {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        // a row may stay unmatched only while spare rows exist
        if skips > 0 {
            best = rec(m, r + 1, used, skips - 1);
        }
        for c in 0..m.cols {
            if !used[c] {
                used[c] = true;
                best = best.max(m.at(r, c) + rec(m, r + 1, used, skips));
                used[c] = false;
            }
        }
        best
    }
    if m.rows == 0 || m.cols == 0 {
        return 0.0;
    }
    rec(m, 0, &mut vec![false; m.cols], m.rows.saturating_sub(m.cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total(m: &AffinityMatrix, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| m.at(r, c)).sum()
    }

    #[test]
    fn one_by_one() {
        let m = AffinityMatrix::new(1, 1, vec![0.9]).unwrap();
        assert_eq!(hungarian(&m).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn recovers_permutation() {
        let perm = [3, 0, 4, 1, 2];
        let mut data = vec![0.1; 25];
        for (r, &c) in perm.iter().enumerate() {
            data[r * 5 + c] = 5.0;
        }
        let m = AffinityMatrix::new(5, 5, data).unwrap();
        let got: Vec<usize> = hungarian(&m).unwrap().iter().map(|p| p.1).collect();
        assert_eq!(got, perm);
    }

    #[test]
    fn matches_brute_force_rectangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..300 {
            let r = rng.random_range(1..=6);
            let c = rng.random_range(1..=6);
            let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = AffinityMatrix::new(r, c, data).unwrap();
            let pairs = hungarian(&m).unwrap();
            assert_eq!(pairs.len(), r.min(c));
            let mut rows: Vec<_> = pairs.iter().map(|p| p.0).collect();
            let mut cols: Vec<_> = pairs.iter().map(|p| p.1).collect();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            assert_eq!((rows.len(), cols.len()), (pairs.len(), pairs.len()));
            assert!((total(&m, &pairs) - brute_force_max(&m)).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let m = AffinityMatrix::new(1, 2, vec![0.5, f64::NAN]).unwrap();
        assert!(hungarian(&m).is_err());
    }

    #[test]
    fn sampling_indices() {
        assert_eq!(sample_indices(9, 3), vec![0, 4, 8]);
        assert_eq!(sample_indices(2, 5), vec![0, 1]);
        assert_eq!(sample_indices(11, 5), vec![0, 3, 5, 8, 10]);
    }

    #[test]
    fn tracklet_affinity_values() {
        let w = vec![0.6, 0.8];
        assert!((tracklet_affinity(&vec![w.clone(); 7], &w, 5).unwrap() - 1.0).abs() < 1e-15);
        let orth = vec![vec![-0.8, 0.6]; 4];
        assert_eq!(tracklet_affinity(&orth, &w, 5).unwrap(), 0.0);
        let t: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 10.0, 0.0]).collect();
        let want = (0.0 + 0.4 + 0.8) / 3.0;
        assert!((tracklet_affinity(&t, &[1.0, 0.0], 3).unwrap() - want).abs() < 1e-15);
        assert!(tracklet_affinity(&[], &w, 5).is_err());
    }

    #[test]
    fn cost_matrix_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v = || (0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let cands = vec![v(), v(), v()];
        let t1 = vec![v(), v()];
        let t2 = vec![v(), v(), v(), v(), v(), v(), v()];
        let m = build_cost_matrix(&cands, &[&t1, &t2], 5).unwrap();
        assert_eq!((m.rows, m.cols), (3, 2));
        for (d, c) in cands.iter().enumerate() {
            assert_eq!(m.at(d, 0), tracklet_affinity(&t1, c, 5).unwrap());
            assert_eq!(m.at(d, 1), tracklet_affinity(&t2, c, 5).unwrap());
        }
        let empty = build_cost_matrix(&cands, &[], 5).unwrap();
        assert_eq!((empty.rows, empty.cols), (3, 0));
    }

    #[test]
    fn gating_and_births() {
        let e = |x: f64, y: f64| vec![x, y];
        let trk_a = vec![e(1.0, 0.0); 3];
        let trk_b = vec![e(0.0, 1.0); 3];
        // candidate 0 looks like a, candidate 1 like nobody
        let cands = vec![e(0.95, (1.0f64 - 0.95 * 0.95).sqrt()), e(-1.0, 0.0)];
        let a = associate(&cands, &[&trk_a, &trk_b], 0.6, 5).unwrap();
        assert_eq!(a.recovered, vec![(0, 0)]);
        assert_eq!(a.births, vec![1]);
        let none = associate(&[], &[&trk_a], 0.6, 5).unwrap();
        assert_eq!(none, Association::default());
        let no_trk = associate(&cands, &[], 0.6, 5).unwrap();
        assert_eq!(no_trk.births, vec![0, 1]);
    }

    #[test]
    fn order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut unit = || {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        for _ in 0..50 {
            let cands: Vec<_> = (0..4).map(|_| unit()).collect();
            let trks: Vec<Vec<Vec<f64>>> = (0..3).map(|_| (0..4).map(|_| unit()).collect()).collect();
            let refs: Vec<&[Vec<f64>]> = trks.iter().map(|t| t.as_slice()).collect();
            let a = associate(&cands, &refs, -1.0, 5).unwrap();
            let rc: Vec<_> = cands.iter().rev().cloned().collect();
            let rt: Vec<&[Vec<f64>]> = refs.iter().rev().copied().collect();
            let b = associate(&rc, &rt, -1.0, 5).unwrap();
            let mut mapped: Vec<_> = b.recovered.iter().map(|&(d, t)| (3 - d, 2 - t)).collect();
            mapped.sort_unstable();
            assert_eq!(a.recovered, mapped);
        }
    }
}
