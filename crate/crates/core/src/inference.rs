//! Inference probability between per-IP series: correlation coefficients,
//! threshold clustering, per-IP summary statistics, and Markov state
//! transition probability matrices (MSTPMs) with their similarity measure.
//!
//! Correlations degrade at high time resolution (sparse series decorrelate),
//! which is why the MSTPM route exists: transition structure of the
//! coarse-grained states is robust against resolution and amplitude
//! fluctuations. Zero-variance series get an explicit undefined marker,
//! never a silent 0.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowRecord;
use crate::matrix::{AttackMatrix, StateSequence};

/// Pairwise Pearson coefficients; `None` marks pairs involving a
/// zero-variance series.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    n_ips: usize,
    vals: Vec<Option<f64>>,
}

impl CorrelationMatrix {
    pub fn n_ips(&self) -> usize {
        self.n_ips
    }

    /// 1-based IP indices.
    pub fn get(&self, i: u32, j: u32) -> Option<f64> {
        self.vals[(i as usize - 1) * self.n_ips + (j as usize - 1)]
    }
}

/// Pearson correlation of every IP pair of the matrix.
pub fn correlation_matrix(matrix: &AttackMatrix) -> Result<CorrelationMatrix> {
    correlation_matrix_jobs(matrix, 1)
}

/// Same as [`correlation_matrix`], splitting the row-pair work over up to
/// `jobs` threads. Results are identical regardless of `jobs`.
pub fn correlation_matrix_jobs(matrix: &AttackMatrix, jobs: usize) -> Result<CorrelationMatrix> {
    let n_bins = matrix.n_bins();
    if n_bins < 2 {
        return Err(Error::validation("correlation needs at least 2 bins"));
    }
    let n = matrix.n_ips();
    let mut means = vec![0.0f64; n];
    let mut stds = vec![0.0f64; n];
    for i in 0..n {
        let row = matrix.row(i as u32 + 1);
        let m = row.iter().map(|&c| c as f64).sum::<f64>() / n_bins as f64;
        let var = row.iter().map(|&c| (c as f64 - m) * (c as f64 - m)).sum::<f64>() / n_bins as f64;
        means[i] = m;
        stds[i] = var.max(0.0).sqrt();
    }

    let jobs = jobs.max(1).min(n.max(1));
    let compute_rows = |rows: std::ops::Range<usize>| -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(rows.len() * n);
        for i in rows {
            let ri = matrix.row(i as u32 + 1);
            for j in 0..n {
                if j < i {
                    // Filled from the transpose afterwards.
                    out.push(None);
                    continue;
                }
                if stds[i] == 0.0 || stds[j] == 0.0 {
                    out.push(None);
                    continue;
                }
                if i == j {
                    out.push(Some(1.0));
                    continue;
                }
                let rj = matrix.row(j as u32 + 1);
                let mut dot = 0.0f64;
                for (&a, &b) in ri.iter().zip(rj) {
                    dot += a as f64 * b as f64;
                }
                let cov = dot / n_bins as f64 - means[i] * means[j];
                out.push(Some((cov / (stds[i] * stds[j])).clamp(-1.0, 1.0)));
            }
        }
        out
    };

    let mut vals: Vec<Option<f64>> = if jobs == 1 {
        compute_rows(0..n)
    } else {
        let chunk = n.div_ceil(jobs);
        let mut pieces: Vec<Vec<Option<f64>>> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|k| {
                    let lo = (k * chunk).min(n);
                    let hi = ((k + 1) * chunk).min(n);
                    let f = &compute_rows;
                    scope.spawn(move || f(lo..hi))
                })
                .collect();
            for h in handles {
                pieces.push(h.join().expect("correlation worker panicked"));
            }
        });
        pieces.concat()
    };
    for i in 0..n {
        for j in 0..i {
            vals[i * n + j] = vals[j * n + i];
        }
    }
    Ok(CorrelationMatrix { n_ips: n, vals })
}

/// For each IP, the size of `{j : rho_ij >= rho_c}` (undefined pairs never
/// qualify).
pub fn threshold_cluster(corr: &CorrelationMatrix, rho_c: f64) -> Vec<usize> {
    let n = corr.n_ips;
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| matches!(corr.vals[i * n + j], Some(r) if r >= rho_c))
                .count()
        })
        .collect()
}

/// Per-IP attack volume and spacing.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IpSummary {
    pub ip: u32,
    /// Total number of attacks M.
    pub total_attacks: u64,
    /// Mean interval between consecutive attacks; absent for M < 2.
    pub mean_interval: Option<f64>,
}

/// M and the mean inter-attack interval for every IP, from raw records.
pub fn summary_stats(records: &[FlowRecord], ip_count: u32) -> Vec<IpSummary> {
    let mut times: Vec<Vec<f64>> = vec![Vec::new(); ip_count as usize];
    for r in records {
        if r.ip >= 1 && r.ip <= ip_count {
            times[(r.ip - 1) as usize].push(r.t);
        }
    }
    times
        .into_iter()
        .enumerate()
        .map(|(i, mut ts)| {
            ts.sort_by(|a, b| a.total_cmp(b));
            let m = ts.len() as u64;
            let mean_interval = if m >= 2 {
                Some((ts[ts.len() - 1] - ts[0]) / (m - 1) as f64)
            } else {
                None
            };
            IpSummary { ip: i as u32 + 1, total_attacks: m, mean_interval }
        })
        .collect()
}

/// Markov state transition probability matrix of one coarse-grained
/// sequence. `rows[m]` is the next-state distribution given state
/// `states[m]`; `None` if the state is never left (only observed in the
/// final position).
#[derive(Debug, Clone, Serialize)]
pub struct Mstpm {
    pub states: Vec<i32>,
    pub rows: Vec<Option<Vec<f64>>>,
}

impl Mstpm {
    pub fn row(&self, state: i32) -> Option<&[f64]> {
        let idx = self.states.binary_search(&state).ok()?;
        self.rows[idx].as_deref()
    }
}

/// Count consecutive state pairs and normalize each row.
pub fn build_mstpm(seq: &StateSequence) -> Result<Mstpm> {
    if seq.states.len() < 2 {
        return Err(Error::validation("MSTPM needs a sequence of length >= 2"));
    }
    let mut index: BTreeMap<i32, usize> = BTreeMap::new();
    for &s in &seq.states {
        let next = index.len();
        index.entry(s).or_insert(next);
    }
    // BTreeMap iteration is sorted; re-map to sorted positions.
    let states: Vec<i32> = index.keys().copied().collect();
    let pos: BTreeMap<i32, usize> = states.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let k = states.len();
    let mut counts = vec![0u64; k * k];
    for w in seq.states.windows(2) {
        counts[pos[&w[0]] * k + pos[&w[1]]] += 1;
    }
    let rows = (0..k)
        .map(|m| {
            let row = &counts[m * k..(m + 1) * k];
            let total: u64 = row.iter().sum();
            if total == 0 {
                None
            } else {
                Some(row.iter().map(|&c| c as f64 / total as f64).collect())
            }
        })
        .collect();
    Ok(Mstpm { states, rows })
}

/// Similarity of two MSTPMs: align both onto the union of their state sets
/// (states missing from one matrix contribute zero entries), drop rows that
/// are undefined in either, flatten row-major, and take the Pearson
/// coefficient. `None` when fewer than 2 aligned entries remain or either
/// flattened vector has zero variance.
pub fn mstpm_similarity(a: &Mstpm, b: &Mstpm) -> Option<f64> {
    let mut union: Vec<i32> = a.states.iter().chain(b.states.iter()).copied().collect();
    union.sort_unstable();
    union.dedup();
    let u = union.len();

    // Row for `state` over the union columns: None if the matrix knows the
    // state but never saw it leave; zeros if the state is absent entirely.
    let aligned_row = |m: &Mstpm, state: i32| -> Option<Vec<f64>> {
        match m.states.binary_search(&state) {
            Ok(idx) => m.rows[idx].as_ref().map(|row| {
                let mut out = vec![0.0; u];
                for (j, &s) in union.iter().enumerate() {
                    if let Ok(col) = m.states.binary_search(&s) {
                        out[j] = row[col];
                    }
                }
                out
            }),
            Err(_) => Some(vec![0.0; u]),
        }
    };

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &state in &union {
        match (aligned_row(a, state), aligned_row(b, state)) {
            (Some(ra), Some(rb)) => {
                xs.extend(ra);
                ys.extend(rb);
            }
            // Undefined in either: excluded pairwise.
            _ => {}
        }
    }
    pearson(&xs, &ys)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowRecord;
    use crate::matrix::{bin_attacks, OutOfRange};
    use proptest::prelude::*;

    fn matrix_from_rows(rows: &[&[u32]]) -> AttackMatrix {
        let n_bins = rows[0].len();
        let mut records = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    records.push(FlowRecord::new(i as u32 + 1, b as f64));
                }
            }
        }
        bin_attacks(&records, 1.0, rows.len(), 0.0, Some(n_bins), OutOfRange::Reject)
            .unwrap()
            .matrix
    }

    fn seq(states: &[i32]) -> StateSequence {
        StateSequence { ip: 1, delta_t: 1.0, states: states.to_vec() }
    }

    #[test]
    fn identical_series_correlate_fully() {
        let m = matrix_from_rows(&[&[1, 2, 3, 4], &[1, 2, 3, 4]]);
        let c = correlation_matrix(&m).unwrap();
        assert_eq!(c.get(1, 2), Some(1.0));
        assert_eq!(c.get(1, 1), Some(1.0));
    }

    #[test]
    fn anticorrelated_series() {
        let m = matrix_from_rows(&[&[1, 2, 3, 4], &[4, 3, 2, 1]]);
        let c = correlation_matrix(&m).unwrap();
        assert_eq!(c.get(1, 2), Some(-1.0));
    }

    #[test]
    fn zero_variance_series_marked_undefined() {
        let m = matrix_from_rows(&[&[2, 2, 2], &[1, 2, 3]]);
        let c = correlation_matrix(&m).unwrap();
        assert_eq!(c.get(1, 2), None);
        assert_eq!(c.get(1, 1), None);
        assert_eq!(c.get(2, 2), Some(1.0));
    }

    #[test]
    fn correlation_needs_two_bins() {
        let m = matrix_from_rows(&[&[5]]);
        assert!(correlation_matrix(&m).is_err());
    }

    #[test]
    fn parallel_matches_serial() {
        let rows: Vec<Vec<u32>> =
            (0..7).map(|i| (0..23).map(|b| ((i * 7 + b * 3) % 5) as u32).collect()).collect();
        let refs: Vec<&[u32]> = rows.iter().map(|r| r.as_slice()).collect();
        let m = matrix_from_rows(&refs);
        let serial = correlation_matrix_jobs(&m, 1).unwrap();
        let parallel = correlation_matrix_jobs(&m, 4).unwrap();
        for i in 1..=7 {
            for j in 1..=7 {
                assert_eq!(serial.get(i, j), parallel.get(i, j));
            }
        }
    }

    #[test]
    fn threshold_boundaries() {
        let m = matrix_from_rows(&[&[1, 2, 3], &[1, 2, 3], &[3, 1, 2]]);
        let c = correlation_matrix(&m).unwrap();
        let none = threshold_cluster(&c, 1.0 + 1e-9);
        assert_eq!(none, vec![0, 0, 0]);
        let all = threshold_cluster(&c, -1.0);
        assert_eq!(all, vec![3, 3, 3]);
        let tight = threshold_cluster(&c, 0.7);
        assert_eq!(tight, vec![2, 2, 1]);
    }

    #[test]
    fn summary_uniform_spacing() {
        let records: Vec<FlowRecord> = (0..1000).map(|k| FlowRecord::new(1, k as f64)).collect();
        let s = summary_stats(&records, 2);
        assert_eq!(s[0].total_attacks, 1000);
        assert!((s[0].mean_interval.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s[1].total_attacks, 0);
        assert_eq!(s[1].mean_interval, None);
    }

    #[test]
    fn summary_single_attack_has_no_interval() {
        let s = summary_stats(&[FlowRecord::new(1, 5.0)], 1);
        assert_eq!(s[0].total_attacks, 1);
        assert_eq!(s[0].mean_interval, None);
    }

    #[test]
    fn mstpm_constant_sequence() {
        let m = build_mstpm(&seq(&[0, 0, 0])).unwrap();
        assert_eq!(m.states, vec![0]);
        assert_eq!(m.rows[0].as_deref(), Some(&[1.0][..]));
    }

    #[test]
    fn mstpm_hand_counted() {
        // transitions: 0->0, 0->1, 1->0
        let m = build_mstpm(&seq(&[0, 0, 1, 0])).unwrap();
        assert_eq!(m.states, vec![0, 1]);
        assert_eq!(m.row(0).unwrap(), &[0.5, 0.5]);
        assert_eq!(m.row(1).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn mstpm_final_only_state_has_no_row() {
        let m = build_mstpm(&seq(&[-1, -1, 2])).unwrap();
        assert_eq!(m.states, vec![-1, 2]);
        assert!(m.rows[1].is_none());
        assert!(build_mstpm(&seq(&[3])).is_err());
    }

    #[test]
    fn similarity_identical_is_one() {
        let m = build_mstpm(&seq(&[0, 1, 0, 0, 1, 2, 0])).unwrap();
        let s = mstpm_similarity(&m, &m).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_symmetric() {
        let a = build_mstpm(&seq(&[0, 1, 0, 1, 1, 0])).unwrap();
        let b = build_mstpm(&seq(&[-1, -1, 0, -1, -1, -1, 0])).unwrap();
        let ab = mstpm_similarity(&a, &b).unwrap();
        let ba = mstpm_similarity(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn similarity_undefined_for_single_entry() {
        let a = build_mstpm(&seq(&[0, 0, 0])).unwrap();
        assert_eq!(mstpm_similarity(&a, &a), None);
    }

    proptest! {
        #[test]
        fn correlation_affine_invariant(
            base in proptest::collection::vec(0u32..20, 4..40),
            scale in 1u32..5,
            shift in 0u32..7
        ) {
            let scaled: Vec<u32> = base.iter().map(|&c| c * scale + shift).collect();
            let m = matrix_from_rows(&[&base, &scaled]);
            let c = correlation_matrix(&m).unwrap();
            match c.get(1, 2) {
                Some(r) => prop_assert!((r - 1.0).abs() < 1e-9),
                None => {
                    let constant = base.iter().all(|&x| x == base[0]);
                    prop_assert!(constant);
                }
            }
        }

        #[test]
        fn mstpm_rows_sum_to_one(states in proptest::collection::vec(-1i32..4, 2..300)) {
            let m = build_mstpm(&seq(&states)).unwrap();
            for row in m.rows.iter().flatten() {
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn mstpm_self_similarity(states in proptest::collection::vec(-1i32..3, 8..200)) {
            let m = build_mstpm(&seq(&states)).unwrap();
            if let Some(s) = mstpm_similarity(&m, &m) {
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}
