//! Entropy and predictability bounds for coarse-grained attack sequences.
//!
//! The entropy rate of a state sequence is estimated with the
//! non-parametric match-length estimator
//!
//! ```text
//! E ~ (1/n * sum_i Lambda_i)^-1 * log2(n)
//! ```
//!
//! where `Lambda_i` is the length of the shortest substring starting at
//! position `i` that does not appear anywhere in the preceding prefix.
//! The estimator captures both the state distribution and temporal
//! correlations, converging to the true entropy rate for stationary
//! sequences.
//!
//! Given an entropy `E` and alphabet size `N_S`, Fano's inequality bounds
//! the success rate of any predictor by the root `Pi_max` of
//!
//! ```text
//! E = -Pi log2(Pi) - (1-Pi) log2(1-Pi) + (1-Pi) log2(N_S - 1)
//! ```
//!
//! Beware the ground-state artifact: at high time resolution almost every
//! state is `-1`, which drives `Pi_max` toward 1 for trivial reasons. The
//! profile reports the ground-state fraction so the artifact is visible.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{coarse_grain, section_split, AttackMatrix};
use crate::patterns::{BlockSegmentation, PatternClass};

/// Estimator slack: finite sequences can push the match-length estimate
/// slightly past log2(N_S); anything below `-EST_SLACK` is rejected.
pub const EST_SLACK: f64 = 0.1;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EntropyEstimate {
    /// Entropy rate in bits per symbol.
    pub bits: f64,
    /// Distinct states observed in the sequence.
    pub n_states: usize,
    pub len: usize,
    pub estimator: &'static str,
    /// False below 16 symbols, where the estimate is unreliable.
    pub reliable: bool,
}

// Suffix automaton over i32 symbols, built incrementally so that the
// longest-match query at position i sees exactly the prefix x[0..i).
struct SuffixAutomaton {
    len: Vec<u32>,
    link: Vec<i32>,
    next: Vec<Vec<(i32, u32)>>,
    last: usize,
}

impl SuffixAutomaton {
    fn new() -> Self {
        SuffixAutomaton { len: vec![0], link: vec![-1], next: vec![Vec::new()], last: 0 }
    }

    fn get(&self, state: usize, c: i32) -> Option<usize> {
        self.next[state].iter().find(|&&(s, _)| s == c).map(|&(_, t)| t as usize)
    }

    fn set(&mut self, state: usize, c: i32, to: usize) {
        match self.next[state].iter_mut().find(|(s, _)| *s == c) {
            Some(entry) => entry.1 = to as u32,
            None => self.next[state].push((c, to as u32)),
        }
    }

    fn add_state(&mut self, len: u32, link: i32, next: Vec<(i32, u32)>) -> usize {
        self.len.push(len);
        self.link.push(link);
        self.next.push(next);
        self.len.len() - 1
    }

    fn extend(&mut self, c: i32) {
        let cur = self.add_state(self.len[self.last] + 1, -1, Vec::new());
        let mut p = self.last as i32;
        while p >= 0 && self.get(p as usize, c).is_none() {
            self.set(p as usize, c, cur);
            p = self.link[p as usize];
        }
        if p < 0 {
            self.link[cur] = 0;
        } else {
            let q = self.get(p as usize, c).unwrap();
            if self.len[p as usize] + 1 == self.len[q] {
                self.link[cur] = q as i32;
            } else {
                let clone = self.add_state(
                    self.len[p as usize] + 1,
                    self.link[q],
                    self.next[q].clone(),
                );
                while p >= 0 && self.get(p as usize, c) == Some(q) {
                    self.set(p as usize, c, clone);
                    p = self.link[p as usize];
                }
                self.link[q] = clone as i32;
                self.link[cur] = clone as i32;
            }
        }
        self.last = cur;
    }
}

/// Entropy rate of a state sequence via the match-length estimator.
pub fn estimate_entropy(states: &[i32]) -> EntropyEstimate {
    let n = states.len();
    let mut distinct: Vec<i32> = states.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let n_states = distinct.len();
    let reliable = n >= 16;
    if n == 0 || n_states <= 1 {
        // Single-symbol alphabet carries no uncertainty at all.
        return EntropyEstimate { bits: 0.0, n_states, len: n, estimator: "lz_match_length", reliable };
    }

    let mut sam = SuffixAutomaton::new();
    let mut lambda_sum: u64 = 0;
    for i in 0..n {
        // Longest prefix of states[i..] contained in states[0..i).
        let mut state = 0usize;
        let mut matched = 0usize;
        while i + matched < n {
            match sam.get(state, states[i + matched]) {
                Some(next) => {
                    state = next;
                    matched += 1;
                }
                None => break,
            }
        }
        let lambda = if i + matched >= n { n - i + 1 } else { matched + 1 };
        lambda_sum += lambda as u64;
        sam.extend(states[i]);
    }
    let bits = (n as f64) * (n as f64).log2() / lambda_sum as f64;
    EntropyEstimate { bits, n_states, len: n, estimator: "lz_match_length", reliable }
}

/// Right-hand side of the Fano equation for a candidate bound.
pub fn fano_entropy(pi: f64, n_states: usize) -> f64 {
    fn xlog2(x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            x * x.log2()
        }
    }
    -xlog2(pi) - xlog2(1.0 - pi) + (1.0 - pi) * ((n_states - 1).max(1) as f64).log2()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FanoSolution {
    /// The predictability ceiling in [1/N_S, 1].
    pub pi_max: f64,
    /// True when the entropy had to be clipped into [0, log2(N_S)].
    pub clipped: bool,
}

/// Solve the Fano equation for the predictability upper bound.
///
/// The left side is strictly decreasing in `Pi` on [1/N_S, 1], so the root
/// is unique; bisection converges to well below 1e-9. Entropies pushed
/// outside [0, log2(N_S)] by estimator slack are clipped (flagged);
/// entropies below `-EST_SLACK` are rejected.
pub fn solve_fano(entropy_bits: f64, n_states: usize) -> Result<FanoSolution> {
    if n_states < 1 {
        return Err(Error::validation("n_states must be >= 1"));
    }
    if entropy_bits < -EST_SLACK || !entropy_bits.is_finite() {
        return Err(Error::validation(format!(
            "entropy {entropy_bits} below zero beyond estimator slack"
        )));
    }
    if n_states == 1 {
        return Ok(FanoSolution { pi_max: 1.0, clipped: entropy_bits > EST_SLACK });
    }
    let max_e = (n_states as f64).log2();
    let (e, clipped) = if entropy_bits < 0.0 {
        (0.0, true)
    } else if entropy_bits > max_e {
        (max_e, true)
    } else {
        (entropy_bits, false)
    };
    if e == 0.0 {
        return Ok(FanoSolution { pi_max: 1.0, clipped });
    }
    if e == max_e {
        return Ok(FanoSolution { pi_max: 1.0 / n_states as f64, clipped });
    }
    let mut lo = 1.0 / n_states as f64;
    let mut hi = 1.0;
    for _ in 0..200 {
        if hi - lo <= 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if fano_entropy(mid, n_states) > e {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(FanoSolution { pi_max: 0.5 * (lo + hi), clipped })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProfileOptions {
    /// Use the whole sequence's alphabet for every section instead of the
    /// per-section alphabet.
    pub global_alphabet: bool,
    /// Ground-state fraction above which a group is flagged as
    /// sparsity-inflated.
    pub ground_flag_threshold: f64,
    /// Minimum states per section for the profile to run at all.
    pub min_section_states: usize,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions { global_alphabet: false, ground_flag_threshold: 0.9, min_section_states: 16 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IpPredictability {
    pub ip: u32,
    pub sections_used: usize,
    pub sections_skipped: usize,
    pub mean_entropy: Option<f64>,
    pub mean_pi_max: Option<f64>,
    /// Fraction of the whole sequence in the ground state X = -1.
    pub ground_fraction: f64,
    pub class: Option<PatternClass>,
    pub excluded_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GroupSummary {
    pub n_ips: usize,
    pub mean_pi_max: f64,
    pub mean_ground_fraction: f64,
    /// Ground-state dominance: the bound is inflated by sparsity.
    pub sparsity_flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictabilityReport {
    pub delta_t: f64,
    pub h_hours: f64,
    pub section_len: usize,
    pub per_ip: Vec<IpPredictability>,
    pub overall_mean_pi_max: Option<f64>,
    pub group_deterministic: Option<GroupSummary>,
    pub group_stochastic: Option<GroupSummary>,
    /// Set when delta_t < 100 s, where ground states dominate.
    pub low_resolution_flag: bool,
}

fn group_summary(
    entries: &[&IpPredictability],
    ground_flag_threshold: f64,
) -> Option<GroupSummary> {
    let with_pi: Vec<&&IpPredictability> =
        entries.iter().filter(|e| e.mean_pi_max.is_some()).collect();
    if with_pi.is_empty() {
        return None;
    }
    let mean_pi =
        with_pi.iter().map(|e| e.mean_pi_max.unwrap()).sum::<f64>() / with_pi.len() as f64;
    let mean_ground =
        entries.iter().map(|e| e.ground_fraction).sum::<f64>() / entries.len() as f64;
    Some(GroupSummary {
        n_ips: entries.len(),
        mean_pi_max: mean_pi,
        mean_ground_fraction: mean_ground,
        sparsity_flagged: mean_ground > ground_flag_threshold,
    })
}

/// Coarse-grain the matrix, split every IP's sequence into h-hour sections,
/// estimate entropy and solve the Fano bound per section, and average per IP
/// and per deterministic/stochastic group.
pub fn predictability_profile(
    matrix: &AttackMatrix,
    h_hours: f64,
    segmentation: &BlockSegmentation,
    opts: &ProfileOptions,
) -> Result<PredictabilityReport> {
    let section_len = (h_hours * 3600.0 / matrix.delta_t()).floor() as usize;
    if section_len < opts.min_section_states {
        return Err(Error::validation(format!(
            "sections of {section_len} states are too short (need >= {})",
            opts.min_section_states
        )));
    }
    let class_of = segmentation.class_by_ip();
    let mut per_ip = Vec::with_capacity(matrix.n_ips());
    for seq in coarse_grain(matrix) {
        let ground =
            seq.states.iter().filter(|&&x| x == -1).count() as f64 / seq.states.len().max(1) as f64;
        let class = class_of.get(&seq.ip).copied();
        let sections = section_split(&seq, h_hours)?;
        let global_states = if opts.global_alphabet {
            let mut d = seq.states.clone();
            d.sort_unstable();
            d.dedup();
            Some(d.len())
        } else {
            None
        };
        let mut pis = Vec::new();
        let mut entropies = Vec::new();
        let mut skipped = 0usize;
        for section in &sections.sections {
            let est = estimate_entropy(section);
            let n_states = global_states.unwrap_or(est.n_states);
            if n_states == 0 {
                skipped += 1;
                continue;
            }
            match solve_fano(est.bits, n_states) {
                Ok(sol) => {
                    pis.push(sol.pi_max);
                    entropies.push(est.bits);
                }
                Err(_) => skipped += 1,
            }
        }
        let (mean_pi, mean_e, reason) = if pis.is_empty() {
            let reason = if sections.sections.is_empty() {
                "sequence shorter than one section"
            } else {
                "no section produced a defined bound"
            };
            (None, None, Some(reason.to_string()))
        } else {
            (
                Some(pis.iter().sum::<f64>() / pis.len() as f64),
                Some(entropies.iter().sum::<f64>() / entropies.len() as f64),
                None,
            )
        };
        per_ip.push(IpPredictability {
            ip: seq.ip,
            sections_used: pis.len(),
            sections_skipped: skipped,
            mean_entropy: mean_e,
            mean_pi_max: mean_pi,
            ground_fraction: ground,
            class,
            excluded_reason: reason,
        });
    }

    let defined: Vec<f64> = per_ip.iter().filter_map(|e| e.mean_pi_max).collect();
    let overall = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let det: Vec<&IpPredictability> =
        per_ip.iter().filter(|e| e.class == Some(PatternClass::Deterministic)).collect();
    let sto: Vec<&IpPredictability> =
        per_ip.iter().filter(|e| e.class == Some(PatternClass::Stochastic)).collect();
    Ok(PredictabilityReport {
        delta_t: matrix.delta_t(),
        h_hours,
        section_len,
        group_deterministic: group_summary(&det, opts.ground_flag_threshold),
        group_stochastic: group_summary(&sto, opts.ground_flag_threshold),
        per_ip,
        overall_mean_pi_max: overall,
        low_resolution_flag: matrix.delta_t() < 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn constant_sequence_has_zero_entropy() {
        let est = estimate_entropy(&vec![3; 1000]);
        assert_eq!(est.bits, 0.0);
        assert_eq!(est.n_states, 1);
        assert!(est.reliable);
    }

    #[test]
    fn iid_uniform_four_states_near_two_bits() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let states: Vec<i32> = (0..100_000).map(|_| rng.random_range(0..4)).collect();
        let est = estimate_entropy(&states);
        assert!(est.bits > 1.9 && est.bits < 2.1, "E = {}", est.bits);
    }

    #[test]
    fn alternating_sequence_is_nearly_deterministic() {
        let states: Vec<i32> = (0..10_000).map(|i| i % 2).collect();
        let est = estimate_entropy(&states);
        assert!(est.bits < 0.1, "E = {}", est.bits);
    }

    #[test]
    fn short_sequences_flagged_unreliable() {
        let est = estimate_entropy(&[0, 1, 0, 1, 1]);
        assert!(!est.reliable);
        assert_eq!(estimate_entropy(&[]).bits, 0.0);
    }

    #[test]
    fn fano_zero_entropy_fully_predictable() {
        for n in [2usize, 3, 7, 12] {
            let sol = solve_fano(0.0, n).unwrap();
            assert!((sol.pi_max - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fano_uniform_entropy_gives_inverse_alphabet() {
        for n in [2usize, 4, 9] {
            let sol = solve_fano((n as f64).log2(), n).unwrap();
            assert!((sol.pi_max - 1.0 / n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn fano_binary_half() {
        let sol = solve_fano(1.0, 2).unwrap();
        assert!((sol.pi_max - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fano_single_state_convention() {
        assert_eq!(solve_fano(0.0, 1).unwrap().pi_max, 1.0);
    }

    #[test]
    fn fano_clips_estimator_overshoot() {
        let sol = solve_fano(1.05, 2).unwrap();
        assert!(sol.clipped);
        assert!((sol.pi_max - 0.5).abs() < 1e-9);
        assert!(solve_fano(-0.2, 4).is_err());
        assert!(solve_fano(1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn fano_closure(e_frac in 0.0f64..1.0, n in 2usize..12) {
            let e = e_frac * (n as f64).log2();
            let sol = solve_fano(e, n).unwrap();
            let back = fano_entropy(sol.pi_max, n);
            prop_assert!((back - e).abs() < 1e-6, "E {} back {}", e, back);
        }

        #[test]
        fn fano_monotone_in_entropy(n in 2usize..12, a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let max_e = (n as f64).log2();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let pi_lo = solve_fano(lo * max_e, n).unwrap().pi_max;
            let pi_hi = solve_fano(hi * max_e, n).unwrap().pi_max;
            prop_assert!(pi_lo >= pi_hi - 1e-9);
        }

        #[test]
        fn entropy_within_alphabet_bound(states in proptest::collection::vec(-1i32..4, 1000..1500)) {
            let est = estimate_entropy(&states);
            prop_assert!(est.bits <= (est.n_states.max(2) as f64).log2() + EST_SLACK);
            prop_assert!(est.bits >= 0.0);
        }
    }
}
