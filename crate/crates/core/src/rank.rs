//! Kendall rank correlation with tie handling.
//!
//! Two routes compute the same pair classification: [`kendall_tau_b`] and
//! [`kendall_tau_c`] use an O(n log n) sort-and-merge count, while
//! [`brute_force_tau_oracle`] classifies every unordered pair literally. They
//! must agree exactly on every count.
//!
//! Formulas:
//!
//! * `tau_b = (C - D) / sqrt((n0 - n1) * (n0 - n2))`, with `n0 = n(n-1)/2` and
//!   `n1`, `n2` the pairs tied in x and in y respectively.
//! * `tau_c = 2m (C - D) / (n^2 (m - 1))` (Stuart), with `m` the smaller of the
//!   two distinct-value counts.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauVariant {
    TauB,
    TauC,
}

impl TauVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            TauVariant::TauB => "tau_b",
            TauVariant::TauC => "tau_c",
        }
    }
}

/// Outcome of a Kendall correlation. Every unordered pair lands in exactly
/// one of `concordant`, `discordant`, `ties_x`, `ties_y`, `ties_xy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub tau: f64,
    pub variant: TauVariant,
    pub n: usize,
    pub concordant: u64,
    pub discordant: u64,
    /// Pairs tied in x only.
    pub ties_x: u64,
    /// Pairs tied in y only.
    pub ties_y: u64,
    /// Pairs tied in both x and y.
    pub ties_xy: u64,
    pub distinct_x: usize,
    pub distinct_y: usize,
}

impl CorrelationReport {
    pub fn total_pairs(&self) -> u64 {
        pair_count(self.n as u64)
    }
}

/// Raw pair classification shared by both routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub ties_x: u64,
    pub ties_y: u64,
    pub ties_xy: u64,
    pub distinct_x: usize,
    pub distinct_y: usize,
}

fn pair_count(t: u64) -> u64 {
    t * t.saturating_sub(1) / 2
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Contract(format!("need at least 2 observations, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Contract("NaN in rank correlation input".into()));
    }
    Ok(())
}

// -0.0 and 0.0 compare equal under `==`; fold them before using total_cmp.
fn canon(v: f64) -> f64 {
    v + 0.0
}

fn cmp(a: f64, b: f64) -> Ordering {
    canon(a).total_cmp(&canon(b))
}

/// Sizes of runs of equal values in an already sorted slice.
fn run_lengths<T, F>(sorted: &[T], same: F) -> impl Iterator<Item = u64> + '_
where
    F: Fn(&T, &T) -> bool + 'static,
{
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= sorted.len() {
            return None;
        }
        let mut end = start + 1;
        while end < sorted.len() && same(&sorted[start], &sorted[end]) {
            end += 1;
        }
        let len = (end - start) as u64;
        start = end;
        Some(len)
    })
}

/// Counts inversions while merge-sorting `v` ascending. A pair counts only
/// when strictly out of order, so equal values are never inversions.
fn sort_counting_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (buf_l, buf_r) = buf.split_at_mut(mid);
        sort_counting_inversions(left, buf_l) + sort_counting_inversions(right, buf_r)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if cmp(v[j], v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + (n - j)].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// O(n log n) pair classification (Knight's algorithm).
pub fn count_pairs_fast(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    check_inputs(x, y)?;
    let n = x.len() as u64;

    let mut pairs: Vec<(f64, f64)> = x.iter().zip(y).map(|(&a, &b)| (canon(a), canon(b))).collect();
    pairs.sort_unstable_by(|a, b| cmp(a.0, b.0).then(cmp(a.1, b.1)));

    let mut tied_x = 0u64;
    let mut distinct_x = 0usize;
    for len in run_lengths(&pairs, |a: &(f64, f64), b: &(f64, f64)| a.0 == b.0) {
        tied_x += pair_count(len);
        distinct_x += 1;
    }
    let tied_xy: u64 = run_lengths(&pairs, |a: &(f64, f64), b: &(f64, f64)| a == b).map(pair_count).sum();

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = sort_counting_inversions(&mut ys, &mut buf);

    let mut tied_y = 0u64;
    let mut distinct_y = 0usize;
    for len in run_lengths(&ys, |a: &f64, b: &f64| a == b) {
        tied_y += pair_count(len);
        distinct_y += 1;
    }

    let total = pair_count(n);
    let concordant = total + tied_xy - tied_x - tied_y - discordant;
    Ok(PairCounts {
        concordant,
        discordant,
        ties_x: tied_x - tied_xy,
        ties_y: tied_y - tied_xy,
        ties_xy: tied_xy,
        distinct_x,
        distinct_y,
    })
}

/// Literal O(n^2) pair classification.
pub fn count_pairs_brute_force(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    check_inputs(x, y)?;
    let mut c = PairCounts::default();
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            let same_x = x[i] == x[j];
            let same_y = y[i] == y[j];
            match (same_x, same_y) {
                (true, true) => c.ties_xy += 1,
                (true, false) => c.ties_x += 1,
                (false, true) => c.ties_y += 1,
                (false, false) => {
                    if (dx > 0.0) == (dy > 0.0) {
                        c.concordant += 1;
                    } else {
                        c.discordant += 1;
                    }
                }
            }
        }
    }
    c.distinct_x = distinct_count(x);
    c.distinct_y = distinct_count(y);
    Ok(c)
}

fn distinct_count(v: &[f64]) -> usize {
    let mut seen: Vec<f64> = Vec::new();
    for &a in v {
        if !seen.contains(&a) {
            seen.push(a);
        }
    }
    seen.len()
}

fn finish(counts: PairCounts, n: usize, variant: TauVariant) -> Result<CorrelationReport> {
    let s = counts.concordant as f64 - counts.discordant as f64;
    let tau = match variant {
        TauVariant::TauB => {
            let n0 = pair_count(n as u64);
            let untied_x = n0 - counts.ties_x - counts.ties_xy;
            let untied_y = n0 - counts.ties_y - counts.ties_xy;
            if untied_x == 0 || untied_y == 0 {
                return Err(Error::DegenerateInput(
                    "tau_b undefined: every pair is tied in x or in y".into(),
                ));
            }
            s / ((untied_x as f64).sqrt() * (untied_y as f64).sqrt())
        }
        TauVariant::TauC => {
            let m = counts.distinct_x.min(counts.distinct_y);
            if m < 2 {
                return Err(Error::DegenerateInput(
                    "tau_c undefined: fewer than 2 distinct values in x or y".into(),
                ));
            }
            let m = m as f64;
            let n = n as f64;
            2.0 * m * s / (n * n * (m - 1.0))
        }
    };
    Ok(CorrelationReport {
        tau: tau.clamp(-1.0, 1.0),
        variant,
        n,
        concordant: counts.concordant,
        discordant: counts.discordant,
        ties_x: counts.ties_x,
        ties_y: counts.ties_y,
        ties_xy: counts.ties_xy,
        distinct_x: counts.distinct_x,
        distinct_y: counts.distinct_y,
    })
}

pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    finish(count_pairs_fast(x, y)?, x.len(), TauVariant::TauB)
}

pub fn kendall_tau_c(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    finish(count_pairs_fast(x, y)?, x.len(), TauVariant::TauC)
}

pub fn kendall_tau(x: &[f64], y: &[f64], variant: TauVariant) -> Result<CorrelationReport> {
    finish(count_pairs_fast(x, y)?, x.len(), variant)
}

/// Reference implementation the fast path is checked against.
pub fn brute_force_tau_oracle(x: &[f64], y: &[f64], variant: TauVariant) -> Result<CorrelationReport> {
    finish(count_pairs_brute_force(x, y)?, x.len(), variant)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_b_fixed_examples() {
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().tau, 1.0);
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().tau, -1.0);
        let r = kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_eq!((r.concordant, r.discordant), (2, 1));
        assert_eq!(r.ties_x + r.ties_y + r.ties_xy, 0);
        assert!((r.tau - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tau_c_fixed_examples() {
        let r = kendall_tau_c(&[1.0, 1.0, 2.0, 2.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((r.concordant, r.discordant), (4, 0));
        assert_eq!(r.distinct_x.min(r.distinct_y), 2);
        assert_eq!(r.tau, 1.0);
        assert_eq!(kendall_tau_c(&[1.0, 2.0], &[2.0, 1.0]).unwrap().tau, -1.0);
    }

    #[test]
    fn oracle_agrees_on_fixed_examples() {
        for (x, y) in [
            (vec![1.0, 2.0, 3.0], vec![1.0, 3.0, 2.0]),
            (vec![1.0, 1.0, 2.0, 2.0], vec![1.0, 2.0, 3.0, 4.0]),
            (vec![1.0, 2.0], vec![2.0, 1.0]),
        ] {
            for variant in [TauVariant::TauB, TauVariant::TauC] {
                assert_eq!(
                    kendall_tau(&x, &y, variant).unwrap(),
                    brute_force_tau_oracle(&x, &y, variant).unwrap()
                );
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(kendall_tau_b(&[1.0, 2.0], &[1.0]), Err(Error::Contract(_))));
        assert!(matches!(kendall_tau_b(&[1.0], &[1.0]), Err(Error::Contract(_))));
        assert!(matches!(kendall_tau_b(&[1.0, f64::NAN], &[1.0, 2.0]), Err(Error::Contract(_))));
        assert!(matches!(
            kendall_tau_b(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            kendall_tau_c(&[4.0, 4.0, 4.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn signed_zero_is_a_tie() {
        let x = [0.0, -0.0, 1.0];
        let y = [1.0, 2.0, 3.0];
        assert_eq!(count_pairs_fast(&x, &y).unwrap(), count_pairs_brute_force(&x, &y).unwrap());
    }

    #[test]
    fn every_pair_classified_once() {
        let x = [1.0, 1.0, 2.0, 3.0, 3.0, 3.0];
        let y = [2.0, 2.0, 1.0, 1.0, 5.0, 4.0];
        let c = count_pairs_fast(&x, &y).unwrap();
        let total = c.concordant + c.discordant + c.ties_x + c.ties_y + c.ties_xy;
        assert_eq!(total, 15);
        assert_eq!(c, count_pairs_brute_force(&x, &y).unwrap());
    }
}
