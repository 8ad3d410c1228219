//! Significance tests and effect sizes used in the result tables.

use serde::Serialize;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no discordant pairs (b + c = 0)")]
    NoDiscordantPairs,
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {0} is empty")]
    EmptyGroup(String),
    #[error("contingency table has no observations")]
    EmptyTable,
    #[error("confusion counts are all zero")]
    NoObservations,
}

/// Conditions that do not stop a test but change how its result reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StatsWarning {
    NoDiscordantPairs,
    DegenerateMargin,
    UndefinedPrecision,
    UndefinedRecall,
    AllValuesEqual,
}

/// Discordant counts from paired binary outcomes: `b` pairs where A
/// succeeded and B failed, `c` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairedBinary {
    pub b: u64,
    pub c: u64,
    pub n_pairs: u64,
}

impl PairedBinary {
    /// Counts discordant pairs; the slices must have equal length.
    pub fn from_outcomes(a: &[bool], b: &[bool]) -> PairedBinary {
        assert_eq!(a.len(), b.len(), "paired outcomes differ in length");
        let mut p = PairedBinary {
            b: 0,
            c: 0,
            n_pairs: a.len() as u64,
        };
        for (&x, &y) in a.iter().zip(b) {
            match (x, y) {
                (true, false) => p.b += 1,
                (false, true) => p.c += 1,
                _ => {}
            }
        }
        p
    }
}

/// Two-sided exact McNemar p-value: twice the binomial tail at
/// min(b, c) with n = b + c and probability 1/2, capped at 1. Returns 1 when
/// there are no discordant pairs.
pub fn mcnemar_exact(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    let tail = if n <= 1000 {
        // C(n, i) and 2^n stay finite in f64 up to n = 1000; small cases come
        // out exact.
        let mut choose = 1.0f64;
        let mut sum = 1.0f64;
        for i in 1..=k {
            choose = choose * (n - i + 1) as f64 / i as f64;
            sum += choose;
        }
        sum / 2f64.powi(n as i32)
    } else {
        Binomial::new(0.5, n).expect("valid binomial").cdf(k)
    };
    (2.0 * tail).min(1.0)
}

/// Signed discordance (b - c) / (b + c).
pub fn cohens_g(b: u64, c: u64) -> Result<f64, StatsError> {
    if b + c == 0 {
        return Err(StatsError::NoDiscordantPairs);
    }
    Ok((b as f64 - c as f64) / (b + c) as f64)
}

/// The textbook form, b / (b + c) - 0.5.
pub fn cohens_g_textbook(b: u64, c: u64) -> Result<f64, StatsError> {
    if b + c == 0 {
        return Err(StatsError::NoDiscordantPairs);
    }
    Ok(b as f64 / (b + c) as f64 - 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McNemar {
    pub pairs: PairedBinary,
    pub p_value: f64,
    pub g: Option<f64>,
    pub warning: Option<StatsWarning>,
}

pub fn mcnemar(pairs: PairedBinary) -> McNemar {
    let g = cohens_g(pairs.b, pairs.c).ok();
    McNemar {
        pairs,
        p_value: mcnemar_exact(pairs.b, pairs.c),
        g,
        warning: g.is_none().then_some(StatsWarning::NoDiscordantPairs),
    }
}

/// Rows are groups, columns are success / failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Contingency2x2 {
    pub cells: [[u64; 2]; 2],
}

impl Contingency2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Contingency2x2 { cells: [[a, b], [c, d]] }
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquare {
    pub chi2: f64,
    pub p_value: f64,
    pub cramers_v: f64,
    pub warning: Option<StatsWarning>,
}

/// Pearson chi-square with Yates continuity correction, df = 1, and
/// Cramér's V from the corrected statistic.
pub fn chi2_yates(t: Contingency2x2) -> Result<ChiSquare, StatsError> {
    let n = t.total();
    if n == 0 {
        return Err(StatsError::EmptyTable);
    }
    let [[a, b], [c, d]] = t.cells.map(|r| r.map(|x| x as f64));
    let rows = [a + b, c + d];
    let cols = [a + c, b + d];
    if rows.iter().chain(&cols).any(|&m| m == 0.0) {
        return Ok(ChiSquare {
            chi2: 0.0,
            p_value: 1.0,
            cramers_v: 0.0,
            warning: Some(StatsWarning::DegenerateMargin),
        });
    }
    let n = n as f64;
    let diff = ((a * d - b * c).abs() - n / 2.0).max(0.0);
    let chi2 = n * diff * diff / (rows[0] * rows[1] * cols[0] * cols[1]);
    let p_value = ChiSquared::new(1.0).expect("df 1").sf(chi2);
    Ok(ChiSquare {
        chi2,
        p_value,
        cramers_v: (chi2 / n).sqrt(),
        warning: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub warnings: Vec<StatsWarning>,
}

/// Precision, recall, F1 and accuracy. An undefined ratio is reported as 0
/// with a warning.
pub fn classification_metrics(tp: u64, fp: u64, fn_: u64, tn: u64) -> Result<Classification, StatsError> {
    let total = tp + fp + fn_ + tn;
    if total == 0 {
        return Err(StatsError::NoObservations);
    }
    let mut warnings = Vec::new();
    let precision = if tp + fp == 0 {
        warnings.push(StatsWarning::UndefinedPrecision);
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        warnings.push(StatsWarning::UndefinedRecall);
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(Classification {
        precision,
        recall,
        f1,
        accuracy: (tp + tn) as f64 / total as f64,
        warnings,
    })
}

/// Named samples for a k-group comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSamples {
    pub groups: Vec<(String, Vec<f64>)>,
}

impl GroupSamples {
    pub fn new(groups: Vec<(String, Vec<f64>)>) -> Result<Self, StatsError> {
        if groups.len() < 2 {
            return Err(StatsError::TooFewGroups(groups.len()));
        }
        if let Some((name, _)) = groups.iter().find(|(_, v)| v.is_empty()) {
            return Err(StatsError::EmptyGroup(name.clone()));
        }
        Ok(GroupSamples { groups })
    }

    fn pooled(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|(_, v)| v.iter().copied()).collect()
    }
}

/// Mid-ranks (1-based) of `values`, and the tie term sum(t^3 - t).
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: usize,
    pub p_value: f64,
    pub warning: Option<StatsWarning>,
}

/// Tie-corrected H with a chi-square (k - 1 df) p-value.
pub fn kruskal_wallis(g: &GroupSamples) -> KruskalWallis {
    let pooled = g.pooled();
    let n = pooled.len() as f64;
    let df = g.groups.len() - 1;
    let (ranks, ties) = midranks(&pooled);
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return KruskalWallis {
            h: 0.0,
            df,
            p_value: 1.0,
            warning: Some(StatsWarning::AllValuesEqual),
        };
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for (_, v) in &g.groups {
        let r: f64 = ranks[offset..offset + v.len()].iter().sum();
        sum += r * r / v.len() as f64;
        offset += v.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    let p_value = ChiSquared::new(df as f64).expect("df >= 1").sf(h);
    KruskalWallis {
        h,
        df,
        p_value,
        warning: None,
    }
}

/// Holm step-down adjustment. Output is in input order.
pub fn holm(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let v = ((m - rank) as f64 * p[i]).min(1.0);
        running = running.max(v);
        adjusted[i] = running;
    }
    adjusted
}

/// Rank-biserial correlation for "a vs b": (wins of a - wins of b) / (n_a
/// n_b), ties counting half. Equals 1 - 2U/(n_a n_b) with U the Mann-Whitney
/// count for b.
pub fn rank_biserial(a: &[f64], b: &[f64]) -> f64 {
    let mut diff = 0.0;
    for x in a {
        for y in b {
            diff += match x.total_cmp(y) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Less => -1.0,
                std::cmp::Ordering::Equal => 0.0,
            };
        }
    }
    diff / (a.len() * b.len()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DunnPair {
    /// Comparison label, "first vs second".
    pub comparison: String,
    pub z: f64,
    pub p_raw: f64,
    pub p_adj: f64,
    pub r: f64,
}

/// Dunn's pairwise z-tests on pooled mid-ranks with tie correction, Holm
/// adjusted. Pairs are ordered (1,0), (2,0), (2,1), ..., so with groups
/// [CP, Fs-CoT, Participants] the labels read "Fs-CoT vs CP",
/// "Participants vs CP", "Participants vs Fs-CoT".
pub fn dunn_holm(g: &GroupSamples) -> Vec<DunnPair> {
    let pooled = g.pooled();
    let n = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let mut mean_rank = Vec::new();
    let mut offset = 0;
    for (_, v) in &g.groups {
        let r: f64 = ranks[offset..offset + v.len()].iter().sum();
        mean_rank.push(r / v.len() as f64);
        offset += v.len();
    }
    let variance = n * (n + 1.0) / 12.0 - ties / (12.0 * (n - 1.0));
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut pairs = Vec::new();
    for i in 1..g.groups.len() {
        for j in 0..i {
            let (ni, nj) = (g.groups[i].1.len() as f64, g.groups[j].1.len() as f64);
            let se = (variance * (1.0 / ni + 1.0 / nj)).sqrt();
            let z = if se > 0.0 { (mean_rank[i] - mean_rank[j]) / se } else { 0.0 };
            let p_raw = (2.0 * normal.sf(z.abs())).min(1.0);
            pairs.push(DunnPair {
                comparison: format!("{} vs {}", g.groups[i].0, g.groups[j].0),
                z,
                p_raw,
                p_adj: 0.0,
                r: rank_biserial(&g.groups[i].1, &g.groups[j].1),
            });
        }
    }
    let adj = holm(&pairs.iter().map(|p| p.p_raw).collect::<Vec<_>>());
    for (p, a) in pairs.iter_mut().zip(adj) {
        p.p_adj = a;
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mcnemar_table_values() {
        assert_eq!(mcnemar_exact(8, 1), 0.0390625);
        assert_eq!(mcnemar_exact(10, 0), 0.001953125);
        assert_eq!(mcnemar_exact(1, 1), 1.0);
        assert_eq!(mcnemar_exact(0, 0), 1.0);
        assert_abs_diff_eq!(cohens_g(8, 1).unwrap(), 0.777778, epsilon = 5e-7);
        assert_eq!(cohens_g(4, 1).unwrap(), 0.6);
        assert_eq!(cohens_g(3, 3).unwrap(), 0.0);
        assert_eq!(cohens_g(0, 0), Err(StatsError::NoDiscordantPairs));
        assert_eq!(cohens_g_textbook(8, 1).unwrap(), 8.0 / 9.0 - 0.5);
        let m = mcnemar(PairedBinary::from_outcomes(&[true, false], &[true, false]));
        assert_eq!(m.warning, Some(StatsWarning::NoDiscordantPairs));
        assert_eq!(m.p_value, 1.0);
    }

    #[test]
    fn chi2_table_values() {
        let r = chi2_yates(Contingency2x2::new(418, 102, 10, 10)).unwrap();
        assert_abs_diff_eq!(r.p_value, 0.002632, epsilon = 5e-5);
        assert_abs_diff_eq!(r.cramers_v, 0.129435, epsilon = 5e-4);
        let r = chi2_yates(Contingency2x2::new(418, 102, 17, 3)).unwrap();
        assert_abs_diff_eq!(r.p_value, 0.822833, epsilon = 5e-6);
        assert_abs_diff_eq!(r.cramers_v, 0.009635, epsilon = 5e-6);
        let same = chi2_yates(Contingency2x2::new(10, 10, 5, 5)).unwrap();
        assert_eq!((same.chi2, same.p_value), (0.0, 1.0));
        let flat = chi2_yates(Contingency2x2::new(5, 0, 7, 0)).unwrap();
        assert_eq!(flat.warning, Some(StatsWarning::DegenerateMargin));
    }

    #[test]
    fn classification_rows() {
        let c = classification_metrics(12, 8, 0, 0).unwrap();
        assert_eq!((c.precision, c.recall, c.f1, c.accuracy), (0.6, 1.0, 0.75, 0.6));
        let c = classification_metrics(0, 0, 3, 2).unwrap();
        assert_eq!(c.warnings, vec![StatsWarning::UndefinedPrecision]);
        assert_eq!(c.f1, 0.0);
    }

    #[test]
    fn holm_by_hand() {
        let adj = holm(&[0.01, 0.04, 0.03]);
        assert_abs_diff_eq!(adj[0], 0.03, epsilon = 1e-12);
        assert_abs_diff_eq!(adj[2], 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(adj[1], 0.06, epsilon = 1e-12);
    }

    #[test]
    fn kruskal_all_equal() {
        let g = GroupSamples::new(vec![("a".into(), vec![1.0, 1.0]), ("b".into(), vec![1.0])]).unwrap();
        let k = kruskal_wallis(&g);
        assert_eq!((k.h, k.p_value), (0.0, 1.0));
        assert!(GroupSamples::new(vec![("a".into(), vec![1.0])]).is_err());
        assert!(GroupSamples::new(vec![("a".into(), vec![1.0]), ("b".into(), vec![])]).is_err());
    }

    #[test]
    fn midranks_with_ties() {
        let (r, t) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, 6.0);
    }
}
