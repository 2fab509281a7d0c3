//! Complete randomization, Mahalanobis scoring and best-choice selection.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::par::map_indexed;
use crate::population::{FinitePopulation, MomentSummary};
use crate::rng::{derive_seed, substream};
use crate::stats::quantile_sorted;
use crate::Result;

/// Above this many tries the full M vector is dropped by default and only
/// summary quantiles are kept.
pub const FULL_RETENTION_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// Binary treatment indicators, length n.
    pub z: Vec<u8>,
    pub n1: usize,
}

impl Assignment {
    pub fn new(z: Vec<u8>) -> Result<Self> {
        if z.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("assignment entries must be 0/1".into()));
        }
        let n1 = z.iter().map(|&v| v as usize).sum();
        Ok(Self { z, n1 })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn treated_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.z.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeedInfo {
    pub master_seed: u64,
    /// Stream used for tie-breaking; candidate t uses stream t + 1.
    pub driver_stream: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MQuantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct BestChoiceResult {
    pub chosen: Assignment,
    pub m_min: f64,
    /// All T tried M values; `None` when retention was disabled.
    pub m_all: Option<Vec<f64>>,
    pub m_quantiles: MQuantiles,
    pub tries: usize,
    /// 0-based index of the chosen candidate among the T tries.
    pub chosen_index: usize,
    /// Number of candidates attaining `m_min` exactly.
    pub tie_count: usize,
    pub seed_info: SeedInfo,
}

fn check_arm(n: usize, n1: usize) -> Result<()> {
    if n1 < 2 || n1 + 2 > n {
        return Err(Error::InvalidArm { n, n1 });
    }
    Ok(())
}

/// One uniform draw from the complete randomized experiment: exactly `n1`
/// of `n` units treated, all (n choose n1) assignments equally likely.
/// Partial Fisher-Yates over the index vector, O(n).
pub fn draw_cre<R: Rng>(n: usize, n1: usize, rng: &mut R) -> Result<Assignment> {
    check_arm(n, n1)?;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..n1 {
        let j = i + rng.gen_range(0..n - i);
        idx.swap(i, j);
    }
    let mut z = vec![0u8; n];
    for &i in &idx[..n1] {
        z[i] = 1;
    }
    Ok(Assignment { z, n1 })
}

/// Mahalanobis imbalance M = (n1 n0 / n) (xbar1 - xbar0)' (S2x)^{-1}
/// (xbar1 - xbar0), computed via the stored factorization.
pub fn mahalanobis(
    a: &Assignment,
    pop: &FinitePopulation,
    moments: &MomentSummary,
) -> Result<f64> {
    let n = pop.n;
    if a.n() != n {
        return Err(Error::Invalid("assignment length does not match population".into()));
    }
    let n1 = a.n1;
    let n0 = n - n1;
    if n1 != moments.n1 {
        return Err(Error::Invalid(format!(
            "assignment n1={n1} does not match moments n1={}",
            moments.n1
        )));
    }
    let k = pop.k;
    let mut sum1 = DVector::zeros(k);
    let mut sum0 = DVector::zeros(k);
    for (i, &zi) in a.z.iter().enumerate() {
        let row = pop.covariates.row(i).transpose();
        if zi == 1 {
            sum1 += row;
        } else {
            sum0 += row;
        }
    }
    let d = sum1 / n1 as f64 - sum0 / n0 as f64;
    let m = (n1 as f64 * n0 as f64 / n as f64) * moments.quad_form(&d);
    Ok(m.max(0.0))
}

/// Draw `tries` CRE assignments, score each by Mahalanobis distance and
/// keep the argmin; exact ties are broken uniformly at random on the
/// driver stream. Candidate t's randomness is a pure function of
/// `(master_seed, t)`, so the result is independent of evaluation order.
pub fn best_choice(
    pop: &FinitePopulation,
    moments: &MomentSummary,
    tries: usize,
    master_seed: u64,
) -> Result<BestChoiceResult> {
    best_choice_with_retention(pop, moments, tries, master_seed, None)
}

/// As [`best_choice`], with explicit control over keeping the full M
/// vector. `keep_all = None` keeps it up to [`FULL_RETENTION_LIMIT`].
pub fn best_choice_with_retention(
    pop: &FinitePopulation,
    moments: &MomentSummary,
    tries: usize,
    master_seed: u64,
    keep_all: Option<bool>,
) -> Result<BestChoiceResult> {
    if tries < 1 {
        return Err(Error::Invalid("need at least one try".into()));
    }
    let n = pop.n;
    let n1 = moments.n1;
    check_arm(n, n1)?;

    let scores: Vec<Result<f64>> = map_indexed(tries, |t| {
        let mut rng = substream(master_seed, t as u64 + 1);
        let a = draw_cre(n, n1, &mut rng)?;
        mahalanobis(&a, pop, moments)
    });
    let mut m_all = Vec::with_capacity(tries);
    for s in scores {
        m_all.push(s?);
    }

    let m_min = m_all.iter().cloned().fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = m_all
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == m_min)
        .map(|(t, _)| t)
        .collect();
    let tie_count = ties.len();
    let mut driver = substream(master_seed, 0);
    let chosen_index = ties[driver.gen_range(0..tie_count)];

    // Replay the winning candidate's stream to recover its assignment.
    let mut rng = substream(master_seed, chosen_index as u64 + 1);
    let chosen = draw_cre(n, n1, &mut rng)?;

    let mut sorted = m_all.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m_quantiles = MQuantiles {
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[tries - 1],
    };

    let keep = keep_all.unwrap_or(tries <= FULL_RETENTION_LIMIT);
    Ok(BestChoiceResult {
        chosen,
        m_min,
        m_all: keep.then_some(m_all),
        m_quantiles,
        tries,
        chosen_index,
        tie_count,
        seed_info: SeedInfo { master_seed, driver_stream: 0 },
    })
}

/// Per-unit Monte-Carlo propensity scores under the best-choice design:
/// entry i is the fraction of `reps` runs in which unit i was treated.
pub fn estimate_propensities(
    pop: &FinitePopulation,
    moments: &MomentSummary,
    tries: usize,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<f64>> {
    if reps < 1 {
        return Err(Error::Invalid("need reps >= 1".into()));
    }
    let n = pop.n;
    // Chunked so the parallel path reduces count vectors, not raw
    // assignments.
    let chunk = 256usize;
    let n_chunks = reps.div_ceil(chunk);
    let partials: Vec<Result<Vec<u64>>> = map_indexed(n_chunks, |c| {
        let lo = c * chunk;
        let hi = ((c + 1) * chunk).min(reps);
        let mut counts = vec![0u64; n];
        for r in lo..hi {
            let seed = derive_seed(master_seed, r as u64);
            let res = best_choice_with_retention(pop, moments, tries, seed, Some(false))?;
            for (i, &zi) in res.chosen.z.iter().enumerate() {
                counts[i] += zi as u64;
            }
        }
        Ok(counts)
    });
    let mut counts = vec![0u64; n];
    for p in partials {
        for (acc, v) in counts.iter_mut().zip(p?) {
            *acc += v;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / reps as f64).collect())
}

/// All (n choose n1) assignments, for exact enumeration at small n.
pub fn enumerate_assignments(n: usize, n1: usize) -> Vec<Assignment> {
    assert!(n <= 24, "enumeration is only meant for tiny populations");
    assert!(n1 <= n);
    let mut out = Vec::new();
    let mut comb: Vec<usize> = (0..n1).collect();
    loop {
        let mut z = vec![0u8; n];
        for &i in &comb {
            z[i] = 1;
        }
        out.push(Assignment { z, n1 });
        // advance to the next combination in lexicographic order
        let mut i = n1 as isize - 1;
        while i >= 0 && comb[i as usize] == i as usize + n - n1 {
            i -= 1;
        }
        if i < 0 {
            return out;
        }
        let i = i as usize;
        comb[i] += 1;
        for j in i + 1..n1 {
            comb[j] = comb[j - 1] + 1;
        }
    }
}
