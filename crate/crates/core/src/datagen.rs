//! Synthetic instances under non-uniform sampling, and train/held-out
//! splitting of rating data.
//!
//! Sampling draws `(k, l)` with probability `p_k·p_l`. Rows are split into
//! bands by their 0-based index: `k < ⌊n/10⌋` gets the low weight,
//! `⌊n/10⌋ ≤ k < ⌊n/5⌋` the high weight and the rest weight 1, all scaled by
//! the normalizing constant `p0`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::factor::FactorPair;
use crate::linalg::Mat;
use crate::obs::ObservationSet;
use crate::rng::{stream_rng, Stream};

/// Row/column sampling distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Weights 2, 4, 1 on the three bands.
    Scheme1,
    /// Weights 3, 9, 1 on the three bands.
    Scheme2,
    Uniform,
}

impl SamplingScheme {
    /// `(low band, high band)` weights relative to `p0`.
    fn band_weights(&self) -> Option<(f64, f64)> {
        match self {
            SamplingScheme::Scheme1 => Some((2.0, 4.0)),
            SamplingScheme::Scheme2 => Some((3.0, 9.0)),
            SamplingScheme::Uniform => None,
        }
    }

    /// Short label used in file names and tables: `1`, `2` or `uniform`.
    pub fn label(&self) -> &'static str {
        match self {
            SamplingScheme::Scheme1 => "1",
            SamplingScheme::Scheme2 => "2",
            SamplingScheme::Uniform => "uniform",
        }
    }

    /// Parses the labels produced by [`SamplingScheme::label`].
    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "1" | "scheme1" => Some(SamplingScheme::Scheme1),
            "2" | "scheme2" => Some(SamplingScheme::Scheme2),
            "u" | "uniform" => Some(SamplingScheme::Uniform),
            _ => None,
        }
    }
}

/// Marginal probabilities `p_0 … p_{n−1}` of one axis.
pub fn scheme_probs(n: usize, kind: SamplingScheme) -> Result<Vec<f64>> {
    let Some((low, high)) = kind.band_weights() else {
        if n == 0 {
            return Err(param_err("axis length must be positive"));
        }
        return Ok(vec![1.0 / n as f64; n]);
    };
    if n < 10 {
        return Err(param_err(format!("banded schemes need n >= 10, got {n}")));
    }
    let (b1, b2) = (n / 10, n / 5);
    let weight = |k: usize| {
        if k < b1 {
            low
        } else if k < b2 {
            high
        } else {
            1.0
        }
    };
    let total = low * b1 as f64 + high * (b2 - b1) as f64 + (n - b2) as f64;
    let p0 = 1.0 / total;
    Ok((0..n).map(|k| weight(k) * p0).collect())
}

/// `⌈sr·n·m⌉`, ignoring floating-point excess below one part in 1e9.
pub fn target_count(n: usize, m: usize, sr: f64) -> usize {
    let x = sr * n as f64 * m as f64;
    libm::ceil(x - 1e-9 * x.max(1.0)) as usize
}

/// Distinct index pairs drawn i.i.d. from `p_k·p_l`, duplicates rejected,
/// until `⌈sr·n·m⌉` pairs exist. Sorted row-major.
pub fn sample_omega(n: usize, m: usize, sr: f64, scheme: SamplingScheme, seed: u64) -> Result<Vec<(usize, usize)>> {
    if !(sr > 0.0 && sr < 1.0) {
        return Err(param_err(format!("sample ratio must lie in (0, 1), got {sr}")));
    }
    draw_pairs(n, m, target_count(n, m, sr), scheme, seed)
}

fn draw_pairs(n: usize, m: usize, target: usize, scheme: SamplingScheme, seed: u64) -> Result<Vec<(usize, usize)>> {
    let total = n
        .checked_mul(m)
        .ok_or_else(|| param_err("matrix too large to index"))?;
    if target > total {
        return Err(param_err(format!("{target} samples requested from {total} entries")));
    }
    if target == total {
        return Ok((0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect());
    }
    let rows = WeightedIndex::new(scheme_probs(n, scheme)?).map_err(|e| param_err(format!("{e}")))?;
    let cols = WeightedIndex::new(scheme_probs(m, scheme)?).map_err(|e| param_err(format!("{e}")))?;
    let mut rng = stream_rng(seed, Stream::Omega);
    let mut seen = vec![0u64; total.div_ceil(64)];
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let i = rows.sample(&mut rng);
        let j = cols.sample(&mut rng);
        let idx = i * m + j;
        let (word, bit) = (idx / 64, 1u64 << (idx % 64));
        if seen[word] & bit == 0 {
            seen[word] |= bit;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Planted factors `M* = M_L M_Rᵀ` with i.i.d. standard normal entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub m_l: Mat,
    pub m_r: Mat,
    pub r_star: usize,
    pub seed: u64,
}

impl GroundTruth {
    pub fn generate(n: usize, m: usize, r_star: usize, seed: u64) -> Result<Self> {
        if n == 0 || m == 0 || r_star == 0 {
            return Err(param_err("dimensions and true rank must be positive"));
        }
        let mut rng = stream_rng(seed, Stream::Truth);
        let m_l = Mat::from_fn(n, r_star, |_, _| StandardNormal.sample(&mut rng));
        let m_r = Mat::from_fn(m, r_star, |_, _| StandardNormal.sample(&mut rng));
        Ok(GroundTruth { m_l, m_r, r_star, seed })
    }

    pub fn n(&self) -> usize {
        self.m_l.rows()
    }

    pub fn m(&self) -> usize {
        self.m_r.rows()
    }

    pub fn factors(&self) -> FactorPair {
        FactorPair {
            u: self.m_l.clone(),
            v: self.m_r.clone(),
        }
    }

    /// `M*_{ij}`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        crate::linalg::dot(self.m_l.row(i), self.m_r.row(j))
    }
}

/// Observed values `M*_Ω + σ·(ξ/‖ξ‖)·‖M*_Ω‖_F` with `ξ` standard normal.
pub fn observe(truth: &GroundTruth, omega: &[(usize, usize)], sigma: f64, seed: u64) -> Result<ObservationSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(param_err(format!("noise level must be >= 0, got {sigma}")));
    }
    let clean: Vec<f64> = omega.iter().map(|&(i, j)| truth.entry(i, j)).collect();
    let mut values = clean.clone();
    if sigma > 0.0 {
        let mut rng = stream_rng(seed, Stream::Noise);
        let xi: Vec<f64> = (0..omega.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xi_norm = libm::sqrt(crate::linalg::dot(&xi, &xi));
        let scale = sigma * libm::sqrt(crate::linalg::dot(&clean, &clean)) / xi_norm;
        for (v, x) in values.iter_mut().zip(&xi) {
            *v += scale * x;
        }
    }
    let entries = omega.iter().zip(values).map(|(&(i, j), v)| (i, j, v)).collect();
    ObservationSet::new(truth.n(), truth.m(), entries)
}

/// Everything needed to generate one synthetic instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub r_star: usize,
    pub sr: f64,
    pub scheme: SamplingScheme,
    pub sigma: f64,
    pub seed: u64,
}

/// Ground truth and its noisy observations from a single seed.
pub fn synthetic(spec: &SyntheticSpec) -> Result<(GroundTruth, ObservationSet)> {
    let truth = GroundTruth::generate(spec.n, spec.m, spec.r_star, spec.seed)?;
    let omega = sample_omega(spec.n, spec.m, spec.sr, spec.scheme, spec.seed)?;
    let obs = observe(&truth, &omega, spec.sigma, spec.seed)?;
    Ok((truth, obs))
}

/// How rating data is subsampled and split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Subtracted from every rating.
    pub recenter_offset: f64,
    /// Declared `(r_min, r_max)`; defaults to the observed range.
    pub value_range: Option<(f64, f64)>,
    /// Keep this many randomly chosen users (rows).
    pub n_users: Option<usize>,
    /// Keep this many randomly chosen items (columns).
    pub n_items: Option<usize>,
    /// Sample ratio of `Ω` over the (subsampled) grid; `1.0` observes all.
    pub sr: f64,
    pub scheme: SamplingScheme,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            recenter_offset: 0.0,
            value_range: None,
            n_users: None,
            n_items: None,
            sr: 0.5,
            scheme: SamplingScheme::Uniform,
            seed: 0,
        }
    }
}

/// Training observations on `Γ ∩ Ω` and held-out ratings on `Γ \ Ω`.
#[derive(Clone, Debug)]
pub struct RatingSplit {
    pub train: ObservationSet,
    /// Held-out `(row, col, rating − offset)` in the reindexed grid.
    pub heldout: Vec<(usize, usize, f64)>,
    pub r_min: f64,
    pub r_max: f64,
    /// Original ids of the kept rows and columns.
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

fn choose(total: usize, keep: Option<usize>, rng: &mut impl Rng) -> Result<Vec<usize>> {
    match keep {
        None => Ok((0..total).collect()),
        Some(k) if k == 0 || k > total => Err(param_err(format!("cannot keep {k} of {total} ids"))),
        Some(k) => {
            let mut idx = rand::seq::index::sample(rng, total, k).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
    }
}

/// Splits 0-based rating triplets on an `n x m` grid.
pub fn split_ratings(ratings: &[(usize, usize, f64)], n: usize, m: usize, opts: &SplitOptions) -> Result<RatingSplit> {
    if ratings.is_empty() {
        return Err(Error::InvalidObservations("no ratings".into()));
    }
    if !(opts.sr > 0.0 && opts.sr <= 1.0) {
        return Err(param_err(format!("sample ratio must lie in (0, 1], got {}", opts.sr)));
    }
    let (lo, hi) = ratings
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.2), b.max(r.2)));
    let (r_min, r_max) = opts.value_range.unwrap_or((lo, hi));
    if !(r_max > r_min) {
        return Err(param_err(format!("rating range [{r_min}, {r_max}] is empty")));
    }

    let mut rng = stream_rng(opts.seed, Stream::Users);
    let users = choose(n, opts.n_users, &mut rng)?;
    let items = choose(m, opts.n_items, &mut rng)?;
    let mut row_of = vec![usize::MAX; n];
    for (new, &old) in users.iter().enumerate() {
        row_of[old] = new;
    }
    let mut col_of = vec![usize::MAX; m];
    for (new, &old) in items.iter().enumerate() {
        col_of[old] = new;
    }
    let (nn, mm) = (users.len(), items.len());

    let omega = if opts.sr >= 1.0 {
        draw_pairs(nn, mm, nn * mm, opts.scheme, opts.seed)?
    } else {
        sample_omega(nn, mm, opts.sr, opts.scheme, opts.seed)?
    };
    let mut in_omega = vec![0u64; (nn * mm).div_ceil(64)];
    for (i, j) in omega {
        let idx = i * mm + j;
        in_omega[idx / 64] |= 1 << (idx % 64);
    }

    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for &(i, j, v) in ratings {
        if i >= n || j >= m {
            return Err(Error::InvalidObservations(format!("rating ({i}, {j}) outside {n}x{m}")));
        }
        let (ri, cj) = (row_of[i], col_of[j]);
        if ri == usize::MAX || cj == usize::MAX {
            continue;
        }
        let idx = ri * mm + cj;
        let entry = (ri, cj, v - opts.recenter_offset);
        if in_omega[idx / 64] & (1 << (idx % 64)) != 0 {
            train.push(entry);
        } else {
            heldout.push(entry);
        }
    }
    if train.is_empty() {
        return Err(Error::InvalidObservations(
            "sampled index set does not intersect the ratings".into(),
        ));
    }
    Ok(RatingSplit {
        train: ObservationSet::new(nn, mm, train)?,
        heldout,
        r_min,
        r_max,
        users,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_normalize() {
        let p1 = scheme_probs(1000, SamplingScheme::Scheme1).unwrap();
        assert!((p1[999] - 1.0 / 1400.0).abs() < 1e-18);
        assert!((p1[0] - 2.0 / 1400.0).abs() < 1e-18);
        assert!((p1[150] - 4.0 / 1400.0).abs() < 1e-18);
        assert_eq!(p1[99], p1[0]);
        assert_eq!(p1[100], p1[150]);
        assert_eq!(p1[200], p1[999]);
        let p2 = scheme_probs(1000, SamplingScheme::Scheme2).unwrap();
        assert!((p2[500] - 1.0 / 2000.0).abs() < 1e-18);
        assert_eq!(scheme_probs(7, SamplingScheme::Uniform).unwrap(), vec![1.0 / 7.0; 7]);
        for n in [10, 137, 1000, 5000] {
            for kind in [SamplingScheme::Scheme1, SamplingScheme::Scheme2, SamplingScheme::Uniform] {
                let p = scheme_probs(n, kind).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|&x| x > 0.0));
            }
        }
        assert!(scheme_probs(9, SamplingScheme::Scheme1).is_err());
    }

    #[test]
    fn target_count_ignores_rounding_noise() {
        assert_eq!(target_count(1000, 1000, 0.1), 100_000);
        assert_eq!(target_count(1000, 1000, 0.15), 150_000);
        assert_eq!(target_count(3, 3, 0.5), 5);
    }

    #[test]
    fn omega_is_distinct_and_reproducible() {
        let a = sample_omega(60, 50, 0.3, SamplingScheme::Scheme1, 9).unwrap();
        let b = sample_omega(60, 50, 0.3, SamplingScheme::Scheme1, 9).unwrap();
        let c = sample_omega(60, 50, 0.3, SamplingScheme::Scheme1, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 900);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(sample_omega(5, 5, 1.0, SamplingScheme::Uniform, 0).is_err());
        assert!(sample_omega(5, 5, 0.0, SamplingScheme::Uniform, 0).is_err());
    }

    #[test]
    fn full_target_returns_every_pair() {
        // ⌈0.99·4·4⌉ = 16
        let all = sample_omega(4, 4, 0.99, SamplingScheme::Uniform, 1).unwrap();
        assert_eq!(all.len(), 16);
    }

    #[test]
    fn band_frequencies_follow_weights() {
        let mut low = 0usize;
        let mut high = 0usize;
        let mut base = 0usize;
        for seed in 0..5 {
            for (i, _) in sample_omega(1000, 1000, 0.1, SamplingScheme::Scheme1, seed).unwrap() {
                match i {
                    0..=99 => low += 1,
                    100..=199 => high += 1,
                    _ => base += 1,
                }
            }
        }
        let per = |c: usize, rows: usize| c as f64 / rows as f64;
        // Poissonized inclusion 1 − exp(−π_kl·N) with N fitted to |Ω|;
        // rejection saturates the heavy blocks below the raw 4:1 and 2:1.
        let ratio = per(high, 100) / per(base, 800);
        assert!((ratio / 3.44168 - 1.0).abs() < 0.02, "ratio {ratio}");
        let ratio_low = per(low, 100) / per(base, 800);
        assert!((ratio_low / 1.89770 - 1.0).abs() < 0.02, "ratio {ratio_low}");
    }

    #[test]
    fn noise_energy_is_exact() {
        let truth = GroundTruth::generate(30, 25, 3, 4).unwrap();
        let omega = sample_omega(30, 25, 0.4, SamplingScheme::Uniform, 4).unwrap();
        let clean = observe(&truth, &omega, 0.0, 4).unwrap();
        for (i, j, v) in clean.iter() {
            assert_eq!(v, truth.entry(i, j));
        }
        let noisy = observe(&truth, &omega, 0.1, 4).unwrap();
        let diff: f64 = noisy
            .values()
            .iter()
            .zip(clean.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!((libm::sqrt(diff) - 0.1 * clean.fro_norm()).abs() < 1e-10 * clean.fro_norm());
        assert_eq!(noisy.to_triplets(), observe(&truth, &omega, 0.1, 4).unwrap().to_triplets());
        assert!(observe(&truth, &omega, -1.0, 4).is_err());
    }

    #[test]
    fn truth_is_reproducible() {
        let a = GroundTruth::generate(10, 8, 2, 3).unwrap();
        assert_eq!(a, GroundTruth::generate(10, 8, 2, 3).unwrap());
        assert_ne!(a, GroundTruth::generate(10, 8, 2, 4).unwrap());
    }

    fn toy_ratings() -> Vec<(usize, usize, f64)> {
        vec![(0, 0, 5.0), (1, 2, 1.0), (2, 1, 3.0)]
    }

    #[test]
    fn full_omega_leaves_nothing_held_out() {
        let opts = SplitOptions { sr: 1.0, ..Default::default() };
        let s = split_ratings(&toy_ratings(), 3, 3, &opts).unwrap();
        assert!(s.heldout.is_empty());
        assert_eq!(s.train.nnz(), 3);
    }

    #[test]
    fn recentering_shifts_values_not_range() {
        let opts = SplitOptions {
            sr: 1.0,
            recenter_offset: 3.0,
            value_range: Some((1.0, 5.0)),
            ..Default::default()
        };
        let s = split_ratings(&toy_ratings(), 3, 3, &opts).unwrap();
        let vals: Vec<f64> = s.train.values().to_vec();
        assert_eq!(vals, vec![2.0, -2.0, 0.0]);
        assert_eq!(s.r_max - s.r_min, 4.0);
        let jester = SplitOptions { sr: 1.0, value_range: Some((-10.0, 10.0)), ..Default::default() };
        let s = split_ratings(&toy_ratings(), 3, 3, &jester).unwrap();
        assert_eq!(s.r_max - s.r_min, 20.0);
    }

    #[test]
    fn split_partitions_ratings() {
        let mut ratings = vec![];
        for i in 0..40 {
            for j in 0..30 {
                if (i * 7 + j * 3) % 5 < 3 {
                    ratings.push((i, j, ((i + j) % 5 + 1) as f64));
                }
            }
        }
        let opts = SplitOptions {
            sr: 0.5,
            n_users: Some(25),
            scheme: SamplingScheme::Scheme1,
            seed: 3,
            ..Default::default()
        };
        let s = split_ratings(&ratings, 40, 30, &opts).unwrap();
        assert_eq!(s.users.len(), 25);
        assert_eq!(s.train.n_rows(), 25);
        let kept = ratings.iter().filter(|r| s.users.contains(&r.0)).count();
        assert_eq!(s.train.nnz() + s.heldout.len(), kept);
        assert_eq!(s.r_min, 1.0);
        assert_eq!(s.r_max, 5.0);
        let again = split_ratings(&ratings, 40, 30, &opts).unwrap();
        assert_eq!(again.heldout, s.heldout);
    }
}
