//! Discrete power-law fitting and goodness-of-fit testing, applied to
//! per-cluster keyword-frequency distributions.
//!
//! The discrete MLE with Hurwitz-zeta normalization, the KS-based choice
//! of x_min and the semi-parametric bootstrap follow the standard
//! methodology for power-law detection in empirical count data.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::extract_keywords;
use crate::error::{Error, Result};
use crate::stopwords::StopWords;
use crate::types::{DetectorConfig, Tweet};

pub const DEFAULT_MIN_TAIL: usize = 10;
const ALPHA_LO: f64 = 1.01;
const ALPHA_HI: f64 = 6.0;
const ALPHA_TOL: f64 = 1e-4;

/// Multiset of positive integer counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSample {
    counts: Vec<u64>,
}

impl CountSample {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Fit("counts must be >= 1".into()));
        }
        Ok(CountSample { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub xmin: u64,
    pub ks_stat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub n_tail: usize,
    /// Set when the tail has fewer than two distinct values and the
    /// likelihood optimum sits on the search boundary.
    pub degenerate: bool,
}

/// Hurwitz zeta ζ(s, a) by direct summation with an Euler-Maclaurin tail
/// correction; absolute error well below 1e-10 for s in (1, 6], a >= 1.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    const N: usize = 25;
    let mut sum = 0.0;
    for k in 0..N {
        sum += (a + k as f64).powf(-s);
    }
    let m = a + N as f64;
    // integral term + half correction + Bernoulli B2, B4 terms
    sum += m.powf(1.0 - s) / (s - 1.0);
    sum += 0.5 * m.powf(-s);
    sum += s / 12.0 * m.powf(-s - 1.0);
    sum -= s * (s + 1.0) * (s + 2.0) / 720.0 * m.powf(-s - 3.0);
    sum
}

/// Log-likelihood of the discrete power law over the tail (counts >= xmin),
/// up to constants: -n ln ζ(α, xmin) - α Σ ln x.
fn log_likelihood(alpha: f64, tail: &[u64], sum_ln: f64, xmin: u64) -> f64 {
    -(tail.len() as f64) * hurwitz_zeta(alpha, xmin as f64).ln() - alpha * sum_ln
}

#[derive(Debug, Clone, Copy)]
pub struct AlphaFit {
    pub alpha: f64,
    pub degenerate: bool,
}

/// Discrete MLE for the exponent at a fixed x_min, by golden-section search
/// on (1.01, 6].
pub fn fit_alpha(sample: &CountSample, xmin: u64) -> Result<AlphaFit> {
    let tail: Vec<u64> = sample.counts.iter().copied().filter(|&c| c >= xmin).collect();
    if tail.is_empty() {
        return Err(Error::Fit("empty tail".into()));
    }
    let sum_ln: f64 = tail.iter().map(|&x| (x as f64).ln()).sum();
    let mut distinct: Vec<u64> = tail.clone();
    distinct.sort_unstable();
    distinct.dedup();

    // golden-section maximization
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (ALPHA_LO, ALPHA_HI);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = log_likelihood(x1, &tail, sum_ln, xmin);
    let mut f2 = log_likelihood(x2, &tail, sum_ln, xmin);
    while hi - lo > ALPHA_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = log_likelihood(x2, &tail, sum_ln, xmin);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = log_likelihood(x1, &tail, sum_ln, xmin);
        }
    }
    let alpha = 0.5 * (lo + hi);
    let boundary = alpha - ALPHA_LO < 10.0 * ALPHA_TOL || ALPHA_HI - alpha < 10.0 * ALPHA_TOL;
    Ok(AlphaFit {
        alpha,
        degenerate: distinct.len() < 2 || boundary,
    })
}

/// KS distance between the empirical tail CDF and the fitted model over the
/// full integer support [xmin, max(tail)]. The empirical CDF is flat between
/// observed values, so the supremum is attained at an observed value or one
/// step before the next observed value; both are checked.
pub fn ks_statistic(sample: &CountSample, alpha: f64, xmin: u64) -> f64 {
    let mut tail: Vec<u64> = sample.counts.iter().copied().filter(|&c| c >= xmin).collect();
    tail.sort_unstable();
    let n = tail.len() as f64;
    let z_min = hurwitz_zeta(alpha, xmin as f64);
    let model_cdf = |x: u64| 1.0 - hurwitz_zeta(alpha, (x + 1) as f64) / z_min;

    let mut distinct: Vec<u64> = tail.clone();
    distinct.dedup();
    let mut d = 0.0f64;
    for (k, &x) in distinct.iter().enumerate() {
        let emp = tail.partition_point(|&v| v <= x) as f64 / n;
        d = d.max((emp - model_cdf(x)).abs());
        // flat stretch up to the step before the next observed value
        let next_edge = if k + 1 < distinct.len() {
            Some(distinct[k + 1] - 1)
        } else {
            None
        };
        if let Some(edge) = next_edge {
            if edge > x {
                d = d.max((emp - model_cdf(edge)).abs());
            }
        }
    }
    // gap below the smallest observed value, when xmin itself is unobserved
    if let Some(&first) = distinct.first() {
        if first > xmin {
            d = d.max(model_cdf(first - 1));
        }
    }
    d
}

/// Full fit: x_min chosen among observed values to minimize the KS distance,
/// with the exponent refit per candidate.
pub fn fit(sample: &CountSample) -> Result<PowerLawFit> {
    fit_with_min_tail(sample, DEFAULT_MIN_TAIL)
}

pub fn fit_with_min_tail(sample: &CountSample, min_tail: usize) -> Result<PowerLawFit> {
    if sample.len() < min_tail {
        return Err(Error::Fit(format!(
            "need at least {min_tail} observations, got {}",
            sample.len()
        )));
    }
    let mut candidates: Vec<u64> = sample.counts.clone();
    candidates.sort_unstable();
    candidates.dedup();

    let mut best: Option<PowerLawFit> = None;
    for &xmin in &candidates {
        let n_tail = sample.counts.iter().filter(|&&c| c >= xmin).count();
        if n_tail < min_tail {
            continue;
        }
        let afit = fit_alpha(sample, xmin)?;
        let ks = ks_statistic(sample, afit.alpha, xmin);
        let better = match &best {
            Some(b) => ks < b.ks_stat,
            None => true,
        };
        if better {
            best = Some(PowerLawFit {
                alpha: afit.alpha,
                xmin,
                ks_stat: ks,
                p_value: None,
                n_tail,
                degenerate: afit.degenerate,
            });
        }
    }
    best.ok_or_else(|| Error::Fit("no x_min candidate with a large enough tail".into()))
}

/// Sampler for the fitted discrete tail: inverse CDF via doubling plus
/// binary search on the complementary CDF ζ(α, x)/ζ(α, xmin).
struct TailSampler {
    alpha: f64,
    xmin: u64,
    z_min: f64,
    cache: HashMap<u64, f64>,
}

impl TailSampler {
    fn new(alpha: f64, xmin: u64) -> Self {
        TailSampler {
            alpha,
            xmin,
            z_min: hurwitz_zeta(alpha, xmin as f64),
            cache: HashMap::new(),
        }
    }

    /// P(X >= x)
    fn ccdf(&mut self, x: u64) -> f64 {
        let alpha = self.alpha;
        let z_min = self.z_min;
        *self
            .cache
            .entry(x)
            .or_insert_with(|| hurwitz_zeta(alpha, x as f64) / z_min)
    }

    fn sample(&mut self, rng: &mut impl Rng) -> u64 {
        let u: f64 = rng.random();
        // smallest x with P(X >= x + 1) <= u, i.e. CDF(x) >= 1 - u
        let mut hi = self.xmin;
        while self.ccdf(hi + 1) > u {
            let span = hi - self.xmin;
            hi = self.xmin + (span * 2).max(1);
            if hi > self.xmin + (1 << 40) {
                break;
            }
        }
        let mut lo = self.xmin;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.ccdf(mid + 1) <= u {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }
}

/// Semi-parametric bootstrap p-value: fraction of synthetic datasets (tail
/// resampled from the fitted model, head resampled empirically, refit each
/// time) whose KS statistic is at least the observed one. Iteration `i`
/// draws from an RNG stream derived from `seed + i`, so parallel and serial
/// execution agree.
pub fn goodness_of_fit(
    sample: &CountSample,
    fit_result: &PowerLawFit,
    iterations: usize,
    seed: u64,
) -> f64 {
    assert!(iterations >= 1);
    let head: Vec<u64> = sample
        .counts
        .iter()
        .copied()
        .filter(|&c| c < fit_result.xmin)
        .collect();
    let n = sample.len();
    let p_tail = fit_result.n_tail as f64 / n as f64;
    let min_tail = DEFAULT_MIN_TAIL.min(n);
    let mut exceed = 0usize;
    for i in 0..iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut sampler = TailSampler::new(fit_result.alpha, fit_result.xmin);
        let mut synth = Vec::with_capacity(n);
        for _ in 0..n {
            if head.is_empty() || rng.random::<f64>() < p_tail {
                synth.push(sampler.sample(&mut rng));
            } else {
                synth.push(head[rng.random_range(0..head.len())]);
            }
        }
        let synth = CountSample::new(synth).expect("sampled counts are positive");
        let ks = match fit_with_min_tail(&synth, min_tail) {
            Ok(f) => f.ks_stat,
            Err(_) => f64::INFINITY,
        };
        if ks >= fit_result.ks_stat {
            exceed += 1;
        }
    }
    exceed as f64 / iterations as f64
}

/// Keyword occurrence counts over a tweet set: the count sample the
/// power-law check runs on.
pub fn keyword_counts(tweets: &[&Tweet], stop: &StopWords) -> CountSample {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for t in tweets {
        for kw in extract_keywords(&t.text, stop) {
            *counts.entry(kw).or_insert(0) += 1;
        }
    }
    let mut values: Vec<u64> = counts.into_values().collect();
    values.sort_unstable_by(|a, b| b.cmp(a));
    CountSample { counts: values }
}

/// Pass/fail power-law check for one candidate tweet set. A fit error or a
/// degenerate fit fails the test rather than erroring the pipeline.
pub fn passes_powerlaw(
    tweets: &[&Tweet],
    stop: &StopWords,
    config: &DetectorConfig,
    seed: u64,
) -> (bool, Option<PowerLawFit>) {
    let sample = keyword_counts(tweets, stop);
    if sample.is_empty() {
        return (false, None);
    }
    let mut fitted = match fit_with_min_tail(&sample, config.powerlaw_min_tail) {
        Ok(f) => f,
        Err(_) => return (false, None),
    };
    if fitted.degenerate {
        return (false, Some(fitted));
    }
    let p = goodness_of_fit(&sample, &fitted, config.bootstrap_iterations, seed);
    fitted.p_value = Some(p);
    let pass = p >= config.powerlaw_pvalue_threshold;
    (pass, Some(fitted))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_matches_reference_values() {
        // ζ(2, 1) = π²/6; ζ(3, 1) = 1.2020569031595942 (Apéry)
        assert!((hurwitz_zeta(2.0, 1.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-10);
        assert!((hurwitz_zeta(3.0, 1.0) - 1.2020569031595942).abs() < 1e-10);
        // ζ(2, 5) = π²/6 - 1 - 1/4 - 1/9 - 1/16
        let expect = std::f64::consts::PI.powi(2) / 6.0 - 1.0 - 0.25 - 1.0 / 9.0 - 1.0 / 16.0;
        assert!((hurwitz_zeta(2.0, 5.0) - expect).abs() < 1e-10);
    }

    #[test]
    fn all_equal_counts_are_degenerate() {
        let s = CountSample::new(vec![3; 20]).unwrap();
        let f = fit_alpha(&s, 3).unwrap();
        assert!(f.degenerate);
    }

    #[test]
    fn too_few_observations_error() {
        let s = CountSample::new(vec![1, 2, 3, 4, 5]).unwrap();
        assert!(fit(&s).is_err());
    }

    #[test]
    fn ks_matches_brute_force_on_small_tail() {
        let s = CountSample::new(vec![1, 1, 1, 2, 2, 3, 5, 5, 8]).unwrap();
        let alpha = 2.3;
        let got = ks_statistic(&s, alpha, 1);
        // brute force over the whole integer support
        let z = hurwitz_zeta(alpha, 1.0);
        let n = 9.0;
        let mut brute = 0.0f64;
        for x in 1..=8u64 {
            let emp = s.counts().iter().filter(|&&c| c <= x).count() as f64 / n;
            let model = 1.0 - hurwitz_zeta(alpha, (x + 1) as f64) / z;
            brute = brute.max((emp - model).abs());
        }
        assert!((got - brute).abs() < 1e-12);
    }

    #[test]
    fn duplicating_observations_keeps_alpha() {
        let base = vec![1, 1, 2, 3, 5, 8, 13, 2, 1, 4];
        let s1 = CountSample::new(base.clone()).unwrap();
        let doubled: Vec<u64> = base.iter().chain(base.iter()).copied().collect();
        let s2 = CountSample::new(doubled).unwrap();
        let a1 = fit_alpha(&s1, 1).unwrap().alpha;
        let a2 = fit_alpha(&s2, 1).unwrap().alpha;
        assert!((a1 - a2).abs() < 2.0 * ALPHA_TOL);
    }

    #[test]
    fn gof_is_deterministic() {
        let s = CountSample::new(vec![1, 1, 1, 1, 2, 2, 3, 4, 6, 9, 1, 2, 5, 1, 1]).unwrap();
        let f = fit(&s).unwrap();
        let p1 = goodness_of_fit(&s, &f, 20, 42);
        let p2 = goodness_of_fit(&s, &f, 20, 42);
        assert_eq!(p1, p2);
    }

    #[test]
    fn gof_single_iteration_is_zero_or_one() {
        let s = CountSample::new(vec![1, 1, 1, 1, 2, 2, 3, 4, 6, 9, 1, 2, 5, 1, 1]).unwrap();
        let f = fit(&s).unwrap();
        let p = goodness_of_fit(&s, &f, 1, 7);
        assert!(p == 0.0 || p == 1.0);
    }

    #[test]
    fn uniform_keyword_counts_fail_check() {
        // every keyword exactly once: degenerate sample
        let tweets: Vec<Tweet> = (0..15)
            .map(|i| Tweet {
                id: i.to_string(),
                timestamp: 0,
                lat: 0.0,
                lon: 0.0,
                text: format!("#tag{i}"),
                hashtags: vec![format!("tag{i}")],
                mentions: vec![],
                image_refs: vec![],
            })
            .collect();
        let refs: Vec<&Tweet> = tweets.iter().collect();
        let cfg = DetectorConfig::default();
        let (pass, _) = passes_powerlaw(&refs, &StopWords::standard(), &cfg, 1);
        assert!(!pass);
    }

    #[test]
    fn empty_keywords_fail_check() {
        let tweets: Vec<Tweet> = (0..5)
            .map(|i| Tweet {
                id: i.to_string(),
                timestamp: 0,
                lat: 0.0,
                lon: 0.0,
                text: "the and of".into(),
                hashtags: vec![],
                mentions: vec![],
                image_refs: vec![],
            })
            .collect();
        let refs: Vec<&Tweet> = tweets.iter().collect();
        let cfg = DetectorConfig::default();
        let (pass, fit) = passes_powerlaw(&refs, &StopWords::standard(), &cfg, 1);
        assert!(!pass);
        assert!(fit.is_none());
    }
}
