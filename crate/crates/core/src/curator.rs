//! Trusted-curator DP mechanisms: the exponential mechanism, private proper
//! parity learning, private argmax selection over coordinates, and Laplace
//! mean estimation.
//!
//! Selection uses the Gumbel-max sampler: adding independent standard Gumbel
//! noise to each candidate's weight and taking the argmax draws exactly from
//! the softmax distribution, so the sampled frequencies can be audited
//! against the closed form.

use rand::Rng;

use crate::engine::RngStream;
use crate::{Error, Result};

/// One training example for parity learning: a packed bit-vector of length c
/// and a binary label.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LabeledExample {
    pub x: u64,
    pub label: u8,
}

/// Inner product over GF(2) of packed bit-vectors.
#[inline]
pub fn parity_of(k: u64, x: u64) -> u8 {
    ((k & x).count_ones() & 1) as u8
}

/// Closed-form selection probabilities of the exponential mechanism:
/// Pr[i] proportional to exp(eps * score_i / (2 * sensitivity)).
pub fn em_probabilities(scores: &[f64], sensitivity: f64, eps: f64) -> Vec<f64> {
    let w: Vec<f64> = scores.iter().map(|s| eps * s / (2.0 * sensitivity)).collect();
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = w.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|u| u / z).collect()
}

/// Exponential mechanism over scored candidates. Returns the index of the
/// selected candidate; Pr[i] is proportional to
/// exp(eps * score_i / (2 * sensitivity)). The caller is responsible for the
/// eps charge on its ledger. In the infinite-eps limit the mechanism
/// degenerates to the lowest-index argmax.
pub fn exponential_mechanism(
    scores: &[f64],
    sensitivity: f64,
    eps: f64,
    rng: &mut RngStream,
) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    assert!(sensitivity > 0.0, "sensitivity must be positive");
    assert!(eps >= 0.0, "eps must be nonnegative");
    if scores.len() == 1 {
        return Ok(0);
    }
    if eps.is_infinite() {
        return Ok(argmax_lowest(scores));
    }
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        let u: f64 = loop {
            let u = rng.random::<f64>();
            if u > 0.0 {
                break u;
            }
        };
        let gumbel = -(-u.ln()).ln();
        let val = eps * s / (2.0 * sensitivity) + gumbel;
        if val > best_val {
            best_val = val;
            best = i;
        }
    }
    Ok(best)
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Empirical error of every parity candidate k in {0,1}^c on the sample.
pub fn parity_empirical_errors(sample: &[LabeledExample], c: u32) -> Vec<f64> {
    let m = sample.len();
    (0..(1u64 << c))
        .map(|k| {
            if m == 0 {
                return 0.0;
            }
            let wrong = sample.iter().filter(|e| parity_of(k, e.x) != e.label).count();
            wrong as f64 / m as f64
        })
        .collect()
}

/// Private proper parity learning: the exponential mechanism over all 2^c
/// parity vectors with empirical error as the (negated) score and
/// sensitivity 1/m. Always outputs some k in {0,1}^c; on an empty sample
/// the output is uniform. `alpha` and `beta` are the accuracy and
/// confidence targets the caller sized m for; the mechanism itself depends
/// only on eps.
pub fn learn_parity_private(
    sample: &[LabeledExample],
    c: u32,
    eps: f64,
    alpha: f64,
    beta: f64,
    rng: &mut RngStream,
) -> Result<u64> {
    if c > 20 {
        return Err(Error::DomainTooLarge { domain: 1 << c, max: 1 << 20 });
    }
    let _ = (alpha, beta);
    if sample.is_empty() {
        return Ok(rng.random_range(0..(1u64 << c)));
    }
    let errors = parity_empirical_errors(sample, c);
    let scores: Vec<f64> = errors.iter().map(|e| -e).collect();
    let idx = exponential_mechanism(&scores, 1.0 / sample.len() as f64, eps, rng)?;
    Ok(idx as u64)
}

/// Private near-argmax coordinate selection over vectors in {-1,1}^d packed
/// as bitmasks (bit set = +1). The exponential mechanism scores each
/// coordinate by its empirical mean with sensitivity 2/m.
pub fn select_max_coordinate(
    sample: &[u64],
    d: u32,
    eps: f64,
    rng: &mut RngStream,
) -> Result<usize> {
    if sample.is_empty() {
        return Err(Error::EmptyInput);
    }
    assert!((1..=64).contains(&d));
    let means = coordinate_means(sample, d);
    exponential_mechanism(&means, 2.0 / sample.len() as f64, eps, rng)
}

/// Empirical means of each of the d coordinates of {-1,1}^d bitmask records.
pub fn coordinate_means(sample: &[u64], d: u32) -> Vec<f64> {
    let m = sample.len() as f64;
    (0..d)
        .map(|j| {
            let ones = sample.iter().filter(|&&v| (v >> j) & 1 == 1).count() as f64;
            2.0 * ones / m - 1.0
        })
        .collect()
}

/// Inverse-CDF Laplace sample with the given scale.
pub fn sample_laplace(scale: f64, rng: &mut RngStream) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u: f64 = loop {
        let u = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            break u;
        }
    };
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Mean of values in [lo, hi] plus Laplace((hi-lo)/(m*eps)) noise; the
/// standard eps-DP release of a bounded mean. Infinite eps returns the
/// exact mean.
pub fn laplace_mean(values: &[f64], lo: f64, hi: f64, eps: f64, rng: &mut RngStream) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    assert!(hi > lo, "interval must be nondegenerate");
    assert!(eps > 0.0);
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if eps.is_infinite() {
        return Ok(mean);
    }
    Ok(mean + sample_laplace((hi - lo) / (m * eps), rng))
}
