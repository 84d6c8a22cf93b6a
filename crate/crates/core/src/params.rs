//! Sample-size, threshold, and round-count formulas shared by protocols,
//! generators, and tests.
//!
//! All concentration arguments below use two facts about debiased randomized
//! response at privacy parameter eps. First, a debiased single-bit report is
//! bounded by coth(eps/2) in absolute value, so Hoeffding applies with that
//! range. Second, its standard deviation is at most coth(eps/2), which is
//! also the noise scale of the frequency-oracle estimator: an estimate of any
//! item's count over g reports has standard deviation at most
//! coth(eps/2) * sqrt(g).
//!
//! Every asymptotic bound in the underlying constructions hides a constant;
//! the constants fixed here are implementation choices validated by the
//! Monte-Carlo suite, chosen so the stated success rates hold with margin at
//! the sizes the tests use.

use statrs::distribution::{ContinuousCDF, Normal};

/// coth(eps/2) = (e^eps + 1)/(e^eps - 1), the variance blowup of debiased
/// randomized response relative to plain sampling. Tends to 1 as eps grows
/// and to 2/eps as eps shrinks.
pub fn coth_half(eps: f64) -> f64 {
    assert!(eps > 0.0, "eps must be positive");
    if eps.is_infinite() {
        1.0
    } else {
        1.0 / (eps / 2.0).tanh()
    }
}

/// Upper standard-normal quantile: the z with P[N(0,1) > z] = p.
pub fn z_upper(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "tail probability must be in (0,1)");
    let n = Normal::new(0.0, 1.0).unwrap();
    -n.inverse_cdf(p)
}

/// Smallest power of two at or above x (frequency-oracle domains are padded
/// to a power of two for the Hadamard transform).
pub fn pow2_at_least(x: u64) -> u64 {
    x.max(1).next_power_of_two()
}

/// Heavy-hitters threshold scale: Phi = sqrt(n * ln(|X|/beta)) / eps.
/// Promote and demote thresholds are small multiples of this quantity.
pub fn hh_phi(n: u64, domain: u64, eps: f64, beta: f64) -> f64 {
    ((n as f64) * ((domain as f64) / beta).ln()).sqrt() / eps
}

/// Deepest prefix tree the CDF release builds. Values wider than this are
/// truncated to their top `CDF_MAX_DEPTH` bits: the sub-leaf resolution error
/// is 2^-CDF_MAX_DEPTH per query, far below any accuracy target in use,
/// while the per-level Hadamard domains stay desk-sized.
pub const CDF_MAX_DEPTH: u32 = 16;

pub fn cdf_depth(bits: u32) -> u32 {
    bits.min(CDF_MAX_DEPTH)
}

/// Agents needed per level group of a CDF release with `depth` levels,
/// uniform accuracy `alpha`, and failure probability `beta`.
///
/// A query assembles at most `depth` interval estimates, one per level. Each
/// is an average of g debiased reports with per-term range 2*coth(eps/2), so
/// by Hoeffding the assembled error exceeds alpha with probability at most
/// 2*exp(-alpha^2 * g / (2 * depth * coth^2)). A union bound over the at most
/// 2^depth distinct assembled queries gives the requirement
/// g >= 2 * depth * coth^2 * ((depth+1) ln 2 + ln(2/beta)) / alpha^2.
pub fn cdf_group_size(depth: u32, alpha: f64, beta: f64, eps: f64) -> u64 {
    assert!(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0);
    let d = depth as f64;
    let c2 = coth_half(eps).powi(2);
    let g = 2.0 * d * c2 * ((d + 1.0) * std::f64::consts::LN_2 + (2.0 / beta).ln())
        / (alpha * alpha);
    g.ceil() as u64
}

/// Total agents for a CDF release: `depth` disjoint level groups.
pub fn cdf_required_n(depth: u32, alpha: f64, beta: f64, eps: f64) -> u64 {
    depth as u64 * cdf_group_size(depth, alpha, beta, eps)
}

/// Binary-search rounds to shrink an interval of width `width` down to
/// `tau_dist`: T = ceil(log2(width / tau_dist)), zero for a degenerate
/// interval.
pub fn quantile_rounds(width: f64, tau_dist: f64) -> u32 {
    assert!(tau_dist > 0.0);
    if width <= tau_dist {
        0
    } else {
        (width / tau_dist).log2().ceil() as u32
    }
}

/// Agents per search round so that every round's mass estimate is within
/// lambda of truth, simultaneously over all T rounds, with probability
/// 1 - beta_conf. Hoeffding on g debiased bits (range 2*coth) per round plus
/// a union bound over 2T one-sided events gives
/// g >= coth^2 * ln(2T/beta_conf) / (2 * lambda^2).
pub fn quantile_round_group(lambda: f64, beta_conf: f64, t_rounds: u32, eps: f64) -> u64 {
    assert!(lambda > 0.0 && beta_conf > 0.0 && t_rounds >= 1);
    let c2 = coth_half(eps).powi(2);
    let g = c2 * (2.0 * t_rounds as f64 / beta_conf).ln() / (2.0 * lambda * lambda);
    g.ceil() as u64
}

/// Contract size of the standalone quantile search:
/// N >= (8T / lambda^2) * coth^2 * ln(4T / beta_conf). This is looser than
/// `quantile_round_group` times T by design; callers below the contract are
/// rejected.
pub fn quantile_contract_n(lambda: f64, beta_conf: f64, t_rounds: u32, eps: f64) -> u64 {
    assert!(lambda > 0.0 && beta_conf > 0.0 && t_rounds >= 1);
    let t = t_rounds as f64;
    let c2 = coth_half(eps).powi(2);
    ((8.0 * t / (lambda * lambda)) * c2 * (4.0 * t / beta_conf).ln()).ceil() as u64
}

/// Curator sample size for the parity-threshold hybrid task:
/// m = ceil(K * c * ln(1/(alpha*beta)) / (alpha^4 * eps)).
///
/// Shape: the curator learns one parity over c+1 bits per block at privacy
/// alpha*eps from alpha*m examples, and needs empirical error O(alpha^2)
/// per block so block errors sum to O(alpha); the exponential mechanism
/// needs examples ~ c / (alpha^2 * (alpha*eps)) per block, and dividing by
/// the block fraction alpha gives the alpha^4.
pub fn parity_thresh_m(c: u32, alpha: f64, eps: f64, beta: f64) -> u64 {
    assert!(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0 && eps > 0.0);
    let k = 1.2;
    (k * c as f64 * (1.0 / (alpha * beta)).ln() / (alpha.powi(4) * eps)).ceil() as u64
}

/// Uniform low-order padding bits appended to every threshold-part value so
/// that all m curator values are distinct with probability 1 - beta:
/// ceil(2*log2(m) + log2(1/beta)) bits make any fixed pair collide with
/// probability beta/m^2.
pub fn padding_bits(m: u64, beta: f64) -> u32 {
    assert!(m >= 1 && beta > 0.0 && beta < 1.0);
    (2.0 * (m as f64).log2() + (1.0 / beta).log2()).ceil().max(1.0) as u32
}

/// Curator sample size for the share-recovery tasks:
/// m = ceil(K * c * ln(2/beta) / eps). The curator learns one parity over c
/// bits at privacy eps from about m/2 usable records.
pub fn one_out_m(c: u32, eps: f64, beta: f64) -> u64 {
    assert!(beta > 0.0 && beta < 1.0 && eps > 0.0);
    let k = 4.8;
    (k * c as f64 * (2.0 / beta).ln() / eps).ceil() as u64
}

/// Heavy-hitters domain for share recovery over shares of `d` bits:
/// pairs (t, v) for t in [m+1], v in {0,1}^d, plus a default item, padded to
/// a power of two.
pub fn share_recovery_domain(m: u64, d: u32) -> u64 {
    pow2_at_least((m + 1) * (1u64 << d) + 1)
}

/// Agent count for share recovery via heavy hitters.
///
/// A fraction `holder_frac` of the n agents hold share pairs, so each of the
/// m+1 true pairs (t, s_t) is held by about holder_frac * n / (m+1) agents.
/// Recovery needs, for every t, the true pair listed (estimate above the
/// 1.5*Phi listing threshold) and every spoof (t, v != s_t) estimated below
/// it. With estimator noise coth * sqrt(n) per item, a z-quantile covering
/// all (m+1) * 2^d comparison events at total failure beta/3 each way, and a
/// 1.15 safety factor:
/// sqrt(n) >= (m+1)/holder_frac * 1.15 * (1.5 * sqrt(ln(3|X|/beta)) / eps
///                                        + sqrt(2) * z * coth(eps/2)).
fn share_recovery_n(m: u64, d: u32, eps: f64, beta: f64, holder_frac: f64) -> u64 {
    assert!(beta > 0.0 && beta < 1.0 && eps > 0.0);
    let dom = share_recovery_domain(m, d) as f64;
    let pairs = ((m + 1) * (1u64 << d)) as f64;
    let z = z_upper(beta / (3.0 * pairs));
    let phi_term = 1.5 * (3.0 * dom / beta).ln().sqrt() / eps;
    let noise_term = std::f64::consts::SQRT_2 * z * coth_half(eps);
    let sqrt_n = (m as f64 + 1.0) / holder_frac * 1.15 * (phi_term + noise_term);
    (sqrt_n * sqrt_n).ceil() as u64
}

/// One-out instances assign the share branch with probability 1/2, so half
/// the agents contribute share pairs.
pub fn one_out_n(m: u64, d: u32, eps: f64, beta: f64) -> u64 {
    share_recovery_n(m, d, eps, beta, 0.5)
}

/// Parity-chooses-secret sizes: shares are single bits (the d = 1 case) and
/// every agent holds a share pair.
pub fn pcs_n(m: u64, eps: f64, beta: f64) -> u64 {
    share_recovery_n(m, 1, eps, beta, 1.0)
}

/// Curator sample size for the concatenation task's parity half:
/// m = ceil(K * c * ln(1/beta) / (alpha * eps)).
pub fn concat_parity_m(c: u32, alpha: f64, eps: f64, beta: f64) -> u64 {
    assert!(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0 && eps > 0.0);
    let k = 8.0;
    (k * c as f64 * (1.0 / beta).ln() / (alpha * eps)).ceil() as u64
}

/// Number of quantiles the concatenation task locates: targets
/// {alpha/4, 2*alpha/4, ...} strictly inside (0,1), so ceil(4/alpha) - 1.
pub fn concat_quantile_count(alpha: f64) -> u32 {
    assert!(alpha > 0.0 && alpha <= 1.0);
    ((4.0 / alpha).ceil() as u32).saturating_sub(1).max(1)
}

/// Sample size for the learning-to-selection reduction:
/// n = ceil((64/alpha) * (vc * ln(128/alpha) + ln 8)).
pub fn learn_to_select_n(alpha: f64, vc: u32) -> u64 {
    assert!(alpha > 0.0 && alpha < 1.0);
    ((64.0 / alpha) * (vc as f64 * (128.0 / alpha).ln() + 8.0f64.ln())).ceil() as u64
}
