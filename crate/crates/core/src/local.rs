//! Local-model DP primitives executed by agents: randomized response, a
//! shared-randomness frequency oracle, heavy hitters, prefix-tree CDF
//! release, and interactive quantile search.
//!
//! Every primitive here releases each agent's data through a single-bit
//! eps-DP channel. The frequency oracle works in the Hadamard domain: the
//! shared random string assigns each agent one coordinate of the Hadamard
//! transform of its item's one-hot encoding; the agent reports the sign of
//! that coordinate through randomized response. Debiased reports are
//! accumulated per coordinate and one Walsh-Hadamard transform turns them
//! into unbiased count estimates for every item at once.
//!
//! Coordinates are assigned in balanced blocks: each consecutive block of K
//! agents (K the padded domain size) receives a uniformly random permutation
//! of all K coordinates. The marginal assignment stays uniform, estimates
//! stay unbiased, and in the noiseless limit a block of agents holding a
//! single common item reconstructs its count exactly.

use rand::Rng;

use crate::engine::RngStream;
use crate::params::{
    cdf_depth, coth_half, hh_phi, pow2_at_least, quantile_contract_n, quantile_rounds,
};
use crate::{Error, Result};

/// Largest enumerable domain (after power-of-two padding) the frequency
/// oracle accepts.
pub const MAX_FO_DOMAIN: u64 = 1 << 20;

/// Probability that randomized response at `eps` transmits the input
/// unchanged: e^eps / (1 + e^eps).
pub fn rr_keep_prob(eps: f64) -> f64 {
    1.0 / (1.0 + (-eps).exp())
}

/// Warner's randomized response: emits `bit` with probability
/// e^eps/(1+e^eps), the flipped bit otherwise. The single exactly eps-DP
/// channel from which every primitive in this module is composed.
pub fn randomized_response(bit: u8, eps: f64, rng: &mut RngStream) -> u8 {
    debug_assert!(bit <= 1);
    assert!(eps > 0.0, "eps must be positive");
    if rng.random_bool(rr_keep_prob(eps)) {
        bit
    } else {
        bit ^ 1
    }
}

/// Unbiased estimate of the pre-noise mean of bits passed through
/// `randomized_response` at `eps`, clamped to [0,1]:
/// (mean - (1-p)) / (2p - 1) with p the keep probability.
pub fn estimate_bernoulli_mean(noisy_bits: &[u8], eps: f64) -> Result<f64> {
    if noisy_bits.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mean = noisy_bits.iter().map(|&b| b as f64).sum::<f64>() / noisy_bits.len() as f64;
    Ok(debias_mean(mean, eps).clamp(0.0, 1.0))
}

/// Debiasing map for a randomized-response bit mean, without clamping.
pub fn debias_mean(noisy_mean: f64, eps: f64) -> f64 {
    let p = rr_keep_prob(eps);
    (noisy_mean - (1.0 - p)) / (2.0 * p - 1.0)
}

/// Parity of the Hadamard sign: 0 when H[item, coord] = +1, 1 when -1.
#[inline]
pub fn fo_sign_bit(item: u64, coord: u64) -> u8 {
    ((item & coord).count_ones() & 1) as u8
}

/// One agent's frequency-oracle report: the Hadamard sign bit of its item at
/// its assigned coordinate, passed through randomized response.
#[inline]
pub fn fo_encode(item: u64, coord: u64, eps: f64, rng: &mut RngStream) -> u8 {
    randomized_response(fo_sign_bit(item, coord), eps, rng)
}

/// Shared-randomness coordinate schedule for n agents over a padded domain
/// of k coordinates. Both the agents and the referee derive it from the same
/// shared stream.
pub struct FoSchedule {
    k: u64,
    coords: Vec<u32>,
}

impl FoSchedule {
    /// Draws the balanced block schedule: each block of k agents gets a
    /// fresh uniform permutation of the k coordinates.
    pub fn generate(k: u64, n: usize, shared: &mut RngStream) -> FoSchedule {
        assert!(k.is_power_of_two() && k <= MAX_FO_DOMAIN);
        let k_us = k as usize;
        let mut coords = Vec::with_capacity(n);
        let mut perm: Vec<u32> = (0..k as u32).collect();
        let mut filled = 0;
        while filled < n {
            for i in (1..k_us).rev() {
                perm.swap(i, shared.random_range(0..=i));
            }
            let take = k_us.min(n - filled);
            coords.extend_from_slice(&perm[..take]);
            filled += take;
        }
        FoSchedule { k, coords }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Coordinate assigned to agent `i`.
    #[inline]
    pub fn coordinate(&self, i: usize) -> u64 {
        self.coords[i] as u64
    }
}

/// Debiased per-item count estimates from one frequency-oracle round.
#[derive(Clone, Debug)]
pub struct FrequencyEstimate {
    /// Declared item domain [0, domain).
    pub domain: u64,
    /// Padded Hadamard domain size (power of two, >= domain).
    pub k: u64,
    /// Number of contributing agents.
    pub n: u64,
    /// Privacy parameter of each contributing report.
    pub eps: f64,
    counts: Vec<f64>,
}

impl FrequencyEstimate {
    /// Estimated count of `x`; unbiased over the randomizer coins, may be
    /// negative. `x` must be below the padded domain size.
    #[inline]
    pub fn estimate(&self, x: u64) -> f64 {
        self.counts[x as usize]
    }

    /// All per-item estimates over the padded domain.
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }
}

/// Referee-side accumulator: sums debiased reports per coordinate, then one
/// Walsh-Hadamard transform yields every item's count estimate.
pub struct FoAggregator {
    domain: u64,
    k: u64,
    eps: f64,
    scale: f64,
    acc: Vec<f64>,
    n: u64,
}

impl FoAggregator {
    pub fn new(domain: u64, eps: f64) -> Result<FoAggregator> {
        let k = pow2_at_least(domain);
        if k > MAX_FO_DOMAIN {
            return Err(Error::DomainTooLarge { domain, max: MAX_FO_DOMAIN });
        }
        Ok(FoAggregator {
            domain,
            k,
            eps,
            scale: coth_half(eps),
            acc: vec![0.0; k as usize],
            n: 0,
        })
    }

    /// Adds one agent's report at its assigned coordinate. A report bit of 0
    /// encodes sign +1.
    #[inline]
    pub fn add(&mut self, coord: u64, bit: u8) {
        self.acc[coord as usize] += if bit == 0 { self.scale } else { -self.scale };
        self.n += 1;
    }

    pub fn finish(mut self) -> FrequencyEstimate {
        fwht(&mut self.acc);
        FrequencyEstimate { domain: self.domain, k: self.k, n: self.n, eps: self.eps, counts: self.acc }
    }
}

/// In-place unnormalized Walsh-Hadamard transform:
/// out[x] = sum_j in[j] * (-1)^popcount(x & j). Self-inverse up to 1/len.
pub fn fwht(data: &mut [f64]) {
    debug_assert!(data.len().is_power_of_two());
    let mut h = 1;
    while h < data.len() {
        for block in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// One-shot frequency oracle over `[0, domain)`. Standalone entry point:
/// the coordinate schedule and all agent coins are derived from
/// `shared_seed`, so a fixed seed reproduces the estimate exactly.
pub fn freq_oracle(
    agent_items: &[u64],
    domain: u64,
    eps: f64,
    shared_seed: u64,
) -> Result<FrequencyEstimate> {
    let mut agg = FoAggregator::new(domain, eps)?;
    let mut shared = RngStream::shared(shared_seed, 0);
    let schedule = FoSchedule::generate(agg.k, agent_items.len(), &mut shared);
    for (i, &item) in agent_items.iter().enumerate() {
        debug_assert!(item < agg.k);
        let coord = schedule.coordinate(i);
        let mut rng = RngStream::for_party(shared_seed, crate::PartyId::Agent(i as u32), 1);
        agg.add(coord, fo_encode(item, coord, eps, &mut rng));
    }
    Ok(agg.finish())
}

/// Default promote multiplier: items held by at least LAMBDA1 * Phi agents
/// are listed with probability 1 - beta.
pub const LAMBDA1: f64 = 16.0;
/// Default demote multiplier: listed items are held by at least
/// LAMBDA2 * Phi agents with probability 1 - beta.
pub const LAMBDA2: f64 = 4.0;

/// Output of `heavy_hitters`: listed items with their estimated counts,
/// sorted by estimate descending, plus the thresholds used.
#[derive(Clone, Debug)]
pub struct HeavyHittersList {
    pub items: Vec<(u64, f64)>,
    pub promote_threshold: f64,
    pub demote_threshold: f64,
}

impl HeavyHittersList {
    pub fn contains(&self, x: u64) -> bool {
        self.items.iter().any(|&(item, _)| item == x)
    }

    pub fn estimate_of(&self, x: u64) -> Option<f64> {
        self.items.iter().find(|&&(item, _)| item == x).map(|&(_, est)| est)
    }
}

/// Frequency oracle plus thresholding: lists every item whose estimated
/// count reaches the midpoint of the promote and demote thresholds,
/// lambda1 * Phi and lambda2 * Phi with Phi = sqrt(n * ln(domain/beta))/eps.
/// Estimates are not clamped before thresholding.
pub fn heavy_hitters(
    agent_items: &[u64],
    domain: u64,
    eps: f64,
    beta: f64,
    shared_seed: u64,
) -> Result<HeavyHittersList> {
    heavy_hitters_with_lambdas(agent_items, domain, eps, beta, shared_seed, LAMBDA1, LAMBDA2)
}

pub fn heavy_hitters_with_lambdas(
    agent_items: &[u64],
    domain: u64,
    eps: f64,
    beta: f64,
    shared_seed: u64,
    lambda1: f64,
    lambda2: f64,
) -> Result<HeavyHittersList> {
    assert!(lambda2 <= lambda1);
    let est = freq_oracle(agent_items, domain, eps, shared_seed)?;
    Ok(list_heavy_hitters(&est, domain, beta, lambda1, lambda2))
}

/// Thresholding step shared by the standalone op and the in-protocol path.
pub fn list_heavy_hitters(
    est: &FrequencyEstimate,
    domain: u64,
    beta: f64,
    lambda1: f64,
    lambda2: f64,
) -> HeavyHittersList {
    let phi = hh_phi(est.n, domain, est.eps, beta);
    let cut = 0.5 * (lambda1 + lambda2) * phi;
    let mut items: Vec<(u64, f64)> = (0..domain)
        .filter_map(|x| {
            let e = est.estimate(x);
            (e >= cut).then_some((x, e))
        })
        .collect();
    items.sort_by(|a, b| b.1.total_cmp(&a.1));
    HeavyHittersList {
        items,
        promote_threshold: lambda1 * phi,
        demote_threshold: lambda2 * phi,
    }
}

/// CDF released by level-grouped frequency oracles over a prefix tree.
///
/// Agents are split into `depth` groups; group j estimates counts of j-bit
/// prefixes. A threshold query q(w) subtracts, for every zero bit of w, the
/// estimated mass of the dyadic interval strictly above w at that level, so
/// q(all-ones) is exactly 1 and all-data-below queries telescope cleanly.
#[derive(Clone, Debug)]
pub struct CdfEstimate {
    pub b: u32,
    pub depth: u32,
    pub alpha: f64,
    pub eps: f64,
    levels: Vec<FrequencyEstimate>,
    group_sizes: Vec<u64>,
}

impl CdfEstimate {
    /// Estimated fraction of agent values that are <= w, clamped to [0,1].
    pub fn query(&self, w: u64) -> f64 {
        let top = w >> (self.b - self.depth);
        let mut above = 0.0;
        for j in 1..=self.depth {
            let bit = (top >> (self.depth - j)) & 1;
            if bit == 0 {
                let prefix = (top >> (self.depth - j)) | 1;
                if self.group_sizes[(j - 1) as usize] > 0 {
                    above += self.levels[(j - 1) as usize].estimate(prefix)
                        / self.group_sizes[(j - 1) as usize] as f64;
                }
            }
        }
        (1.0 - above).clamp(0.0, 1.0)
    }

    pub fn from_parts(
        b: u32,
        alpha: f64,
        eps: f64,
        levels: Vec<FrequencyEstimate>,
        group_sizes: Vec<u64>,
    ) -> CdfEstimate {
        let depth = levels.len() as u32;
        assert!(depth >= 1 && depth <= b && group_sizes.len() == levels.len());
        CdfEstimate { b, depth, alpha, eps, levels, group_sizes }
    }
}

/// Splits agent index i into its level group: level j in [1, depth] takes
/// the agents with i mod depth == j - 1.
#[inline]
pub fn cdf_level_of(i: usize, depth: u32) -> u32 {
    (i as u32 % depth) + 1
}

/// Full-population CDF release over values in {0,1}^b. Each agent
/// contributes one randomized-response bit at `eps` to its level's
/// frequency oracle; the tree depth is capped at `CDF_MAX_DEPTH`.
pub fn cdf_release(
    agent_values: &[u64],
    b: u32,
    eps: f64,
    alpha: f64,
    beta: f64,
    shared_seed: u64,
) -> Result<CdfEstimate> {
    if agent_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if b == 0 || b > 24 {
        return Err(Error::InvalidConfig(format!("bit length b = {b} outside [1, 24]")));
    }
    let _ = beta;
    let depth = cdf_depth(b);
    let mut aggs: Vec<FoAggregator> = (1..=depth)
        .map(|j| FoAggregator::new(1u64 << j, eps))
        .collect::<Result<_>>()?;
    let mut schedules = Vec::with_capacity(depth as usize);
    let group = |j: u32| {
        (agent_values.len() + depth as usize - 1 - (j as usize - 1)) / depth as usize
    };
    for j in 1..=depth {
        let mut shared = RngStream::shared(shared_seed, 100 + j);
        schedules.push(FoSchedule::generate(1u64 << j, group(j), &mut shared));
    }
    let mut per_level_pos = vec![0usize; depth as usize];
    for (i, &v) in agent_values.iter().enumerate() {
        let j = cdf_level_of(i, depth);
        let idx = (j - 1) as usize;
        let prefix = (v >> (b - j)) & ((1u64 << j) - 1);
        let coord = schedules[idx].coordinate(per_level_pos[idx]);
        per_level_pos[idx] += 1;
        let mut rng = RngStream::for_party(shared_seed, crate::PartyId::Agent(i as u32), j);
        aggs[idx].add(coord, fo_encode(prefix, coord, eps, &mut rng));
    }
    let group_sizes: Vec<u64> = (1..=depth).map(|j| group(j) as u64).collect();
    let levels: Vec<FrequencyEstimate> = aggs.into_iter().map(FoAggregator::finish).collect();
    Ok(CdfEstimate { b, depth, alpha, eps, levels, group_sizes })
}

/// Parameters of one interactive quantile search.
#[derive(Clone, Copy, Debug)]
pub struct QuantileQuery {
    /// Target quantile in (0,1).
    pub p_star: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Distance resolution of the binary search.
    pub tau_dist: f64,
    /// Acceptable probability mass between the answer and the true quantile.
    pub lambda_quant: f64,
    /// Failure probability of the whole search.
    pub beta_conf: f64,
}

impl QuantileQuery {
    pub fn rounds(&self) -> u32 {
        quantile_rounds(self.q_max - self.q_min, self.tau_dist)
    }
}

/// Interval state of a quantile binary search; shared between the
/// standalone op and the in-protocol round driver.
#[derive(Clone, Copy, Debug)]
pub struct QuantileSearchState {
    pub lo: f64,
    pub hi: f64,
}

impl QuantileSearchState {
    pub fn new(q: &QuantileQuery) -> Self {
        QuantileSearchState { lo: q.q_min, hi: q.q_max }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Moves the interval: keep the upper half when the estimated mass at or
    /// below mid is still short of the target.
    pub fn step(&mut self, p_hat: f64, p_star: f64) {
        let m = self.mid();
        if p_hat < p_star {
            self.lo = m;
        } else {
            self.hi = m;
        }
    }

    pub fn answer(&self) -> f64 {
        self.mid()
    }
}

/// Interactive quantile search: T = ceil(log2((q_max-q_min)/tau_dist))
/// rounds of randomized-response threshold tests on disjoint agent groups.
/// Requires the contract sample size
/// N >= (8T/lambda^2) * coth(eps/2)^2 * ln(4T/beta_conf).
pub fn private_quantile(
    agent_values: &[u64],
    query: &QuantileQuery,
    eps: f64,
    shared_seed: u64,
) -> Result<f64> {
    assert!(query.p_star > 0.0 && query.p_star < 1.0);
    let t_rounds = query.rounds();
    if t_rounds == 0 {
        return Ok(query.q_min);
    }
    let need = quantile_contract_n(query.lambda_quant, query.beta_conf, t_rounds, eps);
    if (agent_values.len() as u64) < need {
        return Err(Error::InvalidConfig(format!(
            "quantile search needs at least {need} agents, got {}",
            agent_values.len()
        )));
    }
    let g = agent_values.len() / t_rounds as usize;
    let mut state = QuantileSearchState::new(query);
    let mut noisy = Vec::with_capacity(g);
    for t in 0..t_rounds {
        let mid = state.mid();
        noisy.clear();
        for (off, &y) in agent_values[t as usize * g..(t as usize + 1) * g].iter().enumerate() {
            let i = t as usize * g + off;
            let bit = u8::from((y as f64) <= mid);
            let mut rng = RngStream::for_party(shared_seed, crate::PartyId::Agent(i as u32), t + 1);
            noisy.push(randomized_response(bit, eps, &mut rng));
        }
        let p_hat = estimate_bernoulli_mean(&noisy, eps)?;
        state.step(p_hat, query.p_star);
    }
    Ok(state.answer())
}
