//! Constructive reductions for hypothesis testing on biased bits: a hybrid
//! protocol whose advantage gamma can be measured, and wrappers that turn it
//! into a purely local or purely curator protocol by simulating the missing
//! side from public samples of one of the two known distributions.
//!
//! The wrapped protocol hedges: with probability gamma/2 it outputs the
//! distribution index whose samples it cannot simulate, otherwise it runs
//! the hybrid protocol with the missing party's records drawn fresh from
//! the other distribution. Against either true index this keeps an
//! advantage of at least gamma/4 whenever the hybrid had gamma.

use std::any::Any;

use rand::Rng;

use crate::curator::laplace_mean;
use crate::datagen::gen_hypo;
use crate::engine::{
    run_protocol, run_protocol_simulated, InteractionPattern, PartyId, PatternKind, PrivacyLedger,
    ProtocolSpec, RngStream, RoundIo, SimOverride, Transcript,
};
use crate::local::{debias_mean, estimate_bernoulli_mean, randomized_response};
use crate::{Error, Result};

/// Shared-randomness purposes of the wrappers: the hedge coin, the fake
/// curator sample, the fake agent sample, and the empty-input coin of the
/// majority test.
const HEDGE_COIN_PURPOSE: u32 = 400;
const FAKE_CURATOR_PURPOSE: u32 = 401;
const FAKE_AGENTS_PURPOSE: u32 = 402;
const EMPTY_COIN_PURPOSE: u32 = 403;

/// The hybrid hypothesis test: records are bits drawn from Bernoulli with
/// mean (1 + alpha)/2 under index 1 and (1 - alpha)/2 under index 0. The
/// curator releases a Laplace mean, every agent a randomized-response bit,
/// and the referee averages the two debiased estimates.
pub struct HypoHybridSpec {
    pub eps: f64,
}

/// Outcome of one hybrid run: the guessed index and the combined estimate
/// it was thresholded from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HypoResult {
    pub j_hat: u8,
    pub combined: f64,
}

#[derive(Default)]
struct HypoState {
    result: Option<HypoResult>,
}

impl ProtocolSpec for HypoHybridSpec {
    fn name(&self) -> &'static str {
        "hypo-reduce"
    }

    fn pattern(&self) -> InteractionPattern {
        InteractionPattern { kind: PatternKind::NonInteractive, max_rounds: 2 }
    }

    fn rounds(&self) -> u32 {
        2
    }

    fn init_state(&self) -> Box<dyn Any> {
        Box::new(HypoState::default())
    }

    fn round(&self, round: u32, state: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()> {
        let state = state.downcast_mut::<HypoState>().expect("hypo state");
        let n = io.n_agents() as usize;
        match round {
            1 => {
                io.reserve_sends(n + 1);
                for i in 0..n {
                    let bit = (io.agent_record(i as u32) & 1) as u8;
                    let mut rng = io.rng(PartyId::Agent(i as u32));
                    let report = randomized_response(bit, self.eps, &mut rng);
                    io.charge(PartyId::Agent(i as u32), self.eps, None)?;
                    io.send(PartyId::Agent(i as u32), PartyId::Referee, &[report])?;
                }
                let values: Vec<f64> =
                    io.curator_records().iter().map(|&rec| (rec & 1) as f64).collect();
                let mut rng = io.rng(PartyId::Curator);
                let est_c = laplace_mean(&values, 0.0, 1.0, self.eps, &mut rng)?;
                io.charge(PartyId::Curator, self.eps, None)?;
                io.send(PartyId::Curator, PartyId::Referee, &est_c.to_le_bytes())?;
            }
            2 => {
                let mut est_c = 0.0;
                let mut bits = Vec::with_capacity(n);
                for msg in io.referee_inbox().iter() {
                    match msg.sender {
                        PartyId::Agent(_) => bits.push(msg.payload[0]),
                        PartyId::Curator => {
                            est_c =
                                f64::from_le_bytes(msg.payload.as_bytes().try_into().unwrap());
                        }
                        PartyId::Referee => {}
                    }
                }
                let est_a = estimate_bernoulli_mean(&bits, self.eps)?;
                let combined = 0.5 * (est_a + est_c);
                let j_hat = u8::from(combined > 0.5);
                io.set_output(vec![j_hat]);
                state.result = Some(HypoResult { j_hat, combined });
            }
            _ => {}
        }
        Ok(())
    }
}

impl HypoHybridSpec {
    /// Runs the hybrid test on explicit records.
    pub fn run(
        &self,
        curator_records: &[u64],
        agent_records: &[u64],
        ledger: &mut PrivacyLedger,
        seed: u64,
    ) -> Result<(HypoResult, Transcript)> {
        if curator_records.is_empty() || agent_records.is_empty() {
            return Err(Error::EmptyInput);
        }
        let pattern = self.pattern();
        let outcome =
            run_protocol(self, curator_records, agent_records, pattern, ledger, seed)?;
        let state = outcome.state.downcast::<HypoState>().expect("hypo state");
        let result = state
            .result
            .ok_or_else(|| Error::InvalidConfig("protocol produced no result".into()))?;
        Ok((result, outcome.transcript))
    }
}

/// Empirical advantage of the hybrid test over random guessing: the success
/// rate across fresh instances with a uniform index, minus one half,
/// clamped at zero.
pub fn measure_gamma(
    alpha: f64,
    m: u64,
    n: u64,
    eps: f64,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidConfig("gamma measurement needs at least one trial".into()));
    }
    let spec = HypoHybridSpec { eps };
    let mut correct = 0u64;
    for t in 0..trials {
        let mut meta = RngStream::for_datagen(seed, t);
        let j = u8::from(meta.random_bool(0.5));
        let instance_seed = meta.random::<u64>();
        let instance = gen_hypo(alpha, j, m, n, instance_seed)?;
        let mut ledger = PrivacyLedger::new(eps);
        let (result, _) = spec.run(
            &instance.curator_records,
            &instance.agent_records,
            &mut ledger,
            instance_seed,
        )?;
        if result.j_hat == j {
            correct += 1;
        }
    }
    Ok((correct as f64 / trials as f64 - 0.5).max(0.0))
}

/// Purely local wrapper built from a hybrid test: the curator's side is
/// simulated from public index-0 samples, so only agents touch private
/// data. Hedges toward index 1 with probability gamma/2.
pub struct LocalOnlyProtocol {
    spec: HypoHybridSpec,
    alpha: f64,
    m: u64,
    gamma: f64,
}

pub fn build_local_from_hybrid(
    spec: &HypoHybridSpec,
    alpha: f64,
    m: u64,
    gamma: f64,
) -> LocalOnlyProtocol {
    LocalOnlyProtocol { spec: HypoHybridSpec { eps: spec.eps }, alpha, m, gamma }
}

impl LocalOnlyProtocol {
    /// Runs on real agent records only. The returned transcript carries no
    /// curator messages; on a hedged run it is empty.
    pub fn run(
        &self,
        agent_records: &[u64],
        ledger: &mut PrivacyLedger,
        seed: u64,
    ) -> Result<(u8, Transcript)> {
        let mut coin = RngStream::shared(seed, HEDGE_COIN_PURPOSE);
        if coin.random_bool((self.gamma / 2.0).clamp(0.0, 1.0)) {
            return Ok((1, Transcript::default()));
        }
        let mut fake_rng = RngStream::shared(seed, FAKE_CURATOR_PURPOSE);
        let fake: Vec<u64> = (0..self.m.max(1))
            .map(|_| u64::from(fake_rng.random_bool((1.0 - self.alpha) / 2.0)))
            .collect();
        let outcome = run_protocol_simulated(
            &self.spec,
            &[],
            agent_records,
            self.spec.pattern(),
            ledger,
            seed,
            SimOverride { curator_records: Some(&fake), agent_records: None },
        )?;
        let j_hat = outcome
            .output
            .as_deref()
            .and_then(|o| o.first().copied())
            .ok_or_else(|| Error::InvalidConfig("protocol produced no output".into()))?;
        Ok((j_hat, outcome.transcript))
    }
}

/// Purely curator wrapper built from a hybrid test: the agents' side is
/// simulated from public index-1 samples. Hedges toward index 0 with
/// probability gamma/2.
pub struct CuratorOnlyProtocol {
    spec: HypoHybridSpec,
    alpha: f64,
    n: u64,
    gamma: f64,
}

pub fn build_curator_only_from_hybrid(
    spec: &HypoHybridSpec,
    alpha: f64,
    n: u64,
    gamma: f64,
) -> CuratorOnlyProtocol {
    CuratorOnlyProtocol { spec: HypoHybridSpec { eps: spec.eps }, alpha, n, gamma }
}

impl CuratorOnlyProtocol {
    /// Runs on real curator records only. The returned transcript carries no
    /// agent messages; on a hedged run it is empty.
    pub fn run(
        &self,
        curator_records: &[u64],
        ledger: &mut PrivacyLedger,
        seed: u64,
    ) -> Result<(u8, Transcript)> {
        let mut coin = RngStream::shared(seed, HEDGE_COIN_PURPOSE);
        if coin.random_bool((self.gamma / 2.0).clamp(0.0, 1.0)) {
            return Ok((0, Transcript::default()));
        }
        let mut fake_rng = RngStream::shared(seed, FAKE_AGENTS_PURPOSE);
        let fake: Vec<u64> = (0..self.n.max(1))
            .map(|_| u64::from(fake_rng.random_bool((1.0 + self.alpha) / 2.0)))
            .collect();
        let outcome = run_protocol_simulated(
            &self.spec,
            curator_records,
            &[],
            self.spec.pattern(),
            ledger,
            seed,
            SimOverride { curator_records: None, agent_records: Some(&fake) },
        )?;
        let j_hat = outcome
            .output
            .as_deref()
            .and_then(|o| o.first().copied())
            .ok_or_else(|| Error::InvalidConfig("protocol produced no output".into()))?;
        Ok((j_hat, outcome.transcript))
    }
}

/// Local-model baseline: every bit through randomized response, debias, and
/// take the majority. An empty input falls back to a shared fair coin.
pub fn hypothesis_test_majority(bits: &[u8], eps: f64, seed: u64) -> u8 {
    if bits.is_empty() {
        return u8::from(RngStream::shared(seed, EMPTY_COIN_PURPOSE).random_bool(0.5));
    }
    let noisy_sum: f64 = bits
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let mut rng = RngStream::for_party(seed, PartyId::Agent(i as u32), 1);
            randomized_response(b & 1, eps, &mut rng) as f64
        })
        .sum();
    u8::from(debias_mean(noisy_sum / bits.len() as f64, eps) > 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hybrid_separates_strongly_biased_indices() {
        let spec = HypoHybridSpec { eps: 5.0 };
        for j in [0u8, 1u8] {
            let inst = gen_hypo(0.5, j, 200, 2000, 31 + j as u64).unwrap();
            let mut ledger = PrivacyLedger::new(5.0);
            let (res, transcript) = spec
                .run(&inst.curator_records, &inst.agent_records, &mut ledger, 31)
                .unwrap();
            assert_eq!(res.j_hat, j);
            assert_eq!(transcript.tally().total, 2001);
            assert!(ledger.max_total() <= 5.0 + 1e-9);
        }
    }

    #[test]
    fn measured_gamma_is_large_when_testing_is_easy() {
        let gamma = measure_gamma(0.5, 200, 2000, 5.0, 16, 37).unwrap();
        assert!(gamma > 0.4, "gamma = {gamma}");
    }

    #[test]
    fn local_wrapper_never_talks_for_the_curator() {
        let spec = HypoHybridSpec { eps: 5.0 };
        let local = build_local_from_hybrid(&spec, 0.5, 200, 0.4);
        let inst = gen_hypo(0.5, 0, 200, 2000, 41).unwrap();
        let mut ledger = PrivacyLedger::new(5.0);
        let (j_hat, transcript) = local.run(&inst.agent_records, &mut ledger, 2).unwrap();
        if !transcript.messages.is_empty() {
            assert!(transcript.messages.iter().all(|m| m.sender.is_agent()));
            assert_eq!(j_hat, 0);
        }
        assert_eq!(ledger.total(PartyId::Curator), 0.0);
    }

    #[test]
    fn curator_wrapper_never_talks_for_the_agents() {
        let spec = HypoHybridSpec { eps: 5.0 };
        let curator_only = build_curator_only_from_hybrid(&spec, 0.5, 2000, 0.4);
        let inst = gen_hypo(0.5, 1, 200, 2000, 43).unwrap();
        let mut ledger = PrivacyLedger::new(5.0);
        let (j_hat, transcript) =
            curator_only.run(&inst.curator_records, &mut ledger, 4).unwrap();
        if !transcript.messages.is_empty() {
            assert!(transcript.messages.iter().all(|m| m.sender == PartyId::Curator));
            assert_eq!(j_hat, 1);
        }
        for party in ledger.charged_parties() {
            assert_eq!(party, PartyId::Curator);
        }
    }

    #[test]
    fn majority_test_handles_empty_and_biased_inputs() {
        let j = hypothesis_test_majority(&[], 1.0, 7);
        assert!(j <= 1);
        let ones = vec![1u8; 500];
        assert_eq!(hypothesis_test_majority(&ones, 5.0, 7), 1);
        let zeros = vec![0u8; 500];
        assert_eq!(hypothesis_test_majority(&zeros, 5.0, 7), 0);
    }
}
