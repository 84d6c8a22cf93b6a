//! Curator-then-local protocol for select-then-estimate: the curator picks
//! a near-best coordinate of {-1,1}^d records, the referee broadcasts it,
//! and the agents estimate that coordinate's population mean by randomized
//! response. The curator sample is enough to select but far too small to
//! estimate at the target accuracy; the agent population is the reverse.

use std::any::Any;

use crate::curator::{laplace_mean, select_max_coordinate};
use crate::datagen::TaskInstance;
use crate::engine::{
    run_protocol, InteractionPattern, PartyId, PatternKind, PrivacyLedger, ProtocolSpec, RngStream,
    RoundIo, Transcript,
};
use crate::local::{estimate_bernoulli_mean, randomized_response};
use crate::{Error, Result};

/// Outcome of one run: the selected coordinate and its estimated mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectEstimateResult {
    pub i: usize,
    pub mu_hat: f64,
}

/// Protocol parameters for [`select_then_estimate`].
pub struct SelectEstimateSpec {
    pub d: u32,
    pub eps: f64,
}

impl SelectEstimateSpec {
    pub fn new(d: u32, eps: f64) -> Result<SelectEstimateSpec> {
        if d == 0 || d > 64 {
            return Err(Error::InvalidConfig(format!("d = {d} out of range")));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidConfig(format!("eps = {eps} must be positive")));
        }
        Ok(SelectEstimateSpec { d, eps })
    }
}

#[derive(Default)]
struct SeState {
    coord: u16,
    result: Option<SelectEstimateResult>,
}

impl ProtocolSpec for SelectEstimateSpec {
    fn name(&self) -> &'static str {
        "select-estimate"
    }

    fn pattern(&self) -> InteractionPattern {
        InteractionPattern { kind: PatternKind::CuratorThenLocal, max_rounds: 4 }
    }

    fn rounds(&self) -> u32 {
        4
    }

    fn init_state(&self) -> Box<dyn Any> {
        Box::new(SeState::default())
    }

    fn round(&self, round: u32, state: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()> {
        let state = state.downcast_mut::<SeState>().expect("select-estimate state");
        let n = io.n_agents() as usize;
        match round {
            1 => {
                let mut rng = io.rng(PartyId::Curator);
                let i = select_max_coordinate(io.curator_records(), self.d, self.eps, &mut rng)?;
                io.charge(PartyId::Curator, self.eps, None)?;
                io.send(PartyId::Curator, PartyId::Referee, &(i as u16).to_le_bytes())?;
            }
            2 => {
                let msg = io.referee_inbox().single().expect("coordinate from curator");
                let bytes: [u8; 2] = msg.payload.as_bytes().try_into().unwrap();
                state.coord = u16::from_le_bytes(bytes);
                io.reserve_sends(n);
                for i in 0..n {
                    io.send(PartyId::Referee, PartyId::Agent(i as u32), &bytes)?;
                }
            }
            3 => {
                io.reserve_sends(n);
                for i in 0..n {
                    let msg = io.agent_inbox(i as u32).single().expect("broadcast coordinate");
                    let coord =
                        u16::from_le_bytes(msg.payload.as_bytes().try_into().unwrap()) as u32;
                    let bit = ((io.agent_record(i as u32) >> coord) & 1) as u8;
                    let mut rng = io.rng(PartyId::Agent(i as u32));
                    let report = randomized_response(bit, self.eps, &mut rng);
                    io.charge(PartyId::Agent(i as u32), self.eps, None)?;
                    io.send(PartyId::Agent(i as u32), PartyId::Referee, &[report])?;
                }
            }
            4 => {
                let coord = state.coord;
                let mut bits = Vec::with_capacity(n);
                for msg in io.referee_inbox().iter() {
                    if msg.sender.is_agent() {
                        bits.push(msg.payload[0]);
                    }
                }
                let p_hat = estimate_bernoulli_mean(&bits, self.eps)?;
                let mu_hat = 2.0 * p_hat - 1.0;
                let mut output = coord.to_le_bytes().to_vec();
                output.extend_from_slice(&mu_hat.to_le_bytes());
                io.set_output(output);
                state.result = Some(SelectEstimateResult { i: coord as usize, mu_hat });
            }
            _ => {}
        }
        Ok(())
    }
}

/// Runs the curator-then-local protocol on a generated instance.
pub fn select_then_estimate(
    instance: &TaskInstance,
    eps: f64,
    ledger: &mut PrivacyLedger,
    seed: u64,
) -> Result<(SelectEstimateResult, Transcript)> {
    let d = instance
        .param_u64("d")
        .ok_or_else(|| Error::InvalidConfig("instance lacks d".into()))? as u32;
    let spec = SelectEstimateSpec::new(d, eps)?;
    let pattern = spec.pattern();
    let outcome = run_protocol(
        &spec,
        &instance.curator_records,
        &instance.agent_records,
        pattern,
        ledger,
        seed,
    )?;
    let state = outcome.state.downcast::<SeState>().expect("select-estimate state");
    let result =
        state.result.ok_or_else(|| Error::InvalidConfig("protocol produced no result".into()))?;
    Ok((result, outcome.transcript))
}

/// Curator-only baseline: splits eps evenly across all d coordinates, adds
/// Laplace noise to every empirical mean, and reports the noisy argmax with
/// its noisy value. Selection bias makes the reported value anti-concentrate
/// around the true mean of the winning coordinate.
pub fn laplace_select_estimate(
    sample: &[u64],
    d: u32,
    eps: f64,
    rng: &mut RngStream,
) -> Result<(usize, f64)> {
    if d == 0 || d > 64 {
        return Err(Error::InvalidConfig(format!("d = {d} out of range")));
    }
    let per_coord = eps / d as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..d as usize {
        let signs: Vec<f64> = sample
            .iter()
            .map(|&rec| if (rec >> j) & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        let noisy = laplace_mean(&signs, -1.0, 1.0, per_coord, rng)?;
        if noisy > best.1 {
            best = (j, noisy);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_select;
    use crate::engine::validate_pattern;

    #[test]
    fn selects_and_estimates_dominant_coordinate_at_high_eps() {
        let mut mu = vec![0.0; 8];
        mu[0] = 0.6;
        let inst = gen_select(8, &mu, 500, 4000, 17).unwrap();
        let mut ledger = PrivacyLedger::new(50.0);
        let (result, transcript) =
            select_then_estimate(&inst, 50.0, &mut ledger, 17).unwrap();
        assert_eq!(result.i, 0);
        assert!((result.mu_hat - 0.6).abs() < 0.1, "mu_hat = {}", result.mu_hat);
        assert!(validate_pattern(
            &transcript,
            InteractionPattern { kind: PatternKind::CuratorThenLocal, max_rounds: 4 }
        ));
        assert!((ledger.total(PartyId::Curator) - 50.0).abs() < 1e-12);
        assert!(ledger.max_total() <= 50.0 + 1e-9);
    }

    #[test]
    fn output_bytes_round_trip_the_result() {
        let mu = vec![0.2; 4];
        let inst = gen_select(4, &mu, 100, 500, 3).unwrap();
        let mut ledger = PrivacyLedger::new(1.0);
        let (result, transcript) = select_then_estimate(&inst, 1.0, &mut ledger, 3).unwrap();
        let out = transcript.output.unwrap();
        assert_eq!(u16::from_le_bytes(out[..2].try_into().unwrap()) as usize, result.i);
        assert_eq!(f64::from_le_bytes(out[2..].try_into().unwrap()), result.mu_hat);
    }

    #[test]
    fn baseline_splits_budget_and_reports_some_coordinate() {
        let mu = vec![0.1; 16];
        let inst = gen_select(16, &mu, 2000, 10, 5).unwrap();
        let mut rng = RngStream::for_datagen(5, 1);
        let (i, v) = laplace_select_estimate(&inst.curator_records, 16, 1.0, &mut rng).unwrap();
        assert!(i < 16);
        assert!(v.is_finite());
    }
}
