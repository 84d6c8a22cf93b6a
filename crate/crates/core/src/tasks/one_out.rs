//! Local-then-curator protocol for the 1-out-of-2^d parities task.
//!
//! Agents on the share branch hold one share (t, s_t) of the selector s;
//! curator records on the parity branch carry a point x with the labels of
//! all 2^d candidate parities. Agents first release their shares through a
//! frequency oracle; the referee lists the heavy hitters, recovers every
//! share by a per-index argmax, and forwards the reconstructed selector to
//! the curator, who privately learns the selected parity r_s.

use std::any::Any;

use crate::curator::{learn_parity_private, LabeledExample};
use crate::datagen::{oo_is_share, oo_product, oo_share, oo_t, oo_x, TaskInstance};
use crate::engine::{
    run_protocol, InteractionPattern, PartyId, PatternKind, PrivacyLedger, ProtocolSpec, RoundIo,
    Transcript,
};
use crate::local::{fo_encode, list_heavy_hitters, FoAggregator, FoSchedule};
use crate::{params, Error, Result};

/// Shared-randomness purpose for the share-recovery coordinate schedule.
const SHARE_PURPOSE: u32 = 200;

/// Listing multipliers for share recovery. Shares are held by roughly a
/// 1/(2(m+1)) fraction of agents, far above the clearing threshold at the
/// contracted population size, so the aggressive defaults are unnecessary.
pub(crate) const SHARE_LAMBDA1: f64 = 2.0;
pub(crate) const SHARE_LAMBDA2: f64 = 1.0;

/// Outcome of one run: the learned parity, the reconstructed selector, and
/// whether any share index had no listed candidate (its share defaults to 0
/// and the run is counted as failed by callers that check correctness).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OneOutResult {
    pub r_hat: u64,
    pub s_hat: u64,
    pub missing_share: bool,
}

/// Protocol parameters for [`one_out_of_2d_parity`].
pub struct OneOutSpec {
    pub d: u32,
    pub c: u32,
    pub m: u64,
    pub eps: f64,
    pub beta: f64,
}

impl OneOutSpec {
    pub fn new(d: u32, c: u32, m: u64, eps: f64, beta: f64) -> Result<OneOutSpec> {
        if c == 0 || c > 20 || d > 5 {
            return Err(Error::InvalidConfig(format!("unsupported sizes d = {d}, c = {c}")));
        }
        if !(beta > 0.0 && beta < 1.0) || eps <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eps = {eps} and beta = {beta} out of range"
            )));
        }
        if m + 1 > 0xffff {
            return Err(Error::InvalidConfig("m too large for the record layout".into()));
        }
        Ok(OneOutSpec { d, c, m, eps, beta })
    }

    fn domain(&self) -> u64 {
        params::share_recovery_domain(self.m, self.d)
    }

    /// FO item an agent reports: shares map to 1 + t * 2^d + s_t, parity
    /// records to the reserved bottom symbol 0.
    fn item_of(&self, rec: u64) -> u64 {
        if oo_is_share(rec) {
            1 + (oo_t(rec) << self.d) + oo_share(rec, self.d)
        } else {
            0
        }
    }
}

#[derive(Default)]
struct OoState {
    schedule: Option<FoSchedule>,
    s_hat: u64,
    missing_share: bool,
    result: Option<OneOutResult>,
}

impl ProtocolSpec for OneOutSpec {
    fn name(&self) -> &'static str {
        "one-out"
    }

    fn pattern(&self) -> InteractionPattern {
        InteractionPattern { kind: PatternKind::LocalThenCurator, max_rounds: 4 }
    }

    fn rounds(&self) -> u32 {
        4
    }

    fn init_state(&self) -> Box<dyn Any> {
        Box::new(OoState::default())
    }

    fn round(&self, round: u32, state: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()> {
        let state = state.downcast_mut::<OoState>().expect("one-out state");
        let n = io.n_agents() as usize;
        match round {
            1 => {
                let mut shared = io.shared_rng(SHARE_PURPOSE);
                let k = params::pow2_at_least(self.domain());
                let schedule = FoSchedule::generate(k, n, &mut shared);
                io.reserve_sends(n);
                for i in 0..n {
                    let item = self.item_of(io.agent_record(i as u32));
                    let coord = schedule.coordinate(i);
                    let mut rng = io.rng(PartyId::Agent(i as u32));
                    let bit = fo_encode(item, coord, self.eps, &mut rng);
                    io.charge(PartyId::Agent(i as u32), self.eps, None)?;
                    io.send(PartyId::Agent(i as u32), PartyId::Referee, &[bit])?;
                }
                state.schedule = Some(schedule);
            }
            2 => {
                let schedule = state.schedule.as_ref().expect("schedule from round 1");
                let mut agg = FoAggregator::new(self.domain(), self.eps)?;
                for msg in io.referee_inbox().iter() {
                    if let PartyId::Agent(i) = msg.sender {
                        agg.add(schedule.coordinate(i as usize), msg.payload[0]);
                    }
                }
                let est = agg.finish();
                let list =
                    list_heavy_hitters(&est, self.domain(), self.beta / 3.0, SHARE_LAMBDA1, SHARE_LAMBDA2);
                let pairs = (self.m + 1) << self.d;
                let mut best: Vec<Option<(f64, u64)>> = vec![None; self.m as usize + 1];
                for &(item, count) in &list.items {
                    if item == 0 || item > pairs {
                        continue;
                    }
                    let t = (item - 1) >> self.d;
                    let s = (item - 1) & ((1u64 << self.d) - 1);
                    if best[t as usize].is_none_or(|(c, _)| count > c) {
                        best[t as usize] = Some((count, s));
                    }
                }
                state.missing_share = best.iter().any(Option::is_none);
                state.s_hat = best
                    .iter()
                    .map(|slot| slot.map_or(0, |(_, s)| s))
                    .fold(0, |acc, s| acc ^ s);
                io.send(PartyId::Referee, PartyId::Curator, &[state.s_hat as u8])?;
            }
            3 => {
                let s_hat = io.curator_inbox().single().expect("selector from referee").payload[0]
                    as u64;
                let db: Vec<LabeledExample> = io
                    .curator_records()
                    .iter()
                    .filter(|&&rec| !oo_is_share(rec))
                    .map(|&rec| LabeledExample {
                        x: oo_x(rec, self.c),
                        label: oo_product(rec, self.c, s_hat),
                    })
                    .collect();
                let mut rng = io.rng(PartyId::Curator);
                let k_hat =
                    learn_parity_private(&db, self.c, self.eps, 0.25, self.beta / 3.0, &mut rng)?;
                io.charge(PartyId::Curator, self.eps, None)?;
                io.send(PartyId::Curator, PartyId::Referee, &k_hat.to_le_bytes())?;
            }
            4 => {
                let msg = io.referee_inbox().single().expect("parity from curator");
                let r_hat = u64::from_le_bytes(msg.payload.as_bytes().try_into().unwrap());
                io.set_output(r_hat.to_le_bytes().to_vec());
                state.result = Some(OneOutResult {
                    r_hat,
                    s_hat: state.s_hat,
                    missing_share: state.missing_share,
                });
            }
            _ => {}
        }
        Ok(())
    }
}

/// Runs the local-then-curator protocol on a generated instance.
pub fn one_out_of_2d_parity(
    instance: &TaskInstance,
    eps: f64,
    beta: f64,
    ledger: &mut PrivacyLedger,
    seed: u64,
) -> Result<(OneOutResult, Transcript)> {
    let d = instance
        .param_u64("d")
        .ok_or_else(|| Error::InvalidConfig("instance lacks d".into()))? as u32;
    let c = instance
        .param_u64("c")
        .ok_or_else(|| Error::InvalidConfig("instance lacks c".into()))? as u32;
    let spec = OneOutSpec::new(d, c, instance.curator_records.len() as u64, eps, beta)?;
    let pattern = spec.pattern();
    let outcome = run_protocol(
        &spec,
        &instance.curator_records,
        &instance.agent_records,
        pattern,
        ledger,
        seed,
    )?;
    let state = outcome.state.downcast::<OoState>().expect("one-out state");
    let result =
        state.result.ok_or_else(|| Error::InvalidConfig("protocol produced no result".into()))?;
    Ok((result, outcome.transcript))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_one_out, GroundTruth};
    use crate::engine::validate_pattern;

    #[test]
    fn item_packing_is_injective_over_share_pairs() {
        let spec = OneOutSpec::new(3, 4, 10, 1.0, 0.25).unwrap();
        let mut seen = std::collections::HashSet::new();
        for t in 0..=10u64 {
            for s in 0..8u64 {
                let rec = crate::datagen::oo_pack_share(t, s);
                assert!(seen.insert(spec.item_of(rec)));
            }
        }
        assert!(!seen.contains(&0), "bottom symbol must stay reserved");
        assert!(seen.iter().all(|&item| item < spec.domain()));
    }

    #[test]
    fn recovers_selected_parity_at_high_eps() {
        let (d, c, m, n, eps, beta) = (2, 3, 24, 60_000, 50.0, 0.25);
        let inst = gen_one_out(d, c, m, n, 11).unwrap();
        let GroundTruth::OneOut { s, r_s, .. } = inst.truth else { unreachable!() };
        let mut ledger = PrivacyLedger::new(eps);
        let (result, transcript) =
            one_out_of_2d_parity(&inst, eps, beta, &mut ledger, 11).unwrap();
        assert!(!result.missing_share);
        assert_eq!(result.s_hat, s);
        assert_eq!(result.r_hat, r_s);
        assert!(validate_pattern(
            &transcript,
            InteractionPattern { kind: PatternKind::LocalThenCurator, max_rounds: 4 }
        ));
        assert!(!validate_pattern(
            &transcript,
            InteractionPattern { kind: PatternKind::CuratorThenLocal, max_rounds: 4 }
        ));
        assert!((ledger.total(PartyId::Curator) - eps).abs() < 1e-12);
        assert!((ledger.total(PartyId::Agent(0)) - eps).abs() < 1e-12);
        assert!(ledger.max_total() <= eps + 1e-9);
    }

    #[test]
    fn rejects_oversized_layout() {
        assert!(OneOutSpec::new(6, 4, 10, 1.0, 0.25).is_err());
        assert!(OneOutSpec::new(3, 4, 0xffff, 1.0, 0.25).is_err());
    }
}
