//! Curator-then-local protocol for the parity-chooses-secret task.
//!
//! The curator's labeled sample determines a parity r; the secret is the
//! XOR of the share column s_{.,r} spread across agents. The curator first
//! privately learns r and the referee broadcasts it; only then does each
//! agent know which single bit of its share column to release. Shares are
//! recovered exactly as in the one-out task, over pairs (t, bit).

use std::any::Any;

use crate::curator::{learn_parity_private, LabeledExample};
use crate::datagen::{pcs_label, pcs_t, pcs_table_bit, pcs_x, TaskInstance};
use crate::engine::{
    run_protocol, InteractionPattern, PartyId, PatternKind, PrivacyLedger, ProtocolSpec, RoundIo,
    Transcript,
};
use crate::local::{fo_encode, list_heavy_hitters, FoAggregator, FoSchedule};
use crate::tasks::one_out::{SHARE_LAMBDA1, SHARE_LAMBDA2};
use crate::{params, Error, Result};

/// Shared-randomness purpose for the share-bit coordinate schedule.
const SHARE_PURPOSE: u32 = 201;

/// Outcome of one run: the broadcast parity, the reconstructed secret bit,
/// and whether any share index went unlisted (its bit defaults to 0).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PcsResult {
    pub r_hat: u64,
    pub s_hat: u8,
    pub missing_share: bool,
}

/// Protocol parameters for [`parity_chooses_secret`]. Borrows the shared
/// share table carried as instance auxiliary words.
pub struct PcsSpec<'a> {
    pub c: u32,
    pub m: u64,
    pub eps: f64,
    pub beta: f64,
    pub aux: &'a [u64],
}

impl<'a> PcsSpec<'a> {
    pub fn new(c: u32, m: u64, eps: f64, beta: f64, aux: &'a [u64]) -> Result<PcsSpec<'a>> {
        if c == 0 || c > 16 {
            return Err(Error::InvalidConfig(format!("unsupported size c = {c}")));
        }
        if !(beta > 0.0 && beta < 1.0) || eps <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eps = {eps} and beta = {beta} out of range"
            )));
        }
        if m + 1 > 0xffff {
            return Err(Error::InvalidConfig("m too large for the record layout".into()));
        }
        let words = crate::datagen::pcs_words_per_t(c) * (m as usize + 1);
        if aux.len() != words {
            return Err(Error::InvalidConfig(format!(
                "share table has {} words, expected {words}",
                aux.len()
            )));
        }
        Ok(PcsSpec { c, m, eps, beta, aux })
    }

    fn domain(&self) -> u64 {
        params::share_recovery_domain(self.m, 1)
    }
}

#[derive(Default)]
struct PcsState {
    r_hat: u64,
    schedule: Option<FoSchedule>,
    result: Option<PcsResult>,
}

impl ProtocolSpec for PcsSpec<'_> {
    fn name(&self) -> &'static str {
        "pcs"
    }

    fn pattern(&self) -> InteractionPattern {
        InteractionPattern { kind: PatternKind::CuratorThenLocal, max_rounds: 4 }
    }

    fn rounds(&self) -> u32 {
        4
    }

    fn init_state(&self) -> Box<dyn Any> {
        Box::new(PcsState::default())
    }

    fn round(&self, round: u32, state: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()> {
        let state = state.downcast_mut::<PcsState>().expect("pcs state");
        let n = io.n_agents() as usize;
        match round {
            1 => {
                let db: Vec<LabeledExample> = io
                    .curator_records()
                    .iter()
                    .map(|&rec| LabeledExample { x: pcs_x(rec, self.c), label: pcs_label(rec, self.c) })
                    .collect();
                let mut rng = io.rng(PartyId::Curator);
                let r_hat =
                    learn_parity_private(&db, self.c, self.eps, 0.25, self.beta / 3.0, &mut rng)?;
                io.charge(PartyId::Curator, self.eps, None)?;
                io.send(PartyId::Curator, PartyId::Referee, &(r_hat as u16).to_le_bytes())?;
            }
            2 => {
                let msg = io.referee_inbox().single().expect("parity from curator");
                let bytes: [u8; 2] = msg.payload.as_bytes().try_into().unwrap();
                state.r_hat = u16::from_le_bytes(bytes) as u64;
                io.reserve_sends(n);
                for i in 0..n {
                    io.send(PartyId::Referee, PartyId::Agent(i as u32), &bytes)?;
                }
            }
            3 => {
                let mut shared = io.shared_rng(SHARE_PURPOSE);
                let k = params::pow2_at_least(self.domain());
                let schedule = FoSchedule::generate(k, n, &mut shared);
                io.reserve_sends(n);
                for i in 0..n {
                    let msg = io.agent_inbox(i as u32).single().expect("broadcast parity");
                    let r_hat = u16::from_le_bytes(msg.payload.as_bytes().try_into().unwrap());
                    let t = pcs_t(io.agent_record(i as u32), self.c);
                    let share_bit = pcs_table_bit(self.aux, self.c, t, r_hat as u64);
                    let item = 1 + (t << 1) + share_bit as u64;
                    let coord = schedule.coordinate(i);
                    let mut rng = io.rng(PartyId::Agent(i as u32));
                    let bit = fo_encode(item, coord, self.eps, &mut rng);
                    io.charge(PartyId::Agent(i as u32), self.eps, None)?;
                    io.send(PartyId::Agent(i as u32), PartyId::Referee, &[bit])?;
                }
                state.schedule = Some(schedule);
            }
            4 => {
                let schedule = state.schedule.as_ref().expect("schedule from round 3");
                let mut agg = FoAggregator::new(self.domain(), self.eps)?;
                for msg in io.referee_inbox().iter() {
                    if let PartyId::Agent(i) = msg.sender {
                        agg.add(schedule.coordinate(i as usize), msg.payload[0]);
                    }
                }
                let est = agg.finish();
                let list = list_heavy_hitters(
                    &est,
                    self.domain(),
                    self.beta / 3.0,
                    SHARE_LAMBDA1,
                    SHARE_LAMBDA2,
                );
                let pairs = (self.m + 1) << 1;
                let mut best: Vec<Option<(f64, u8)>> = vec![None; self.m as usize + 1];
                for &(item, count) in &list.items {
                    if item == 0 || item > pairs {
                        continue;
                    }
                    let t = (item - 1) >> 1;
                    let bit = ((item - 1) & 1) as u8;
                    if best[t as usize].is_none_or(|(c, _)| count > c) {
                        best[t as usize] = Some((count, bit));
                    }
                }
                let missing_share = best.iter().any(Option::is_none);
                let s_hat = best
                    .iter()
                    .map(|slot| slot.map_or(0, |(_, bit)| bit))
                    .fold(0, |acc, bit| acc ^ bit);
                io.set_output(vec![s_hat]);
                state.result = Some(PcsResult { r_hat: state.r_hat, s_hat, missing_share });
            }
            _ => {}
        }
        Ok(())
    }
}

/// Runs the curator-then-local protocol on a generated instance.
pub fn parity_chooses_secret(
    instance: &TaskInstance,
    eps: f64,
    beta: f64,
    ledger: &mut PrivacyLedger,
    seed: u64,
) -> Result<(PcsResult, Transcript)> {
    let c = instance
        .param_u64("c")
        .ok_or_else(|| Error::InvalidConfig("instance lacks c".into()))? as u32;
    let spec = PcsSpec::new(
        c,
        instance.curator_records.len() as u64,
        eps,
        beta,
        &instance.aux,
    )?;
    let pattern = spec.pattern();
    let outcome = run_protocol(
        &spec,
        &instance.curator_records,
        &instance.agent_records,
        pattern,
        ledger,
        seed,
    )?;
    let state = outcome.state.downcast::<PcsState>().expect("pcs state");
    let result =
        state.result.ok_or_else(|| Error::InvalidConfig("protocol produced no result".into()))?;
    Ok((result, outcome.transcript))
}
