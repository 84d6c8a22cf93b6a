//! Interactive local-then-curator protocol for the concatenation task: learn
//! the pair (Par_k(x), Thr_t(y)) jointly, scoring a hypothesis by the
//! probability that either component disagrees.
//!
//! The threshold half runs Q parallel binary searches for the quantiles
//! q * CONCAT_TAU * alpha of the threshold marginal on the first half of the
//! agents, one disjoint group per (quantile, step). The located boundaries
//! split the value range into bins of roughly CONCAT_TAU * alpha mass; the
//! second half of the agents then releases a frequency oracle over
//! (bin, label) pairs, and t_hat is the right edge of the last bin still
//! carrying a clear label-0 count. The parity half is one private learning
//! call on the curator sample, sent after every agent report so the whole
//! run stays local-then-curator.

use std::any::Any;

use crate::curator::{learn_parity_private, parity_of, LabeledExample};
use crate::datagen::{pt_par, pt_thr, pt_x, pt_y, TaskInstance};
use crate::engine::{
    run_protocol, InteractionPattern, PartyId, PatternKind, PrivacyLedger, ProtocolSpec, RoundIo,
    Transcript,
};
use crate::local::{
    estimate_bernoulli_mean, fo_encode, randomized_response, FoAggregator, FoSchedule,
    QuantileQuery, QuantileSearchState,
};
use crate::{params, Error, Result};

/// Quantile grid spacing as a fraction of alpha: boundary q targets CDF mass
/// q * CONCAT_TAU * alpha, so each bin holds about CONCAT_TAU * alpha mass.
pub const CONCAT_TAU: f64 = 0.25;

/// Binary-search resolution in value units. Below one value apart, a final
/// interval pins the boundary to within a single rounding.
const SEARCH_RESOLUTION: f64 = 0.25;

/// Shared-randomness purpose for the histogram coordinate schedule.
const HIST_PURPOSE: u32 = 300;

/// Per-search mass slack, as a fraction of alpha. Must stay below
/// CONCAT_TAU / 2 so consecutive bins cannot both collapse.
const LAMBDA_FRAC: f64 = 0.1;

/// Quantile steps of one search over values in {0,1}^b.
fn quantile_steps(b: u32) -> u32 {
    params::quantile_rounds((1u64 << b) as f64, SEARCH_RESOLUTION)
}

/// Total protocol rounds: 2 per search step, then boundary broadcast,
/// histogram reports, threshold selection alongside the curator's parity
/// message, and output assembly.
pub fn concat_rounds(b: u32) -> u32 {
    2 * quantile_steps(b) + 4
}

/// Agents the protocol needs: the larger of the quantile half (Q * T
/// disjoint per-step groups) and the histogram half (item estimates sharp
/// enough to clear theta = CONCAT_TAU * alpha * n_h / 2 with margin
/// alpha * n_h / 40), doubled since the halves are disjoint.
pub fn concat_required_n(b: u32, alpha: f64, beta: f64, eps: f64) -> u64 {
    let q = params::concat_quantile_count(alpha);
    let t = quantile_steps(b);
    let lambda = LAMBDA_FRAC * alpha;
    let beta_conf = beta * alpha / 16.0;
    let n_q = q as u64 * t as u64 * params::quantile_round_group(lambda, beta_conf, t, eps);
    let z = params::z_upper(beta / (16.0 * (q as f64 + 1.0)));
    let sqrt_nh = 40.0 * z * params::coth_half(eps) / alpha;
    let n_h = (sqrt_nh * sqrt_nh).ceil() as u64;
    2 * n_q.max(n_h)
}

/// The learned pair hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConcatHypothesis {
    pub k: u64,
    pub t_hat: u64,
}

/// Fraction of packed points whose (parity, threshold) label pair the
/// hypothesis gets wrong in either component.
pub fn joint_error(hyp: &ConcatHypothesis, points: &[u64], b: u32, c: u32) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let wrong = points
        .iter()
        .filter(|&&rec| {
            parity_of(hyp.k, pt_x(rec, c)) != pt_par(rec, b, c)
                || u8::from(pt_y(rec, b, c) >= hyp.t_hat) != pt_thr(rec, b, c)
        })
        .count();
    wrong as f64 / points.len() as f64
}

/// Protocol parameters for [`concat_learn`].
pub struct ConcatSpec {
    pub b: u32,
    pub c: u32,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ConcatSpec {
    pub fn new(b: u32, c: u32, eps: f64, alpha: f64, beta: f64) -> Result<ConcatSpec> {
        if !(alpha > 0.0 && alpha < 1.0) || !(beta > 0.0 && beta < 1.0) || eps <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eps = {eps}, alpha = {alpha}, beta = {beta} out of range"
            )));
        }
        if b == 0 || b > 24 || c == 0 || c > 20 {
            return Err(Error::InvalidConfig(format!("unsupported sizes b = {b}, c = {c}")));
        }
        Ok(ConcatSpec { b, c, eps, alpha, beta })
    }

    fn q_count(&self) -> u32 {
        params::concat_quantile_count(self.alpha)
    }

    fn steps(&self) -> u32 {
        quantile_steps(self.b)
    }

    fn query(&self, q_idx: u32) -> QuantileQuery {
        QuantileQuery {
            p_star: (q_idx as f64 + 1.0) * CONCAT_TAU * self.alpha,
            q_min: 0.0,
            q_max: (1u64 << self.b) as f64,
            tau_dist: SEARCH_RESOLUTION,
            lambda_quant: LAMBDA_FRAC * self.alpha,
            beta_conf: self.beta * self.alpha / 16.0,
        }
    }

    /// Quantile agents are the first half; each belongs to one
    /// (quantile, step) group by its index modulo Q * T.
    fn group_of(&self, i: usize) -> (u32, u32) {
        let slot = i % (self.q_count() as usize * self.steps() as usize);
        let q_idx = slot as u32 / self.steps();
        let step = slot as u32 % self.steps() + 1;
        (q_idx, step)
    }
}

#[derive(Default)]
struct ConcatState {
    searches: Vec<QuantileSearchState>,
    boundaries: Vec<u64>,
    schedule: Option<FoSchedule>,
    t_hat: u64,
    hypothesis: Option<ConcatHypothesis>,
}

impl ProtocolSpec for ConcatSpec {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn pattern(&self) -> InteractionPattern {
        InteractionPattern { kind: PatternKind::LocalThenCurator, max_rounds: concat_rounds(self.b) }
    }

    fn rounds(&self) -> u32 {
        concat_rounds(self.b)
    }

    fn init_state(&self) -> Box<dyn Any> {
        Box::new(ConcatState::default())
    }

    fn round(&self, round: u32, state: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()> {
        let state = state.downcast_mut::<ConcatState>().expect("concat state");
        let steps = self.steps();
        let n = io.n_agents() as usize;
        let n_half = n / 2;
        match round {
            r if r % 2 == 1 && r <= 2 * steps + 1 => {
                let t_done = (r - 1) / 2;
                if t_done == 0 {
                    state.searches = (0..self.q_count())
                        .map(|q| QuantileSearchState::new(&self.query(q)))
                        .collect();
                } else {
                    self.absorb_step(state, io, t_done)?;
                }
                if t_done < steps {
                    self.send_mids(state, io, t_done + 1)?;
                } else {
                    self.finalize_boundaries(state, io)?;
                }
            }
            r if r % 2 == 0 && r <= 2 * steps => {
                let t = r / 2;
                io.reserve_sends(n_half / steps as usize + 1);
                for i in 0..n_half {
                    if self.group_of(i).1 != t {
                        continue;
                    }
                    let msg = io.agent_inbox(i as u32).single().expect("mid from referee");
                    let mid = f64::from_le_bytes(msg.payload.as_bytes().try_into().unwrap());
                    let y = pt_y(io.agent_record(i as u32), self.b, self.c);
                    let bit = u8::from((y as f64) <= mid);
                    let mut rng = io.rng(PartyId::Agent(i as u32));
                    let report = randomized_response(bit, self.eps, &mut rng);
                    io.charge(PartyId::Agent(i as u32), self.eps, None)?;
                    io.send(PartyId::Agent(i as u32), PartyId::Referee, &[report])?;
                }
            }
            r if r == 2 * steps + 2 => {
                let n_hist = n - n_half;
                let k = params::pow2_at_least(2 * (self.q_count() as u64 + 1));
                let mut shared = io.shared_rng(HIST_PURPOSE);
                let schedule = FoSchedule::generate(k, n_hist, &mut shared);
                io.reserve_sends(n_hist);
                for h in 0..n_hist {
                    let i = (n_half + h) as u32;
                    let msg = io.agent_inbox(i).single().expect("boundaries from referee");
                    let rec = io.agent_record(i);
                    let y = pt_y(rec, self.b, self.c);
                    let bin = msg
                        .payload
                        .chunks_exact(8)
                        .map(|ch| u64::from_le_bytes(ch.try_into().unwrap()))
                        .take_while(|&bq| bq <= y)
                        .count() as u64;
                    let item = 2 * bin + pt_thr(rec, self.b, self.c) as u64;
                    let coord = schedule.coordinate(h);
                    let mut rng = io.rng(PartyId::Agent(i));
                    let bit = fo_encode(item, coord, self.eps, &mut rng);
                    io.charge(PartyId::Agent(i), self.eps, None)?;
                    io.send(PartyId::Agent(i), PartyId::Referee, &[bit])?;
                }
                state.schedule = Some(schedule);
            }
            r if r == 2 * steps + 3 => {
                self.select_threshold(state, io)?;
                let db: Vec<LabeledExample> = io
                    .curator_records()
                    .iter()
                    .map(|&rec| LabeledExample {
                        x: pt_x(rec, self.c),
                        label: pt_par(rec, self.b, self.c),
                    })
                    .collect();
                let mut rng = io.rng(PartyId::Curator);
                let k_hat = learn_parity_private(
                    &db,
                    self.c,
                    self.eps,
                    CONCAT_TAU * self.alpha,
                    self.beta / 8.0,
                    &mut rng,
                )?;
                io.charge(PartyId::Curator, self.eps, None)?;
                io.send(PartyId::Curator, PartyId::Referee, &k_hat.to_le_bytes())?;
            }
            r if r == 2 * steps + 4 => {
                let msg = io.referee_inbox().single().expect("parity from curator");
                let k = u64::from_le_bytes(msg.payload.as_bytes().try_into().unwrap());
                let hyp = ConcatHypothesis { k, t_hat: state.t_hat };
                let mut output = k.to_le_bytes().to_vec();
                output.extend_from_slice(&state.t_hat.to_le_bytes());
                io.set_output(output);
                state.hypothesis = Some(hyp);
            }
            _ => {}
        }
        Ok(())
    }
}

impl ConcatSpec {
    /// Folds the step-t responses into each quantile's search interval.
    fn absorb_step(&self, state: &mut ConcatState, io: &mut RoundIo<'_>, t: u32) -> Result<()> {
        let mut per_q: Vec<Vec<u8>> = vec![Vec::new(); self.q_count() as usize];
        for msg in io.referee_inbox().iter() {
            if let PartyId::Agent(i) = msg.sender {
                let (q_idx, step) = self.group_of(i as usize);
                debug_assert_eq!(step, t);
                per_q[q_idx as usize].push(msg.payload[0]);
            }
        }
        for (q_idx, bits) in per_q.iter().enumerate() {
            let p_hat = estimate_bernoulli_mean(bits, self.eps)?;
            state.searches[q_idx].step(p_hat, self.query(q_idx as u32).p_star);
        }
        Ok(())
    }

    /// Sends every step-t group member its quantile's current midpoint.
    fn send_mids(&self, state: &ConcatState, io: &mut RoundIo<'_>, t: u32) -> Result<()> {
        let n_half = io.n_agents() as usize / 2;
        io.reserve_sends(n_half / self.steps() as usize + 1);
        for i in 0..n_half {
            let (q_idx, step) = self.group_of(i);
            if step != t {
                continue;
            }
            let mid = state.searches[q_idx as usize].mid();
            io.send(PartyId::Referee, PartyId::Agent(i as u32), &mid.to_le_bytes())?;
        }
        Ok(())
    }

    /// Quantizes the finished searches into sorted integer boundaries and
    /// broadcasts them to the histogram half.
    fn finalize_boundaries(&self, state: &mut ConcatState, io: &mut RoundIo<'_>) -> Result<()> {
        let cap = 1u64 << self.b;
        let mut boundaries: Vec<u64> = state
            .searches
            .iter()
            .map(|s| (s.answer().round().max(0.0) as u64).min(cap))
            .collect();
        boundaries.sort_unstable();
        let mut payload = Vec::with_capacity(boundaries.len() * 8);
        for &bq in &boundaries {
            payload.extend_from_slice(&bq.to_le_bytes());
        }
        let n = io.n_agents() as usize;
        let n_half = n / 2;
        io.reserve_sends(n - n_half);
        for i in n_half..n {
            io.send(PartyId::Referee, PartyId::Agent(i as u32), &payload)?;
        }
        state.boundaries = boundaries;
        Ok(())
    }

    /// Aggregates the histogram reports and picks t_hat as the right edge of
    /// the last bin whose label-0 count clears theta.
    fn select_threshold(&self, state: &mut ConcatState, io: &mut RoundIo<'_>) -> Result<()> {
        let schedule = state.schedule.as_ref().expect("schedule from histogram round");
        let k = 2 * (self.q_count() as u64 + 1);
        let mut agg = FoAggregator::new(k, self.eps)?;
        let n_half = io.n_agents() as usize / 2;
        for msg in io.referee_inbox().iter() {
            if let PartyId::Agent(i) = msg.sender {
                agg.add(schedule.coordinate(i as usize - n_half), msg.payload[0]);
            }
        }
        let est = agg.finish();
        let n_hist = (io.n_agents() as usize - n_half) as f64;
        let theta = 0.5 * CONCAT_TAU * self.alpha * n_hist;
        state.t_hat = 0;
        for bin in 0..=self.q_count() as u64 {
            if est.estimate(2 * bin) >= theta {
                state.t_hat = if bin < self.q_count() as u64 {
                    state.boundaries[bin as usize]
                } else {
                    1u64 << self.b
                };
            }
        }
        Ok(())
    }
}

/// Runs the interactive protocol on a generated instance. Rejects agent
/// populations below [`concat_required_n`].
pub fn concat_learn(
    instance: &TaskInstance,
    eps: f64,
    alpha: f64,
    beta: f64,
    ledger: &mut PrivacyLedger,
    seed: u64,
) -> Result<(ConcatHypothesis, Transcript)> {
    let b = instance
        .param_u64("b")
        .ok_or_else(|| Error::InvalidConfig("instance lacks b".into()))? as u32;
    let c = instance
        .param_u64("c")
        .ok_or_else(|| Error::InvalidConfig("instance lacks c".into()))? as u32;
    let spec = ConcatSpec::new(b, c, eps, alpha, beta)?;
    let need = concat_required_n(b, alpha, beta, eps);
    if (instance.agent_records.len() as u64) < need {
        return Err(Error::InvalidConfig(format!(
            "concatenation needs at least {need} agents, got {}",
            instance.agent_records.len()
        )));
    }
    let pattern = spec.pattern();
    let outcome = run_protocol(
        &spec,
        &instance.curator_records,
        &instance.agent_records,
        pattern,
        ledger,
        seed,
    )?;
    let state = outcome.state.downcast::<ConcatState>().expect("concat state");
    let hypothesis = state
        .hypothesis
        .ok_or_else(|| Error::InvalidConfig("protocol produced no hypothesis".into()))?;
    Ok((hypothesis, outcome.transcript))
}
