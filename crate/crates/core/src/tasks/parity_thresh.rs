//! Non-interactive hybrid learner for parity-threshold concepts
//! Par_k(x) XOR Thr_t(y).
//!
//! In one simultaneous round, the curator sorts its records by a padded
//! threshold part, splits them into ceil(1/alpha) blocks, privately learns a
//! parity over {0,1}^(c+1) per block at privacy alpha*eps each (parallel
//! charges under one ledger tag), and ships the block parities; every agent
//! contributes one randomized-response bit of a CDF release of the padded
//! threshold marginal at accuracy alpha^2. The referee assembles the
//! hypothesis h(x, y) = <x o 1, k_I(y)> where I(y) routes y through the
//! released CDF to a block index.

use std::any::Any;

use rand::Rng;

use crate::curator::{learn_parity_private, parity_of, LabeledExample};
use crate::datagen::{pt_par, pt_thr, pt_x, pt_y, TaskInstance};
use crate::engine::{
    run_protocol, InteractionPattern, PartyId, PatternKind, PrivacyLedger, ProtocolSpec, RngStream,
    RoundIo, Transcript,
};
use crate::local::{cdf_level_of, fo_encode, CdfEstimate, FoAggregator, FoSchedule};
use crate::{params, Error, Result};

/// Ledger tag for the curator's per-block charges; the blocks partition the
/// curator's records, so the charges compose in parallel.
const BLOCK_TAG: &str = "blocks";

/// Shared-randomness purpose base for the per-level CDF schedules.
const CDF_PURPOSE: u32 = 100;

/// Width handed to the CDF release: the padded threshold part, truncated to
/// its top 24 bits. Padding below the released prefix tree still guarantees
/// the distinctness the curator's sort needs, while the release itself never
/// resolves past its depth cap.
pub fn parity_thresh_cdf_bits(b: u32, pad_bits: u32) -> u32 {
    (b + pad_bits).min(24)
}

/// Agents the non-interactive learner needs: one CDF release at accuracy
/// alpha^2 over the padded threshold domain.
pub fn parity_thresh_required_n(b: u32, m: u64, alpha: f64, beta: f64, eps: f64) -> u64 {
    let pad = params::padding_bits(m, beta);
    let depth = params::cdf_depth(parity_thresh_cdf_bits(b, pad));
    params::cdf_required_n(depth, alpha * alpha, beta, eps)
}

/// The learned hypothesis: a released CDF for routing plus one parity over
/// {0,1}^(c+1) per block.
#[derive(Clone, Debug)]
pub struct ParityThreshHypothesis {
    pub q: CdfEstimate,
    pub k_blocks: Vec<u64>,
    pub alpha: f64,
    pub b: u32,
    pub c: u32,
    pub pad_bits: u32,
}

impl ParityThreshHypothesis {
    /// Block index I for a CDF value, in [1, block count].
    pub fn block_index(&self, q_value: f64) -> usize {
        let blocks = self.k_blocks.len() as i64;
        ((q_value / self.alpha).ceil() as i64).clamp(1, blocks) as usize
    }

    /// Evaluates h(x, y), padding the query's threshold part with fresh
    /// uniform bits exactly as the protocol padded its data.
    pub fn eval(&self, x: u64, y: u64, rng: &mut RngStream) -> u8 {
        let pad = rng.random_range(0..(1u64 << self.pad_bits));
        let padded = (y << self.pad_bits) | pad;
        let v = padded >> (self.b + self.pad_bits - self.q.b);
        let block = self.block_index(self.q.query(v));
        parity_of(self.k_blocks[block - 1], x | (1u64 << self.c))
    }
}

/// Protocol parameters; construct with [`ParityThreshSpec::new`].
pub struct ParityThreshSpec {
    pub b: u32,
    pub c: u32,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub pad_bits: u32,
    pub b_cdf: u32,
    pub blocks: u32,
}

impl ParityThreshSpec {
    pub fn new(b: u32, c: u32, m: u64, eps: f64, alpha: f64, beta: f64) -> Result<ParityThreshSpec> {
        if !(alpha > 0.0 && alpha < 1.0) || !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {alpha} and beta = {beta} must be in (0,1)"
            )));
        }
        if b == 0 || b > 24 || c == 0 || c + 1 > 20 {
            return Err(Error::InvalidConfig(format!("unsupported sizes b = {b}, c = {c}")));
        }
        let blocks = (1.0 / alpha).ceil() as u32;
        if m / blocks as u64 == 0 {
            return Err(Error::InvalidConfig(format!(
                "alpha = {alpha} needs {blocks} blocks but only m = {m} records are available"
            )));
        }
        let pad_bits = params::padding_bits(m, beta);
        if b + pad_bits > 63 {
            return Err(Error::InvalidConfig(format!(
                "padded width b + {pad_bits} exceeds a word"
            )));
        }
        Ok(ParityThreshSpec {
            b,
            c,
            eps,
            alpha,
            beta,
            pad_bits,
            b_cdf: parity_thresh_cdf_bits(b, pad_bits),
            blocks,
        })
    }

    fn depth(&self) -> u32 {
        params::cdf_depth(self.b_cdf)
    }
}

#[derive(Default)]
struct PtState {
    schedules: Vec<FoSchedule>,
    group_sizes: Vec<u64>,
    hypothesis: Option<ParityThreshHypothesis>,
}

impl ProtocolSpec for ParityThreshSpec {
    fn name(&self) -> &'static str {
        "parity-thresh"
    }

    fn pattern(&self) -> InteractionPattern {
        InteractionPattern { kind: PatternKind::NonInteractive, max_rounds: 2 }
    }

    fn rounds(&self) -> u32 {
        2
    }

    fn init_state(&self) -> Box<dyn Any> {
        Box::new(PtState::default())
    }

    fn round(&self, round: u32, state: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()> {
        let state = state.downcast_mut::<PtState>().expect("parity-thresh state");
        let depth = self.depth();
        let n = io.n_agents() as usize;
        match round {
            1 => {
                let group = |j: u32| (n + depth as usize - j as usize) / depth as usize;
                for j in 1..=depth {
                    let mut shared = io.shared_rng(CDF_PURPOSE + j);
                    state.schedules.push(FoSchedule::generate(1u64 << j, group(j), &mut shared));
                    state.group_sizes.push(group(j) as u64);
                }
                io.reserve_sends(n + 1);
                for i in 0..n {
                    let rec = io.agent_record(i as u32);
                    let y = pt_y(rec, self.b, self.c);
                    let mut rng = io.rng(PartyId::Agent(i as u32));
                    let pad = rng.random_range(0..(1u64 << self.pad_bits));
                    let padded = (y << self.pad_bits) | pad;
                    let v = padded >> (self.b + self.pad_bits - self.b_cdf);
                    let j = cdf_level_of(i, depth);
                    let prefix = v >> (self.b_cdf - j);
                    let coord = state.schedules[(j - 1) as usize].coordinate(i / depth as usize);
                    let bit = fo_encode(prefix, coord, self.eps, &mut rng);
                    io.charge(PartyId::Agent(i as u32), self.eps, None)?;
                    io.send(PartyId::Agent(i as u32), PartyId::Referee, &[bit])?;
                }
                self.curator_round(io)?;
            }
            2 => {
                let mut aggs: Vec<FoAggregator> = (1..=depth)
                    .map(|j| FoAggregator::new(1u64 << j, self.eps))
                    .collect::<Result<_>>()?;
                let mut k_blocks = Vec::with_capacity(self.blocks as usize);
                for msg in io.referee_inbox().iter() {
                    match msg.sender {
                        PartyId::Agent(i) => {
                            let i = i as usize;
                            let j = cdf_level_of(i, depth);
                            let coord =
                                state.schedules[(j - 1) as usize].coordinate(i / depth as usize);
                            aggs[(j - 1) as usize].add(coord, msg.payload[0]);
                        }
                        PartyId::Curator => {
                            for chunk in msg.payload.chunks_exact(8) {
                                k_blocks.push(u64::from_le_bytes(chunk.try_into().unwrap()));
                            }
                        }
                        PartyId::Referee => {}
                    }
                }
                let levels = aggs.into_iter().map(FoAggregator::finish).collect();
                let q = CdfEstimate::from_parts(
                    self.b_cdf,
                    self.alpha * self.alpha,
                    self.eps,
                    levels,
                    std::mem::take(&mut state.group_sizes),
                );
                let mut output = Vec::with_capacity(k_blocks.len() * 8);
                for &k in &k_blocks {
                    output.extend_from_slice(&k.to_le_bytes());
                }
                io.set_output(output);
                state.hypothesis = Some(ParityThreshHypothesis {
                    q,
                    k_blocks,
                    alpha: self.alpha,
                    b: self.b,
                    c: self.c,
                    pad_bits: self.pad_bits,
                });
            }
            _ => {}
        }
        Ok(())
    }
}

impl ParityThreshSpec {
    fn curator_round(&self, io: &mut RoundIo<'_>) -> Result<()> {
        let mut rng = io.rng(PartyId::Curator);
        let mut sorted: Vec<(u64, u64, u8)> = io
            .curator_records()
            .iter()
            .map(|&rec| {
                let y = pt_y(rec, self.b, self.c);
                let pad = rng.random_range(0..(1u64 << self.pad_bits));
                let sigma = pt_par(rec, self.b, self.c) ^ pt_thr(rec, self.b, self.c);
                ((y << self.pad_bits) | pad, pt_x(rec, self.c), sigma)
            })
            .collect();
        sorted.sort_unstable_by_key(|&(padded, _, _)| padded);
        let block_len = sorted.len() / self.blocks as usize;
        let mut payload = Vec::with_capacity(self.blocks as usize * 8);
        for block in 0..self.blocks as usize {
            let db: Vec<LabeledExample> = sorted[block * block_len..(block + 1) * block_len]
                .iter()
                .map(|&(_, x, sigma)| LabeledExample { x: x | (1u64 << self.c), label: sigma })
                .collect();
            let k = learn_parity_private(
                &db,
                self.c + 1,
                self.alpha * self.eps,
                self.alpha,
                self.beta,
                &mut rng,
            )?;
            io.charge(PartyId::Curator, self.alpha * self.eps, Some(BLOCK_TAG))?;
            payload.extend_from_slice(&k.to_le_bytes());
        }
        io.send(PartyId::Curator, PartyId::Referee, &payload)
    }
}

/// Runs the non-interactive protocol on a generated instance and returns
/// the learned hypothesis with the run's transcript.
pub fn parity_thresh_hybrid(
    instance: &TaskInstance,
    eps: f64,
    alpha: f64,
    beta: f64,
    ledger: &mut PrivacyLedger,
    seed: u64,
) -> Result<(ParityThreshHypothesis, Transcript)> {
    let b = instance
        .param_u64("b")
        .ok_or_else(|| Error::InvalidConfig("instance lacks b".into()))? as u32;
    let c = instance
        .param_u64("c")
        .ok_or_else(|| Error::InvalidConfig("instance lacks c".into()))? as u32;
    let spec =
        ParityThreshSpec::new(b, c, instance.curator_records.len() as u64, eps, alpha, beta)?;
    let pattern = spec.pattern();
    let outcome = run_protocol(
        &spec,
        &instance.curator_records,
        &instance.agent_records,
        pattern,
        ledger,
        seed,
    )?;
    let state = outcome.state.downcast::<PtState>().expect("parity-thresh state");
    let hypothesis = state
        .hypothesis
        .ok_or_else(|| Error::InvalidConfig("protocol produced no hypothesis".into()))?;
    Ok((hypothesis, outcome.transcript))
}

/// Fraction of labeled points the hypothesis misclassifies. Points are in
/// the packed record layout; padding bits are drawn fresh from `rng`.
pub fn generalization_error(
    hyp: &ParityThreshHypothesis,
    points: &[u64],
    b: u32,
    c: u32,
    rng: &mut RngStream,
) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let wrong = points
        .iter()
        .filter(|&&rec| {
            let truth = pt_par(rec, b, c) ^ pt_thr(rec, b, c);
            hyp.eval(pt_x(rec, c), pt_y(rec, b, c), rng) != truth
        })
        .count();
    wrong as f64 / points.len() as f64
}
