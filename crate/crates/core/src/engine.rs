//! Deterministic, seedable message-passing engine for the (m,n)-hybrid model.
//!
//! A run involves three kinds of parties: a single trusted curator holding m
//! records, n local agents holding one record each, and a referee that relays
//! every message and writes the output register. Parties never talk to each
//! other directly; every message has the referee as exactly one endpoint.
//!
//! Rounds are bulk-synchronous: messages sent in round r are delivered at the
//! start of round r+1. Round 0 is reserved for setup and carries no messages;
//! the shared random string every party may consult is derived from the run
//! seed (it is input-independent, so it costs no privacy budget).
//!
//! A run is a pure function of (inputs, seed): party randomness comes from
//! [`RngStream`]s keyed by (seed, party, round), and the engine iterates
//! parties in a fixed order.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;

use rand::rngs::SmallRng;
use rand::{RngCore, SeedableRng};

use crate::{Error, Result};

/// Identity of a protocol participant.
///
/// The curator and referee are singletons; agents are indexed in `[0, n)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum PartyId {
    Curator,
    Referee,
    Agent(u32),
}

impl PartyId {
    /// Canonical ordering key: agents first by index, then curator, referee.
    fn order_key(self) -> u64 {
        match self {
            PartyId::Agent(i) => i as u64,
            PartyId::Curator => u64::MAX - 1,
            PartyId::Referee => u64::MAX,
        }
    }

    pub fn is_referee(self) -> bool {
        matches!(self, PartyId::Referee)
    }

    pub fn is_agent(self) -> bool {
        matches!(self, PartyId::Agent(_))
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Curator => f.write_str("curator"),
            PartyId::Referee => f.write_str("referee"),
            PartyId::Agent(i) => write!(f, "agent{i}"),
        }
    }
}

/// Parses the `Display` form back into a `PartyId`.
pub fn parse_party(s: &str) -> Option<PartyId> {
    match s {
        "curator" => Some(PartyId::Curator),
        "referee" => Some(PartyId::Referee),
        _ => s
            .strip_prefix("agent")
            .and_then(|rest| rest.parse::<u32>().ok())
            .map(PartyId::Agent),
    }
}

const PAYLOAD_INLINE_CAP: usize = 15;

/// Message payload bytes. Payloads up to 15 bytes are stored inline so that
/// bulk agent traffic allocates nothing per message.
///
/// Schema convention: the first byte is a message-kind tag; variable-length
/// fields inside the body are length-prefixed (little-endian u16).
#[derive(Clone, PartialEq, Eq)]
pub struct Payload(PayloadRepr);

#[derive(Clone, PartialEq, Eq)]
enum PayloadRepr {
    Inline { len: u8, buf: [u8; PAYLOAD_INLINE_CAP] },
    Heap(Box<[u8]>),
}

impl Payload {
    pub fn new(bytes: &[u8]) -> Self {
        if bytes.len() <= PAYLOAD_INLINE_CAP {
            let mut buf = [0u8; PAYLOAD_INLINE_CAP];
            buf[..bytes.len()].copy_from_slice(bytes);
            Payload(PayloadRepr::Inline { len: bytes.len() as u8, buf })
        } else {
            Payload(PayloadRepr::Heap(bytes.into()))
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        match &self.0 {
            PayloadRepr::Inline { len, buf } => &buf[..*len as usize],
            PayloadRepr::Heap(b) => b,
        }
    }
}

impl Deref for Payload {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        self.as_bytes()
    }
}

impl From<&[u8]> for Payload {
    fn from(bytes: &[u8]) -> Self {
        Payload::new(bytes)
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Payload({})", hex::encode(self.as_bytes()))
    }
}

/// One message of a transcript.
#[derive(Clone, PartialEq, Debug)]
pub struct Message {
    pub round: u32,
    pub sender: PartyId,
    pub receiver: PartyId,
    pub payload: Payload,
}

/// Message-count tallies. The model leaves open whether referee-originated
/// messages count toward "number of messages", so both tallies are exposed
/// and nothing in the crate asserts either one.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MessageTally {
    pub rounds: u32,
    pub total: usize,
    pub to_referee: usize,
    pub from_referee: usize,
}

/// Ordered record of every message in a protocol run plus the referee's
/// output register. This is the object over which privacy and pattern
/// conformance are judged.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct Transcript {
    pub messages: Vec<Message>,
    pub output: Option<Vec<u8>>,
}

impl Transcript {
    pub fn tally(&self) -> MessageTally {
        let mut to_referee = 0;
        let mut from_referee = 0;
        let mut rounds = 0;
        for m in &self.messages {
            rounds = rounds.max(m.round);
            if m.receiver.is_referee() {
                to_referee += 1;
            }
            if m.sender.is_referee() {
                from_referee += 1;
            }
        }
        MessageTally { rounds, total: self.messages.len(), to_referee, from_referee }
    }

    /// Dump format: one `round,sender,receiver,hex(payload)` line per message,
    /// then a trailing `output,<hex>` line when the output register was set.
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity(self.messages.len() * 24 + 16);
        for m in &self.messages {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.round,
                m.sender,
                m.receiver,
                hex::encode(m.payload.as_bytes())
            ));
        }
        if let Some(o) = &self.output {
            out.push_str(&format!("output,{}\n", hex::encode(o)));
        }
        out
    }

    /// Parses the [`Transcript::dump`] format.
    pub fn parse(text: &str) -> Result<Transcript> {
        let mut t = Transcript::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::TranscriptParse {
                line: lineno + 1,
                detail: what.to_string(),
            };
            if let Some(rest) = line.strip_prefix("output,") {
                t.output =
                    Some(hex::decode(rest).map_err(|_| bad("invalid hex in output line"))?);
                continue;
            }
            let mut fields = line.splitn(4, ',');
            let round = fields
                .next()
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| bad("missing or invalid round"))?;
            let sender = fields
                .next()
                .and_then(parse_party)
                .ok_or_else(|| bad("missing or invalid sender"))?;
            let receiver = fields
                .next()
                .and_then(parse_party)
                .ok_or_else(|| bad("missing or invalid receiver"))?;
            let payload = fields
                .next()
                .map(|s| hex::decode(s).map_err(|_| bad("invalid hex in payload")))
                .transpose()?
                .unwrap_or_default();
            t.messages.push(Message { round, sender, receiver, payload: Payload::new(&payload) });
        }
        Ok(t)
    }
}

/// Interaction-order constraint on a transcript.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PatternKind {
    /// One round in which every non-referee party sends at most once and the
    /// referee sends nothing.
    NonInteractive,
    /// Every agent-to-referee message strictly precedes (round-wise) every
    /// referee/curator exchange, in either direction.
    LocalThenCurator,
    /// Every referee/curator exchange strictly precedes every
    /// agent-to-referee message.
    CuratorThenLocal,
    /// No ordering constraint beyond the round cap.
    GeneralRounds,
}

impl PatternKind {
    pub fn name(self) -> &'static str {
        match self {
            PatternKind::NonInteractive => "non-interactive",
            PatternKind::LocalThenCurator => "local-then-curator",
            PatternKind::CuratorThenLocal => "curator-then-local",
            PatternKind::GeneralRounds => "general",
        }
    }

    pub fn from_name(s: &str) -> Option<PatternKind> {
        match s {
            "non-interactive" => Some(PatternKind::NonInteractive),
            "local-then-curator" => Some(PatternKind::LocalThenCurator),
            "curator-then-local" => Some(PatternKind::CuratorThenLocal),
            "general" => Some(PatternKind::GeneralRounds),
            _ => None,
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct InteractionPattern {
    pub kind: PatternKind,
    pub max_rounds: u32,
}

impl InteractionPattern {
    pub fn new(kind: PatternKind, max_rounds: u32) -> Self {
        InteractionPattern { kind, max_rounds }
    }
}

/// Incremental pattern/topology checker. `validate_pattern` and the engine
/// share this type so that on-the-fly enforcement and after-the-fact
/// validation can never disagree.
struct PatternChecker {
    pattern: InteractionPattern,
    last_round: u32,
    /// NonInteractive: the single round messages may occupy.
    ni_round: Option<u32>,
    /// NonInteractive duplicate-sender detection: ascending fast path with a
    /// sorted-overflow fallback for arbitrary (parsed) transcripts.
    ni_last_sender: Option<u64>,
    ni_seen: Vec<u64>,
    /// Round extrema per message class (agent->referee, curator exchanges).
    agent_send_max: Option<u32>,
    curator_exch_min: Option<u32>,
    curator_exch_max: Option<u32>,
    agent_send_min: Option<u32>,
}

impl PatternChecker {
    fn new(pattern: InteractionPattern) -> Self {
        PatternChecker {
            pattern,
            last_round: 0,
            ni_round: None,
            ni_last_sender: None,
            ni_seen: Vec::new(),
            agent_send_max: None,
            curator_exch_min: None,
            curator_exch_max: None,
            agent_send_min: None,
        }
    }

    fn violation(&self, round: u32, detail: impl Into<String>) -> Error {
        Error::PatternViolation { round, detail: detail.into() }
    }

    fn check(&mut self, m: &Message) -> Result<()> {
        let r = m.round;
        if m.sender == m.receiver {
            return Err(self.violation(r, "sender equals receiver"));
        }
        if m.sender.is_referee() == m.receiver.is_referee() {
            return Err(self.violation(r, "referee must be exactly one endpoint"));
        }
        if r == 0 {
            return Err(self.violation(r, "round 0 is reserved for setup"));
        }
        if r > self.pattern.max_rounds {
            return Err(self.violation(r, format!("exceeds max_rounds {}", self.pattern.max_rounds)));
        }
        if r < self.last_round {
            return Err(self.violation(r, "round numbers must be nondecreasing"));
        }
        self.last_round = r;

        match self.pattern.kind {
            PatternKind::GeneralRounds => {}
            PatternKind::NonInteractive => {
                if m.sender.is_referee() {
                    return Err(self.violation(r, "referee may not send in a non-interactive protocol"));
                }
                match self.ni_round {
                    None => self.ni_round = Some(r),
                    Some(r0) if r0 != r => {
                        return Err(self.violation(r, "non-interactive protocols use a single round"))
                    }
                    _ => {}
                }
                let key = m.sender.order_key();
                let dup = if self.ni_seen.is_empty() {
                    match self.ni_last_sender {
                        Some(last) if key <= last => {
                            // Out-of-order senders: fall back to an explicit
                            // sorted set from here on.
                            self.ni_seen.push(last);
                            key == last
                        }
                        _ => false,
                    }
                } else {
                    false
                };
                if !self.ni_seen.is_empty() {
                    match self.ni_seen.binary_search(&key) {
                        Ok(_) => return Err(self.violation(r, "party sent twice in a non-interactive round")),
                        Err(pos) => self.ni_seen.insert(pos, key),
                    }
                }
                if dup {
                    return Err(self.violation(r, "party sent twice in a non-interactive round"));
                }
                self.ni_last_sender = Some(key);
            }
            PatternKind::LocalThenCurator | PatternKind::CuratorThenLocal => {
                let agent_send = m.sender.is_agent() && m.receiver.is_referee();
                let curator_exch =
                    matches!(m.sender, PartyId::Curator) || matches!(m.receiver, PartyId::Curator);
                if agent_send {
                    self.agent_send_max = Some(self.agent_send_max.map_or(r, |x| x.max(r)));
                    self.agent_send_min = Some(self.agent_send_min.map_or(r, |x| x.min(r)));
                }
                if curator_exch {
                    self.curator_exch_min = Some(self.curator_exch_min.map_or(r, |x| x.min(r)));
                    self.curator_exch_max = Some(self.curator_exch_max.map_or(r, |x| x.max(r)));
                }
                if self.pattern.kind == PatternKind::LocalThenCurator {
                    if let (Some(a), Some(c)) = (self.agent_send_max, self.curator_exch_min) {
                        if a >= c {
                            return Err(self.violation(
                                r,
                                "agent messages must strictly precede curator exchanges",
                            ));
                        }
                    }
                } else if let (Some(c), Some(a)) = (self.curator_exch_max, self.agent_send_min) {
                    if c >= a {
                        return Err(self.violation(
                            r,
                            "curator exchanges must strictly precede agent messages",
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Checks whether every message-ordering constraint of `pattern` holds for
/// `transcript`. The empty transcript validates any pattern.
pub fn validate_pattern(transcript: &Transcript, pattern: InteractionPattern) -> bool {
    let mut checker = PatternChecker::new(pattern);
    transcript.messages.iter().all(|m| checker.check(m).is_ok())
}

/// A single privacy charge, retained for [`crate::audit::ledger_report`].
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct ChargeEvent {
    pub round: u32,
    pub party: PartyId,
    pub eps: f64,
    pub tag: Option<u16>,
}

/// Per-party accumulated privacy cost against a fixed pure-DP budget
/// (delta is identically 0 throughout this crate).
///
/// Untagged charges compose sequentially (they add). Charges sharing a
/// partition tag are declared to act on disjoint sub-databases of the same
/// party and compose in parallel: the ledger keeps their maximum.
#[derive(Clone, Debug)]
pub struct PrivacyLedger {
    budget: f64,
    curator_sum: f64,
    referee_sum: f64,
    agent_sums: Vec<f64>,
    tag_names: Vec<String>,
    tag_max: BTreeMap<(u64, u16), f64>,
    events: Vec<ChargeEvent>,
}

/// Slack for budget comparisons so that charges summing exactly to the
/// budget in real arithmetic never trip on the last rounding error.
const BUDGET_SLACK: f64 = 1e-9;

impl PrivacyLedger {
    pub fn new(budget_eps: f64) -> Self {
        assert!(budget_eps >= 0.0, "budget must be nonnegative");
        PrivacyLedger {
            budget: budget_eps,
            curator_sum: 0.0,
            referee_sum: 0.0,
            agent_sums: Vec::new(),
            tag_names: Vec::new(),
            tag_max: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    fn tag_id(&mut self, tag: &str) -> u16 {
        if let Some(i) = self.tag_names.iter().position(|t| t == tag) {
            return i as u16;
        }
        self.tag_names.push(tag.to_string());
        (self.tag_names.len() - 1) as u16
    }

    pub fn tag_name(&self, id: u16) -> &str {
        &self.tag_names[id as usize]
    }

    fn untagged_sum(&self, party: PartyId) -> f64 {
        match party {
            PartyId::Curator => self.curator_sum,
            PartyId::Referee => self.referee_sum,
            PartyId::Agent(i) => self.agent_sums.get(i as usize).copied().unwrap_or(0.0),
        }
    }

    /// Accumulated epsilon of `party`: untagged total plus, per tag, the
    /// maximum charge under that tag.
    pub fn total(&self, party: PartyId) -> f64 {
        let key = party.order_key();
        let tagged: f64 = self
            .tag_max
            .range((key, 0)..=(key, u16::MAX))
            .map(|(_, eps)| *eps)
            .sum();
        self.untagged_sum(party) + tagged
    }

    /// Largest per-party total currently on the ledger.
    pub fn max_total(&self) -> f64 {
        let mut best: f64 = self.curator_sum.max(self.referee_sum);
        for (i, _) in self.agent_sums.iter().enumerate() {
            best = best.max(self.total(PartyId::Agent(i as u32)));
        }
        best = best.max(self.total(PartyId::Curator));
        best = best.max(self.total(PartyId::Referee));
        best
    }

    /// Records a charge of `eps` against `party`. `round` is only retained in
    /// the event log; pass 0 for charges outside an engine run.
    pub fn charge_at(
        &mut self,
        round: u32,
        party: PartyId,
        eps: f64,
        tag: Option<&str>,
    ) -> Result<()> {
        if eps.is_nan() || eps < 0.0 {
            return Err(Error::InvalidConfig(format!("negative privacy charge {eps}")));
        }
        let tag_id = tag.map(|t| self.tag_id(t));
        match tag_id {
            None => match party {
                PartyId::Curator => self.curator_sum += eps,
                PartyId::Referee => self.referee_sum += eps,
                PartyId::Agent(i) => {
                    let i = i as usize;
                    if self.agent_sums.len() <= i {
                        self.agent_sums.resize(i + 1, 0.0);
                    }
                    self.agent_sums[i] += eps;
                }
            },
            Some(id) => {
                let slot = self.tag_max.entry((party.order_key(), id)).or_insert(0.0);
                *slot = slot.max(eps);
            }
        }
        self.events.push(ChargeEvent { round, party, eps, tag: tag_id });
        let total = self.total(party);
        if total > self.budget + BUDGET_SLACK {
            return Err(Error::BudgetExceeded { party, total, budget: self.budget });
        }
        Ok(())
    }

    /// Sequential charge with no partition tag and no round attribution.
    pub fn charge(&mut self, party: PartyId, eps: f64, tag: Option<&str>) -> Result<()> {
        self.charge_at(0, party, eps, tag)
    }

    pub fn events(&self) -> &[ChargeEvent] {
        &self.events
    }

    /// Parties that have at least one charge on the ledger.
    pub fn charged_parties(&self) -> Vec<PartyId> {
        let mut parties: Vec<PartyId> = Vec::new();
        for (i, s) in self.agent_sums.iter().enumerate() {
            if *s != 0.0 {
                parties.push(PartyId::Agent(i as u32));
            }
        }
        for (key, _) in self.tag_max.keys() {
            let p = if *key == PartyId::Curator.order_key() {
                PartyId::Curator
            } else if *key == PartyId::Referee.order_key() {
                PartyId::Referee
            } else {
                PartyId::Agent(*key as u32)
            };
            if !parties.contains(&p) {
                parties.push(p);
            }
        }
        if self.curator_sum != 0.0 && !parties.contains(&PartyId::Curator) {
            parties.push(PartyId::Curator);
        }
        if self.referee_sum != 0.0 && !parties.contains(&PartyId::Referee) {
            parties.push(PartyId::Referee);
        }
        parties.sort_by_key(|p| p.order_key());
        parties
    }
}

/// Splitmix64 step; used to key per-(seed, party, round) generator streams.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Seedable generator stream keyed by (seed, party, round).
///
/// Same key reproduces identical draws; distinct keys are mixed through
/// splitmix64 before seeding, so streams are statistically independent at
/// simulation scale.
pub struct RngStream {
    rng: SmallRng,
}

impl RngStream {
    fn from_key(key: u64) -> Self {
        RngStream { rng: SmallRng::seed_from_u64(key) }
    }

    /// Private randomness of `party` in `round`.
    pub fn for_party(seed: u64, party: PartyId, round: u32) -> Self {
        let k = splitmix64(splitmix64(seed ^ 0x7061727479) ^ party.order_key());
        Self::from_key(splitmix64(k ^ round as u64))
    }

    /// Shared random string, visible to every party and the referee.
    /// `purpose` separates independent shared substreams within one run.
    pub fn shared(seed: u64, purpose: u32) -> Self {
        let k = splitmix64(seed ^ 0x736861726564);
        Self::from_key(splitmix64(k ^ purpose as u64))
    }

    /// Instance-generation randomness, outside any protocol run.
    pub fn for_datagen(seed: u64, counter: u64) -> Self {
        let k = splitmix64(seed ^ 0x67656e);
        Self::from_key(splitmix64(k ^ counter))
    }

    /// Derives a fresh independent substream from this one.
    pub fn substream(&mut self) -> RngStream {
        Self::from_key(self.rng.next_u64())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Which parties the referee simulates from public samples instead of running
/// on real inputs. Simulated parties' messages are computed by the same code
/// but never enter the transcript, the pattern check, or the ledger: they are
/// post-processing of public randomness.
#[derive(Default)]
pub struct SimOverride<'a> {
    pub curator_records: Option<&'a [u64]>,
    pub agent_records: Option<&'a [u64]>,
}

/// Outcome of a protocol run. `state` is the final working state built by
/// the protocol's `round` calls; callers downcast it to read rich results
/// that do not fit the byte-level output channel.
pub struct RunOutcome {
    pub output: Option<Vec<u8>>,
    pub transcript: Transcript,
    pub state: Box<dyn Any>,
}

impl fmt::Debug for RunOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RunOutcome")
            .field("output", &self.output)
            .field("transcript", &self.transcript)
            .finish_non_exhaustive()
    }
}

/// Packed reference to a delivered message: high bit selects the shadow
/// (simulated) store.
const SHADOW_BIT: u32 = 1 << 31;

/// Per-round IO handed to a [`ProtocolSpec`]. All sends, charges, inboxes,
/// and generator streams flow through here.
pub struct RoundIo<'a> {
    private_seed: u64,
    shared_seed: u64,
    round: u32,
    n_agents: u32,
    curator_records: &'a [u64],
    agent_records: &'a [u64],
    sim_curator: Option<&'a [u64]>,
    sim_agents: Option<&'a [u64]>,
    transcript: &'a mut Transcript,
    shadow: &'a mut Vec<Message>,
    inbox_referee: Vec<u32>,
    inbox_curator: Vec<u32>,
    /// (agent index, packed slot), sorted by agent index.
    inbox_agents: Vec<(u32, u32)>,
    checker: &'a mut PatternChecker,
    ledger: &'a mut PrivacyLedger,
    output: &'a mut Option<Vec<u8>>,
}

/// Read access to the messages delivered to one party this round.
pub struct Inbox<'a> {
    slots: InboxSlots<'a>,
    real: &'a [Message],
    shadow: &'a [Message],
}

enum InboxSlots<'a> {
    Packed(&'a [u32]),
    Agents(&'a [(u32, u32)]),
}

impl<'a> Inbox<'a> {
    pub fn len(&self) -> usize {
        match &self.slots {
            InboxSlots::Packed(s) => s.len(),
            InboxSlots::Agents(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &'a Message {
        let slot = match &self.slots {
            InboxSlots::Packed(s) => s[i],
            InboxSlots::Agents(s) => s[i].1,
        };
        if slot & SHADOW_BIT != 0 {
            &self.shadow[(slot & !SHADOW_BIT) as usize]
        } else {
            &self.real[slot as usize]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Message> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    /// The single delivered message, if exactly one arrived.
    pub fn single(&self) -> Option<&'a Message> {
        if self.len() == 1 {
            Some(self.get(0))
        } else {
            None
        }
    }
}

impl<'a> RoundIo<'a> {
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn n_agents(&self) -> u32 {
        self.n_agents
    }

    /// The curator's records (the simulated samples when the curator is
    /// being simulated by the referee).
    pub fn curator_records(&self) -> &'a [u64] {
        self.sim_curator.unwrap_or(self.curator_records)
    }

    pub fn agent_record(&self, i: u32) -> u64 {
        self.sim_agents.unwrap_or(self.agent_records)[i as usize]
    }

    pub fn curator_is_simulated(&self) -> bool {
        self.sim_curator.is_some()
    }

    pub fn agents_are_simulated(&self) -> bool {
        self.sim_agents.is_some()
    }

    /// Private randomness of `party` for the current round.
    pub fn rng(&self, party: PartyId) -> RngStream {
        RngStream::for_party(self.private_seed, party, self.round)
    }

    /// Shared random string substream (input-independent, budget-free).
    pub fn shared_rng(&self, purpose: u32) -> RngStream {
        RngStream::shared(self.shared_seed, purpose)
    }

    pub fn referee_inbox(&self) -> Inbox<'_> {
        Inbox {
            slots: InboxSlots::Packed(&self.inbox_referee),
            real: &self.transcript.messages,
            shadow: self.shadow,
        }
    }

    pub fn curator_inbox(&self) -> Inbox<'_> {
        Inbox {
            slots: InboxSlots::Packed(&self.inbox_curator),
            real: &self.transcript.messages,
            shadow: self.shadow,
        }
    }

    pub fn agent_inbox(&self, i: u32) -> Inbox<'_> {
        let lo = self.inbox_agents.partition_point(|(a, _)| *a < i);
        let hi = self.inbox_agents.partition_point(|(a, _)| *a <= i);
        Inbox {
            slots: InboxSlots::Agents(&self.inbox_agents[lo..hi]),
            real: &self.transcript.messages,
            shadow: self.shadow,
        }
    }

    /// Records a send in the current round. Messages from or to a simulated
    /// party are diverted to the shadow store: they are delivered normally
    /// next round but never appear in the transcript.
    pub fn send(&mut self, sender: PartyId, receiver: PartyId, payload: &[u8]) -> Result<()> {
        if let PartyId::Agent(i) = sender {
            if i >= self.n_agents {
                return Err(Error::AgentIndexOutOfRange { index: i, n: self.n_agents });
            }
        }
        if let PartyId::Agent(i) = receiver {
            if i >= self.n_agents {
                return Err(Error::AgentIndexOutOfRange { index: i, n: self.n_agents });
            }
        }
        let simulated = (self.sim_curator.is_some()
            && (sender == PartyId::Curator || receiver == PartyId::Curator))
            || (self.sim_agents.is_some() && (sender.is_agent() || receiver.is_agent()));
        let msg = Message { round: self.round, sender, receiver, payload: Payload::new(payload) };
        if simulated {
            self.shadow.push(msg);
        } else {
            self.checker.check(&msg)?;
            self.transcript.messages.push(msg);
        }
        Ok(())
    }

    /// Charges `eps` against `party` for a randomized release this round.
    /// Charges by simulated parties are dropped: their inputs are public
    /// samples, so the release consumes no privacy.
    pub fn charge(&mut self, party: PartyId, eps: f64, tag: Option<&str>) -> Result<()> {
        let simulated = (self.sim_curator.is_some() && party == PartyId::Curator)
            || (self.sim_agents.is_some() && party.is_agent());
        if simulated {
            return Ok(());
        }
        self.ledger.charge_at(self.round, party, eps, tag)
    }

    /// Writes the referee's output register.
    pub fn set_output(&mut self, bytes: Vec<u8>) {
        *self.output = Some(bytes);
    }

    /// Pre-reserves transcript capacity for a bulk round of `extra` sends.
    pub fn reserve_sends(&mut self, extra: usize) {
        self.transcript.messages.reserve(extra);
    }
}

/// A protocol executable by [`run_protocol`].
///
/// `round` is invoked once per round with the full IO surface; the
/// implementation drives its parties in the canonical order (agents by
/// ascending index, then curator, then referee) and must route every
/// inter-party byte through [`RoundIo::send`]. Party code must consult only
/// its own records, its own inbox, its per-round [`RngStream`], and the
/// shared string; the engine executes honest parties and does not police
/// this, but the audit module checks the released randomizers.
pub trait ProtocolSpec {
    fn name(&self) -> &'static str;
    /// The canonical pattern this protocol conforms to.
    fn pattern(&self) -> InteractionPattern;
    /// Total number of rounds, including trailing rounds that only read.
    fn rounds(&self) -> u32;
    /// Fresh per-run working state (downcast inside `round`).
    fn init_state(&self) -> Box<dyn Any>;
    fn round(&self, round: u32, state: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()>;
}

/// Executes `spec` under `pattern`, appending charges to `ledger`.
///
/// The run is a pure function of (inputs, seed). Errors if `spec` breaks
/// the declared pattern or topology, or overdraws a party's budget.
pub fn run_protocol(
    spec: &dyn ProtocolSpec,
    curator_input: &[u64],
    agent_inputs: &[u64],
    pattern: InteractionPattern,
    ledger: &mut PrivacyLedger,
    seed: u64,
) -> Result<RunOutcome> {
    run_inner(spec, curator_input, agent_inputs, pattern, ledger, seed, seed, SimOverride::default())
}

/// [`run_protocol`] with referee-side party simulation (constructive
/// reductions replace the curator or the agents with public samples).
pub fn run_protocol_simulated(
    spec: &dyn ProtocolSpec,
    curator_input: &[u64],
    agent_inputs: &[u64],
    pattern: InteractionPattern,
    ledger: &mut PrivacyLedger,
    seed: u64,
    sim: SimOverride<'_>,
) -> Result<RunOutcome> {
    run_inner(spec, curator_input, agent_inputs, pattern, ledger, seed, seed, sim)
}

/// [`run_protocol`] with the shared string pinned to its own seed. Audits
/// use this to hold the public string fixed while the private coins vary,
/// which is the conditioning under which the privacy claims are stated.
pub fn run_protocol_split_seed(
    spec: &dyn ProtocolSpec,
    curator_input: &[u64],
    agent_inputs: &[u64],
    pattern: InteractionPattern,
    ledger: &mut PrivacyLedger,
    private_seed: u64,
    shared_seed: u64,
) -> Result<RunOutcome> {
    run_inner(
        spec,
        curator_input,
        agent_inputs,
        pattern,
        ledger,
        private_seed,
        shared_seed,
        SimOverride::default(),
    )
}

#[allow(clippy::too_many_arguments)]
fn run_inner(
    spec: &dyn ProtocolSpec,
    curator_input: &[u64],
    agent_inputs: &[u64],
    pattern: InteractionPattern,
    ledger: &mut PrivacyLedger,
    private_seed: u64,
    shared_seed: u64,
    sim: SimOverride<'_>,
) -> Result<RunOutcome> {
    let n_agents = sim.agent_records.map_or(agent_inputs.len(), |s| s.len());
    let n_agents = u32::try_from(n_agents)
        .map_err(|_| Error::InvalidConfig("agent count exceeds u32".into()))?;
    let mut transcript = Transcript::default();
    let mut shadow: Vec<Message> = Vec::new();
    let mut checker = PatternChecker::new(pattern);
    let mut output: Option<Vec<u8>> = None;

    // Delivery cursors: messages with index below these were sent in earlier
    // rounds and already delivered.
    let mut seen_real = 0usize;
    let mut seen_shadow = 0usize;
    let mut state = spec.init_state();

    for round in 1..=spec.rounds() {
        // Partition last round's sends into per-receiver inboxes.
        let mut inbox_referee = Vec::new();
        let mut inbox_curator = Vec::new();
        let mut inbox_agents = Vec::new();
        {
            let real = &transcript.messages[seen_real..];
            for (off, m) in real.iter().enumerate() {
                let slot = (seen_real + off) as u32;
                match m.receiver {
                    PartyId::Referee => inbox_referee.push(slot),
                    PartyId::Curator => inbox_curator.push(slot),
                    PartyId::Agent(i) => inbox_agents.push((i, slot)),
                }
            }
            for (off, m) in shadow[seen_shadow..].iter().enumerate() {
                let slot = (seen_shadow + off) as u32 | SHADOW_BIT;
                match m.receiver {
                    PartyId::Referee => inbox_referee.push(slot),
                    PartyId::Curator => inbox_curator.push(slot),
                    PartyId::Agent(i) => inbox_agents.push((i, slot)),
                }
            }
        }
        inbox_agents.sort_by_key(|(a, _)| *a);
        seen_real = transcript.messages.len();
        seen_shadow = shadow.len();

        let mut io = RoundIo {
            private_seed,
            shared_seed,
            round,
            n_agents,
            curator_records: curator_input,
            agent_records: agent_inputs,
            sim_curator: sim.curator_records,
            sim_agents: sim.agent_records,
            transcript: &mut transcript,
            shadow: &mut shadow,
            inbox_referee,
            inbox_curator,
            inbox_agents,
            checker: &mut checker,
            ledger,
            output: &mut output,
        };
        spec.round(round, state.as_mut(), &mut io)?;
    }

    transcript.output = output;
    debug_assert!(validate_pattern(&transcript, pattern));
    Ok(RunOutcome { output: transcript.output.clone(), transcript, state })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Protocol with no messages at all.
    struct SilentSpec;
    impl ProtocolSpec for SilentSpec {
        fn name(&self) -> &'static str {
            "silent"
        }
        fn pattern(&self) -> InteractionPattern {
            InteractionPattern::new(PatternKind::GeneralRounds, 1)
        }
        fn rounds(&self) -> u32 {
            1
        }
        fn init_state(&self) -> Box<dyn Any> {
            Box::new(())
        }
        fn round(&self, _round: u32, _state: &mut dyn Any, _io: &mut RoundIo<'_>) -> Result<()> {
            Ok(())
        }
    }

    /// Each agent sends one byte of its record; referee sums into output.
    struct EchoSumSpec;
    impl ProtocolSpec for EchoSumSpec {
        fn name(&self) -> &'static str {
            "echo-sum"
        }
        fn pattern(&self) -> InteractionPattern {
            InteractionPattern::new(PatternKind::NonInteractive, 2)
        }
        fn rounds(&self) -> u32 {
            2
        }
        fn init_state(&self) -> Box<dyn Any> {
            Box::new(())
        }
        fn round(&self, round: u32, _state: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()> {
            match round {
                1 => {
                    for i in 0..io.n_agents() {
                        let b = io.agent_record(i) as u8;
                        io.send(PartyId::Agent(i), PartyId::Referee, &[0x01, b])?;
                        io.charge(PartyId::Agent(i), 0.5, None)?;
                    }
                    io.send(PartyId::Curator, PartyId::Referee, &[0x02])?;
                }
                2 => {
                    let sum: u64 =
                        io.referee_inbox().iter().map(|m| m.payload.get(1).copied().unwrap_or(0) as u64).sum();
                    io.set_output(sum.to_le_bytes().to_vec());
                }
                _ => unreachable!(),
            }
            Ok(())
        }
    }

    #[test]
    fn zero_message_spec_gives_empty_transcript_and_no_output() {
        let mut ledger = PrivacyLedger::new(1.0);
        let out = run_protocol(
            &SilentSpec,
            &[],
            &[],
            InteractionPattern::new(PatternKind::GeneralRounds, 4),
            &mut ledger,
            7,
        )
        .unwrap();
        assert!(out.transcript.messages.is_empty());
        assert!(out.output.is_none());
        assert_eq!(out.transcript.tally().total, 0);
    }

    #[test]
    fn same_seed_same_run_twice_is_byte_identical() {
        let agents: Vec<u64> = (0..50).collect();
        let run = |seed| {
            let mut ledger = PrivacyLedger::new(1.0);
            run_protocol(
                &EchoSumSpec,
                &[1, 2],
                &agents,
                InteractionPattern::new(PatternKind::NonInteractive, 2),
                &mut ledger,
                seed,
            )
            .unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a.transcript, b.transcript);
        assert_eq!(a.output, b.output);
        assert_eq!(a.transcript.dump(), b.transcript.dump());
        let c = run(43);
        assert_eq!(c.output, a.output, "output is input-determined here");
    }

    #[test]
    fn topology_rejects_party_to_party_messages() {
        struct BadSpec;
        impl ProtocolSpec for BadSpec {
            fn name(&self) -> &'static str {
                "bad"
            }
            fn pattern(&self) -> InteractionPattern {
                InteractionPattern::new(PatternKind::GeneralRounds, 2)
            }
            fn rounds(&self) -> u32 {
                1
            }
            fn init_state(&self) -> Box<dyn Any> {
                Box::new(())
            }
            fn round(&self, _r: u32, _s: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()> {
                io.send(PartyId::Curator, PartyId::Agent(0), &[0])
            }
        }
        let mut ledger = PrivacyLedger::new(1.0);
        let err = run_protocol(
            &BadSpec,
            &[],
            &[9],
            InteractionPattern::new(PatternKind::GeneralRounds, 2),
            &mut ledger,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::PatternViolation { .. }));
    }

    #[test]
    fn charge_zero_leaves_ledger_unchanged() {
        let mut ledger = PrivacyLedger::new(1.0);
        ledger.charge(PartyId::Curator, 0.0, None).unwrap();
        assert_eq!(ledger.total(PartyId::Curator), 0.0);
    }

    #[test]
    fn two_half_charges_land_exactly_at_budget() {
        let mut ledger = PrivacyLedger::new(1.0);
        ledger.charge(PartyId::Agent(3), 0.5, None).unwrap();
        ledger.charge(PartyId::Agent(3), 0.5, None).unwrap();
        assert_eq!(ledger.total(PartyId::Agent(3)), 1.0);
        assert!(ledger.charge(PartyId::Agent(3), 1e-6, None).is_err());
    }

    #[test]
    fn tagged_parallel_charges_take_the_max() {
        // 1/alpha = 4 parallel charges of alpha*eps under one tag: the ledger
        // records alpha*eps total for the party, not their sum.
        let eps = 1.0;
        let alpha = 0.25;
        let mut ledger = PrivacyLedger::new(eps);
        for _ in 0..4 {
            ledger.charge(PartyId::Curator, alpha * eps, Some("blocks")).unwrap();
        }
        assert!((ledger.total(PartyId::Curator) - alpha * eps).abs() < 1e-15);
        assert_eq!(ledger.events().len(), 4);
    }

    #[test]
    fn budget_violation_is_reported() {
        let mut ledger = PrivacyLedger::new(0.4);
        let err = ledger.charge(PartyId::Curator, 0.5, None).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
    }

    #[test]
    fn empty_transcript_validates_every_pattern() {
        let t = Transcript::default();
        for kind in [
            PatternKind::NonInteractive,
            PatternKind::LocalThenCurator,
            PatternKind::CuratorThenLocal,
            PatternKind::GeneralRounds,
        ] {
            assert!(validate_pattern(&t, InteractionPattern::new(kind, 8)));
        }
    }

    fn msg(round: u32, sender: PartyId, receiver: PartyId) -> Message {
        Message { round, sender, receiver, payload: Payload::new(&[]) }
    }

    #[test]
    fn local_then_curator_accepts_agents_before_curator_reply() {
        // Agent message at round 1, curator reply at round 3.
        let t = Transcript {
            messages: vec![
                msg(1, PartyId::Agent(0), PartyId::Referee),
                msg(3, PartyId::Curator, PartyId::Referee),
            ],
            output: None,
        };
        assert!(validate_pattern(&t, InteractionPattern::new(PatternKind::LocalThenCurator, 4)));
        assert!(!validate_pattern(&t, InteractionPattern::new(PatternKind::CuratorThenLocal, 4)));
    }

    #[test]
    fn non_interactive_rejects_second_round_and_double_sends() {
        let two_rounds = Transcript {
            messages: vec![
                msg(1, PartyId::Agent(0), PartyId::Referee),
                msg(2, PartyId::Agent(1), PartyId::Referee),
            ],
            output: None,
        };
        assert!(!validate_pattern(&two_rounds, InteractionPattern::new(PatternKind::NonInteractive, 4)));
        let double_send = Transcript {
            messages: vec![
                msg(1, PartyId::Agent(0), PartyId::Referee),
                msg(1, PartyId::Agent(0), PartyId::Referee),
            ],
            output: None,
        };
        assert!(!validate_pattern(&double_send, InteractionPattern::new(PatternKind::NonInteractive, 4)));
        let referee_sends = Transcript {
            messages: vec![msg(1, PartyId::Referee, PartyId::Agent(0))],
            output: None,
        };
        assert!(!validate_pattern(&referee_sends, InteractionPattern::new(PatternKind::NonInteractive, 4)));
    }

    #[test]
    fn transcript_dump_round_trips() {
        let t = Transcript {
            messages: vec![
                Message {
                    round: 1,
                    sender: PartyId::Agent(12),
                    receiver: PartyId::Referee,
                    payload: Payload::new(&[0x07, 0xab]),
                },
                Message {
                    round: 2,
                    sender: PartyId::Referee,
                    receiver: PartyId::Curator,
                    payload: Payload::new(&[]),
                },
            ],
            output: Some(vec![0xde, 0xad]),
        };
        let dump = t.dump();
        assert!(dump.contains("1,agent12,referee,07ab"));
        assert!(dump.ends_with("output,dead\n"));
        let parsed = Transcript::parse(&dump).unwrap();
        assert_eq!(parsed, t);
    }

    #[test]
    fn rng_streams_reproduce_and_separate() {
        let mut a = RngStream::for_party(9, PartyId::Agent(4), 2);
        let mut b = RngStream::for_party(9, PartyId::Agent(4), 2);
        assert_eq!(a.next_u64(), b.next_u64());
        let mut c = RngStream::for_party(9, PartyId::Agent(5), 2);
        let mut d = RngStream::for_party(9, PartyId::Agent(4), 3);
        let x = RngStream::for_party(9, PartyId::Agent(4), 2).next_u64();
        assert_ne!(c.next_u64(), x);
        assert_ne!(d.next_u64(), x);
    }

    #[test]
    fn payload_inline_boundary() {
        let small = Payload::new(&[1u8; 15]);
        let big = Payload::new(&[2u8; 16]);
        assert_eq!(small.as_bytes().len(), 15);
        assert_eq!(big.as_bytes().len(), 16);
        assert_eq!(&big.as_bytes()[..3], &[2, 2, 2]);
    }
}
