//! Privacy verification: exact epsilon computation for single-shot
//! randomizers over enumerable domains, Monte-Carlo epsilon lower bounds for
//! composed views, and human-readable ledger reports.
//!
//! Composed protocols are validated by exact per-randomizer audits plus the
//! ledger's composition accounting, not by enumerating transcript spaces;
//! the protocols' privacy guarantees are exactly "per-randomizer epsilon
//! plus composition". The Monte-Carlo probe gives a statistical lower bound
//! on a composed view's true epsilon, useful for catching gross leaks. Only
//! honest-but-curious transcripts are probed; an adversarially adaptive
//! referee could in principle extract more and is out of scope here.

use std::collections::BTreeMap;

use statrs::distribution::{Beta, ContinuousCDF};

use crate::engine::{PartyId, PrivacyLedger, Transcript};
use crate::local::{fo_sign_bit, rr_keep_prob};

/// Absolute tolerance for comparing an exactly computed channel epsilon
/// against its configured value.
pub const EXACT_TOL: f64 = 1e-9;

/// Two-sided confidence level used for the Clopper-Pearson intervals inside
/// [`mc_epsilon_lower_bound`].
pub const MC_CONFIDENCE: f64 = 0.95;

/// CSV header for channel audit reports.
pub const AUDIT_CSV_HEADER: &str = "component,claimed_eps,measured_eps,pass";

/// A single-shot randomizer with enumerable input and output domains and a
/// closed-form output distribution.
pub trait Channel {
    fn name(&self) -> &'static str;
    /// Number of inputs; inputs are `0..inputs()`.
    fn inputs(&self) -> u64;
    /// Number of outputs; outputs are `0..outputs()`.
    fn outputs(&self) -> u64;
    /// Probability of producing `output` on `input`.
    fn prob(&self, input: u64, output: u64) -> f64;
    /// The epsilon the randomizer was configured with.
    fn claimed_eps(&self) -> f64;
}

/// Binary randomized response as a channel: input and output are one bit.
pub struct RrChannel {
    pub eps: f64,
}

impl Channel for RrChannel {
    fn name(&self) -> &'static str {
        "randomized_response"
    }

    fn inputs(&self) -> u64 {
        2
    }

    fn outputs(&self) -> u64 {
        2
    }

    fn prob(&self, input: u64, output: u64) -> f64 {
        let keep = rr_keep_prob(self.eps);
        if input == output {
            keep
        } else {
            1.0 - keep
        }
    }

    fn claimed_eps(&self) -> f64 {
        self.eps
    }
}

/// The frequency-oracle encoder for one fixed Hadamard coordinate: input is
/// an item of the (padded) domain, output is the randomized sign bit.
pub struct FoEncoderChannel {
    pub eps: f64,
    pub domain: u64,
    pub coord: u64,
}

impl Channel for FoEncoderChannel {
    fn name(&self) -> &'static str {
        "freq_oracle_encoder"
    }

    fn inputs(&self) -> u64 {
        self.domain
    }

    fn outputs(&self) -> u64 {
        2
    }

    fn prob(&self, input: u64, output: u64) -> f64 {
        let keep = rr_keep_prob(self.eps);
        if u64::from(fo_sign_bit(input, self.coord)) == output {
            keep
        } else {
            1.0 - keep
        }
    }

    fn claimed_eps(&self) -> f64 {
        self.eps
    }
}

/// Worst-case log probability ratio of `channel` over all input pairs and
/// outputs, the exact pure-DP epsilon of the channel. Returns positive
/// infinity when some output has positive probability on one input and zero
/// on another.
pub fn exact_channel_epsilon(channel: &dyn Channel) -> f64 {
    let mut worst = 0.0f64;
    for output in 0..channel.outputs() {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for input in 0..channel.inputs() {
            let p = channel.prob(input, output);
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if hi == 0.0 {
            continue;
        }
        if lo == 0.0 {
            return f64::INFINITY;
        }
        worst = worst.max((hi / lo).ln());
    }
    worst
}

/// One row of a channel audit report.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAuditRow {
    pub component: String,
    pub claimed_eps: f64,
    pub measured_eps: f64,
    pub pass: bool,
}

impl ChannelAuditRow {
    /// Formats the row for the `component,claimed_eps,measured_eps,pass`
    /// CSV report.
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.component, self.claimed_eps, self.measured_eps, self.pass)
    }
}

/// Audits one channel: computes its exact epsilon and compares against the
/// claimed value. Infinite ratios fail regardless of the claim.
pub fn audit_channel(channel: &dyn Channel) -> ChannelAuditRow {
    let measured = exact_channel_epsilon(channel);
    ChannelAuditRow {
        component: channel.name().to_string(),
        claimed_eps: channel.claimed_eps(),
        measured_eps: measured,
        pass: measured.is_finite() && measured <= channel.claimed_eps() + EXACT_TOL,
    }
}

/// Audits every shipped local randomizer at each requested epsilon. The
/// frequency-oracle encoder is audited on `fo_domain` inputs at Hadamard
/// coordinate 1, the smallest coordinate whose sign bit depends on the item.
pub fn standard_audit_rows(eps_values: &[f64], fo_domain: u64) -> Vec<ChannelAuditRow> {
    let mut rows = Vec::new();
    for &eps in eps_values {
        rows.push(audit_channel(&RrChannel { eps }));
        rows.push(audit_channel(&FoEncoderChannel { eps, domain: fo_domain, coord: 1 }));
    }
    rows
}

/// Result of a Monte-Carlo epsilon probe.
///
/// `conservative` is the headline number: the largest Clopper-Pearson
/// corrected log ratio over all observed statistic values and both
/// directions, a statistical lower bound on the view's true epsilon at
/// per-event confidence [`MC_CONFIDENCE`]. `point` is the same maximum over
/// uncorrected empirical ratios, reported for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEpsilonBound {
    pub trials: u64,
    pub conservative: f64,
    pub point: f64,
    pub confidence: f64,
}

impl McEpsilonBound {
    /// Gap between the uncorrected and corrected maxima, a working measure
    /// of the statistical slack in the bound.
    pub fn ci_width(&self) -> f64 {
        (self.point - self.conservative).max(0.0)
    }
}

fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    let tail = (1.0 - confidence) / 2.0;
    let k = successes as f64;
    let n = trials as f64;
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).expect("valid beta shape").inverse_cdf(tail)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k).expect("valid beta shape").inverse_cdf(1.0 - tail)
    };
    (lo, hi)
}

/// Runs `view_a` and `view_b` for `trials` trials each (the closure argument
/// is the trial index, to be used as a seed) and probes the family of
/// singleton events over the returned statistic values. Each closure should
/// run the same view on one of two neighboring inputs and return a discrete
/// statistic of the transcript.
///
/// The returned bound is valid for any number of trials; the intended regime
/// is 10^4 trials or more, below which the bound is weak rather than wrong.
pub fn mc_epsilon_lower_bound(
    mut view_a: impl FnMut(u64) -> u64,
    mut view_b: impl FnMut(u64) -> u64,
    trials: u64,
) -> McEpsilonBound {
    let mut counts: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for t in 0..trials {
        counts.entry(view_a(t)).or_insert((0, 0)).0 += 1;
        counts.entry(view_b(t)).or_insert((0, 0)).1 += 1;
    }
    let mut conservative = 0.0f64;
    let mut point = 0.0f64;
    if trials == 0 {
        return McEpsilonBound { trials, conservative, point, confidence: MC_CONFIDENCE };
    }
    for &(count_a, count_b) in counts.values() {
        let (lo_a, hi_a) = clopper_pearson(count_a, trials, MC_CONFIDENCE);
        let (lo_b, hi_b) = clopper_pearson(count_b, trials, MC_CONFIDENCE);
        conservative = conservative.max((lo_a / hi_b).ln()).max((lo_b / hi_a).ln());
        if count_a > 0 && count_b > 0 {
            let ratio = count_a as f64 / count_b as f64;
            point = point.max(ratio.ln()).max(-ratio.ln());
        }
    }
    McEpsilonBound { trials, conservative, point, confidence: MC_CONFIDENCE }
}

/// Tabulates the ledger's charges per party per round against the
/// transcript, one CSV row per charge in chronological order. `total` is
/// the charged party's accumulated epsilon after the event under the
/// ledger's composition rules (untagged charges add, same-tag charges take
/// the maximum), `sent` is how many messages the party sent in that round,
/// and `within_budget` flags totals exceeding the ledger budget.
pub fn ledger_report(transcript: &Transcript, ledger: &PrivacyLedger) -> String {
    let mut sent: BTreeMap<(PartyId, u32), u64> = BTreeMap::new();
    for msg in &transcript.messages {
        *sent.entry((msg.sender, msg.round)).or_insert(0) += 1;
    }
    let mut untagged: BTreeMap<PartyId, f64> = BTreeMap::new();
    let mut tag_max: BTreeMap<(PartyId, u16), f64> = BTreeMap::new();
    let mut tagged_sum: BTreeMap<PartyId, f64> = BTreeMap::new();
    let mut report = String::from("party,round,sent,eps,tag,total,within_budget\n");
    for event in ledger.events() {
        match event.tag {
            None => *untagged.entry(event.party).or_insert(0.0) += event.eps,
            Some(id) => {
                let slot = tag_max.entry((event.party, id)).or_insert(0.0);
                if event.eps > *slot {
                    *tagged_sum.entry(event.party).or_insert(0.0) += event.eps - *slot;
                    *slot = event.eps;
                }
            }
        }
        let total = untagged.get(&event.party).copied().unwrap_or(0.0)
            + tagged_sum.get(&event.party).copied().unwrap_or(0.0);
        let within = total <= ledger.budget() + EXACT_TOL;
        let tag = event.tag.map(|id| ledger.tag_name(id)).unwrap_or("");
        let messages = sent.get(&(event.party, event.round)).copied().unwrap_or(0);
        report.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            event.party, event.round, messages, event.eps, tag, total, within
        ));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngStream;
    use crate::local::randomized_response;

    struct IdentityChannel;

    impl Channel for IdentityChannel {
        fn name(&self) -> &'static str {
            "identity"
        }

        fn inputs(&self) -> u64 {
            2
        }

        fn outputs(&self) -> u64 {
            2
        }

        fn prob(&self, input: u64, output: u64) -> f64 {
            if input == output {
                1.0
            } else {
                0.0
            }
        }

        fn claimed_eps(&self) -> f64 {
            0.0
        }
    }

    #[test]
    fn rr_exact_epsilon_matches_configuration() {
        for eps in [0.5, 1.0, 2.0] {
            let measured = exact_channel_epsilon(&RrChannel { eps });
            assert!((measured - eps).abs() <= EXACT_TOL, "eps {eps}: measured {measured}");
        }
    }

    #[test]
    fn fo_encoder_exact_epsilon_matches_configuration() {
        let measured = exact_channel_epsilon(&FoEncoderChannel { eps: 1.0, domain: 8, coord: 1 });
        assert!((measured - 1.0).abs() <= EXACT_TOL, "measured {measured}");
        let constant = exact_channel_epsilon(&FoEncoderChannel { eps: 1.0, domain: 8, coord: 0 });
        assert_eq!(constant, 0.0);
    }

    #[test]
    fn identity_channel_fails_with_infinite_ratio() {
        let row = audit_channel(&IdentityChannel);
        assert!(row.measured_eps.is_infinite());
        assert!(!row.pass);
    }

    #[test]
    fn audit_rows_format_as_csv() {
        let rows = standard_audit_rows(&[1.0], 8);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.pass));
        assert_eq!(rows[0].csv_row(), "randomized_response,1,1,true");
        assert!(rows[1].csv_row().starts_with("freq_oracle_encoder,1,"));
    }

    #[test]
    fn mc_bound_on_randomized_response_sits_below_exact() {
        let view = |bit: u8| {
            move |trial: u64| {
                let mut rng = RngStream::for_datagen(90, trial);
                u64::from(randomized_response(bit, 1.0, &mut rng))
            }
        };
        let bound = mc_epsilon_lower_bound(view(1), view(0), 100_000);
        assert!(bound.conservative >= 0.8, "conservative {}", bound.conservative);
        assert!(bound.conservative <= 1.0 + EXACT_TOL, "conservative {}", bound.conservative);
        assert!(bound.point >= bound.conservative);
    }

    #[test]
    fn identical_views_bound_is_zero() {
        let view = |trial: u64| {
            let mut rng = RngStream::for_datagen(91, trial);
            u64::from(randomized_response(0, 1.0, &mut rng))
        };
        let bound = mc_epsilon_lower_bound(view, view, 20_000);
        assert_eq!(bound.conservative, 0.0);
        assert_eq!(bound.ci_width(), bound.point);
    }

    #[test]
    fn empty_run_report_is_header_only() {
        let ledger = PrivacyLedger::new(1.0);
        let report = ledger_report(&Transcript::default(), &ledger);
        assert_eq!(report.lines().count(), 1);
        assert_eq!(report.lines().next().unwrap(), "party,round,sent,eps,tag,total,within_budget");
    }

    #[test]
    fn report_tracks_composition_and_flags_overruns() {
        let mut ledger = PrivacyLedger::new(1.0);
        ledger.charge_at(1, PartyId::Curator, 0.3, Some("blocks")).unwrap();
        ledger.charge_at(1, PartyId::Curator, 0.3, Some("blocks")).unwrap();
        ledger.charge_at(1, PartyId::Agent(0), 0.6, None).unwrap();
        let overrun = ledger.charge_at(2, PartyId::Agent(0), 0.6, None);
        assert!(overrun.is_err());
        let report = ledger_report(&Transcript::default(), &ledger);
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "curator,1,0,0.3,blocks,0.3,true");
        assert_eq!(lines[2], "curator,1,0,0.3,blocks,0.3,true");
        assert_eq!(lines[3], "agent0,1,0,0.6,,0.6,true");
        assert_eq!(lines[4], "agent0,2,0,0.6,,1.2,false");
    }
}
