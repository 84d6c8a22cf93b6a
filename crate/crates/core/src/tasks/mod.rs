//! The hybrid-model protocols and constructive reductions, assembled from
//! the engine, the local-model primitives, and the curator mechanisms.
//!
//! Each task registers under a stable name for the harness: `parity-thresh`,
//! `concat`, `one-out`, `pcs`, `select-estimate`, `hypo-reduce`, and
//! `learn-to-select`. [`run_trial`] generates a fresh instance from the
//! trial seed, executes the task once under a fresh privacy ledger, and
//! scores the result against the instance's hidden ground truth.

mod concat;
mod learn_select;
mod one_out;
mod parity_thresh;
mod pcs;
mod reduction;
mod select_estimate;

pub use concat::{
    concat_learn, concat_required_n, concat_rounds, joint_error, ConcatHypothesis, ConcatSpec,
    CONCAT_TAU,
};
pub use learn_select::{
    concept_empirical_error, reduce_learning_to_selection, EmSolver, ExactArgmax, SelectionSolver,
};
pub use one_out::{one_out_of_2d_parity, OneOutResult, OneOutSpec};
pub use parity_thresh::{
    generalization_error, parity_thresh_cdf_bits, parity_thresh_hybrid, parity_thresh_required_n,
    ParityThreshHypothesis, ParityThreshSpec,
};
pub use pcs::{parity_chooses_secret, PcsResult, PcsSpec};
pub use reduction::{
    build_curator_only_from_hybrid, build_local_from_hybrid, hypothesis_test_majority,
    measure_gamma, CuratorOnlyProtocol, HypoHybridSpec, HypoResult, LocalOnlyProtocol,
};
pub use select_estimate::{
    laplace_select_estimate, select_then_estimate, SelectEstimateResult, SelectEstimateSpec,
};

use rand::{Rng, RngCore};

use crate::datagen::{self, GroundTruth, Marginal};
use crate::engine::{InteractionPattern, PatternKind, PrivacyLedger, RngStream, Transcript};
use crate::{params, Error, Result};

/// Registry of task names accepted by the harness, in a fixed order.
pub const TASK_NAMES: [&str; 7] = [
    "parity-thresh",
    "concat",
    "one-out",
    "pcs",
    "select-estimate",
    "hypo-reduce",
    "learn-to-select",
];

/// One task configuration. Fields that a task does not use are ignored by
/// it; `m = 0` or `n = 0` means "derive from the task's sizing formulas".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskParams {
    pub b: u32,
    pub c: u32,
    pub d: u32,
    pub m: u64,
    pub n: u64,
    pub eps: f64,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub beta: f64,
}

impl TaskParams {
    /// The documented default configuration of `task` (the desk-scale
    /// regime every Monte-Carlo example is stated at), with sizes derived.
    pub fn defaults_for(task: &str) -> Result<TaskParams> {
        let mut p = match task {
            "parity-thresh" => TaskParams {
                b: 8,
                c: 4,
                d: 0,
                m: 0,
                n: 0,
                eps: 1.0,
                alpha: 0.25,
                alpha_prime: 0.0,
                beta: 0.25,
            },
            "concat" => TaskParams {
                b: 16,
                c: 4,
                d: 0,
                m: 0,
                n: 0,
                eps: 1.0,
                alpha: 0.25,
                alpha_prime: 0.0,
                beta: 0.25,
            },
            "one-out" => TaskParams {
                b: 0,
                c: 8,
                d: 3,
                m: 0,
                n: 0,
                eps: 1.0,
                alpha: 0.25,
                alpha_prime: 0.0,
                beta: 0.25,
            },
            "pcs" => TaskParams {
                b: 0,
                c: 8,
                d: 0,
                m: 0,
                n: 0,
                eps: 1.0,
                alpha: 0.25,
                alpha_prime: 0.0,
                beta: 0.25,
            },
            "select-estimate" => TaskParams {
                b: 0,
                c: 0,
                d: 64,
                m: 2000,
                n: 20000,
                eps: 1.0,
                alpha: 0.25,
                alpha_prime: 0.1,
                beta: 0.25,
            },
            "hypo-reduce" => TaskParams {
                b: 0,
                c: 0,
                d: 0,
                m: 200,
                n: 2000,
                eps: 1.0,
                alpha: 0.2,
                alpha_prime: 0.0,
                beta: 0.25,
            },
            "learn-to-select" => TaskParams {
                b: 0,
                c: 4,
                d: 0,
                m: 0,
                n: 0,
                eps: 1.0,
                alpha: 0.1,
                alpha_prime: 0.0,
                beta: 0.25,
            },
            other => {
                return Err(Error::InvalidConfig(format!("unknown task `{other}`")));
            }
        };
        p.fill_derived_sizes(task)?;
        Ok(p)
    }

    /// Replaces `m = 0` and `n = 0` with the task's sizing formulas at the
    /// current accuracy and privacy parameters.
    pub fn fill_derived_sizes(&mut self, task: &str) -> Result<()> {
        match task {
            "parity-thresh" => {
                if self.m == 0 {
                    self.m = params::parity_thresh_m(self.c, self.alpha, self.eps, self.beta);
                }
                if self.n == 0 {
                    self.n =
                        parity_thresh_required_n(self.b, self.m, self.alpha, self.beta, self.eps);
                }
            }
            "concat" => {
                if self.m == 0 {
                    self.m = params::concat_parity_m(self.c, self.alpha, self.eps, self.beta);
                }
                if self.n == 0 {
                    self.n = concat_required_n(self.b, self.alpha, self.beta, self.eps);
                }
            }
            "one-out" => {
                if self.m == 0 {
                    self.m = params::one_out_m(self.c, self.eps, self.beta);
                }
                if self.n == 0 {
                    self.n = params::one_out_n(self.m, self.d, self.eps, self.beta);
                }
            }
            "pcs" => {
                if self.m == 0 {
                    self.m = params::one_out_m(self.c, self.eps, self.beta);
                }
                if self.n == 0 {
                    self.n = params::pcs_n(self.m, self.eps, self.beta);
                }
            }
            "select-estimate" | "hypo-reduce" => {
                if self.m == 0 || self.n == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "task `{task}` has no sizing formula; set m and n explicitly"
                    )));
                }
            }
            "learn-to-select" => {
                if self.n == 0 {
                    self.n = params::learn_to_select_n(self.alpha, self.c);
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!("unknown task `{other}`")));
            }
        }
        Ok(())
    }

    /// Checks the task's preconditions. `allow_wide_alpha_prime` permits
    /// select-estimate configurations with alpha_prime >= alpha, which are
    /// outside the regime of interest but still well defined.
    pub fn validate(&self, task: &str, allow_wide_alpha_prime: bool) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.eps <= 0.0 {
            return fail(format!("eps must be positive, got {}", self.eps));
        }
        match task {
            "parity-thresh" | "concat" => {
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return fail(format!("alpha must be in (0,1), got {}", self.alpha));
                }
                if !(self.beta > 0.0 && self.beta < 1.0) {
                    return fail(format!("beta must be in (0,1), got {}", self.beta));
                }
                if self.b == 0 || self.b > 24 || self.c == 0 || self.c > 16 {
                    return fail(format!("unsupported sizes b = {}, c = {}", self.b, self.c));
                }
            }
            "one-out" => {
                if self.d > 5 || self.c == 0 || self.c > 16 {
                    return fail(format!("unsupported sizes d = {}, c = {}", self.d, self.c));
                }
                if self.beta * self.m as f64 <= 1.0 {
                    return fail(format!(
                        "one-out requires beta > 1/m, got beta = {} at m = {}",
                        self.beta, self.m
                    ));
                }
            }
            "pcs" => {
                if self.c == 0 || self.c > 16 {
                    return fail(format!("unsupported size c = {}", self.c));
                }
                if !(self.beta > 0.0 && self.beta < 1.0) {
                    return fail(format!("beta must be in (0,1), got {}", self.beta));
                }
            }
            "select-estimate" => {
                if self.d == 0 || self.d > 64 {
                    return fail(format!("d must be in [1, 64], got {}", self.d));
                }
                if !(self.alpha_prime > 0.0 && self.alpha > 0.0) {
                    return fail("alpha and alpha_prime must be positive".into());
                }
                if self.alpha_prime >= self.alpha && !allow_wide_alpha_prime {
                    return fail(format!(
                        "alpha_prime = {} >= alpha = {} is outside the regime of interest \
                         (pass --allow-wide-alpha-prime to force)",
                        self.alpha_prime, self.alpha
                    ));
                }
            }
            "hypo-reduce" => {
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return fail(format!("bias alpha must be in (0,1), got {}", self.alpha));
                }
                if self.m == 0 || self.n == 0 {
                    return fail("hypo-reduce needs m >= 1 and n >= 1".into());
                }
            }
            "learn-to-select" => {
                if self.c == 0 || self.c > 6 {
                    return fail(format!("c must be in [1, 6] (2^c concepts), got {}", self.c));
                }
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return fail(format!("alpha must be in (0,1), got {}", self.alpha));
                }
            }
            other => {
                return fail(format!("unknown task `{other}`"));
            }
        }
        Ok(())
    }
}

/// Score and artifacts of one completed trial.
pub struct TrialOutcome {
    /// Whether the task's own success predicate held.
    pub success: bool,
    /// Task-specific numeric error (the misclassification or estimation
    /// error where one exists, otherwise 0.0 on success and 1.0 on failure).
    pub error: f64,
    /// Transcript of the run, for tasks that execute a protocol.
    pub transcript: Option<Transcript>,
    /// The interaction pattern the run was executed and checked under.
    pub pattern: InteractionPattern,
    /// The per-party privacy accounting of the run.
    pub ledger: PrivacyLedger,
}

/// Number of fresh points a generalization-error measurement draws.
pub const EVAL_POINTS: usize = 4000;

/// Runs one trial of `task` at `params`: generates an instance from `seed`,
/// executes the task, and scores it against the hidden truth.
pub fn run_trial(task: &str, params: &TaskParams, seed: u64) -> Result<TrialOutcome> {
    params.validate(task, true)?;
    match task {
        "parity-thresh" => run_parity_thresh_trial(params, seed),
        "concat" => run_concat_trial(params, seed),
        "one-out" => run_one_out_trial(params, seed),
        "pcs" => run_pcs_trial(params, seed),
        "select-estimate" => run_select_estimate_trial(params, seed),
        "hypo-reduce" => run_hypo_trial(params, seed),
        "learn-to-select" => run_learn_select_trial(params, seed),
        other => Err(Error::InvalidConfig(format!("unknown task `{other}`"))),
    }
}

/// The canonical pattern each task declares (used for the harness echo).
pub fn default_pattern(task: &str) -> PatternKind {
    match task {
        "one-out" | "concat" => PatternKind::LocalThenCurator,
        "pcs" | "select-estimate" => PatternKind::CuratorThenLocal,
        _ => PatternKind::NonInteractive,
    }
}

fn run_parity_thresh_trial(p: &TaskParams, seed: u64) -> Result<TrialOutcome> {
    let mut targets = RngStream::for_datagen(seed, 90);
    let k_star = targets.random_range(0..(1u64 << p.c));
    let t_star = targets.random_range(0..(1u64 << p.b));
    let instance =
        datagen::gen_parity_thresh(p.b, p.c, p.m, p.n, k_star, t_star, Marginal::Uniform, seed)?;
    let mut ledger = PrivacyLedger::new(p.eps);
    let (hyp, transcript) =
        parity_thresh_hybrid(&instance, p.eps, p.alpha, p.beta, &mut ledger, seed)?;
    let points = datagen::parity_thresh_eval_points(
        p.b,
        p.c,
        k_star,
        t_star,
        Marginal::Uniform,
        EVAL_POINTS,
        seed,
    );
    let mut pad_rng = RngStream::for_datagen(seed, 91);
    let err = generalization_error(&hyp, &points, p.b, p.c, &mut pad_rng);
    Ok(TrialOutcome {
        success: err <= 1.4 * p.alpha,
        error: err,
        transcript: Some(transcript),
        pattern: InteractionPattern { kind: PatternKind::NonInteractive, max_rounds: 2 },
        ledger,
    })
}

fn run_concat_trial(p: &TaskParams, seed: u64) -> Result<TrialOutcome> {
    let mut targets = RngStream::for_datagen(seed, 90);
    let k_star = targets.random_range(0..(1u64 << p.c));
    let t_star = targets.random_range(0..(1u64 << p.b));
    let instance =
        datagen::gen_concat(p.b, p.c, p.m, p.n, k_star, t_star, Marginal::Uniform, seed)?;
    let mut ledger = PrivacyLedger::new(p.eps);
    let (hyp, transcript) = concat_learn(&instance, p.eps, p.alpha, p.beta, &mut ledger, seed)?;
    let points = datagen::parity_thresh_eval_points(
        p.b,
        p.c,
        k_star,
        t_star,
        Marginal::Uniform,
        EVAL_POINTS,
        seed,
    );
    let err = joint_error(&hyp, &points, p.b, p.c);
    Ok(TrialOutcome {
        success: err <= p.alpha,
        error: err,
        transcript: Some(transcript),
        pattern: InteractionPattern {
            kind: PatternKind::LocalThenCurator,
            max_rounds: concat_rounds(p.b),
        },
        ledger,
    })
}

fn run_one_out_trial(p: &TaskParams, seed: u64) -> Result<TrialOutcome> {
    let instance = datagen::gen_one_out(p.d, p.c, p.m, p.n, seed)?;
    let mut ledger = PrivacyLedger::new(p.eps);
    let (res, transcript) = one_out_of_2d_parity(&instance, p.eps, p.beta, &mut ledger, seed)?;
    let GroundTruth::OneOut { r_s, .. } = instance.truth else { unreachable!() };
    let success = !res.missing_share && res.r_hat == r_s;
    Ok(TrialOutcome {
        success,
        error: if success { 0.0 } else { 1.0 },
        transcript: Some(transcript),
        pattern: InteractionPattern { kind: PatternKind::LocalThenCurator, max_rounds: 4 },
        ledger,
    })
}

fn run_pcs_trial(p: &TaskParams, seed: u64) -> Result<TrialOutcome> {
    let instance = datagen::gen_pcs(p.c, p.m, p.n, seed)?;
    let mut ledger = PrivacyLedger::new(p.eps);
    let (res, transcript) = parity_chooses_secret(&instance, p.eps, p.beta, &mut ledger, seed)?;
    let GroundTruth::Pcs { s_r, .. } = instance.truth else { unreachable!() };
    let success = !res.missing_share && res.s_hat == s_r;
    Ok(TrialOutcome {
        success,
        error: if success { 0.0 } else { 1.0 },
        transcript: Some(transcript),
        pattern: InteractionPattern { kind: PatternKind::CuratorThenLocal, max_rounds: 4 },
        ledger,
    })
}

/// Mean vector the select-estimate harness generates by default: one
/// clearly best coordinate with the rest close behind, the regime where
/// curator-only estimation is noise-dominated but hybrid estimation is not.
pub fn default_select_mu(d: u32) -> Vec<f64> {
    let mut mu = vec![0.45; d as usize];
    mu[0] = 0.5;
    mu
}

fn run_select_estimate_trial(p: &TaskParams, seed: u64) -> Result<TrialOutcome> {
    let mu = default_select_mu(p.d);
    let instance = datagen::gen_select(p.d, &mu, p.m, p.n, seed)?;
    let mut ledger = PrivacyLedger::new(p.eps);
    let (res, transcript) = select_then_estimate(&instance, p.eps, &mut ledger, seed)?;
    let GroundTruth::Select { mu } = &instance.truth else { unreachable!() };
    let max_mu = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let est_err = (res.mu_hat - mu[res.i]).abs();
    let selected_ok = mu[res.i] >= max_mu - p.alpha;
    Ok(TrialOutcome {
        success: selected_ok && est_err <= p.alpha_prime,
        error: est_err,
        transcript: Some(transcript),
        pattern: InteractionPattern { kind: PatternKind::CuratorThenLocal, max_rounds: 4 },
        ledger,
    })
}

/// Hybrid runs used to calibrate gamma before wrapping, per trial.
const HYPO_CALIBRATION_RUNS: u64 = 64;

fn run_hypo_trial(p: &TaskParams, seed: u64) -> Result<TrialOutcome> {
    let gamma_seed = RngStream::for_datagen(seed, 92).next_u64();
    let gamma =
        measure_gamma(p.alpha, p.m, p.n, p.eps, HYPO_CALIBRATION_RUNS, gamma_seed)?;
    let mut meta = RngStream::for_datagen(seed, 93);
    let j = (meta.next_u64() & 1) as u8;
    let instance = datagen::gen_hypo(p.alpha, j, p.m, p.n, seed)?;
    let spec = HypoHybridSpec { eps: p.eps };
    let local = build_local_from_hybrid(&spec, p.alpha, p.m, gamma);
    let mut ledger = PrivacyLedger::new(p.eps);
    let (j_hat, transcript) = local.run(&instance.agent_records, &mut ledger, seed)?;
    let success = j_hat == j;
    Ok(TrialOutcome {
        success,
        error: if success { 0.0 } else { 1.0 },
        transcript: Some(transcript),
        pattern: InteractionPattern { kind: PatternKind::NonInteractive, max_rounds: 2 },
        ledger,
    })
}

fn run_learn_select_trial(p: &TaskParams, seed: u64) -> Result<TrialOutcome> {
    let mut gen = RngStream::for_datagen(seed, 94);
    let k_star = gen.random_range(0..(1u64 << p.c));
    let sample: Vec<crate::curator::LabeledExample> = (0..p.n)
        .map(|_| {
            let x = gen.random_range(0..(1u64 << p.c));
            crate::curator::LabeledExample { x, label: crate::curator::parity_of(k_star, x) }
        })
        .collect();
    let solver = EmSolver { eps: p.eps };
    let d = 1usize << p.c;
    let mut rng = RngStream::for_party(seed, crate::PartyId::Curator, 1);
    let chosen = reduce_learning_to_selection(
        &solver,
        d,
        |i, x| crate::curator::parity_of(i as u64, x),
        &sample,
        &mut rng,
    )?;
    let err = concept_empirical_error(|x| crate::curator::parity_of(chosen as u64, x), &sample);
    let mut ledger = PrivacyLedger::new(p.eps);
    ledger.charge(crate::PartyId::Curator, p.eps, None)?;
    Ok(TrialOutcome {
        success: err <= 4.0 * p.alpha,
        error: err,
        transcript: None,
        pattern: InteractionPattern { kind: PatternKind::NonInteractive, max_rounds: 1 },
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_exist_for_every_registered_task() {
        for task in TASK_NAMES {
            let p = TaskParams::defaults_for(task).unwrap();
            p.validate(task, false).unwrap();
            assert!(p.eps > 0.0);
        }
    }

    #[test]
    fn one_out_defaults_follow_the_stated_regime() {
        let p = TaskParams::defaults_for("one-out").unwrap();
        assert_eq!(p.m, params::one_out_m(8, 1.0, 0.25));
        assert_eq!(p.n, params::one_out_n(p.m, 3, 1.0, 0.25));
    }

    #[test]
    fn unknown_task_is_rejected() {
        assert!(TaskParams::defaults_for("nope").is_err());
        let p = TaskParams::defaults_for("pcs").unwrap();
        assert!(run_trial("nope", &p, 1).is_err());
    }

    #[test]
    fn wide_alpha_prime_needs_the_override() {
        let mut p = TaskParams::defaults_for("select-estimate").unwrap();
        p.alpha_prime = p.alpha;
        assert!(p.validate("select-estimate", false).is_err());
        p.validate("select-estimate", true).unwrap();
    }

    #[test]
    fn small_beta_is_rejected_for_one_out() {
        let mut p = TaskParams::defaults_for("one-out").unwrap();
        p.beta = 1.0 / (p.m as f64 + 1.0);
        assert!(p.validate("one-out", false).is_err());
    }
}
