//! Throughput benchmarks for the hot paths: the agent-side randomizers,
//! curator selection, the round engine, and the interactive quantile search.

use std::any::Any;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::RngCore;

use hybriddp_core::curator::exponential_mechanism;
use hybriddp_core::local::{
    freq_oracle, private_quantile, randomized_response, QuantileQuery,
};
use hybriddp_core::params::quantile_contract_n;
use hybriddp_core::{
    run_protocol, InteractionPattern, PartyId, PatternKind, PrivacyLedger, ProtocolSpec,
    Result, RngStream, RoundIo,
};

fn bench_randomized_response(c: &mut Criterion) {
    let mut seeds = RngStream::for_datagen(0xBE, 0);
    let bits: Vec<u8> = (0..100_000).map(|_| (seeds.next_u32() & 1) as u8).collect();
    c.bench_function("randomized_response_100k_bits", |b| {
        b.iter(|| {
            let mut rng = RngStream::for_datagen(0xBE, 1);
            let mut acc = 0u64;
            for &bit in &bits {
                acc += u64::from(randomized_response(black_box(bit), 1.0, &mut rng));
            }
            acc
        })
    });
}

fn bench_freq_oracle(c: &mut Criterion) {
    let items: Vec<u64> = (0..10_000u64).map(|i| i % 256).collect();
    c.bench_function("freq_oracle_10k_agents_domain_256", |b| {
        b.iter(|| freq_oracle(black_box(&items), 256, 1.0, 0xBE01).expect("oracle"))
    });
}

fn bench_exponential_mechanism(c: &mut Criterion) {
    let scores: Vec<f64> = (0..1024).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    c.bench_function("exponential_mechanism_1024_scores", |b| {
        b.iter(|| {
            let mut rng = RngStream::for_datagen(0xBE, 2);
            exponential_mechanism(black_box(&scores), 1.0, 2.0, &mut rng).expect("selection")
        })
    });
}

/// Minimal three-round star protocol: every agent reports one bit, the
/// referee forwards the tally to the curator, the curator echoes it back.
struct RelaySpec;

impl ProtocolSpec for RelaySpec {
    fn name(&self) -> &'static str {
        "relay-bench"
    }

    fn pattern(&self) -> InteractionPattern {
        InteractionPattern { kind: PatternKind::GeneralRounds, max_rounds: 3 }
    }

    fn rounds(&self) -> u32 {
        3
    }

    fn init_state(&self) -> Box<dyn Any> {
        Box::new(())
    }

    fn round(&self, round: u32, _state: &mut dyn Any, io: &mut RoundIo<'_>) -> Result<()> {
        match round {
            1 => {
                io.reserve_sends(io.n_agents() as usize);
                for i in 0..io.n_agents() {
                    let bit = (io.agent_record(i) & 1) as u8;
                    io.send(PartyId::Agent(i), PartyId::Referee, &[bit])?;
                }
            }
            2 => {
                let tally: u64 =
                    io.referee_inbox().iter().map(|m| u64::from(m.payload.as_bytes()[0])).sum();
                io.send(PartyId::Referee, PartyId::Curator, &tally.to_le_bytes())?;
            }
            _ => {
                let echo = io
                    .curator_inbox()
                    .single()
                    .map(|m| m.payload.as_bytes().to_vec())
                    .unwrap_or_default();
                io.send(PartyId::Curator, PartyId::Referee, &echo)?;
                io.set_output(echo);
            }
        }
        Ok(())
    }
}

fn bench_engine_rounds(c: &mut Criterion) {
    let agents: Vec<u64> = (0..1000).collect();
    let curator: Vec<u64> = (0..100).collect();
    let spec = RelaySpec;
    c.bench_function("engine_relay_1000_agents_3_rounds", |b| {
        b.iter(|| {
            let mut ledger = PrivacyLedger::new(1.0);
            run_protocol(
                &spec,
                black_box(&curator),
                black_box(&agents),
                spec.pattern(),
                &mut ledger,
                0xBE02,
            )
            .expect("run")
        })
    });
}

fn bench_private_quantile(c: &mut Criterion) {
    let query = QuantileQuery {
        p_star: 0.5,
        q_min: 0.0,
        q_max: 64.0,
        tau_dist: 1.0,
        lambda_quant: 0.2,
        beta_conf: 0.2,
    };
    let n = quantile_contract_n(query.lambda_quant, query.beta_conf, query.rounds(), 1.0);
    let mut rng = RngStream::for_datagen(0xBE, 3);
    let values: Vec<u64> = (0..n).map(|_| rng.next_u64() % 64).collect();
    c.bench_function("private_quantile_median_width_64", |b| {
        b.iter(|| private_quantile(black_box(&values), &query, 1.0, 0xBE03).expect("search"))
    });
}

criterion_group!(
    benches,
    bench_randomized_response,
    bench_freq_oracle,
    bench_exponential_mechanism,
    bench_engine_rounds,
    bench_private_quantile
);
criterion_main!(benches);
