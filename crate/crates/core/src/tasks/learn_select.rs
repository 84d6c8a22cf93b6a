//! Reduction from agnostic learning over a finite concept class to
//! coordinate selection: every labeled example becomes the vector of
//! per-concept agreement signs, so a coordinate's mean is exactly one minus
//! twice that concept's empirical error and near-argmax selection is
//! near-optimal learning.

use crate::curator::{coordinate_means, select_max_coordinate, LabeledExample};
use crate::engine::RngStream;
use crate::{Error, Result};

/// A coordinate-selection oracle over records in {-1,1}^d packed as
/// bitmasks (bit set = +1).
pub trait SelectionSolver {
    /// Index of an (approximately) largest-mean coordinate.
    fn select(&self, vectors: &[u64], d: u32, rng: &mut RngStream) -> Result<usize>;
    fn name(&self) -> &'static str;
}

/// Noise-free selection: the exact lowest-index argmax of the coordinate
/// means. Useful as the oracle a private solver is measured against.
pub struct ExactArgmax;

impl SelectionSolver for ExactArgmax {
    fn select(&self, vectors: &[u64], d: u32, _rng: &mut RngStream) -> Result<usize> {
        if vectors.is_empty() {
            return Err(Error::EmptyInput);
        }
        let means = coordinate_means(vectors, d);
        let mut best = 0usize;
        for (j, &v) in means.iter().enumerate() {
            if v > means[best] {
                best = j;
            }
        }
        Ok(best)
    }

    fn name(&self) -> &'static str {
        "exact-argmax"
    }
}

/// Private selection by the exponential mechanism at `eps`.
pub struct EmSolver {
    pub eps: f64,
}

impl SelectionSolver for EmSolver {
    fn select(&self, vectors: &[u64], d: u32, rng: &mut RngStream) -> Result<usize> {
        select_max_coordinate(vectors, d, self.eps, rng)
    }

    fn name(&self) -> &'static str {
        "exponential-mechanism"
    }
}

/// Learns over the class {concept(0, .), ..., concept(d-1, .)} by handing
/// the solver one agreement vector per example: bit i is set exactly when
/// concept i predicts that example's label. Returns the chosen concept
/// index.
pub fn reduce_learning_to_selection(
    solver: &dyn SelectionSolver,
    d: usize,
    concept: impl Fn(usize, u64) -> u8,
    sample: &[LabeledExample],
    rng: &mut RngStream,
) -> Result<usize> {
    if d == 0 || d > 64 {
        return Err(Error::InvalidConfig(format!(
            "selection handles at most 64 concepts, got {d}"
        )));
    }
    if sample.is_empty() {
        return Err(Error::EmptyInput);
    }
    let vectors: Vec<u64> = sample
        .iter()
        .map(|e| {
            let mut mask = 0u64;
            for i in 0..d {
                mask |= u64::from(concept(i, e.x) == e.label) << i;
            }
            mask
        })
        .collect();
    solver.select(&vectors, d as u32, rng)
}

/// Fraction of the sample a concept mislabels.
pub fn concept_empirical_error(concept: impl Fn(u64) -> u8, sample: &[LabeledExample]) -> f64 {
    if sample.is_empty() {
        return 0.0;
    }
    let wrong = sample.iter().filter(|e| concept(e.x) != e.label).count();
    wrong as f64 / sample.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curator::parity_of;
    use rand::Rng;

    fn parity_sample(c: u32, k_star: u64, count: usize, seed: u64) -> Vec<LabeledExample> {
        let mut rng = RngStream::for_datagen(seed, 0);
        (0..count)
            .map(|_| {
                let x = rng.random_range(0..(1u64 << c));
                LabeledExample { x, label: parity_of(k_star, x) }
            })
            .collect()
    }

    #[test]
    fn exact_argmax_breaks_ties_low() {
        let vectors = vec![0b11u64; 10];
        let mut rng = RngStream::for_datagen(1, 0);
        assert_eq!(ExactArgmax.select(&vectors, 2, &mut rng).unwrap(), 0);
    }

    #[test]
    fn reduction_with_exact_solver_recovers_the_target_parity() {
        let (c, k_star) = (4u32, 0b1011u64);
        let sample = parity_sample(c, k_star, 500, 5);
        let mut rng = RngStream::for_datagen(5, 1);
        let chosen = reduce_learning_to_selection(
            &ExactArgmax,
            1 << c,
            |i, x| parity_of(i as u64, x),
            &sample,
            &mut rng,
        )
        .unwrap();
        assert_eq!(chosen as u64, k_star);
        assert_eq!(
            concept_empirical_error(|x| parity_of(chosen as u64, x), &sample),
            0.0
        );
    }

    #[test]
    fn em_solver_matches_exact_solver_at_high_eps() {
        let (c, k_star) = (4u32, 0b0110u64);
        let sample = parity_sample(c, k_star, 400, 9);
        let mut rng_a = RngStream::for_datagen(9, 1);
        let mut rng_b = RngStream::for_datagen(9, 2);
        let exact = reduce_learning_to_selection(
            &ExactArgmax,
            1 << c,
            |i, x| parity_of(i as u64, x),
            &sample,
            &mut rng_a,
        )
        .unwrap();
        let em = reduce_learning_to_selection(
            &EmSolver { eps: 100.0 },
            1 << c,
            |i, x| parity_of(i as u64, x),
            &sample,
            &mut rng_b,
        )
        .unwrap();
        assert_eq!(exact, em);
    }

    #[test]
    fn oversized_class_is_rejected() {
        let sample = parity_sample(2, 1, 10, 3);
        let mut rng = RngStream::for_datagen(3, 1);
        assert!(reduce_learning_to_selection(
            &ExactArgmax,
            65,
            |i, x| parity_of(i as u64, x),
            &sample,
            &mut rng
        )
        .is_err());
    }
}
