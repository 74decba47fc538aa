//! Seeded random streams and weight initializers.
//!
//! Every random draw in the pipeline comes from a named ChaCha8 stream
//! derived from the master seed, so runs are reproducible and independent
//! stages do not perturb each other's randomness.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hash::fnv1a64;

/// Deterministic RNG for a named stage.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(stream.as_bytes()))
}

/// One sample from N(0, std²) via Box-Muller.
pub fn normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    let v: f64 = rng.random();
    std * (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| normal(rng, std)).collect()
}

/// Glorot-uniform values for a weight with the given fan-in and fan-out.
pub fn glorot_vec<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = {
            let mut r = stream_rng(7, "init");
            (0..4).map(|_| r.random()).collect()
        };
        let b: Vec<f64> = {
            let mut r = stream_rng(7, "init");
            (0..4).map(|_| r.random()).collect()
        };
        let c: Vec<f64> = {
            let mut r = stream_rng(7, "dropout");
            (0..4).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn normal_has_roughly_unit_scale() {
        let mut r = stream_rng(1, "test");
        let xs = normal_vec(&mut r, 4000, 1.0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");
    }
}
