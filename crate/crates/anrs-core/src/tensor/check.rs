//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

/// Max relative error between `analytic` and central finite differences of
/// `f` over every coordinate of `theta`.
///
/// The relative error at coordinate `i` is
/// `|analytic[i] − (f(θ+εeᵢ) − f(θ−εeᵢ))/2ε| / (|analytic[i]| + 1e-8)`.
/// `f` must be deterministic (dropout disabled, fixed inputs).
pub fn finite_difference_check<F>(mut f: F, theta: &[f64], analytic: &[f64], epsilon: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len(), "gradient length mismatch");
    let mut work = theta.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..work.len() {
        let rel = coord_rel_error(&mut f, &mut work, analytic, epsilon, i);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

/// Same check over `max_coords` randomly sampled coordinates, for parameter
/// vectors too large to sweep exhaustively.
pub fn finite_difference_check_sampled<F, R>(
    mut f: F,
    theta: &[f64],
    analytic: &[f64],
    epsilon: f64,
    max_coords: usize,
    rng: &mut R,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
    R: Rng,
{
    assert_eq!(theta.len(), analytic.len(), "gradient length mismatch");
    if theta.len() <= max_coords {
        return finite_difference_check(f, theta, analytic, epsilon);
    }
    let mut work = theta.to_vec();
    let mut max_rel = 0.0f64;
    for i in sample(rng, theta.len(), max_coords) {
        let rel = coord_rel_error(&mut f, &mut work, analytic, epsilon, i);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

fn coord_rel_error<F>(
    f: &mut F,
    work: &mut [f64],
    analytic: &[f64],
    epsilon: f64,
    i: usize,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = work[i];
    work[i] = orig + epsilon;
    let fp = f(work);
    work[i] = orig - epsilon;
    let fm = f(work);
    work[i] = orig;
    let numeric = (fp - fm) / (2.0 * epsilon);
    (analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-8)
}
