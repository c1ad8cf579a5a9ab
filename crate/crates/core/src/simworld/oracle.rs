//! Closed-form companions for the halfspace world.
//!
//! For a point at signed distance `D > 0` from the boundary, isotropic
//! Gaussian noise of scale `alpha` keeps the label with probability
//! `Phi(D / alpha)`. The largest `alpha` that keeps it with probability at
//! least `eta` is therefore `D / Phi^-1(eta)` for `eta > 0.5`, and unbounded
//! otherwise.

use statrs::function::erf::erf;

use super::{dot, Region, WorldSpec};
use crate::error::{Error, Result};

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Inverse standard normal CDF by bisection on the CDF, to an interval width of 1e-10.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0, 1)");
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Distance of `point` from the halfspace boundary (always non-negative).
pub fn boundary_distance(world: &WorldSpec, point: &[f64]) -> Result<f64> {
    match &world.region {
        Region::Halfspace { normal, offset, .. } => {
            let norm = dot(normal, normal).sqrt();
            Ok((dot(normal, point) - offset).abs() / norm)
        }
        _ => Err(Error::UnsupportedWorld),
    }
}

/// Probability that a point at distance `distance` keeps its label under
/// noise of scale `alpha`.
pub fn stay_probability(distance: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return if distance > 0.0 { 1.0 } else { 0.5 };
    }
    normal_cdf(distance / alpha)
}

/// Analytic sampling radius `D / Phi^-1(eta)`; `+inf` when `eta <= 0.5`.
pub fn oracle_radius(world: &WorldSpec, point: &[f64], eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::precondition("eta must lie in (0, 1)"));
    }
    if point.len() != world.dim {
        return Err(Error::precondition("point dimension differs from world dimension"));
    }
    let d = boundary_distance(world, point)?;
    if d <= 0.0 {
        return Err(Error::precondition("point lies on the boundary"));
    }
    if eta <= 0.5 {
        return Ok(f64::INFINITY);
    }
    Ok(d / normal_quantile(eta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> WorldSpec {
        WorldSpec::halfspace(vec![1.0, 0.0], 0.0, "neg", "pos")
    }

    #[test]
    fn cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let c = normal_cdf(1.0);
        assert!((c - 0.841_344_746_068_542_9).abs() < 1e-10, "{c}");
        assert!((normal_quantile(0.7) - 0.524_400_512_708_041).abs() < 1e-9);
    }

    #[test]
    fn radius_for_unit_distance() {
        let r = oracle_radius(&world(), &[1.0, 0.0], 0.7).unwrap();
        assert!((r - 1.9069).abs() < 1e-4, "{r}");
    }

    #[test]
    fn radius_is_monotone_in_eta_and_linear_in_distance() {
        let w = world();
        let mut prev = f64::INFINITY;
        for eta in [0.55, 0.7, 0.9, 0.99, 0.999_999] {
            let r = oracle_radius(&w, &[1.0, 0.0], eta).unwrap();
            assert!(r < prev);
            prev = r;
        }
        assert!(prev < 0.25);
        let r1 = oracle_radius(&w, &[1.0, 0.0], 0.8).unwrap();
        let r2 = oracle_radius(&w, &[2.0, 5.0], 0.8).unwrap();
        assert!((r2 - 2.0 * r1).abs() < 1e-9);
    }

    #[test]
    fn low_eta_is_unbounded() {
        assert_eq!(oracle_radius(&world(), &[1.0, 0.0], 0.5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn other_worlds_unsupported() {
        let w = WorldSpec::constant(2, "A");
        assert!(matches!(oracle_radius(&w, &[1.0, 0.0], 0.7), Err(Error::UnsupportedWorld)));
    }
}
