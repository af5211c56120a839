//! The slice cost, the c-exponential chart, Loeper lifts, bisector
//! half-planes, periodic replication, and the chart image of the domain.
//!
//! All cell geometry lives in a single chart based at the reference point
//! y = (0, 1). In that chart the cost difference between any two seeds is
//! affine, so every bisector is a straight line; only the physical domain's
//! top and bottom walls become curved (parallel parabolas).

use crate::error::SgError;
use crate::Result;
use serde::{Deserialize, Serialize};

pub type Vec2 = nalgebra::Vector2<f64>;
/// Point in the c-exponential chart; `x` is p1, `y` is p2.
pub type ChartPoint = Vec2;

/// Non-dimensional cost coefficients plus the additive constant.
/// The cost is `c(x, z) = F²/(2z₂)·(x₁−z₁)² + G·x₂/z₂ − c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub f: f64,
    pub g: f64,
    pub c0: f64,
}

impl CostParams {
    pub fn unit(c0: f64) -> Self {
        CostParams { f: 1.0, g: 1.0, c0 }
    }

    #[inline]
    pub fn f2(&self) -> f64 {
        self.f * self.f
    }

    /// Chart Jacobian determinant |det DΦ| = 1/(F²G); physical integrals are
    /// chart integrals multiplied by this factor.
    #[inline]
    pub fn jacobian(&self) -> f64 {
        1.0 / (self.f2() * self.g)
    }
}

/// Geostrophic particle position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub z1: f64,
    pub z2: f64,
}

impl Seed {
    pub fn new(z1: f64, z2: f64) -> Result<Self> {
        if z2 > 0.0 {
            Ok(Seed { z1, z2 })
        } else {
            Err(SgError::SingularSeed { z2 })
        }
    }
}

/// The lift turning cost comparisons into Euclidean power-diagram
/// comparisons in the chart: c(Φ(p), z) − w = ‖p − y‖² − ‖p‖² − ψ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoeperLift {
    pub y_lift: Vec2,
    pub psi: f64,
}

/// Closed half-plane { p : normal·p ≤ offset }.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub normal: Vec2,
    pub offset: f64,
}

impl HalfPlane {
    /// Signed distance surrogate: negative inside, zero on the boundary.
    #[inline]
    pub fn excess(&self, p: Vec2) -> f64 {
        self.normal.dot(&p) - self.offset
    }
}

/// The physical slice domain (−half_width, half_width] × [0, height] in
/// non-dimensional coordinates; periodic in the first coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceDomain {
    pub half_width: f64,
    pub height: f64,
}

impl SliceDomain {
    pub fn new(half_width: f64, height: f64) -> Result<Self> {
        if half_width > 0.0 && height > 0.0 {
            Ok(SliceDomain { half_width, height })
        } else {
            Err(SgError::Config(format!(
                "domain extents must be positive, got half_width={half_width}, height={height}"
            )))
        }
    }

    /// Period of the horizontal coordinate.
    #[inline]
    pub fn period(&self) -> f64 {
        2.0 * self.half_width
    }

    /// Physical area |X| = 2·half_width·height.
    #[inline]
    pub fn area(&self) -> f64 {
        self.period() * self.height
    }

    /// Wraps a horizontal coordinate into (−half_width, half_width].
    pub fn wrap(&self, x1: f64) -> f64 {
        let p = self.period();
        let mut v = x1 - p * (x1 / p).round();
        if v <= -self.half_width {
            v += p;
        }
        v
    }
}

/// Slice cost c(x, z). Errors on a singular seed (z2 ≤ 0).
pub fn cost(x: Vec2, z: Seed, cp: &CostParams) -> Result<f64> {
    if !(z.z2 > 0.0) {
        return Err(SgError::SingularSeed { z2: z.z2 });
    }
    let dx = x.x - z.z1;
    Ok(cp.f2() / (2.0 * z.z2) * dx * dx + cp.g * x.y / z.z2 - cp.c0)
}

/// Slice cost with the minimal periodic image of x₁ − z₁.
pub fn cost_periodic(x: Vec2, z: Seed, cp: &CostParams, period: f64) -> Result<f64> {
    if !(z.z2 > 0.0) {
        return Err(SgError::SingularSeed { z2: z.z2 });
    }
    let mut dx = x.x - z.z1;
    dx -= period * (dx / period).round();
    Ok(cp.f2() / (2.0 * z.z2) * dx * dx + cp.g * x.y / z.z2 - cp.c0)
}

/// Chart map Φ(p) = (p₁/F², (p₂ − p₁²/(2F²))/G), based at y = (0, 1).
pub fn chart_forward(p: ChartPoint, cp: &CostParams) -> Vec2 {
    let f2 = cp.f2();
    Vec2::new(p.x / f2, (p.y - p.x * p.x / (2.0 * f2)) / cp.g)
}

/// Inverse chart map Φ⁻¹(x) = (F²x₁, G·x₂ + F²x₁²/2).
pub fn chart_inverse(x: Vec2, cp: &CostParams) -> ChartPoint {
    let f2 = cp.f2();
    Vec2::new(f2 * x.x, cp.g * x.y + f2 * x.x * x.x / 2.0)
}

/// Lift of a weighted seed into power-diagram form.
pub fn loeper_lift(z: Seed, w: f64, cp: &CostParams) -> Result<LoeperLift> {
    if !(z.z2 > 0.0) {
        return Err(SgError::SingularSeed { z2: z.z2 });
    }
    let a = z.z1 / (2.0 * z.z2);
    let b = 1.0 / (2.0 * z.z2);
    let psi = w + a * a + b * b - cp.f2() * z.z1 * z.z1 / (2.0 * z.z2) + cp.c0;
    Ok(LoeperLift { y_lift: Vec2::new(a, -b), psi })
}

/// Chart half-plane where cell i beats cell j:
/// { p : 2p·(yʲ − yⁱ) ≤ ψⁱ − ψʲ + ‖yʲ‖² − ‖yⁱ‖² }.
pub fn bisector_halfplane(lift_i: &LoeperLift, lift_j: &LoeperLift) -> Result<HalfPlane> {
    let d = lift_j.y_lift - lift_i.y_lift;
    if d.norm_squared() < 1e-28 {
        return Err(SgError::DegeneratePair(format!(
            "coincident lifts at y = ({}, {})",
            lift_i.y_lift.x, lift_i.y_lift.y
        )));
    }
    let offset = lift_i.psi - lift_j.psi + lift_j.y_lift.norm_squared()
        - lift_i.y_lift.norm_squared();
    Ok(HalfPlane { normal: 2.0 * d, offset })
}

/// Lift point alone: y = (z₁/(2z₂), −1/(2z₂)).
#[inline]
pub fn lift_point(z: Seed, _cp: &CostParams) -> Vec2 {
    Vec2::new(z.z1 / (2.0 * z.z2), -1.0 / (2.0 * z.z2))
}

/// Same half-plane as [`bisector_halfplane`], computed from seed and weight
/// differences so the large common terms of ψ (the additive cost constant,
/// any common weight offset) never enter the arithmetic:
/// offset = (wᵢ − wⱼ) + (F²/2)(z₁ⱼ²/z₂ⱼ − z₁ᵢ²/z₂ᵢ). With deep columns
/// (z₂ ≫ 1) the lifts cluster within ~1/z₂ of each other and the generic
/// construction loses the bisector position to cancellation; this form does
/// not.
pub fn bisector_from_weighted_seeds(
    zi: Seed,
    wi: f64,
    zj: Seed,
    wj: f64,
    cp: &CostParams,
) -> Result<HalfPlane> {
    let normal = Vec2::new(
        zj.z1 / zj.z2 - zi.z1 / zi.z2,
        (zj.z2 - zi.z2) / (zi.z2 * zj.z2),
    );
    if normal.norm_squared() < 1e-28 * (1.0 + lift_point(zi, cp).norm_squared()) {
        return Err(SgError::DegeneratePair(format!(
            "coincident seeds near z = ({}, {})",
            zi.z1, zi.z2
        )));
    }
    let offset = (wi - wj)
        + 0.5 * cp.f2() * (zj.z1 * zj.z1 / zj.z2 - zi.z1 * zi.z1 / zi.z2);
    Ok(HalfPlane { normal, offset })
}

/// A periodic image of a source seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicatedSeed {
    pub seed: Seed,
    /// Index of the source seed.
    pub source: usize,
    /// Horizontal shift applied: seed.z1 = source z1 + shift.
    pub shift: f64,
}

/// Replicates every seed at shifts k·period for k ∈ {−copies, …, copies}.
pub fn replicate_periodic(seeds: &[Seed], period: f64, copies: i32) -> Vec<ReplicatedSeed> {
    assert!(period > 0.0 && copies >= 1);
    let mut out = Vec::with_capacity(seeds.len() * (2 * copies as usize + 1));
    for k in -copies..=copies {
        let shift = k as f64 * period;
        for (i, z) in seeds.iter().enumerate() {
            out.push(ReplicatedSeed {
                seed: Seed { z1: z.z1 + shift, z2: z.z2 },
                source: i,
                shift,
            });
        }
    }
    out
}

/// Bottom chart boundary p₂ = p₁²/(2F²) (image of the physical floor x₂=0).
#[inline]
pub fn band_lower(p1: f64, cp: &CostParams) -> f64 {
    p1 * p1 / (2.0 * cp.f2())
}

/// Top chart boundary p₂ = G·height + p₁²/(2F²) (image of the lid).
#[inline]
pub fn band_upper(p1: f64, cp: &CostParams, domain: &SliceDomain) -> f64 {
    cp.g * domain.height + p1 * p1 / (2.0 * cp.f2())
}

/// Half-plane preview of the chart image of the domain: side walls are
/// exact; the bottom parabola is under-approximated by `n_segments`
/// inscribed secants, the top parabola by `n_segments` inscribed tangents
/// (both one-sided, so the polygon is inscribed in the true region).
///
/// Production tessellation does not use this approximation — cells carry
/// exact parabolic arc edges — but the preview is kept for debugging and
/// for polygon-only pipelines.
pub fn domain_boundary_chart(
    domain: &SliceDomain,
    cp: &CostParams,
    n_segments: usize,
) -> Vec<HalfPlane> {
    assert!(n_segments >= 1);
    let a = cp.f2() * domain.half_width;
    let f2 = cp.f2();
    let mut planes = vec![
        // right wall p1 ≤ a, left wall p1 ≥ −a
        HalfPlane { normal: Vec2::new(1.0, 0.0), offset: a },
        HalfPlane { normal: Vec2::new(-1.0, 0.0), offset: a },
    ];
    // Bottom: region above each chord of p2 = p1²/(2F²).
    for k in 0..n_segments {
        let u0 = -a + 2.0 * a * k as f64 / n_segments as f64;
        let u1 = -a + 2.0 * a * (k + 1) as f64 / n_segments as f64;
        let slope = (u0 + u1) / (2.0 * f2);
        let intercept = -u0 * u1 / (2.0 * f2);
        planes.push(HalfPlane { normal: Vec2::new(slope, -1.0), offset: -intercept });
    }
    // Top: region below each tangent of p2 = G·height + p1²/(2F²),
    // tangency points at segment midpoints.
    for k in 0..n_segments {
        let u = -a + 2.0 * a * (k as f64 + 0.5) / n_segments as f64;
        planes.push(HalfPlane {
            normal: Vec2::new(-u / f2, 1.0),
            offset: cp.g * domain.height - u * u / (2.0 * f2),
        });
    }
    planes
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bench_cp() -> CostParams {
        CostParams::unit(1.0)
    }

    #[test]
    fn cost_direct_evaluations() {
        let cp = bench_cp();
        let z = Seed { z1: 0.0, z2: 1.0 };
        assert_relative_eq!(cost(Vec2::new(1.0, 1.0), z, &cp).unwrap(), 0.5);
        assert_relative_eq!(cost(Vec2::new(0.0, 0.0), z, &cp).unwrap(), -1.0);
        // quadratic term vanishes when x1 = z1
        let z2 = Seed { z1: 0.3, z2: 2.0 };
        let c = cost(Vec2::new(0.3, 0.7), z2, &cp).unwrap();
        assert_relative_eq!(c, 0.7 / 2.0 - 1.0, max_relative = 1e-15);
    }

    #[test]
    fn cost_rejects_singular_seed() {
        let cp = bench_cp();
        assert!(matches!(
            cost(Vec2::new(0.0, 0.0), Seed { z1: 0.0, z2: 0.0 }, &cp),
            Err(SgError::SingularSeed { .. })
        ));
    }

    #[test]
    fn cost_periodic_uses_minimal_image() {
        let cp = bench_cp();
        let z = Seed { z1: 0.9, z2: 1.0 };
        let c1 = cost_periodic(Vec2::new(-0.9, 0.0), z, &cp, 2.0).unwrap();
        // minimal image of −0.9 − 0.9 = −1.8 is +0.2
        let c2 = cost(Vec2::new(1.1, 0.0), z, &cp).unwrap();
        assert_relative_eq!(c1, c2, max_relative = 1e-14);
    }

    #[test]
    fn chart_maps_and_roundtrip() {
        let cp = bench_cp();
        let x = chart_forward(Vec2::new(2.0, 3.0), &cp);
        assert_relative_eq!(x.x, 2.0);
        assert_relative_eq!(x.y, 1.0);
        assert_relative_eq!(chart_forward(Vec2::new(0.0, 5.0), &cp).y, 5.0);
        let p = chart_inverse(Vec2::new(2.0, 1.0), &cp);
        assert_relative_eq!(p.x, 2.0);
        assert_relative_eq!(p.y, 3.0);

        let cp2 = CostParams { f: 1.7, g: 0.6, c0: 0.2 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let p = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..6.0));
            let back = chart_inverse(chart_forward(p, &cp2), &cp2);
            assert_relative_eq!(back.x, p.x, epsilon = 1e-12);
            assert_relative_eq!(back.y, p.y, epsilon = 1e-12);
        }
    }

    #[test]
    fn floor_maps_to_parabola() {
        let cp = bench_cp();
        for x1 in [-1.0, -0.2, 0.5, 1.0] {
            let p = chart_inverse(Vec2::new(x1, 0.0), &cp);
            assert_relative_eq!(p.y, p.x * p.x / 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn lift_values_and_identity() {
        let cp = CostParams::unit(0.0);
        let l1 = loeper_lift(Seed { z1: 0.0, z2: 1.0 }, 0.0, &cp).unwrap();
        assert_relative_eq!(l1.y_lift.x, 0.0);
        assert_relative_eq!(l1.y_lift.y, -0.5);
        assert_relative_eq!(l1.psi, 0.25);
        let l2 = loeper_lift(Seed { z1: 0.0, z2: 2.0 }, 0.0, &cp).unwrap();
        assert_relative_eq!(l2.y_lift.y, -0.25);
        assert_relative_eq!(l2.psi, 1.0 / 16.0);

        // c(Φ(p), z) − w = ‖p − y‖² − ‖p‖² − ψ at random points and params
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let cp = CostParams {
                f: rng.gen_range(0.5..2.0),
                g: rng.gen_range(0.5..2.0),
                c0: rng.gen_range(-1.0..1.0),
            };
            let z = Seed { z1: rng.gen_range(-1.0..1.0), z2: rng.gen_range(0.2..3.0) };
            let w = rng.gen_range(-1.0..1.0);
            let lift = loeper_lift(z, w, &cp).unwrap();
            let p = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..4.0));
            let lhs = cost(chart_forward(p, &cp), z, &cp).unwrap() - w;
            let rhs = (p - lift.y_lift).norm_squared() - p.norm_squared() - lift.psi;
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn chart_base_identity() {
        // c(Φ(p), (0,1)) = p2 − c0
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let cp = CostParams {
                f: rng.gen_range(0.5..2.0),
                g: rng.gen_range(0.5..2.0),
                c0: rng.gen_range(-1.0..1.0),
            };
            let p = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..4.0));
            let c = cost(chart_forward(p, &cp), Seed { z1: 0.0, z2: 1.0 }, &cp).unwrap();
            assert_relative_eq!(c, p.y - cp.c0, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn bisector_matches_worked_example() {
        // seeds (0,1) and (0,2), equal weights: interface is p2 = 0 with
        // cell i below.
        let cp = CostParams::unit(0.4);
        let li = loeper_lift(Seed { z1: 0.0, z2: 1.0 }, 0.3, &cp).unwrap();
        let lj = loeper_lift(Seed { z1: 0.0, z2: 2.0 }, 0.3, &cp).unwrap();
        let hp = bisector_halfplane(&li, &lj).unwrap();
        // normalize: normal = (0, 1/2), offset = 0 → p2 ≤ 0
        assert_relative_eq!(hp.normal.x, 0.0, epsilon = 1e-15);
        assert!(hp.normal.y > 0.0);
        assert_relative_eq!(hp.offset / hp.normal.y, 0.0, epsilon = 1e-14);
        // i on the ≤ side: a point below the line has negative excess
        assert!(hp.excess(Vec2::new(0.3, -0.5)) < 0.0);

        // swapping flips the inequality
        let hp_swapped = bisector_halfplane(&lj, &li).unwrap();
        assert_relative_eq!(hp_swapped.normal.x, -hp.normal.x, epsilon = 1e-15);
        assert_relative_eq!(hp_swapped.normal.y, -hp.normal.y, epsilon = 1e-15);
        assert_relative_eq!(hp_swapped.offset, -hp.offset, epsilon = 1e-15);
    }

    #[test]
    fn raising_weight_enlarges_cell() {
        let cp = bench_cp();
        let z_i = Seed { z1: -0.2, z2: 1.3 };
        let z_j = Seed { z1: 0.4, z2: 2.1 };
        let base = bisector_halfplane(
            &loeper_lift(z_i, 0.0, &cp).unwrap(),
            &loeper_lift(z_j, 0.0, &cp).unwrap(),
        )
        .unwrap();
        let delta = 0.05;
        let raised = bisector_halfplane(
            &loeper_lift(z_i, delta, &cp).unwrap(),
            &loeper_lift(z_j, 0.0, &cp).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(raised.normal.x, base.normal.x, epsilon = 1e-15);
        assert_relative_eq!(raised.offset - base.offset, delta, epsilon = 1e-14);
    }

    #[test]
    fn bisector_on_boundary_separates_costs() {
        // the excess sign must agree with the raw cost comparison
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let cp = CostParams {
                f: rng.gen_range(0.6..1.5),
                g: rng.gen_range(0.6..1.5),
                c0: rng.gen_range(-1.0..1.0),
            };
            let zi = Seed { z1: rng.gen_range(-1.0..1.0), z2: rng.gen_range(0.3..3.0) };
            let zj = Seed { z1: rng.gen_range(-1.0..1.0), z2: rng.gen_range(0.3..3.0) };
            let (wi, wj) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let li = loeper_lift(zi, wi, &cp).unwrap();
            let lj = loeper_lift(zj, wj, &cp).unwrap();
            let Ok(hp) = bisector_halfplane(&li, &lj) else { continue };
            let p = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..4.0));
            let x = chart_forward(p, &cp);
            let scores =
                cost(x, zi, &cp).unwrap() - wi - (cost(x, zj, &cp).unwrap() - wj);
            let ex = hp.excess(p);
            if scores.abs() > 1e-10 {
                assert_eq!(scores < 0.0, ex < 0.0, "half-plane side disagrees with cost order");
            }
        }
    }

    #[test]
    fn difference_form_bisector_matches_generic_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let cp = CostParams {
                f: rng.gen_range(0.6..1.5),
                g: rng.gen_range(0.6..1.5),
                c0: rng.gen_range(-1.0..1.0),
            };
            let zi = Seed { z1: rng.gen_range(-1.0..1.0), z2: rng.gen_range(0.3..3.0) };
            let zj = Seed { z1: rng.gen_range(-1.0..1.0), z2: rng.gen_range(0.3..3.0) };
            let (wi, wj) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let generic = bisector_halfplane(
                &loeper_lift(zi, wi, &cp).unwrap(),
                &loeper_lift(zj, wj, &cp).unwrap(),
            )
            .unwrap();
            let direct = bisector_from_weighted_seeds(zi, wi, zj, wj, &cp).unwrap();
            assert_relative_eq!(direct.normal.x, generic.normal.x, epsilon = 1e-13);
            assert_relative_eq!(direct.normal.y, generic.normal.y, epsilon = 1e-13);
            assert_relative_eq!(direct.offset, generic.offset, epsilon = 1e-12, max_relative = 1e-10);
            assert_relative_eq!(
                lift_point(zi, &cp).x,
                loeper_lift(zi, wi, &cp).unwrap().y_lift.x
            );
            assert_relative_eq!(
                lift_point(zi, &cp).y,
                loeper_lift(zi, wi, &cp).unwrap().y_lift.y
            );
        }
    }

    #[test]
    fn difference_form_bisector_is_exact_for_deep_columns() {
        // z2 ~ 1000: all lifts cluster within ~1/z2 of the base point. Two
        // equal-weight seeds sharing z1 separate along the exact slack
        // equality line p2 = z1·p1 − F²z1²/2, independent of both z2 values;
        // the generic lift construction loses this line to cancellation.
        let cp = CostParams::unit(460.0);
        let z1 = 0.04;
        let zi = Seed { z1, z2: 990.0 };
        let zj = Seed { z1, z2: 1010.0 };
        let hp = bisector_from_weighted_seeds(zi, 0.2, zj, 0.2, &cp).unwrap();
        assert_relative_eq!(-hp.normal.x / hp.normal.y, z1, max_relative = 1e-13);
        let p_on = Vec2::new(z1, z1 * z1 / 2.0);
        assert!(hp.excess(p_on).abs() <= 1e-20);
        // the shallower column owns the region below the line
        assert!(hp.excess(Vec2::new(z1, z1 * z1 / 2.0 - 0.01)) < 0.0);
        assert!(hp.excess(Vec2::new(z1, z1 * z1 / 2.0 + 0.01)) > 0.0);
    }

    #[test]
    fn degenerate_pair_is_rejected() {
        let cp = bench_cp();
        let z = Seed { z1: 0.1, z2: 1.0 };
        let l1 = loeper_lift(z, 0.0, &cp).unwrap();
        let l2 = loeper_lift(z, 0.7, &cp).unwrap(); // same point, different weight
        assert!(matches!(bisector_halfplane(&l1, &l2), Err(SgError::DegeneratePair(_))));
    }

    #[test]
    fn gauge_shift_leaves_bisectors_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let kappa0 = rng.gen_range(-2.0..2.0);
            let cp = CostParams { f: 1.2, g: 0.9, c0: 0.3 };
            let cp_shift = CostParams { c0: cp.c0 + kappa0, ..cp };
            let zi = Seed { z1: rng.gen_range(-1.0..1.0), z2: rng.gen_range(0.3..3.0) };
            let zj = Seed { z1: rng.gen_range(-1.0..1.0), z2: rng.gen_range(0.3..3.0) };
            let (wi, wj) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let base = bisector_halfplane(
                &loeper_lift(zi, wi, &cp).unwrap(),
                &loeper_lift(zj, wj, &cp).unwrap(),
            )
            .unwrap();
            // density-preserving gauge: c0 ↑ κ₀ paired with w ↓ κ₀
            let paired = bisector_halfplane(
                &loeper_lift(zi, wi - kappa0, &cp_shift).unwrap(),
                &loeper_lift(zj, wj - kappa0, &cp_shift).unwrap(),
            )
            .unwrap();
            assert_relative_eq!(paired.offset, base.offset, epsilon = 1e-14, max_relative = 1e-14);
            // common shift of weights alone also cancels in ψ differences
            let w_only = bisector_halfplane(
                &loeper_lift(zi, wi + kappa0, &cp).unwrap(),
                &loeper_lift(zj, wj + kappa0, &cp).unwrap(),
            )
            .unwrap();
            assert_relative_eq!(w_only.offset, base.offset, epsilon = 1e-14, max_relative = 1e-14);
        }
    }

    #[test]
    fn loeper_affinity_second_differences_vanish() {
        // p ↦ c(Φ(p), zi) − c(Φ(p), zj) is affine: second differences are 0
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let cp = CostParams {
                f: rng.gen_range(0.5..2.0),
                g: rng.gen_range(0.5..2.0),
                c0: rng.gen_range(-1.0..1.0),
            };
            let zi = Seed { z1: rng.gen_range(-1.0..1.0), z2: rng.gen_range(0.2..3.0) };
            let zj = Seed { z1: rng.gen_range(-1.0..1.0), z2: rng.gen_range(0.2..3.0) };
            let u = |p: Vec2| {
                cost(chart_forward(p, &cp), zi, &cp).unwrap()
                    - cost(chart_forward(p, &cp), zj, &cp).unwrap()
            };
            let p = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..4.0));
            let h = 0.37;
            for dir in [Vec2::new(h, 0.0), Vec2::new(0.0, h), Vec2::new(h, -h)] {
                let dd = u(p + 2.0 * dir) - 2.0 * u(p + dir) + u(p);
                let scale = u(p).abs().max(1.0);
                assert!(
                    dd.abs() <= 1e-10 * scale,
                    "second difference {dd} not flat along {dir:?}"
                );
            }
        }
    }

    #[test]
    fn replicate_enumerates_tagged_copies() {
        let seeds = vec![Seed { z1: 0.1, z2: 1.0 }, Seed { z1: -0.4, z2: 2.0 }];
        let one = replicate_periodic(&seeds[..1], 2.0, 1);
        assert_eq!(one.len(), 3);
        let shifts: Vec<f64> = one.iter().map(|r| r.shift).collect();
        assert_eq!(shifts, vec![-2.0, 0.0, 2.0]);
        assert!(one.iter().all(|r| r.source == 0));
        assert_relative_eq!(one[0].seed.z1, -1.9);
        let two = replicate_periodic(&seeds, 2.0, 1);
        assert_eq!(two.len(), 6);
    }

    #[test]
    fn boundary_preview_single_secant() {
        let cp = bench_cp();
        let domain = SliceDomain::new(1.0, 1.0).unwrap();
        let planes = domain_boundary_chart(&domain, &cp, 1);
        assert_eq!(planes.len(), 4);
        // walls p1 ≤ 1 and −p1 ≤ 1
        assert_relative_eq!(planes[0].offset, 1.0);
        assert_relative_eq!(planes[1].offset, 1.0);
        // single bottom secant through (−1, 1/2) and (1, 1/2): p2 ≥ 1/2
        let bottom = &planes[2];
        assert_relative_eq!(bottom.normal.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(bottom.normal.y, -1.0);
        assert_relative_eq!(bottom.offset, -0.5);
        for p1 in [-1.0, 1.0] {
            assert_relative_eq!(bottom.excess(Vec2::new(p1, 0.5)), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn boundary_preview_is_inscribed() {
        let cp = CostParams { f: 1.3, g: 0.8, c0: 0.0 };
        let domain = SliceDomain::new(0.7, 1.1).unwrap();
        let planes = domain_boundary_chart(&domain, &cp, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cp.f2() * domain.half_width;
        for _ in 0..2000 {
            let p1 = rng.gen_range(-a..a);
            let p2 = rng.gen_range(-0.5..(cp.g * domain.height + a * a / (2.0 * cp.f2()) + 0.5));
            let p = Vec2::new(p1, p2);
            let in_polygon = planes.iter().all(|hp| hp.excess(p) <= 1e-12);
            if in_polygon {
                // every polygon point lies in the true curved region
                assert!(p2 >= band_lower(p1, &cp) - 1e-12);
                assert!(p2 <= band_upper(p1, &cp, &domain) + 1e-12);
            }
        }
    }
}
