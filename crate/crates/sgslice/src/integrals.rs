//! Cell integrals of the conjugate density: masses, moments, dual values and
//! the weight Hessian, all evaluated over c-Laguerre cell fragments.
//!
//! Every area integral that the solver needs reduces to a loop integral over
//! the fragment boundary: the slack t is affine in the chart, so for any g
//! with antiderivative Ĝ (Ĝ′ = g) the divergence theorem gives
//! ∫∫ g(t) dA = z₂ ∮ Ĝ(t) dp₁ on counter-clockwise loops. The reductions are
//! evaluated in anchored form — the integrand is Ĝ(t) − Ĝ(t_ref) with t_ref
//! the slack at the fragment's first vertex — which changes nothing exactly
//! (∮ const · dp₁ = 0 and more generally ∮ φ(p₁) dp₁ = 0 on closed loops)
//! but keeps the summands at the scale of the in-cell variation instead of
//! the absolute slack. A fiber-sweep 2D quadrature over the same fragments
//! provides an independent route used by tests and by the few quantities the
//! contract wants integrated in area form (Exner averages, the transport part
//! of the total energy).

use crate::chart::{chart_forward, ChartPoint, CostParams, Seed, SliceDomain, Vec2};
use crate::density::{ConjugateDensity, DensityRef};
use crate::error::SgError;
use crate::quad::gl_rule;
use crate::tess::{CellRegion, ChartPolygon, EdgeLabel, Tessellation};
use crate::Result;
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Gauss–Legendre points per smooth edge piece (and per direction in the
/// fiber sweep). Exact for the quadratic-cost density; ~1e−11 relative for
/// physical γ.
pub const DEFAULT_QUAD_ORDER: usize = 16;

/// Slack field t(p) = w − c(Φ(p), z) of one seed copy. c ∘ Φ is affine in the
/// chart point (the p₁² terms cancel), so t = t0 + t1·p₁ + t2·p₂.
///
/// `delta` computes t(p) − t(q) from coordinate offsets. In physical-scale
/// runs t0 is ~1e2 while the in-cell variation is ~1e−5; evaluating two
/// absolute slacks and subtracting would round the variation at the ulp of
/// t0, so every integration routine anchors at a reference vertex and works
/// with deltas.
#[derive(Debug, Clone, Copy)]
pub struct SlackAffine {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
}

impl SlackAffine {
    /// `z1_copy` is the owning copy's horizontal site, already shifted.
    pub fn new(z1_copy: f64, z2: f64, weight: f64, cp: &CostParams) -> Self {
        SlackAffine {
            t0: weight + cp.c0 - cp.f2() * z1_copy * z1_copy / (2.0 * z2),
            t1: z1_copy / z2,
            t2: -1.0 / z2,
        }
    }

    pub fn for_fragment(frag: &ChartPolygon, tess: &Tessellation) -> Self {
        let z = tess.sites[frag.owner];
        SlackAffine::new(z.z1 + frag.shift, z.z2, tess.weights[frag.owner], &tess.cp)
    }

    #[inline]
    pub fn eval(&self, p: ChartPoint) -> f64 {
        self.t0 + self.t1 * p.x + self.t2 * p.y
    }

    /// t(p) − t(q), exact in the offsets.
    #[inline]
    pub fn delta(&self, p: ChartPoint, q: ChartPoint) -> f64 {
        self.t1 * (p.x - q.x) + self.t2 * (p.y - q.y)
    }
}

/// One straight-or-arc boundary edge with its unit outward normal (arcs carry
/// the chord normal). Zero-length edges are dropped.
#[derive(Debug, Clone, Copy)]
pub struct EdgeSegment {
    pub a: ChartPoint,
    pub b: ChartPoint,
    pub normal: Vec2,
    pub label: EdgeLabel,
}

/// Edges of a counter-clockwise fragment ring; the interior lies left of
/// every a→b, so the outward normal is (Δp₂, −Δp₁)/‖Δp‖.
pub fn fragment_edges(frag: &ChartPolygon) -> Vec<EdgeSegment> {
    let n = frag.verts.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let a = frag.verts[k];
        let b = frag.verts[(k + 1) % n];
        let d = b - a;
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        out.push(EdgeSegment {
            a,
            b,
            normal: Vec2::new(d.y / len, -d.x / len),
            label: frag.labels[k],
        });
    }
    out
}

/// Parameters in (0,1) where the straight edge a→b crosses the kink t = 0.
/// At most one cut: t is affine along straight edges. Tangencies produce
/// none (the integrand is one-sidedly smooth there).
pub fn edge_kink_split(a: ChartPoint, b: ChartPoint, slack: &SlackAffine) -> Vec<f64> {
    let ta = slack.eval(a);
    let tb = slack.eval(b);
    if (ta > 0.0) == (tb > 0.0) || ta == tb {
        return vec![];
    }
    let u = ta / (ta - tb);
    if u > 1e-14 && u < 1.0 - 1e-14 {
        vec![u]
    } else {
        vec![]
    }
}

/// Slack along one edge as a polynomial in the edge parameter u ∈ [0,1],
/// anchored at the fragment's reference vertex: s(u) = s0 + b·u + c·u².
/// Straight edges are affine (c = 0); on parabola arcs the p₂ = p₁²/(2F²)
/// substitution makes t quadratic with c = t₂·Δp₁²/(2F²) exactly.
struct EdgeCurve {
    ax: f64,
    dx: f64,
    s0: f64,
    b: f64,
    c: f64,
}

impl EdgeCurve {
    fn new(
        a: ChartPoint,
        b: ChartPoint,
        label: EdgeLabel,
        slack: &SlackAffine,
        vref: ChartPoint,
        f2: f64,
    ) -> Self {
        let dx = b.x - a.x;
        let s0 = slack.delta(a, vref);
        let sb = slack.delta(b, vref);
        let c = match label {
            EdgeLabel::BottomArc | EdgeLabel::TopArc => slack.t2 * dx * dx / (2.0 * f2),
            _ => 0.0,
        };
        EdgeCurve { ax: a.x, dx, s0, b: sb - s0 - c, c }
    }

    #[inline]
    fn s_at(&self, u: f64) -> f64 {
        self.s0 + u * (self.b + u * self.c)
    }

    #[inline]
    fn p1_at(&self, u: f64) -> f64 {
        self.ax + u * self.dx
    }

    /// Cut parameters where t_ref + s(u) = 0, strictly inside (0,1), sorted.
    fn kink_cuts(&self, tref: f64) -> Vec<f64> {
        let ta = tref + self.s0;
        let mut cuts = Vec::new();
        if self.c == 0.0 {
            if self.b != 0.0 {
                let u = -ta / self.b;
                if u > 1e-14 && u < 1.0 - 1e-14 {
                    cuts.push(u);
                }
            }
        } else {
            let disc = self.b * self.b - 4.0 * self.c * ta;
            if disc > 0.0 {
                let q = -0.5 * (self.b + disc.sqrt().copysign(self.b));
                for u in [q / self.c, if q == 0.0 { f64::NAN } else { ta / q }] {
                    if u > 1e-14 && u < 1.0 - 1e-14 {
                        cuts.push(u);
                    }
                }
                cuts.sort_by(f64::total_cmp);
                if cuts.len() == 2 && cuts[1] - cuts[0] < 1e-12 {
                    cuts.pop();
                }
            }
        }
        cuts
    }
}

/// Loop integrals ∮ · dp₁ around one fragment, all with anchored integrands.
#[derive(Default)]
struct LoopSums {
    /// ∮ (f*(t) − f*(t_ref)) dp₁ → mass
    mass: f64,
    /// ∮ (H(t) − H(t_ref)) dp₁, H′ = f* → dual value
    dual: f64,
    /// ∮ ((f*)′(t) − (f*)′(t_ref)) dp₁ → ∫ (f*)″ (Hessian volume)
    vol: f64,
    /// ∮ (tσ^γ − t_ref σ^γ(t_ref)) dp₁ → ∫ σ^γ
    tsg: f64,
    /// ∮ (p₁ − F²z₁)(f* − f*_ref) dp₁ → seed-relative x₁ moment
    m1: f64,
    /// ∮ (p₁² − p₁_ref²)(f* − f*_ref) dp₁ → x₂ moment, parabola part
    p1sq: f64,
    /// ∮ B(t; t_ref) dp₁, B′ = (t − t_ref)σ → x₂ moment, slack part
    b2: f64,
}

fn fragment_loops(
    frag: &ChartPolygon,
    slack: &SlackAffine,
    dref: &DensityRef,
    z1c: f64,
    f2: f64,
    order: usize,
) -> LoopSums {
    let rule = gl_rule(order);
    let vref = frag.verts[0];
    let p1r = vref.x;
    let n = frag.verts.len();
    let mut acc = LoopSums::default();
    for k in 0..n {
        let a = frag.verts[k];
        let b = frag.verts[(k + 1) % n];
        if a.x == b.x {
            continue; // vertical edges carry no dp₁
        }
        let curve = EdgeCurve::new(a, b, frag.labels[k], slack, vref, f2);
        let mut lo = 0.0;
        for hi in curve.kink_cuts(dref.tref).into_iter().chain([1.0]) {
            if hi - lo > 1e-15 {
                for (&node, &wgt) in rule.nodes.iter().zip(&rule.weights) {
                    let u = lo + (hi - lo) * node;
                    let s = curve.s_at(u);
                    let p1 = curve.p1_at(u);
                    let w = wgt * (hi - lo) * curve.dx;
                    let df = dref.fstar_rel(s);
                    acc.mass += w * df;
                    acc.dual += w * dref.antideriv_rel(s);
                    acc.vol += w * dref.fstar_prime_rel(s);
                    acc.tsg += w * dref.t_sigma_gamma_rel(s);
                    acc.m1 += w * (p1 - f2 * z1c) * df;
                    acc.p1sq += w * (p1 - p1r) * (p1 + p1r) * df;
                    acc.b2 += w * dref.moment_aux_rel(s);
                }
            }
            lo = hi;
        }
    }
    acc
}

/// Integrals of the conjugate density over one cell, in physical measure.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellIntegrals {
    /// ∫ σ dx
    pub mass: f64,
    /// ∫ f*(t) dx
    pub dual_value: f64,
    /// ∫ (f*)″(t) dx, the area term of the Hessian diagonal
    pub hess_volume: f64,
    /// ∫ σ^γ dx
    pub sigma_gamma: f64,
    /// ∫ (x₁ − z₁) σ dx with x₁ measured from the owning copy's site, so the
    /// value is periodic-safe; centroid offset = m1_offset / mass
    pub m1_offset: f64,
    /// ∫ x₂ σ dx
    pub x2_moment: f64,
}

/// Boundary-reduced integrals over all fragments of one cell region.
pub fn region_integrals(
    region: &CellRegion,
    seed: Seed,
    weight: f64,
    cd: &ConjugateDensity,
    cp: &CostParams,
    _domain: &SliceDomain,
    order: usize,
) -> Result<CellIntegrals> {
    let f2 = cp.f2();
    let g = cp.g;
    let z2 = seed.z2;
    let mut out = CellIntegrals::default();
    for frag in &region.fragments {
        let z1c = seed.z1 + frag.shift;
        let slack = SlackAffine::new(z1c, z2, weight, cp);
        let vref = frag.verts[0];
        let dref = DensityRef::new(cd, slack.eval(vref));
        let sums = fragment_loops(frag, &slack, &dref, z1c, f2, order);

        let area_pref = z2 / (f2 * g);
        let frag_mass = area_pref * sums.mass;
        out.mass += frag_mass;
        out.dual_value += area_pref * sums.dual;
        out.hess_volume += area_pref * sums.vol;
        out.sigma_gamma += area_pref * cd.sigma_gamma_prefactor() * sums.tsg;
        out.m1_offset += z2 / (f2 * f2 * g) * sums.m1;
        // ∮ about the reference abscissa, recovered from the seed-relative
        // loop: the two differ by a constant × the mass loop.
        let xi_ref = sums.m1 + (f2 * z1c - vref.x) * sums.mass;
        let m2_off = (-z2 * z2 * sums.b2 + z1c * z2 * xi_ref - z2 / (2.0 * f2) * sums.p1sq)
            / (f2 * g * g);
        let x2_ref = (vref.y - vref.x * vref.x / (2.0 * f2)) / g;
        out.x2_moment += m2_off + x2_ref * frag_mass;
    }
    let finite = out.mass.is_finite()
        && out.dual_value.is_finite()
        && out.hess_volume.is_finite()
        && out.sigma_gamma.is_finite()
        && out.m1_offset.is_finite()
        && out.x2_moment.is_finite();
    if !finite {
        return Err(SgError::Numerics("cell integrals are not finite".into()));
    }
    if out.mass < -1e-12 {
        return Err(SgError::Numerics(format!(
            "cell mass {} is negative beyond roundoff",
            out.mass
        )));
    }
    Ok(out)
}

pub fn cell_integrals(
    tess: &Tessellation,
    i: usize,
    cd: &ConjugateDensity,
    order: usize,
) -> Result<CellIntegrals> {
    region_integrals(
        &tess.cells[i],
        tess.sites[i],
        tess.weights[i],
        cd,
        &tess.cp,
        &tess.domain,
        order,
    )
}

pub fn all_cell_integrals(
    tess: &Tessellation,
    cd: &ConjugateDensity,
    order: usize,
) -> Result<Vec<CellIntegrals>> {
    (0..tess.len())
        .into_par_iter()
        .map(|i| cell_integrals(tess, i, cd, order))
        .collect()
}

/// Cell mass alone (the Newton residual path needs nothing else).
pub fn cell_mass(
    tess: &Tessellation,
    i: usize,
    cd: &ConjugateDensity,
    order: usize,
) -> Result<f64> {
    Ok(cell_integrals(tess, i, cd, order)?.mass)
}

/// ∂𝒢/∂wᵢ of the Kantorovich dual: target mass minus current cell mass.
#[inline]
pub fn grad_entry(target_mass: f64, mass: f64) -> f64 {
    target_mass - mass
}

/// Mass centroid of cell `i` in physical coordinates. x₁ is reported in the
/// owning seed's frame (site + offset) and may leave the fundamental domain;
/// callers that want a wrapped value wrap it themselves.
pub fn cell_centroid(tess: &Tessellation, i: usize, ints: &CellIntegrals) -> Result<Vec2> {
    if ints.mass <= 0.0 {
        return Err(SgError::UndefinedCentroid { index: i });
    }
    Ok(Vec2::new(
        tess.sites[i].z1 + ints.m1_offset / ints.mass,
        ints.x2_moment / ints.mass,
    ))
}

/// Specific internal energy of cell `i`,
/// E_I = (Π₀·m − exner_coeff·∫σ^γ) / m.
pub fn cell_internal_energy(
    i: usize,
    ints: &CellIntegrals,
    cd: &ConjugateDensity,
    pi0: f64,
) -> Result<f64> {
    if ints.mass <= 0.0 {
        return Err(SgError::UndefinedCentroid { index: i });
    }
    Ok((pi0 * ints.mass - cd.exner_coeff * ints.sigma_gamma) / ints.mass)
}

/// ∫∫ g(t(p), p) dA over one fragment in chart measure, by a fiber sweep:
/// Gauss–Legendre across p₁ strips split at vertices and kink crossings,
/// and along each vertical fiber split at the kink height. Independent of
/// the boundary reductions — this is the verification route.
pub fn polygon_quadrature_2d(
    frag: &ChartPolygon,
    slack: &SlackAffine,
    cp: &CostParams,
    domain: &SliceDomain,
    order: usize,
    mut g: impl FnMut(f64, ChartPoint) -> f64,
) -> f64 {
    let rule = gl_rule(order);
    let f2 = cp.f2();
    let gh = cp.g * domain.height;
    let n = frag.verts.len();
    let vref = frag.verts[0];
    let tref = slack.eval(vref);

    let mut xs: Vec<f64> = frag.verts.iter().map(|v| v.x).collect();
    for k in 0..n {
        let a = frag.verts[k];
        let b = frag.verts[(k + 1) % n];
        if a.x != b.x {
            let curve = EdgeCurve::new(a, b, frag.labels[k], slack, vref, f2);
            for u in curve.kink_cuts(tref) {
                xs.push(curve.p1_at(u));
            }
        }
    }
    xs.sort_by(f64::total_cmp);
    let span = xs.last().unwrap() - xs[0];
    let tol = 1e-13 * (1.0 + span.abs());
    xs.dedup_by(|a, b| (*a - *b).abs() <= tol);

    let mut total = 0.0;
    for strip in xs.windows(2) {
        let (x0, x1) = (strip[0], strip[1]);
        if x1 - x0 <= tol {
            continue;
        }
        for (&nx, &wx) in rule.nodes.iter().zip(&rule.weights) {
            let xg = x0 + (x1 - x0) * nx;
            // fiber bounds: scan edges for crossings at p₁ = xg
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for k in 0..n {
                let a = frag.verts[k];
                let b = frag.verts[(k + 1) % n];
                let y = match frag.labels[k] {
                    EdgeLabel::BottomArc if (a.x - xg) * (b.x - xg) < 0.0 => {
                        xg * xg / (2.0 * f2)
                    }
                    EdgeLabel::TopArc if (a.x - xg) * (b.x - xg) < 0.0 => {
                        gh + xg * xg / (2.0 * f2)
                    }
                    _ if a.x != b.x && (a.x - xg) * (b.x - xg) < 0.0 => {
                        a.y + (b.y - a.y) * (xg - a.x) / (b.x - a.x)
                    }
                    _ => continue,
                };
                lo = lo.min(y);
                hi = hi.max(y);
            }
            if hi <= lo {
                continue;
            }
            // inner integral, split where the fiber crosses t = 0
            let mut cuts = [lo, hi, 0.0];
            let mut ncuts = 2;
            if slack.t2 != 0.0 {
                let ystar = lo - (tref + slack.delta(ChartPoint::new(xg, lo), vref)) / slack.t2;
                if ystar > lo && ystar < hi {
                    cuts = [lo, ystar, hi];
                    ncuts = 3;
                }
            }
            let mut fiber = 0.0;
            for piece in cuts[..ncuts].windows(2) {
                for (&ny, &wy) in rule.nodes.iter().zip(&rule.weights) {
                    let y = piece[0] + (piece[1] - piece[0]) * ny;
                    let p = ChartPoint::new(xg, y);
                    fiber += wy * (piece[1] - piece[0]) * g(slack.eval(p), p);
                }
            }
            total += wx * (x1 - x0) * fiber;
        }
    }
    total
}

/// ∫ g(t, x, z₁_copy) σ-free over cell `i` in *physical* measure; the closure
/// sees the slack, the physical point, and the owning copy's horizontal site
/// (the periodic image against which x₁ differences are minimal).
pub fn cell_quadrature_2d(
    tess: &Tessellation,
    i: usize,
    order: usize,
    mut g: impl FnMut(f64, Vec2, f64) -> f64,
) -> f64 {
    let cp = &tess.cp;
    let scale = 1.0 / (cp.f2() * cp.g);
    let mut total = 0.0;
    for frag in &tess.cells[i].fragments {
        let z1c = tess.sites[i].z1 + frag.shift;
        let slack = SlackAffine::new(z1c, tess.sites[i].z2, tess.weights[i], cp);
        total += polygon_quadrature_2d(frag, &slack, cp, &tess.domain, order, |t, p| {
            g(t, chart_forward(p, cp), z1c)
        });
    }
    total * scale
}

/// ∫ Π dx over cell `i` (Exner pressure against the cell's slack field).
pub fn cell_exner_integral(
    tess: &Tessellation,
    i: usize,
    cd: &ConjugateDensity,
    order: usize,
) -> f64 {
    cell_quadrature_2d(tess, i, order, |t, _x, _z1| cd.exner(t))
}

/// Hessian of the Kantorovich dual 𝒢 in the weights: symmetric, negative
/// semidefinite, with off-diagonal entries ∂²𝒢/∂wᵢ∂wⱼ = ∫_Γᵢⱼ σ/|∇u| ds ≥ 0
/// over the shared interface (u the cost difference of the two copies) and
/// diagonal −∫(f*)″ − Σⱼ offdiag. Every interface is integrated from both
/// owning fragments and averaged, which makes the matrix exactly symmetric;
/// self-image seams (periodic copies of the same seed) do not move when its
/// weight changes and are skipped.
pub fn dual_hessian(
    tess: &Tessellation,
    cd: &ConjugateDensity,
    ints: &[CellIntegrals],
    order: usize,
) -> Result<DMatrix<f64>> {
    let n = tess.len();
    let rule = gl_rule(order);
    let cp = &tess.cp;
    let f2 = cp.f2();

    let contribs: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = tess.sites[i];
            let mut list = Vec::new();
            for frag in &tess.cells[i].fragments {
                let z1i = zi.z1 + frag.shift;
                let slack = SlackAffine::new(z1i, zi.z2, tess.weights[i], cp);
                let vref = frag.verts[0];
                let tref = slack.eval(vref);
                let nv = frag.verts.len();
                for k in 0..nv {
                    let (j, shift_j) = match frag.labels[k] {
                        EdgeLabel::Neighbor { j, shift } if j != i => (j, shift),
                        _ => continue,
                    };
                    let a = frag.verts[k];
                    let b = frag.verts[(k + 1) % nv];
                    let dp = b - a;
                    if dp.norm() == 0.0 {
                        continue;
                    }
                    let zj = tess.sites[j];
                    let z1j = zj.z1 + shift_j;
                    // ∇ₓ of u = c(x, zᵢ) − c(x, zⱼ); the x₂ part is constant
                    let du_dx2 = cp.g * (1.0 / zi.z2 - 1.0 / zj.z2);
                    let curve = EdgeCurve::new(a, b, frag.labels[k], &slack, vref, f2);
                    let mut v = 0.0;
                    let mut lo = 0.0;
                    for hi in curve.kink_cuts(tref).into_iter().chain([1.0]) {
                        if hi - lo > 1e-15 {
                            for (&node, &wgt) in rule.nodes.iter().zip(&rule.weights) {
                                let u = lo + (hi - lo) * node;
                                let t = tref + curve.s_at(u);
                                let sigma = cd.fstar_prime(t);
                                if sigma != 0.0 {
                                    let p1 = a.x + u * dp.x;
                                    let x1 = p1 / f2;
                                    let du_dx1 =
                                        f2 * ((x1 - z1i) / zi.z2 - (x1 - z1j) / zj.z2);
                                    let grad2 = du_dx1 * du_dx1 + du_dx2 * du_dx2;
                                    if !(grad2 > 0.0) {
                                        return Err(SgError::DegeneratePair(format!(
                                            "cells {i} and {j} have a stationary cost \
                                             difference on their interface"
                                        )));
                                    }
                                    // physical arc length of the chart edge
                                    let tang = Vec2::new(
                                        dp.x / f2,
                                        (dp.y - p1 * dp.x / f2) / cp.g,
                                    );
                                    v += wgt * (hi - lo) * sigma * tang.norm()
                                        / grad2.sqrt();
                                }
                            }
                        }
                        lo = hi;
                    }
                    list.push((j, v));
                }
            }
            Ok(list)
        })
        .collect::<Result<_>>()?;

    let mut one_sided = DMatrix::<f64>::zeros(n, n);
    for (i, list) in contribs.iter().enumerate() {
        for &(j, v) in list {
            one_sided[(i, j)] += v;
        }
    }
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if j != i {
                let off = 0.5 * (one_sided[(i, j)] + one_sided[(j, i)]);
                h[(i, j)] = off;
                row_sum += off;
            }
        }
        h[(i, i)] = -ints[i].hess_volume - row_sum;
    }
    Ok(h)
}

/// Total energy Σᵢ [∫ c(x, zᵢ) σ dx + κ ∫ σ^γ dx]. The transport term is
/// integrated in area form (an independent evaluation of the cost), the
/// internal term reuses the reduced σ^γ integrals.
pub fn total_energy(
    tess: &Tessellation,
    cd: &ConjugateDensity,
    ints: &[CellIntegrals],
    order: usize,
) -> f64 {
    let f2 = tess.cp.f2();
    let (g, c0) = (tess.cp.g, tess.cp.c0);
    let per_cell: Vec<f64> = (0..tess.len())
        .into_par_iter()
        .map(|i| {
            let z2 = tess.sites[i].z2;
            let transport = cell_quadrature_2d(tess, i, order, |t, x, z1c| {
                let dx1 = x.x - z1c;
                let c = f2 / (2.0 * z2) * dx1 * dx1 + g * x.y / z2 - c0;
                c * cd.fstar_prime(t)
            });
            transport + cd.kappa * ints[i].sigma_gamma
        })
        .collect();
    per_cell.iter().sum()
}
