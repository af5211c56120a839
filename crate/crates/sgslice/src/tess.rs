//! c-Laguerre tessellation of the periodic slice, built in the chart.
//!
//! Every bisector is a straight line in the chart, so a cell is first cut as
//! a convex polygon by half-plane clipping against all periodic replicas,
//! then intersected exactly with the chart image of the domain — the band
//! between the parallel parabolas p₂ = p₁²/(2F²) and p₂ = G·height +
//! p₁²/(2F²). The second step is a fiber sweep over p₁ that emits fragments
//! whose edges are straight segments or arcs of those two parabolas; the
//! band region is not convex (its lid curves away), so one clipped polygon
//! can legitimately produce several disjoint fragments.

use crate::chart::{
    band_lower, band_upper, bisector_from_weighted_seeds, lift_point, replicate_periodic,
    ChartPoint, CostParams, HalfPlane, ReplicatedSeed, Seed, SliceDomain, Vec2,
};
use crate::error::SgError;
use crate::Result;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeLabel {
    /// Interface with the copy of source seed `j` whose site is z1 + shift.
    Neighbor { j: usize, shift: f64 },
    /// Exact side wall p₁ = −F²·half_width.
    WallLeft,
    /// Exact side wall p₁ = +F²·half_width.
    WallRight,
    /// Caps of the temporary bounding box used before the band intersection;
    /// the sweep strictly replaces them, so finished fragments never carry
    /// these.
    BoxFloor,
    BoxLid,
    /// Arc of the floor parabola p₂ = p₁²/(2F²).
    BottomArc,
    /// Arc of the lid parabola p₂ = G·height + p₁²/(2F²).
    TopArc,
}

/// One boundary loop of a cell fragment. Vertices run counter-clockwise;
/// `labels[k]` tags the edge from `verts[k]` to `verts[(k+1) % len]`. Edges
/// labelled `BottomArc`/`TopArc` follow their parabola between the two
/// endpoints, all other edges are straight. A two-vertex loop is legal when
/// one of its edges is an arc (a chord–arc lens).
#[derive(Debug, Clone)]
pub struct ChartPolygon {
    /// Source index of the owning seed.
    pub owner: usize,
    /// Horizontal shift of the owning copy: its site sits at z1 + shift.
    pub shift: f64,
    pub verts: Vec<ChartPoint>,
    pub labels: Vec<EdgeLabel>,
}

impl ChartPolygon {
    /// Signed area treating every edge as a chord (exact for straight-edged
    /// polygons, used for degeneracy checks during clipping).
    pub fn straight_area(&self) -> f64 {
        let n = self.verts.len();
        let mut acc = 0.0;
        for k in 0..n {
            let a = self.verts[k];
            let b = self.verts[(k + 1) % n];
            acc += (a.x - b.x) * (a.y + b.y);
        }
        0.5 * acc
    }

    /// Signed area −∮ p₂ dp₁ honouring parabolic arc edges.
    pub fn chart_area(&self, cp: &CostParams, domain: &SliceDomain) -> f64 {
        let f2 = cp.f2();
        let gh = cp.g * domain.height;
        let n = self.verts.len();
        let mut acc = 0.0;
        for k in 0..n {
            let a = self.verts[k];
            let b = self.verts[(k + 1) % n];
            match self.labels[k] {
                EdgeLabel::BottomArc => {
                    acc -= (b.x.powi(3) - a.x.powi(3)) / (6.0 * f2);
                }
                EdgeLabel::TopArc => {
                    acc -= gh * (b.x - a.x) + (b.x.powi(3) - a.x.powi(3)) / (6.0 * f2);
                }
                _ => acc -= 0.5 * (a.y + b.y) * (b.x - a.x),
            }
        }
        acc
    }
}

/// All fragments owned by one source seed, across its periodic copies and
/// across disconnections introduced by the curved lid.
#[derive(Debug, Clone, Default)]
pub struct CellRegion {
    pub fragments: Vec<ChartPolygon>,
}

impl CellRegion {
    pub fn chart_area(&self, cp: &CostParams, domain: &SliceDomain) -> f64 {
        self.fragments.iter().map(|f| f.chart_area(cp, domain)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Tessellation {
    /// Input seeds with z1 wrapped into the fundamental domain.
    pub sites: Vec<Seed>,
    pub weights: Vec<f64>,
    pub domain: SliceDomain,
    pub cp: CostParams,
    pub cells: Vec<CellRegion>,
}

impl Tessellation {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn cell_chart_area(&self, i: usize) -> f64 {
        self.cells[i].chart_area(&self.cp, &self.domain)
    }

    /// Chart area of the full band, ∫ (upper − lower) dp₁ = 2F²·half_width·G·height.
    pub fn band_chart_area(&self) -> f64 {
        2.0 * self.cp.f2() * self.domain.half_width * self.cp.g * self.domain.height
    }

    pub fn total_chart_area(&self) -> f64 {
        (0..self.len()).map(|i| self.cell_chart_area(i)).sum()
    }

    /// |Σ cell areas − band area|; a partition-of-the-band health check.
    pub fn coverage_defect(&self) -> f64 {
        (self.total_chart_area() - self.band_chart_area()).abs()
    }

    /// Distinct neighbouring source indices per cell (self-image interfaces
    /// excluded).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                let mut out: Vec<usize> = cell
                    .fragments
                    .iter()
                    .flat_map(|f| f.labels.iter())
                    .filter_map(|lab| match lab {
                        EdgeLabel::Neighbor { j, .. } if *j != i => Some(*j),
                        _ => None,
                    })
                    .collect();
                out.sort_unstable();
                out.dedup();
                out
            })
            .collect()
    }
}

/// Geometric tolerance tied to the chart extent of the band.
pub(crate) fn geom_tol(cp: &CostParams, domain: &SliceDomain) -> f64 {
    let a = cp.f2() * domain.half_width;
    let vmax = cp.g * domain.height + a * a / (2.0 * cp.f2());
    1e-12 * a.max(vmax).max(1.0)
}

fn dedup_ring(
    verts: Vec<ChartPoint>,
    labels: Vec<EdgeLabel>,
    tol: f64,
) -> (Vec<ChartPoint>, Vec<EdgeLabel>) {
    let mut vv: Vec<ChartPoint> = Vec::with_capacity(verts.len());
    let mut ll: Vec<EdgeLabel> = Vec::with_capacity(labels.len());
    for (v, lab) in verts.into_iter().zip(labels) {
        if let Some(&last) = vv.last() {
            if (last - v).norm() <= tol {
                // zero-length edge: the outgoing label replaces it
                *ll.last_mut().unwrap() = lab;
                continue;
            }
        }
        vv.push(v);
        ll.push(lab);
    }
    while vv.len() >= 2 && (vv[0] - *vv.last().unwrap()).norm() <= tol {
        vv.pop();
        ll.pop();
    }
    (vv, ll)
}

/// Clips a straight-edged polygon against one closed half-plane. Edges cut
/// open are closed with a new edge tagged `label`. The result may be
/// degenerate (fewer than three vertices) when the polygon is clipped away.
pub fn clip_polygon(
    poly: &ChartPolygon,
    hp: &HalfPlane,
    label: EdgeLabel,
    tol: f64,
) -> ChartPolygon {
    let n = poly.verts.len();
    let mut vv = Vec::with_capacity(n + 1);
    let mut ll = Vec::with_capacity(n + 1);
    for k in 0..n {
        let a = poly.verts[k];
        let b = poly.verts[(k + 1) % n];
        let lab = poly.labels[k];
        let ea = hp.excess(a);
        let eb = hp.excess(b);
        let a_in = ea <= 0.0;
        let b_in = eb <= 0.0;
        if a_in {
            vv.push(a);
            ll.push(lab);
        }
        if a_in != b_in {
            let t = ea / (ea - eb);
            vv.push(a + (b - a) * t);
            ll.push(if a_in { label } else { lab });
        }
    }
    let (verts, labels) = dedup_ring(vv, ll, tol);
    ChartPolygon { owner: poly.owner, shift: poly.shift, verts, labels }
}

/// A linear piece of a chain boundary, viewed as a function of u = p₁ on
/// [u0, u1] with u1 > u0.
#[derive(Debug, Clone, Copy)]
struct Piece {
    u0: f64,
    u1: f64,
    v0: f64,
    v1: f64,
    label: EdgeLabel,
}

impl Piece {
    fn eval(&self, u: f64) -> f64 {
        self.v0 + (u - self.u0) * (self.v1 - self.v0) / (self.u1 - self.u0)
    }
}

struct ChainFn {
    pieces: Vec<Piece>,
}

impl ChainFn {
    /// Value and active piece index at u (nearest piece off the ends).
    fn eval(&self, u: f64) -> (f64, usize) {
        let i = self
            .pieces
            .partition_point(|pc| pc.u1 < u)
            .min(self.pieces.len() - 1);
        (self.pieces[i].eval(u), i)
    }
}

/// Pushes the roots of `piece(u) = u²/(2F²) + c_off` lying inside the piece.
fn push_parabola_crossings(brk: &mut Vec<f64>, pc: &Piece, c_off: f64, f2: f64, tol: f64) {
    let beta = (pc.v1 - pc.v0) / (pc.u1 - pc.u0);
    let alpha = pc.v0 - beta * pc.u0;
    // u² − 2F²β·u + 2F²(c_off − α) = 0
    let bh = f2 * beta;
    let c = 2.0 * f2 * (c_off - alpha);
    let disc = bh * bh - c;
    if disc <= 0.0 {
        return;
    }
    let sq = disc.sqrt();
    let q = if bh >= 0.0 { bh + sq } else { bh - sq };
    let roots = if q.abs() < 1e-300 { [sq, -sq] } else { [q, c / q] };
    for r in roots {
        if r >= pc.u0 - tol && r <= pc.u1 + tol {
            brk.push(r.clamp(pc.u0, pc.u1));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sel {
    Arc,
    Pc(usize),
}

#[derive(Debug, Clone, Copy)]
struct Span {
    a: f64,
    b: f64,
    sel: Sel,
}

/// A vertical cap piece in boundary-walk order.
#[derive(Debug, Clone, Copy)]
struct CapPiece {
    y0: f64,
    y1: f64,
    label: EdgeLabel,
}

/// Intersects a convex straight-edged chart polygon with the curved band,
/// returning the (possibly several, possibly arc-edged) fragments.
pub fn band_intersect(
    poly: &ChartPolygon,
    cp: &CostParams,
    domain: &SliceDomain,
) -> Vec<ChartPolygon> {
    let tol = geom_tol(cp, domain);
    let n = poly.verts.len();
    if n < 3 {
        return vec![];
    }
    let f2 = cp.f2();
    let gh = cp.g * domain.height;

    // Fast accept. Both excess functions have nonzero ∂/∂p₂, so their minima
    // over the polygon sit on edges: p₂ − lower is concave along any segment
    // (vertex check suffices); upper − p₂ is convex along a segment, so each
    // edge needs its interior quadratic minimum checked.
    let bottom_ok = poly.verts.iter().all(|v| v.y - band_lower(v.x, cp) >= -tol);
    if bottom_ok {
        let top_ok = (0..n).all(|k| {
            let a = poly.verts[k];
            let b = poly.verts[(k + 1) % n];
            let dx = b.x - a.x;
            let c2 = dx * dx / (2.0 * f2);
            let c1 = a.x * dx / f2 - (b.y - a.y);
            let c0 = band_upper(a.x, cp, domain) - a.y;
            let mut m = c0.min(c2 + c1 + c0);
            if c2 > 0.0 {
                let s = (-c1 / (2.0 * c2)).clamp(0.0, 1.0);
                m = m.min((c2 * s + c1) * s + c0);
            }
            m >= -tol
        });
        if top_ok {
            return vec![poly.clone()];
        }
    }

    // Boundary decomposition into lower chain, right cap, upper chain, left
    // cap, split at the extreme vertices. The x comparison needs a tolerance
    // window: the endpoints of a vertical cap edge come from different clip
    // intersections and can disagree by an ulp, which would land both corner
    // picks on the same vertex and silently drop the cap.
    let pick = |sx: f64, sy: f64| {
        let xbest = (0..n).map(|i| sx * poly.verts[i].x).fold(f64::INFINITY, f64::min);
        let mut best = usize::MAX;
        for i in 0..n {
            if sx * poly.verts[i].x <= xbest + tol
                && (best == usize::MAX || sy * poly.verts[i].y < sy * poly.verts[best].y)
            {
                best = i;
            }
        }
        best
    };
    let bl = pick(1.0, 1.0);
    let br = pick(-1.0, 1.0);
    let tr = pick(-1.0, -1.0);
    let tl = pick(1.0, -1.0);
    let walk = |from: usize, to: usize| {
        let mut idx = vec![from];
        let mut i = from;
        while i != to {
            i = (i + 1) % n;
            idx.push(i);
            if idx.len() > n + 1 {
                break;
            }
        }
        idx
    };
    let lower_idx = walk(bl, br);
    let rcap_idx = walk(br, tr);
    let upper_idx = walk(tr, tl);
    let lcap_idx = walk(tl, bl);

    let lower = ChainFn {
        pieces: lower_idx
            .windows(2)
            .filter_map(|w| {
                let a = poly.verts[w[0]];
                let b = poly.verts[w[1]];
                (b.x - a.x > tol).then(|| Piece {
                    u0: a.x,
                    u1: b.x,
                    v0: a.y,
                    v1: b.y,
                    label: poly.labels[w[0]],
                })
            })
            .collect(),
    };
    let upper = ChainFn {
        pieces: {
            let mut pcs: Vec<Piece> = upper_idx
                .windows(2)
                .filter_map(|w| {
                    let a = poly.verts[w[0]];
                    let b = poly.verts[w[1]];
                    (a.x - b.x > tol).then(|| Piece {
                        u0: b.x,
                        u1: a.x,
                        v0: b.y,
                        v1: a.y,
                        label: poly.labels[w[0]],
                    })
                })
                .collect();
            pcs.reverse();
            pcs
        },
    };
    if lower.pieces.is_empty() || upper.pieces.is_empty() {
        return vec![];
    }
    let right_cap: Vec<CapPiece> = rcap_idx
        .windows(2)
        .filter_map(|w| {
            let a = poly.verts[w[0]];
            let b = poly.verts[w[1]];
            (b.y - a.y > tol).then_some(CapPiece { y0: a.y, y1: b.y, label: poly.labels[w[0]] })
        })
        .collect();
    let left_cap: Vec<CapPiece> = lcap_idx
        .windows(2)
        .filter_map(|w| {
            let a = poly.verts[w[0]];
            let b = poly.verts[w[1]];
            (a.y - b.y > tol).then_some(CapPiece { y0: a.y, y1: b.y, label: poly.labels[w[0]] })
        })
        .collect();

    let umin = lower.pieces[0].u0.min(upper.pieces[0].u0);
    let umax = lower.pieces.last().unwrap().u1.max(upper.pieces.last().unwrap().u1);

    // Breakpoints: chain knots plus parabola crossings of every piece. Fiber
    // emptiness can only flip at one of these, because within a sub-interval
    // both active branches are fixed smooth curves whose remaining crossing
    // pairs are impossible (chain–chain inside a convex polygon) or constant
    // (floor–lid gap is G·height).
    let mut brk = vec![umin, umax];
    for pc in lower.pieces.iter().chain(upper.pieces.iter()) {
        brk.push(pc.u0);
        brk.push(pc.u1);
        push_parabola_crossings(&mut brk, pc, 0.0, f2, tol);
        push_parabola_crossings(&mut brk, pc, gh, f2, tol);
    }
    brk.retain(|u| *u >= umin - tol && *u <= umax + tol);
    for u in brk.iter_mut() {
        *u = u.clamp(umin, umax);
    }
    brk.sort_unstable_by(f64::total_cmp);
    brk.dedup_by(|a, b| (*a - *b).abs() <= tol);

    struct Sub {
        a: f64,
        b: f64,
        lo: Sel,
        hi: Sel,
        filled: bool,
    }
    let mut subs: Vec<Sub> = Vec::with_capacity(brk.len());
    for w in brk.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= tol {
            continue;
        }
        let m = 0.5 * (a + b);
        let (lv, li) = lower.eval(m);
        let fv = band_lower(m, cp);
        let (uv, ui) = upper.eval(m);
        let gv = band_upper(m, cp, domain);
        let (loval, lo) = if fv > lv { (fv, Sel::Arc) } else { (lv, Sel::Pc(li)) };
        let (hival, hi) = if gv < uv { (gv, Sel::Arc) } else { (uv, Sel::Pc(ui)) };
        subs.push(Sub { a, b, lo, hi, filled: hival - loval > tol });
    }

    let eval_lo = |sel: Sel, u: f64| match sel {
        Sel::Arc => band_lower(u, cp),
        Sel::Pc(i) => lower.pieces[i].eval(u),
    };
    let eval_hi = |sel: Sel, u: f64| match sel {
        Sel::Arc => band_upper(u, cp, domain),
        Sel::Pc(i) => upper.pieces[i].eval(u),
    };
    let label_lo = |sel: Sel| match sel {
        Sel::Arc => EdgeLabel::BottomArc,
        Sel::Pc(i) => lower.pieces[i].label,
    };
    let label_hi = |sel: Sel| match sel {
        Sel::Arc => EdgeLabel::TopArc,
        Sel::Pc(i) => upper.pieces[i].label,
    };

    let merge_spans = |sels: Vec<Span>| {
        let mut out: Vec<Span> = Vec::with_capacity(sels.len());
        for s in sels {
            match out.last_mut() {
                Some(last) if last.sel == s.sel => last.b = s.b,
                _ => out.push(s),
            }
        }
        out
    };

    let mut frags = Vec::new();
    let mut k = 0;
    while k < subs.len() {
        if !subs[k].filled {
            k += 1;
            continue;
        }
        let mut e = k;
        while e + 1 < subs.len() && subs[e + 1].filled {
            e += 1;
        }
        let run = &subs[k..=e];
        let lsegs = merge_spans(run.iter().map(|s| Span { a: s.a, b: s.b, sel: s.lo }).collect());
        let usegs = merge_spans(run.iter().map(|s| Span { a: s.a, b: s.b, sel: s.hi }).collect());
        let u_s = run[0].a;
        let u_e = run[run.len() - 1].b;

        let mut pts: Vec<(ChartPoint, EdgeLabel)> = Vec::new();
        for seg in &lsegs {
            pts.push((Vec2::new(seg.a, eval_lo(seg.sel, seg.a)), label_lo(seg.sel)));
        }
        let lo_e = eval_lo(lsegs.last().unwrap().sel, u_e);
        let hi_e = eval_hi(usegs.last().unwrap().sel, u_e);
        if u_e >= umax - tol && hi_e - lo_e > tol {
            for cpiece in &right_cap {
                let c0 = cpiece.y0.max(lo_e);
                let c1 = cpiece.y1.min(hi_e);
                if c1 - c0 > tol {
                    pts.push((Vec2::new(u_e, c0), cpiece.label));
                }
            }
        }
        for seg in usegs.iter().rev() {
            pts.push((Vec2::new(seg.b, eval_hi(seg.sel, seg.b)), label_hi(seg.sel)));
        }
        let lo_s = eval_lo(lsegs[0].sel, u_s);
        let hi_s = eval_hi(usegs[0].sel, u_s);
        if u_s <= umin + tol && hi_s - lo_s > tol {
            for cpiece in &left_cap {
                let c0 = cpiece.y0.min(hi_s);
                let c1 = cpiece.y1.max(lo_s);
                if c0 - c1 > tol {
                    pts.push((Vec2::new(u_s, c0), cpiece.label));
                }
            }
        }

        let (verts, labels): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
        let (verts, labels) = dedup_ring(verts, labels, tol);
        if verts.len() >= 2 {
            let frag = ChartPolygon {
                owner: poly.owner,
                shift: poly.shift,
                verts,
                labels,
            };
            if frag.chart_area(cp, domain) > tol * tol {
                debug_assert!(!frag
                    .labels
                    .iter()
                    .any(|l| matches!(l, EdgeLabel::BoxFloor | EdgeLabel::BoxLid)));
                frags.push(frag);
            }
        }
        k = e + 1;
    }
    frags
}

/// Laguerre polygon of one periodic copy, clipped against every competitor
/// replica, then intersected with the band.
fn copy_cell_fragments(
    r: usize,
    replicas: &[ReplicatedSeed],
    weights: &[f64],
    psi_spread: f64,
    domain: &SliceDomain,
    cp: &CostParams,
) -> Result<Vec<ChartPolygon>> {
    let tol = geom_tol(cp, domain);
    let me = replicas[r];
    let zi = me.seed;
    let wi = weights[me.source];
    let y_i = lift_point(zi, cp);
    let a = cp.f2() * domain.half_width;
    let lid = cp.g * domain.height + a * a / (2.0 * cp.f2()) + 1.0;
    let mut poly = ChartPolygon {
        owner: me.source,
        shift: me.shift,
        verts: vec![
            Vec2::new(-a, -1.0),
            Vec2::new(a, -1.0),
            Vec2::new(a, lid),
            Vec2::new(-a, lid),
        ],
        labels: vec![
            EdgeLabel::BoxFloor,
            EdgeLabel::WallRight,
            EdgeLabel::BoxLid,
            EdgeLabel::WallLeft,
        ],
    };
    let mut order: Vec<(f64, u32)> = (0..replicas.len())
        .filter(|&j| j != r)
        .map(|j| ((lift_point(replicas[j].seed, cp) - y_i).norm_squared(), j as u32))
        .collect();
    order.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let vert_r2 = |p: &ChartPolygon| {
        p.verts.iter().map(|v| (v - y_i).norm_squared()).fold(0.0, f64::max)
    };
    let mut r2 = vert_r2(&poly);
    for &(d2, j) in &order {
        // A competitor whose lift is farther than R + √(R² + Δψ) cannot cut
        // a polygon contained in the radius-R ball around the own lift.
        let rmax = r2.sqrt();
        if d2.sqrt() >= rmax + (r2 + psi_spread).sqrt() {
            break;
        }
        let rep = replicas[j as usize];
        let hp = bisector_from_weighted_seeds(zi, wi, rep.seed, weights[rep.source], cp)?;
        let worst = poly.verts.iter().map(|v| hp.excess(*v)).fold(f64::NEG_INFINITY, f64::max);
        if worst <= 0.0 {
            continue;
        }
        poly = clip_polygon(
            &poly,
            &hp,
            EdgeLabel::Neighbor { j: rep.source, shift: rep.shift },
            tol,
        );
        if poly.verts.len() < 3 || poly.straight_area() <= tol * tol {
            return Ok(vec![]);
        }
        r2 = vert_r2(&poly);
    }
    Ok(band_intersect(&poly, cp, domain))
}

/// Builds the tessellation for the given weighted seeds. Seeds may carry
/// unwrapped horizontal positions; they are wrapped into the fundamental
/// domain here. One periodic copy on each side is exactly sufficient:
/// the nearest image of any site to any domain point lies within one period.
pub fn build_tessellation(
    seeds: &[Seed],
    weights: &[f64],
    domain: &SliceDomain,
    cp: &CostParams,
) -> Result<Tessellation> {
    if seeds.is_empty() {
        return Err(SgError::Config("tessellation needs at least one seed".into()));
    }
    if seeds.len() != weights.len() {
        return Err(SgError::Config(format!(
            "{} seeds but {} weights",
            seeds.len(),
            weights.len()
        )));
    }
    for (i, z) in seeds.iter().enumerate() {
        if !z.z1.is_finite() || !z.z2.is_finite() {
            return Err(SgError::Numerics(format!("seed {i} is not finite")));
        }
        if z.z2 <= 0.0 {
            return Err(SgError::SingularSeed { z2: z.z2 });
        }
    }
    for (i, w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(SgError::Numerics(format!("weight {i} is not finite")));
        }
    }
    let wrapped: Vec<Seed> = seeds
        .iter()
        .map(|z| Seed { z1: domain.wrap(z.z1), z2: z.z2 })
        .collect();
    let replicas = replicate_periodic(&wrapped, domain.period(), 1);

    // Coincident replicas of different sources give no bisector; detect them
    // up front with a sweep over lift points sorted by the first coordinate.
    let lifts: Vec<Vec2> = replicas.iter().map(|rep| lift_point(rep.seed, cp)).collect();
    let mut by_x: Vec<usize> = (0..replicas.len()).collect();
    by_x.sort_unstable_by(|&a, &b| {
        lifts[a].x.total_cmp(&lifts[b].x).then(lifts[a].y.total_cmp(&lifts[b].y))
    });
    let eps_c = 1e-12 * (1.0 + lifts.iter().map(|y| y.norm()).fold(0.0, f64::max));
    for (k, &ra) in by_x.iter().enumerate() {
        for &rb in by_x[k + 1..].iter() {
            if lifts[rb].x - lifts[ra].x > eps_c {
                break;
            }
            if (lifts[rb] - lifts[ra]).norm() <= eps_c
                && replicas[ra].source != replicas[rb].source
            {
                return Err(SgError::DegeneratePair(format!(
                    "seeds {} and {} coincide up to a periodic image",
                    replicas[ra].source.min(replicas[rb].source),
                    replicas[ra].source.max(replicas[rb].source),
                )));
            }
        }
    }

    let psi_spread = {
        let psi = |r: &ReplicatedSeed| {
            let y = lift_point(r.seed, cp);
            weights[r.source] + y.norm_squared()
                - cp.f2() * r.seed.z1 * r.seed.z1 / (2.0 * r.seed.z2)
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for rep in &replicas {
            let v = psi(rep);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (hi - lo).max(0.0)
    };

    let results: Vec<Result<Vec<ChartPolygon>>> = (0..replicas.len())
        .into_par_iter()
        .map(|r| copy_cell_fragments(r, &replicas, weights, psi_spread, domain, cp))
        .collect();
    let mut cells: Vec<CellRegion> = (0..seeds.len()).map(|_| CellRegion::default()).collect();
    for (r, res) in results.into_iter().enumerate() {
        cells[replicas[r].source].fragments.extend(res?);
    }

    Ok(Tessellation {
        sites: wrapped,
        weights: weights.to_vec(),
        domain: *domain,
        cp: *cp,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::composite_simpson;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cp() -> CostParams {
        CostParams::unit(1.0)
    }

    fn unit_domain() -> SliceDomain {
        SliceDomain::new(1.0, 1.0).unwrap()
    }

    fn box_poly(x0: f64, x1: f64, y0: f64, y1: f64) -> ChartPolygon {
        ChartPolygon {
            owner: 0,
            shift: 0.0,
            verts: vec![
                Vec2::new(x0, y0),
                Vec2::new(x1, y0),
                Vec2::new(x1, y1),
                Vec2::new(x0, y1),
            ],
            labels: vec![
                EdgeLabel::BoxFloor,
                EdgeLabel::WallRight,
                EdgeLabel::BoxLid,
                EdgeLabel::WallLeft,
            ],
        }
    }

    #[test]
    fn clip_keeps_edge_labels() {
        let tol = 1e-12;
        let poly = box_poly(0.0, 1.0, 0.0, 1.0);
        let hp = HalfPlane { normal: Vec2::new(1.0, 0.0), offset: 0.5 };
        let cut = clip_polygon(&poly, &hp, EdgeLabel::Neighbor { j: 7, shift: 0.0 }, tol);
        assert_eq!(cut.verts.len(), 4);
        assert_relative_eq!(cut.straight_area(), 0.5);
        assert_eq!(
            cut.labels,
            vec![
                EdgeLabel::BoxFloor,
                EdgeLabel::Neighbor { j: 7, shift: 0.0 },
                EdgeLabel::BoxLid,
                EdgeLabel::WallLeft,
            ]
        );
        assert_relative_eq!(cut.verts[1].x, 0.5);
    }

    #[test]
    fn clip_through_vertices_dedups() {
        let tol = 1e-12;
        let poly = box_poly(0.0, 1.0, 0.0, 1.0);
        let hp = HalfPlane { normal: Vec2::new(1.0, 1.0), offset: 1.0 };
        let cut = clip_polygon(&poly, &hp, EdgeLabel::Neighbor { j: 3, shift: 0.0 }, tol);
        assert_eq!(cut.verts.len(), 3);
        assert_relative_eq!(cut.straight_area(), 0.5);
        assert_eq!(
            cut.labels,
            vec![
                EdgeLabel::BoxFloor,
                EdgeLabel::Neighbor { j: 3, shift: 0.0 },
                EdgeLabel::WallLeft,
            ]
        );
    }

    #[test]
    fn clip_to_nothing() {
        let tol = 1e-12;
        let poly = box_poly(0.0, 1.0, 0.0, 1.0);
        let hp = HalfPlane { normal: Vec2::new(0.0, 1.0), offset: -0.5 };
        let cut = clip_polygon(&poly, &hp, EdgeLabel::BottomArc, tol);
        assert!(cut.verts.len() < 3);
    }

    #[test]
    fn single_seed_fills_band() {
        let cp = unit_cp();
        let domain = unit_domain();
        let tess =
            build_tessellation(&[Seed { z1: 0.0, z2: 1.0 }], &[0.3], &domain, &cp).unwrap();
        assert_eq!(tess.cells[0].fragments.len(), 1);
        let frag = &tess.cells[0].fragments[0];
        assert_relative_eq!(frag.chart_area(&cp, &domain), 2.0, epsilon = 1e-12);
        let mut labs = frag.labels.clone();
        labs.sort_by_key(|l| match l {
            EdgeLabel::BottomArc => 0,
            EdgeLabel::WallRight => 1,
            EdgeLabel::TopArc => 2,
            EdgeLabel::WallLeft => 3,
            _ => 4,
        });
        assert_eq!(
            labs,
            vec![
                EdgeLabel::BottomArc,
                EdgeLabel::WallRight,
                EdgeLabel::TopArc,
                EdgeLabel::WallLeft
            ]
        );
        assert_relative_eq!(tess.coverage_defect(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn off_center_single_seed_splits_at_the_seam() {
        let cp = unit_cp();
        let domain = unit_domain();
        let tess =
            build_tessellation(&[Seed { z1: 0.5, z2: 1.0 }], &[0.0], &domain, &cp).unwrap();
        let mut areas: Vec<f64> = tess.cells[0]
            .fragments
            .iter()
            .map(|f| f.chart_area(&cp, &domain))
            .collect();
        areas.sort_by(f64::total_cmp);
        assert_eq!(areas.len(), 2);
        assert_relative_eq!(areas[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(areas[1], 1.5, epsilon = 1e-10);
        // the seam interfaces are self-images of the same source
        assert!(tess.cells[0].fragments.iter().any(|f| f
            .labels
            .iter()
            .any(|l| matches!(l, EdgeLabel::Neighbor { j: 0, .. }))));
        assert!(tess.adjacency()[0].is_empty());
    }

    #[test]
    fn stacked_pair_forms_chord_arc_lens() {
        let cp = unit_cp();
        let domain = unit_domain();
        // raising the lower seed's weight by 0.1 puts the interface at p₂ = 0.2
        let tess = build_tessellation(
            &[Seed { z1: 0.0, z2: 1.0 }, Seed { z1: 0.0, z2: 2.0 }],
            &[0.1, 0.0],
            &domain,
            &cp,
        )
        .unwrap();
        let lens_area = 4.0 * 0.4f64.sqrt() / 15.0;
        assert_relative_eq!(tess.cell_chart_area(0), lens_area, max_relative = 1e-12);
        assert_relative_eq!(
            tess.cell_chart_area(1),
            2.0 - lens_area,
            max_relative = 1e-12
        );
        assert_eq!(tess.cells[0].fragments.len(), 1);
        let lens = &tess.cells[0].fragments[0];
        assert_eq!(lens.verts.len(), 2);
        assert!(lens.labels.contains(&EdgeLabel::BottomArc));
        assert!(lens
            .labels
            .iter()
            .any(|l| matches!(l, EdgeLabel::Neighbor { j: 1, .. })));
        assert_eq!(tess.adjacency(), vec![vec![1], vec![0]]);
        // interface vertices sit on both the parabola and the bisector line
        for v in &lens.verts {
            assert_relative_eq!(v.y, 0.2, epsilon = 1e-12);
            assert_relative_eq!(v.x.abs(), 0.4f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn lid_dip_disconnects_a_slab() {
        let cp = unit_cp();
        let domain = unit_domain();
        // box straddling the lid parabola: g(u) = 1 + u²/2 dips below its floor mid-span
        let poly = ChartPolygon {
            owner: 0,
            shift: 0.0,
            verts: vec![
                Vec2::new(-1.0, 1.1),
                Vec2::new(1.0, 1.1),
                Vec2::new(1.0, 1.4),
                Vec2::new(-1.0, 1.4),
            ],
            labels: vec![
                EdgeLabel::Neighbor { j: 5, shift: 0.0 },
                EdgeLabel::WallRight,
                EdgeLabel::Neighbor { j: 6, shift: 0.0 },
                EdgeLabel::WallLeft,
            ],
        };
        let frags = band_intersect(&poly, &cp, &domain);
        assert_eq!(frags.len(), 2);
        let each = 0.091300322100019634;
        for f in &frags {
            assert_relative_eq!(f.chart_area(&cp, &domain), each, max_relative = 1e-12);
            assert!(f.labels.contains(&EdgeLabel::TopArc));
            // the floor edge survives intact; the top edge survives only near the walls
            assert!(f
                .labels
                .iter()
                .any(|l| matches!(l, EdgeLabel::Neighbor { j: 5, .. })));
            assert!(f
                .labels
                .iter()
                .any(|l| matches!(l, EdgeLabel::Neighbor { j: 6, .. })));
        }
    }

    #[test]
    fn chord_above_lid_rejected_by_fast_accept() {
        let cp = unit_cp();
        let domain = unit_domain();
        // all vertices under the lid parabola, but the long chord pokes out
        let poly = ChartPolygon {
            owner: 0,
            shift: 0.0,
            verts: vec![Vec2::new(-1.0, 1.4), Vec2::new(1.0, 1.4), Vec2::new(1.0, 1.45)],
            labels: vec![
                EdgeLabel::Neighbor { j: 1, shift: 0.0 },
                EdgeLabel::WallRight,
                EdgeLabel::Neighbor { j: 2, shift: 0.0 },
            ],
        };
        let frags = band_intersect(&poly, &cp, &domain);
        assert_eq!(frags.len(), 2);
        let total: f64 = frags.iter().map(|f| f.chart_area(&cp, &domain)).sum();
        // oracle: sweep the exact fiber heights of the triangle under the lid
        let mu = |u: f64| 1.4 + 0.05 * (u + 1.0) / 2.0;
        let oracle = composite_simpson(-1.0, 1.0, 200_000, |u| {
            let hi = mu(u).min(band_upper(u, &cp, &domain));
            (hi - 1.4).max(0.0)
        });
        assert_relative_eq!(total, oracle, epsilon = 1e-9);
    }

    fn fiber_of_polygon(verts: &[ChartPoint], u: f64) -> Option<(f64, f64)> {
        let n = verts.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut any = false;
        for k in 0..n {
            let a = verts[k];
            let b = verts[(k + 1) % n];
            if (a.x - u).abs() < 1e-15 {
                lo = lo.min(a.y);
                hi = hi.max(a.y);
                any = true;
            }
            if (a.x - u) * (b.x - u) < 0.0 {
                let t = (u - a.x) / (b.x - a.x);
                let y = a.y + t * (b.y - a.y);
                lo = lo.min(y);
                hi = hi.max(y);
                any = true;
            }
        }
        any.then_some((lo, hi))
    }

    #[test]
    fn random_convex_polygons_match_fiber_oracle() {
        let cp = CostParams { f: 1.1, g: 0.8, c0: 0.0 };
        let domain = SliceDomain::new(0.9, 1.3).unwrap();
        let a = cp.f2() * domain.half_width;
        let lid = cp.g * domain.height + a * a / (2.0 * cp.f2());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let tol = geom_tol(&cp, &domain);
        for case in 0..20 {
            let mut poly = box_poly(-a, a, -0.3, lid + 0.3);
            for _ in 0..6 {
                let th = rng.gen_range(0.0..std::f64::consts::TAU);
                let nrm = Vec2::new(th.cos(), th.sin());
                let through = Vec2::new(rng.gen_range(-a..a), rng.gen_range(-0.2..lid + 0.2));
                let cut = clip_polygon(
                    &poly,
                    &HalfPlane { normal: nrm, offset: nrm.dot(&through) },
                    EdgeLabel::Neighbor { j: 1, shift: 0.0 },
                    tol,
                );
                if cut.verts.len() >= 3 && cut.straight_area() > 1e-3 {
                    poly = cut;
                }
            }
            let frags = band_intersect(&poly, &cp, &domain);
            for f in &frags {
                assert!(f.chart_area(&cp, &domain) > 0.0, "case {case}: non-positive fragment");
                assert!(!f.labels.iter().any(|l| matches!(l, EdgeLabel::BoxFloor | EdgeLabel::BoxLid)));
            }
            let total: f64 = frags.iter().map(|f| f.chart_area(&cp, &domain)).sum();
            let verts = poly.verts.clone();
            let oracle = composite_simpson(-a, a, 100_000, |u| {
                match fiber_of_polygon(&verts, u) {
                    Some((lo, hi)) => {
                        let l = lo.max(band_lower(u, &cp));
                        let h = hi.min(band_upper(u, &cp, &domain));
                        (h - l).max(0.0)
                    }
                    None => 0.0,
                }
            });
            assert!(
                (total - oracle).abs() <= 2e-8 + 1e-6 * oracle.abs(),
                "case {case}: fragments {total} vs oracle {oracle}"
            );
        }
    }

    fn check_tess_health(tess: &Tessellation, tol_cover: f64) {
        let cp = &tess.cp;
        let domain = &tess.domain;
        let a = cp.f2() * domain.half_width;
        assert!(tess.coverage_defect() <= tol_cover, "defect {}", tess.coverage_defect());
        for cell in &tess.cells {
            for f in &cell.fragments {
                assert_eq!(f.verts.len(), f.labels.len());
                assert!(f.chart_area(cp, domain) > 0.0);
                let n = f.verts.len();
                for k in 0..n {
                    let v = f.verts[k];
                    assert!(v.x >= -a - 1e-9 && v.x <= a + 1e-9, "vertex beyond wall");
                    match f.labels[k] {
                        EdgeLabel::BoxFloor | EdgeLabel::BoxLid => {
                            panic!("box cap survived the band intersection")
                        }
                        EdgeLabel::BottomArc => {
                            let b = f.verts[(k + 1) % n];
                            assert_relative_eq!(v.y, band_lower(v.x, cp), epsilon = 1e-8);
                            assert_relative_eq!(b.y, band_lower(b.x, cp), epsilon = 1e-8);
                        }
                        EdgeLabel::TopArc => {
                            let b = f.verts[(k + 1) % n];
                            assert_relative_eq!(v.y, band_upper(v.x, cp, domain), epsilon = 1e-8);
                            assert_relative_eq!(b.y, band_upper(b.x, cp, domain), epsilon = 1e-8);
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    #[test]
    fn random_seeds_tile_the_band() {
        let cp = unit_cp();
        let domain = unit_domain();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 12;
        let seeds: Vec<Seed> = (0..n)
            .map(|_| Seed {
                z1: rng.gen_range(-1.0..1.0),
                z2: rng.gen_range(0.5..2.5),
            })
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let tess = build_tessellation(&seeds, &weights, &domain, &cp).unwrap();
        check_tess_health(&tess, 1e-9);
    }

    #[test]
    fn clustered_lifts_still_tile_the_band() {
        // deep-column regime: z2 ~ 1000 packs every lift into a tiny disc,
        // which is exactly where the difference-form bisectors matter
        let cp = CostParams::unit(460.0);
        let domain = SliceDomain::new(0.1, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 24;
        let seeds: Vec<Seed> = (0..n)
            .map(|_| Seed {
                z1: rng.gen_range(-0.1..0.1),
                z2: rng.gen_range(985.0..1015.0),
            })
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let tess = build_tessellation(&seeds, &weights, &domain, &cp).unwrap();
        assert_relative_eq!(tess.band_chart_area(), 0.02);
        check_tess_health(&tess, 1e-10);
    }

    #[test]
    fn common_horizontal_shift_preserves_cell_areas() {
        let cp = unit_cp();
        let domain = unit_domain();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 8;
        let seeds: Vec<Seed> = (0..n)
            .map(|_| Seed {
                z1: rng.gen_range(-1.0..1.0),
                z2: rng.gen_range(0.5..2.5),
            })
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let base = build_tessellation(&seeds, &weights, &domain, &cp).unwrap();
        for delta in [0.37 * domain.period(), -1.6, 5.0 * domain.period()] {
            let moved: Vec<Seed> = seeds
                .iter()
                .map(|z| Seed { z1: z.z1 + delta, z2: z.z2 })
                .collect();
            let tess = build_tessellation(&moved, &weights, &domain, &cp).unwrap();
            for i in 0..n {
                assert_relative_eq!(
                    tess.cell_chart_area(i),
                    base.cell_chart_area(i),
                    epsilon = 1e-9,
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let cp = unit_cp();
        let domain = unit_domain();
        let z = Seed { z1: 0.0, z2: 1.0 };
        assert!(matches!(
            build_tessellation(&[], &[], &domain, &cp),
            Err(SgError::Config(_))
        ));
        assert!(matches!(
            build_tessellation(&[z], &[0.0, 1.0], &domain, &cp),
            Err(SgError::Config(_))
        ));
        assert!(matches!(
            build_tessellation(&[Seed { z1: 0.0, z2: -1.0 }], &[0.0], &domain, &cp),
            Err(SgError::SingularSeed { .. })
        ));
        assert!(matches!(
            build_tessellation(&[z], &[f64::NAN], &domain, &cp),
            Err(SgError::Numerics(_))
        ));
        // identical seeds, and identical up to a periodic image
        assert!(matches!(
            build_tessellation(&[z, z], &[0.0, 0.1], &domain, &cp),
            Err(SgError::DegeneratePair(_))
        ));
        assert!(matches!(
            build_tessellation(
                &[Seed { z1: -0.9, z2: 1.0 }, Seed { z1: 1.1, z2: 1.0 }],
                &[0.0, 0.0],
                &domain,
                &cp
            ),
            Err(SgError::DegeneratePair(_))
        ));
    }

    #[test]
    fn vertical_seam_edges_survive_band_assembly() {
        // two seeds whose periodic self-seams create vertical cap edges; an
        // ulp mismatch between the seam-endpoint x's must not drop the caps
        let cp = unit_cp();
        let domain = unit_domain();
        let seeds = [
            Seed { z1: 0.24080451549482917, z2: 0.3 },
            Seed { z1: -0.6635011492865511, z2: 0.8590372330021909 },
        ];
        let tess = build_tessellation(&seeds, &[0.0, 0.0], &domain, &cp).unwrap();
        assert!(tess.coverage_defect() <= 1e-12);
        // the deep cell is cut by its own +2 image: the seam edge must appear
        // in both fragments, labeled with the image actually across it
        let frag0 = &tess.cells[1].fragments[0];
        assert!(frag0
            .labels
            .iter()
            .any(|l| matches!(l, EdgeLabel::Neighbor { j: 1, shift } if *shift == 2.0)));
        let frag2 = &tess.cells[1].fragments[1];
        assert!(frag2
            .labels
            .iter()
            .any(|l| matches!(l, EdgeLabel::Neighbor { j: 1, shift } if *shift == 0.0)));
        assert_relative_eq!(tess.cell_chart_area(0), 0.10626612639811024, max_relative = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]
        #[test]
        fn arbitrary_seed_sets_partition_the_band(
            zs in proptest::collection::vec((-1.0f64..1.0, 0.3f64..3.0, -0.3f64..0.3), 1..14)
        ) {
            let cp = unit_cp();
            let domain = unit_domain();
            let seeds: Vec<Seed> = zs.iter().map(|&(z1, z2, _)| Seed { z1, z2 }).collect();
            let weights: Vec<f64> = zs.iter().map(|&(_, _, w)| w).collect();
            match build_tessellation(&seeds, &weights, &domain, &cp) {
                Ok(tess) => {
                    prop_assert!(tess.coverage_defect() <= 1e-8);
                    for cell in &tess.cells {
                        for f in &cell.fragments {
                            prop_assert!(f.chart_area(&cp, &domain) > 0.0);
                            prop_assert_eq!(f.verts.len(), f.labels.len());
                        }
                    }
                }
                Err(SgError::DegeneratePair(_)) => {} // random collisions are legal rejections
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
        }
    }
}
