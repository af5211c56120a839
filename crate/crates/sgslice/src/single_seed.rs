//! Closed-form optimum for one seed holding the entire domain mass on the
//! benchmark strip (−1,1]×[0,1] with F = G = 1, γ = 2, κ = ½, c₀ = 1.
//!
//! Everything reduces to column integrals of the slack t = w + 1 − u²/(2z₂)
//! − x₂/z₂ (u the horizontal offset from the seed), expressed through
//! y = z₂(w + 1): the scaled slack at the bottom centre of the strip. The wet
//! set is {x₂ < s(u)} with s(u) = y − u²/2, and its shape — saturated strip,
//! lid-clipped, full-width band below the lid, or a parabolic cap detached
//! from the side walls — selects one of four weight formulas.

use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::chart::Seed;
use crate::error::SgError;
use crate::Result;

/// Heights at or above this fill the whole strip with positive slack.
const UPPER_MIN: f64 = 5.0 / 3.0;
/// Heights at or below this keep the optimal cell entirely below the lid.
const MIDDLE_MAX: f64 = 43.0 / 60.0;
/// Below this the optimal support no longer reaches the side walls: the
/// full-width closed form stops solving the mass constraint and the wet set
/// is a parabolic cap with the 2/5-power weight law.
const MIDDLE_MIN: f64 = 2.0 / 15.0;

/// Which regime of the piecewise weight map applies at a given height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Slack positive on the whole strip: z₂ ≥ 5/3.
    Upper,
    /// Lid clips part of the cell; the mass constraint is solved numerically:
    /// 43/60 < z₂ < 5/3.
    Implicit,
    /// Full-width band below the lid: 2/15 ≤ z₂ ≤ 43/60.
    Middle,
    /// Parabolic cap detached from the side walls: z₂ < 2/15.
    Interior,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Upper => "upper",
            Branch::Implicit => "implicit",
            Branch::Middle => "middle",
            Branch::Interior => "interior",
        }
    }
}

/// Exact single-seed optimum at height `z2`: the weight balancing the cell
/// mass to 1, the resulting internal energy, and the regime it came from.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SingleSeedSolution {
    pub z2: f64,
    pub w_star: f64,
    pub e_i: f64,
    pub branch: Branch,
}

/// Cell mass as a function of y = z₂(w+1): ∫ t₊ over the strip, columns wet
/// below x₂ = min(s(u), 1) with s(u) = y − u²/2.
fn mass_of_y(y: f64, z2: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y <= 0.5 {
        // cap ends at u₀ = √(2y) < 1
        return 8.0 * SQRT_2 / 15.0 * (y * y * y.sqrt()) / z2;
    }
    let full = y * y - y / 3.0 + 0.05;
    if y <= 1.0 {
        return full / z2;
    }
    if y <= 1.5 {
        // lid kink at u₁ = √(2(y−1)) < 1 removes the over-lid excess
        let e = y - 1.0;
        return (full - 8.0 * SQRT_2 / 15.0 * (e * e * e.sqrt())) / z2;
    }
    (2.0 * y - 4.0 / 3.0) / z2
}

/// w-derivative of the mass: the area of the wet set.
fn support_area(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y <= 0.5 {
        4.0 * SQRT_2 / 3.0 * (y * y.sqrt())
    } else if y <= 1.0 {
        2.0 * y - 1.0 / 3.0
    } else if y <= 1.5 {
        let e = y - 1.0;
        2.0 * y - 1.0 / 3.0 - 4.0 * SQRT_2 / 3.0 * (e * e.sqrt())
    } else {
        2.0
    }
}

/// ∫ t₊² over the strip as a function of y; with Π₀ = 1 the internal energy
/// of the mass-1 cell is 1 minus this.
fn slack_sq_integral(y: f64, z2: f64) -> f64 {
    // ∫₀¹ (e − u²/2)³ du and its cap variant ∫₀^{√(2e)} (e − u²/2)³ du
    let cubic = |e: f64| e * e * e - 0.5 * e * e + 0.15 * e - 1.0 / 56.0;
    let cap = |e: f64| 16.0 * SQRT_2 / 35.0 * (e * e * e * e.sqrt());
    let t = if y <= 0.0 {
        0.0
    } else if y <= 0.5 {
        cap(y)
    } else if y <= 1.0 {
        cubic(y)
    } else if y <= 1.5 {
        cubic(y) - cap(y - 1.0)
    } else {
        cubic(y) - cubic(y - 1.0)
    };
    2.0 / (3.0 * z2 * z2) * t
}

fn upper_weight(z2: f64) -> f64 {
    (4.0 - 3.0 * z2) / (6.0 * z2)
}

fn middle_weight(z2: f64) -> f64 {
    (1.0 - 6.0 * z2 + 6.0 * (z2 - 1.0 / 45.0).sqrt()) / (6.0 * z2)
}

fn interior_weight(z2: f64) -> f64 {
    (15.0 * z2 / (8.0 * SQRT_2)).powf(0.4) / z2 - 1.0
}

/// Solve mass(w) = 1 on the lid-clipped regime by bisection with Newton
/// acceleration. The mass is strictly increasing in w (its derivative is the
/// wet area), so the bracket — the two adjacent closed forms widened by one —
/// is valid and halves on every pass even when the Newton step is rejected.
fn implicit_weight(z2: f64) -> Result<f64> {
    let wa = middle_weight(z2);
    let wb = upper_weight(z2);
    let mut lo = wa.min(wb) - 1.0;
    let mut hi = wa.max(wb) + 1.0;
    let err_at = |w: f64| mass_of_y(z2 * (w + 1.0), z2) - 1.0;
    if !(err_at(lo) < 0.0 && err_at(hi) > 0.0) {
        return Err(SgError::Numerics(format!(
            "single-seed mass constraint not bracketed at z2 = {z2}"
        )));
    }
    let mut w = 0.5 * (lo + hi);
    for _ in 0..120 {
        let err = err_at(w);
        if err.abs() <= 1e-15 {
            return Ok(w);
        }
        if err > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        let slope = support_area(z2 * (w + 1.0));
        let newton = w - err / slope;
        w = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    if err_at(w).abs() <= 1e-12 {
        Ok(w)
    } else {
        Err(SgError::Numerics(format!(
            "single-seed weight iteration stalled at z2 = {z2}"
        )))
    }
}

/// Optimal weight, internal energy, and regime for a single seed at height
/// `z2`; the closed forms cover every positive height.
pub fn single_seed_solution(z2: f64) -> Result<SingleSeedSolution> {
    if !z2.is_finite() || z2 <= 0.0 {
        return Err(SgError::SingularSeed { z2 });
    }
    let (w_star, branch) = if z2 >= UPPER_MIN {
        (upper_weight(z2), Branch::Upper)
    } else if z2 > MIDDLE_MAX {
        (implicit_weight(z2)?, Branch::Implicit)
    } else if z2 >= MIDDLE_MIN {
        (middle_weight(z2), Branch::Middle)
    } else {
        (interior_weight(z2), Branch::Interior)
    };
    let e_i = match branch {
        Branch::Upper => 0.5 - 19.0 / (90.0 * z2 * z2),
        Branch::Middle => {
            let root = (225.0 * z2 - 5.0).sqrt();
            1.0 - (630.0 * z2 * root + 28.0 * root - 20.0) / (14175.0 * z2 * z2)
        }
        Branch::Implicit | Branch::Interior => {
            1.0 - slack_sq_integral(z2 * (w_star + 1.0), z2)
        }
    };
    Ok(SingleSeedSolution { z2, w_star, e_i, branch })
}

pub fn single_seed_weight(z2: f64) -> Result<f64> {
    Ok(single_seed_solution(z2)?.w_star)
}

pub fn single_seed_internal_energy(z2: f64) -> Result<f64> {
    Ok(single_seed_solution(z2)?.e_i)
}

/// Exact trajectory from `z0`: uniform horizontal drift at the internal
/// energy of the initial height, the height itself never moving.
pub fn single_seed_trajectory(z0: Seed, t: f64) -> Result<Seed> {
    let sol = single_seed_solution(z0.z2)?;
    Seed::new(z0.z1 + sol.e_i * t, z0.z2)
}
