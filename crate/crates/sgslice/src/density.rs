//! Legendre conjugate of the internal-energy density κσ^γ and every derived
//! scalar the cell integrals need.
//!
//! All of these are functions of the slack t = w + c0 − c(x, z) (with the
//! additive constant folded back in); the fluid height is σ = (f*)′(t), zero
//! where t ≤ 0, so cells taper off smoothly at their free boundary.

use crate::error::SgError;
use crate::params::ThermoConstants;
use crate::Result;

/// f*(t) = sup_σ { σt − κσ^γ } = D·t₊^q with q = γ/(γ−1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateDensity {
    pub gamma: f64,
    pub kappa: f64,
    /// Exner-pressure coefficient: Π = exner_coeff · σ^(γ−1).
    pub exner_coeff: f64,
    /// D above.
    coeff: f64,
    /// q above.
    exponent: f64,
}

impl ConjugateDensity {
    pub fn new(gamma: f64, kappa: f64, exner_coeff: f64) -> Result<Self> {
        if !(gamma > 1.0 && gamma <= 2.0) {
            return Err(SgError::Config(format!("gamma must lie in (1, 2], got {gamma}")));
        }
        if !(kappa > 0.0) {
            return Err(SgError::Config(format!("kappa must be positive, got {kappa}")));
        }
        if !(exner_coeff > 0.0) {
            return Err(SgError::Config(format!(
                "exner coefficient must be positive, got {exner_coeff}"
            )));
        }
        let q = gamma / (gamma - 1.0);
        let d = (gamma - 1.0) / gamma * (kappa * gamma).powf(-1.0 / (gamma - 1.0));
        Ok(ConjugateDensity { gamma, kappa, exner_coeff, coeff: d, exponent: q })
    }

    pub fn from_thermo(thermo: &ThermoConstants) -> Result<Self> {
        Self::new(thermo.gamma, thermo.kappa, thermo.exner_coeff)
    }

    /// f*(t).
    #[inline]
    pub fn fstar(&self, t: f64) -> f64 {
        if t > 0.0 {
            self.coeff * t.powf(self.exponent)
        } else {
            0.0
        }
    }

    /// σ(t) = (f*)′(t) = (t₊/(κγ))^(1/(γ−1)) — the fluid height.
    #[inline]
    pub fn fstar_prime(&self, t: f64) -> f64 {
        if t > 0.0 {
            (t / (self.kappa * self.gamma)).powf(1.0 / (self.gamma - 1.0))
        } else {
            0.0
        }
    }

    /// (f*)″(t); for γ = 2 this is the step 1/(2κ)·𝟙{t>0}.
    #[inline]
    pub fn fstar_second(&self, t: f64) -> f64 {
        if t > 0.0 {
            let kg = self.kappa * self.gamma;
            (t / kg).powf((2.0 - self.gamma) / (self.gamma - 1.0)) / (kg * (self.gamma - 1.0))
        } else {
            0.0
        }
    }

    /// H(t) = ∫₀ᵗ f* = D·t₊^(q+1)/(q+1).
    #[inline]
    pub fn antideriv(&self, t: f64) -> f64 {
        if t > 0.0 {
            self.coeff * t.powf(self.exponent + 1.0) / (self.exponent + 1.0)
        } else {
            0.0
        }
    }

    /// A(t) = t·f*(t) − H(t) = q·H(t); shows up in the vertical-moment
    /// boundary reduction.
    #[inline]
    pub fn moment_aux(&self, t: f64) -> f64 {
        self.exponent * self.antideriv(t)
    }

    /// σ(t)^γ = ((f*)′(t))^γ = (κγ)^(−q)·t₊^q.
    #[inline]
    pub fn sigma_pow_gamma(&self, t: f64) -> f64 {
        if t > 0.0 {
            (t / (self.kappa * self.gamma)).powf(self.exponent)
        } else {
            0.0
        }
    }

    /// σ(t)^(γ−1) = t₊/(κγ) — exactly linear in the slack.
    #[inline]
    pub fn sigma_pow_gm1(&self, t: f64) -> f64 {
        if t > 0.0 {
            t / (self.kappa * self.gamma)
        } else {
            0.0
        }
    }

    /// Exner pressure Π(t) = exner_coeff · σ(t)^(γ−1).
    #[inline]
    pub fn exner(&self, t: f64) -> f64 {
        self.exner_coeff * self.sigma_pow_gm1(t)
    }

    /// Internal-energy density κσ^γ = f*(t)/(γ−1) by the Legendre identity.
    #[inline]
    pub fn internal_energy_density(&self, t: f64) -> f64 {
        self.fstar(t) / (self.gamma - 1.0)
    }

    /// 1/(q+1) = (γ−1)/(2γ−1): prefactor of the ∮ t·σ^γ dp₁ reduction.
    #[inline]
    pub fn sigma_gamma_prefactor(&self) -> f64 {
        1.0 / (self.exponent + 1.0)
    }
}

/// Density family anchored at a reference slack t_ref, evaluating only
/// differences g(t_ref + ds) − g(t_ref).
///
/// The boundary reductions integrate such differences around each cell
/// fragment. Subtracting two direct `powf` evaluations is not good enough
/// when t_ref is large and ds tiny (t ~ 5e2, ds ~ 1e−5 in physical-scale
/// runs): powf carries a pow·|ln t|·ulp relative error, ~1e−11 absolute on
/// f* there, which would drown the ~1e−4 difference's low digits and leak
/// ~1e−10 noise into cell masses. Routing through expm1∘log1p keeps the
/// difference accurate to machine precision relative to itself.
#[derive(Debug, Clone, Copy)]
pub struct DensityRef<'a> {
    cd: &'a ConjugateDensity,
    pub tref: f64,
    fref: f64,
    sref: f64,
    href: f64,
    gref: f64,
}

impl<'a> DensityRef<'a> {
    pub fn new(cd: &'a ConjugateDensity, tref: f64) -> Self {
        DensityRef {
            cd,
            tref,
            fref: cd.fstar(tref),
            sref: cd.fstar_prime(tref),
            href: cd.antideriv(tref),
            gref: tref * cd.sigma_pow_gamma(tref),
        }
    }

    /// gref·[(1 + ds/t_ref)^pow − 1] for the smooth branch, with the three
    /// kinked branches (either side of t = 0) handled exactly.
    #[inline]
    fn rel(&self, ds: f64, pow: f64, gref: f64, g: impl Fn(f64) -> f64) -> f64 {
        let t = self.tref + ds;
        if self.tref > 0.0 {
            if t > 0.0 {
                gref * f64::exp_m1(pow * f64::ln_1p(ds / self.tref))
            } else {
                -gref
            }
        } else if t > 0.0 {
            g(t)
        } else {
            0.0
        }
    }

    /// f*(t_ref + ds) − f*(t_ref)
    #[inline]
    pub fn fstar_rel(&self, ds: f64) -> f64 {
        self.rel(ds, self.cd.exponent, self.fref, |t| self.cd.fstar(t))
    }

    /// (f*)′(t_ref + ds) − (f*)′(t_ref)
    #[inline]
    pub fn fstar_prime_rel(&self, ds: f64) -> f64 {
        self.rel(ds, self.cd.exponent - 1.0, self.sref, |t| self.cd.fstar_prime(t))
    }

    /// H(t_ref + ds) − H(t_ref)
    #[inline]
    pub fn antideriv_rel(&self, ds: f64) -> f64 {
        self.rel(ds, self.cd.exponent + 1.0, self.href, |t| self.cd.antideriv(t))
    }

    /// t·σ^γ at t_ref + ds minus the same at t_ref
    #[inline]
    pub fn t_sigma_gamma_rel(&self, ds: f64) -> f64 {
        self.rel(ds, self.cd.exponent + 1.0, self.gref, |t| t * self.cd.sigma_pow_gamma(t))
    }

    /// B(t_ref + ds) = ∫ over τ from t_ref to t_ref+ds of (τ − t_ref)σ(τ) dτ,
    /// the anchored second moment used by the x₂-moment reduction. B is a
    /// second-order difference (B ~ σ·ds²/2), so it is assembled from the two
    /// first-order relative evaluations, each machine-accurate in absolute
    /// terms; their cancellation then costs nothing.
    #[inline]
    pub fn moment_aux_rel(&self, ds: f64) -> f64 {
        let t = self.tref + ds;
        if self.tref > 0.0 {
            if t > 0.0 {
                self.cd.exponent * self.antideriv_rel(ds) - self.tref * self.fstar_rel(ds)
            } else {
                // all mass below the kink: ∫ over (0, t_ref) of (t_ref − τ)σ dτ
                self.href
            }
        } else if t > 0.0 {
            self.cd.moment_aux(t) - self.tref * self.cd.fstar(t)
        } else {
            0.0
        }
    }
}
