//! Null innovation distributions F₀.
//!
//! A [`NullFamily`] bundles the density, distribution function, quantile,
//! location score ψ₀ = f₀'/f₀ and scale score φ₀(x) = (1 + xψ₀(x))/2 of a
//! hypothesised innovation law, together with the Fisher constants
//! b₁ = E ψ₀²(η) and b₂ = E φ₀²(η) and the grid range used when simulating
//! the limiting process.
//!
//! Two families are provided: the standard normal and the unit Laplace
//! density e^(−|x|)/2. The Laplace law is deliberately *not* rescaled to unit
//! variance.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::quadrature;

const QUAD_TOL: f64 = 1e-12;

/// Which closed-form null family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    StandardNormal,
    DoubleExponential,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::StandardNormal, Family::DoubleExponential];

    /// Key used in configs, CSV tables and CLI flags.
    pub fn key(self) -> &'static str {
        match self {
            Family::StandardNormal => "normal",
            Family::DoubleExponential => "dexp",
        }
    }

    /// Default simulation range for the limiting process.
    pub fn grid_range(self) -> (f64, f64) {
        match self {
            Family::StandardNormal => (-4.0, 4.0),
            Family::DoubleExponential => (-8.0, 8.0),
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        match self {
            Family::StandardNormal => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            Family::DoubleExponential => 0.5 * (-x.abs()).exp(),
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Family::StandardNormal => normal_cdf(x),
            Family::DoubleExponential => {
                if x < 0.0 {
                    0.5 * x.exp()
                } else {
                    1.0 - 0.5 * (-x).exp()
                }
            }
        }
    }

    pub fn quantile(self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile level {p} is not inside (0, 1)")));
        }
        Ok(match self {
            Family::StandardNormal => normal_quantile(p),
            Family::DoubleExponential => {
                if p < 0.5 {
                    (2.0 * p).ln()
                } else {
                    -(2.0 * (1.0 - p)).ln()
                }
            }
        })
    }

    /// Location score f₀'/f₀. Zero at the Laplace kink.
    pub fn psi0(self, x: f64) -> f64 {
        match self {
            Family::StandardNormal => -x,
            Family::DoubleExponential => {
                if x > 0.0 {
                    -1.0
                } else if x < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Scale score (1 + xψ₀(x))/2.
    pub fn phi0(self, x: f64) -> f64 {
        0.5 * (1.0 + x * self.psi0(x))
    }

    pub fn sample_one<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Family::StandardNormal => StandardNormal.sample(rng),
            Family::DoubleExponential => {
                let e: f64 = Exp1.sample(rng);
                if rng.random::<bool>() {
                    e
                } else {
                    -e
                }
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "n" | "gaussian" => Ok(Family::StandardNormal),
            "dexp" | "laplace" | "double-exponential" => Ok(Family::DoubleExponential),
            other => Err(Error::Input(format!("unknown null family `{other}` (expected normal|dexp)"))),
        }
    }
}

/// A fitted null distribution with its Fisher constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullFamily {
    family: Family,
    grid_range: (f64, f64),
    b1: f64,
    b2: f64,
}

impl NullFamily {
    /// Builds the family and computes b₁, b₂ by adaptive quadrature.
    pub fn new(family: Family) -> Result<Self> {
        let (b1, b2) = fisher_by_quadrature(family)?;
        if !(b1.is_finite() && b2.is_finite() && b1 > 0.0 && b2 > 0.0) {
            return Err(Error::Numeric(format!(
                "Fisher constants for {family} are not positive and finite: ({b1}, {b2})"
            )));
        }
        Ok(NullFamily { family, grid_range: family.grid_range(), b1, b2 })
    }

    pub fn normal() -> Self {
        Self::new(Family::StandardNormal).expect("normal Fisher constants")
    }

    pub fn double_exponential() -> Self {
        Self::new(Family::DoubleExponential).expect("Laplace Fisher constants")
    }

    pub fn from_key(key: &str) -> Result<Self> {
        Self::new(key.parse()?)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn key(&self) -> &'static str {
        self.family.key()
    }

    pub fn grid_range(&self) -> (f64, f64) {
        self.grid_range
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.family.pdf(x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.family.cdf(x)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        self.family.quantile(p)
    }

    pub fn psi0(&self, x: f64) -> f64 {
        self.family.psi0(x)
    }

    pub fn phi0(&self, x: f64) -> f64 {
        self.family.phi0(x)
    }

    /// (b₁, b₂), computed once at construction.
    pub fn fisher_constants(&self) -> (f64, f64) {
        (self.b1, self.b2)
    }

    pub fn b1(&self) -> f64 {
        self.b1
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    /// `n` i.i.d. draws from F₀.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.family.sample_one(rng)).collect()
    }
}

fn fisher_by_quadrature(family: Family) -> Result<(f64, f64)> {
    let b1 = quadrature::integrate_real_line(
        |x| {
            let s = family.psi0(x);
            s * s * family.pdf(x)
        },
        0.0,
        QUAD_TOL,
    )?;
    let b2 = quadrature::integrate_real_line(
        |x| {
            let s = family.phi0(x);
            s * s * family.pdf(x)
        },
        0.0,
        QUAD_TOL,
    )?;
    Ok((b1, b2))
}

/// Φ(x) through the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Φ⁻¹(p): rational initial guess refined by Halley steps on Φ.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        // Work on the smaller tail to keep the residual accurate.
        let e = if x < 0.0 {
            normal_cdf(x) - p
        } else {
            (1.0 - p) - 0.5 * erfc(x * FRAC_1_SQRT_2)
        };
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}
