//! Innovation laws used in simulation: the null families and the
//! alternatives A₁–A₅ of the size/power experiment.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::errordist::Family;
use crate::error::{Error, Result};

/// Anything that yields i.i.d. innovations.
pub trait Innovations: Sync {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;

    fn draw_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InnovationLaw {
    /// N(0, 1).
    Normal,
    /// `scale · t_df`.
    ScaledT { df: f64, scale: f64 },
    /// Laplace e^(−|x|)/2, optionally divided by √2 to get unit variance.
    DoubleExponential { unit_variance: bool },
    /// [0.5 N(−3, 1) + 0.5 N(3, 1)] / √10.
    BimodalMixture,
}

impl InnovationLaw {
    /// √(3/5) t₅.
    pub const A1: InnovationLaw = InnovationLaw::ScaledT { df: 5.0, scale: 0.774_596_669_241_483_4 };
    /// √(1/2) t₄.
    pub const A2: InnovationLaw = InnovationLaw::ScaledT { df: 4.0, scale: std::f64::consts::FRAC_1_SQRT_2 };
    /// √(1/3) t₃.
    pub const A3: InnovationLaw = InnovationLaw::ScaledT { df: 3.0, scale: 0.577_350_269_189_625_8 };
    /// Unscaled Laplace.
    pub const A4: InnovationLaw = InnovationLaw::DoubleExponential { unit_variance: false };
    pub const A5: InnovationLaw = InnovationLaw::BimodalMixture;

    pub fn from_family(family: Family) -> Self {
        match family {
            Family::StandardNormal => InnovationLaw::Normal,
            Family::DoubleExponential => InnovationLaw::DoubleExponential { unit_variance: false },
        }
    }

    /// Law with the Laplace component rescaled to unit variance when `rescale`.
    pub fn with_unit_variance(self, rescale: bool) -> Self {
        match self {
            InnovationLaw::DoubleExponential { .. } => InnovationLaw::DoubleExponential { unit_variance: rescale },
            other => other,
        }
    }

    pub fn key(&self) -> String {
        match *self {
            InnovationLaw::Normal => "normal".into(),
            l if l == Self::A1 => "a1".into(),
            l if l == Self::A2 => "a2".into(),
            l if l == Self::A3 => "a3".into(),
            InnovationLaw::DoubleExponential { unit_variance: false } => "a4".into(),
            InnovationLaw::DoubleExponential { unit_variance: true } => "a4-unit".into(),
            InnovationLaw::BimodalMixture => "a5".into(),
            InnovationLaw::ScaledT { df, scale } => format!("t{df}x{scale}"),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            InnovationLaw::Normal | InnovationLaw::BimodalMixture => 1.0,
            InnovationLaw::ScaledT { df, scale } => scale * scale * df / (df - 2.0),
            InnovationLaw::DoubleExponential { unit_variance } => {
                if unit_variance {
                    1.0
                } else {
                    2.0
                }
            }
        }
    }
}

impl Innovations for InnovationLaw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InnovationLaw::Normal => StandardNormal.sample(rng),
            InnovationLaw::ScaledT { df, scale } => {
                let t = StudentT::new(df).expect("positive degrees of freedom");
                scale * t.sample(rng)
            }
            InnovationLaw::DoubleExponential { unit_variance } => {
                let x = Family::DoubleExponential.sample_one(rng);
                if unit_variance {
                    x * std::f64::consts::FRAC_1_SQRT_2
                } else {
                    x
                }
            }
            InnovationLaw::BimodalMixture => {
                let z: f64 = StandardNormal.sample(rng);
                let centre = if rng.random::<bool>() { 3.0 } else { -3.0 };
                (centre + z) / 10f64.sqrt()
            }
        }
    }
}

impl fmt::Display for InnovationLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for InnovationLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "a0" | "null" => Ok(InnovationLaw::Normal),
            "a1" => Ok(Self::A1),
            "a2" => Ok(Self::A2),
            "a3" => Ok(Self::A3),
            "a4" | "dexp" => Ok(Self::A4),
            "a4-unit" | "dexp-unit" => Ok(InnovationLaw::DoubleExponential { unit_variance: true }),
            "a5" => Ok(Self::A5),
            other => Err(Error::Input(format!("unknown innovation law `{other}` (expected normal|a1..a5)"))),
        }
    }
}

/// Contaminated law (1 − w)·F₀ + w·F̃: each draw comes from `alternative`
/// with probability `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contaminated<A: Innovations, B: Innovations> {
    pub null: A,
    pub alternative: B,
    pub weight: f64,
}

impl<A: Innovations, B: Innovations> Innovations for Contaminated<A, B> {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.weight {
            self.alternative.draw(rng)
        } else {
            self.null.draw(rng)
        }
    }
}
