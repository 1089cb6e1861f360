//! Adaptive Gauss–Kronrod quadrature over finite and infinite intervals.

// Nodes and weights are quoted to the published precision.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_DEPTH: usize = 60;
const MAX_INTERVALS: usize = 20_000;

/// One 15-point Kronrod rule on [a, b]; returns (estimate, error estimate).
fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Integrate `f` over the finite interval [a, b] to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut stack = vec![(a, b, tol, 0usize)];
    let mut total = 0.0;
    let mut intervals = 0usize;
    while let Some((lo, hi, local_tol, depth)) = stack.pop() {
        intervals += 1;
        if intervals > MAX_INTERVALS {
            return Err(Error::Numeric("quadrature exceeded its interval budget".into()));
        }
        let (est, err) = kronrod15(&f, lo, hi);
        if !est.is_finite() {
            return Err(Error::Numeric(format!("non-finite integrand on [{lo}, {hi}]")));
        }
        if err <= local_tol || depth >= MAX_DEPTH {
            if err > local_tol {
                return Err(Error::Numeric(format!(
                    "quadrature did not converge on [{lo}, {hi}] (error {err:.3e})"
                )));
            }
            total += est;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * local_tol, depth + 1));
            stack.push((mid, hi, 0.5 * local_tol, depth + 1));
        }
    }
    Ok(total)
}

/// Integrate over [a, ∞) through the map x = a + t/(1 − t), t ∈ [0, 1).
pub fn integrate_upper_tail<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> Result<f64> {
    integrate(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            let v = f(a + t / s) / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Integrate over (−∞, b] by reflection.
pub fn integrate_lower_tail<F: Fn(f64) -> f64>(f: F, b: f64, tol: f64) -> Result<f64> {
    integrate_upper_tail(|x| f(-x), -b, tol)
}

/// Integrate over ℝ, splitting at `split` (put kinks of the integrand there).
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, split: f64, tol: f64) -> Result<f64> {
    Ok(integrate_lower_tail(&f, split, 0.5 * tol)? + integrate_upper_tail(&f, split, 0.5 * tol)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-12).unwrap();
        assert!((v - (64.0 - 1.0) / 6.0 + 9.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_tail() {
        let v = integrate_upper_tail(|x| (-x).exp(), 0.0, 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-11);
    }

    #[test]
    fn gaussian_over_the_line() {
        let v = integrate_real_line(|x| (-0.5 * x * x).exp(), 0.0, 1e-12).unwrap();
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-11);
    }
}
