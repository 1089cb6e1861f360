use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model family and orders.
///
/// `ArmaGarch { ma: true }` is ARMA(1,1)–GARCH(1,1); with `ma: false` the MA
/// coefficient is absent and the model is AR(1)–GARCH(1,1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Garch { p1: usize, p2: usize },
    ArmaGarch { ma: bool },
}

impl ModelKind {
    pub const GARCH11: ModelKind = ModelKind::Garch { p1: 1, p2: 1 };
    pub const ARMA_GARCH: ModelKind = ModelKind::ArmaGarch { ma: true };
    pub const AR_GARCH: ModelKind = ModelKind::ArmaGarch { ma: false };

    /// Number of location parameters (dimension of s₁).
    pub fn q(self) -> usize {
        match self {
            ModelKind::Garch { .. } => 0,
            ModelKind::ArmaGarch { ma } => 1 + usize::from(ma),
        }
    }

    /// Number of scale parameters (dimension of s₂).
    pub fn r(self) -> usize {
        let (p1, p2) = self.garch_orders();
        1 + p1 + p2
    }

    pub fn dim(self) -> usize {
        self.q() + self.r()
    }

    pub fn garch_orders(self) -> (usize, usize) {
        match self {
            ModelKind::Garch { p1, p2 } => (p1, p2),
            ModelKind::ArmaGarch { .. } => (1, 1),
        }
    }

    pub fn has_mean(self) -> bool {
        self.q() > 0
    }

    /// Names of the parameter coordinates in storage order.
    pub fn parameter_names(self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        if let ModelKind::ArmaGarch { ma } = self {
            names.push("a".to_string());
            if ma {
                names.push("b".to_string());
            }
        }
        names.push("alpha0".to_string());
        let (p1, p2) = self.garch_orders();
        if p1 == 1 && p2 == 1 {
            names.push("alpha".into());
            names.push("beta".into());
        } else {
            names.extend((1..=p1).map(|j| format!("alpha{j}")));
            names.extend((1..=p2).map(|j| format!("beta{j}")));
        }
        names
    }

    fn check(self) -> Result<()> {
        if let ModelKind::Garch { p1, p2 } = self {
            if p1 == 0 {
                return Err(Error::Input("GARCH order p1 must be at least 1".into()));
            }
            if p1 > 20 || p2 > 20 {
                return Err(Error::Input(format!("GARCH orders ({p1}, {p2}) are unreasonably large")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Garch { p1, p2 } => write!(f, "garch({p1},{p2})"),
            ModelKind::ArmaGarch { ma: true } => f.write_str("arma-garch"),
            ModelKind::ArmaGarch { ma: false } => f.write_str("ar-garch"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    /// Accepts `garch`, `garch(p1,p2)`, `arma-garch` and `ar-garch`.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.trim().to_ascii_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
        let kind = match key.as_str() {
            "garch" => ModelKind::GARCH11,
            "arma-garch" | "arma_garch" => ModelKind::ARMA_GARCH,
            "ar-garch" | "ar_garch" => ModelKind::AR_GARCH,
            other => {
                let orders = other
                    .strip_prefix("garch(")
                    .and_then(|rest| rest.strip_suffix(')'))
                    .and_then(|inner| inner.split_once(','))
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
                match orders {
                    Some((p1, p2)) => ModelKind::Garch { p1, p2 },
                    None => {
                        return Err(Error::Input(format!(
                            "unknown model `{s}` (expected garch, garch(p1,p2), arma-garch or ar-garch)"
                        )))
                    }
                }
            }
        };
        kind.check()?;
        Ok(kind)
    }
}

/// Concrete box and simplex constraints defining the parameter space Θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Upper bound on Σα + Σβ.
    pub rho0: f64,
    /// Lower bound on every α_j and β_j.
    pub coef_lower: f64,
    /// Upper bound on every α_j and β_j.
    pub coef_upper: f64,
    pub alpha0_lower: f64,
    pub alpha0_upper: f64,
    /// |a| and |b| may not exceed this.
    pub arma_limit: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            rho0: 0.999,
            coef_lower: 1e-6,
            coef_upper: 0.999,
            alpha0_lower: 1e-6,
            alpha0_upper: 1e8,
            arma_limit: 0.999,
        }
    }
}

/// Parameter vector of a GARCH(p₁,p₂), AR(1)–GARCH(1,1) or
/// ARMA(1,1)–GARCH(1,1) model.
///
/// Storage order is `(a, [b], α₀, α₁..α_{p₁}, β₁..β_{p₂})`, i.e. the location
/// block s₁ first and the scale block s₂ second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    kind: ModelKind,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn from_vec(kind: ModelKind, values: Vec<f64>) -> Result<Self> {
        kind.check()?;
        if values.len() != kind.dim() {
            return Err(Error::Input(format!(
                "{kind} takes {} parameters, got {}",
                kind.dim(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("parameters must be finite".into()));
        }
        Ok(ModelParams { kind, values })
    }

    pub fn garch(alpha0: f64, alpha: &[f64], beta: &[f64]) -> Result<Self> {
        let mut v = vec![alpha0];
        v.extend_from_slice(alpha);
        v.extend_from_slice(beta);
        Self::from_vec(ModelKind::Garch { p1: alpha.len(), p2: beta.len() }, v)
    }

    pub fn garch11(alpha0: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::garch(alpha0, &[alpha], &[beta])
    }

    pub fn arma_garch(a: f64, b: f64, alpha0: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::from_vec(ModelKind::ARMA_GARCH, vec![a, b, alpha0, alpha, beta])
    }

    pub fn ar_garch(a: f64, alpha0: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::from_vec(ModelKind::AR_GARCH, vec![a, alpha0, alpha, beta])
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Same model, new coordinates (no validation beyond length/finiteness).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_vec(self.kind, values)
    }

    pub fn a(&self) -> f64 {
        if self.kind.has_mean() {
            self.values[0]
        } else {
            0.0
        }
    }

    pub fn b(&self) -> f64 {
        match self.kind {
            ModelKind::ArmaGarch { ma: true } => self.values[1],
            _ => 0.0,
        }
    }

    pub fn alpha0(&self) -> f64 {
        self.values[self.kind.q()]
    }

    pub fn alpha(&self) -> &[f64] {
        let q = self.kind.q();
        let (p1, _) = self.kind.garch_orders();
        &self.values[q + 1..q + 1 + p1]
    }

    pub fn beta(&self) -> &[f64] {
        let q = self.kind.q();
        let (p1, _) = self.kind.garch_orders();
        &self.values[q + 1 + p1..]
    }

    /// Σα + Σβ.
    pub fn persistence(&self) -> f64 {
        self.alpha().iter().sum::<f64>() + self.beta().iter().sum::<f64>()
    }

    /// Unconditional variance α₀ / (1 − Σα − Σβ) of the GARCH errors.
    pub fn unconditional_variance(&self) -> f64 {
        self.alpha0() / (1.0 - self.persistence())
    }

    /// 3α² + 2αβ + β² for the first GARCH lag pair; below one means a finite
    /// fourth moment for Gaussian innovations in GARCH(1,1).
    pub fn fourth_moment_index(&self) -> f64 {
        let a = self.alpha().first().copied().unwrap_or(0.0);
        let b = self.beta().first().copied().unwrap_or(0.0);
        3.0 * a * a + 2.0 * a * b + b * b
    }

    /// Checks membership in Θ.
    pub fn validate(&self, bounds: &Bounds) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.kind.has_mean() {
            let (a, b) = (self.a(), self.b());
            if a.abs() > bounds.arma_limit || b.abs() > bounds.arma_limit {
                return fail(format!("ARMA coefficients (a={a}, b={b}) must lie inside (-1, 1)"));
            }
            if self.kind == ModelKind::ARMA_GARCH && a + b == 0.0 {
                return fail("a + b = 0 makes the ARMA(1,1) part unidentifiable".into());
            }
        }
        let alpha0 = self.alpha0();
        if !(alpha0 >= bounds.alpha0_lower && alpha0 <= bounds.alpha0_upper) {
            return fail(format!(
                "alpha0 = {alpha0} outside [{}, {}]",
                bounds.alpha0_lower, bounds.alpha0_upper
            ));
        }
        for &c in self.alpha().iter().chain(self.beta()) {
            if !(c >= bounds.coef_lower && c <= bounds.coef_upper) {
                return fail(format!(
                    "GARCH coefficient {c} outside [{}, {}]",
                    bounds.coef_lower, bounds.coef_upper
                ));
            }
        }
        let s = self.persistence();
        if s > bounds.rho0 {
            return fail(format!("sum of alpha and beta is {s}, exceeding {}", bounds.rho0));
        }
        Ok(())
    }

    /// Euclidean projection onto the box-and-simplex set Θ.
    ///
    /// The a + b ≠ 0 condition is not a closed constraint and is left alone.
    pub fn project(&self, bounds: &Bounds) -> ModelParams {
        let mut v = self.values.clone();
        project_values(self.kind, &mut v, bounds);
        ModelParams { kind: self.kind, values: v }
    }
}

/// In-place projection of a raw coordinate vector onto Θ.
pub(crate) fn project_values(kind: ModelKind, v: &mut [f64], bounds: &Bounds) {
    let q = kind.q();
    for x in &mut v[..q] {
        *x = x.clamp(-bounds.arma_limit, bounds.arma_limit);
    }
    v[q] = v[q].clamp(bounds.alpha0_lower, bounds.alpha0_upper);
    let coefs = &mut v[q + 1..];
    let (lo, hi) = (bounds.coef_lower, bounds.coef_upper);
    let clipped_sum = |shift: f64, c: &[f64]| c.iter().map(|x| (x - shift).clamp(lo, hi)).sum::<f64>();
    if clipped_sum(0.0, coefs) <= bounds.rho0 {
        for x in coefs.iter_mut() {
            *x = x.clamp(lo, hi);
        }
        return;
    }
    // Find the multiplier λ ≥ 0 with Σ clip(c − λ) = ρ₀.
    let mut lam_lo = 0.0;
    let mut lam_hi = coefs.iter().fold(0.0_f64, |m, &x| m.max(x - lo)).max(1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lam_lo + lam_hi);
        if clipped_sum(mid, coefs) > bounds.rho0 {
            lam_lo = mid;
        } else {
            lam_hi = mid;
        }
        if lam_hi - lam_lo < 1e-15 {
            break;
        }
    }
    for x in coefs.iter_mut() {
        *x = (*x - lam_hi).clamp(lo, hi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dimensions() {
        assert_eq!((ModelKind::GARCH11.q(), ModelKind::GARCH11.r()), (0, 3));
        assert_eq!((ModelKind::ARMA_GARCH.q(), ModelKind::ARMA_GARCH.r()), (2, 3));
        assert_eq!((ModelKind::AR_GARCH.q(), ModelKind::AR_GARCH.r()), (1, 3));
        assert_eq!(ModelKind::Garch { p1: 2, p2: 3 }.r(), 6);
    }

    #[test]
    fn parses_model_keys() {
        assert_eq!("garch".parse::<ModelKind>().unwrap(), ModelKind::GARCH11);
        assert_eq!("GARCH(2, 1)".parse::<ModelKind>().unwrap(), ModelKind::Garch { p1: 2, p2: 1 });
        assert_eq!("arma-garch".parse::<ModelKind>().unwrap(), ModelKind::ARMA_GARCH);
        assert_eq!("ar-garch".parse::<ModelKind>().unwrap(), ModelKind::AR_GARCH);
        assert!("egarch".parse::<ModelKind>().is_err());
        assert!("garch(0,1)".parse::<ModelKind>().is_err());
    }

    #[test]
    fn accessors_follow_storage_order() {
        let p = ModelParams::arma_garch(0.5, -0.2, 0.025, 0.25, 0.5).unwrap();
        assert_eq!((p.a(), p.b(), p.alpha0()), (0.5, -0.2, 0.025));
        assert_eq!((p.alpha(), p.beta()), (&[0.25][..], &[0.5][..]));
        let g = ModelParams::garch(0.1, &[0.1, 0.05], &[0.6]).unwrap();
        assert_eq!(g.alpha(), &[0.1, 0.05]);
        assert_eq!(g.beta(), &[0.6]);
        assert_eq!(g.a(), 0.0);
    }

    #[test]
    fn validation_rejects_points_outside_theta() {
        let b = Bounds::default();
        assert!(ModelParams::garch11(0.025, 0.25, 0.5).unwrap().validate(&b).is_ok());
        assert!(ModelParams::garch11(0.025, 0.6, 0.5).unwrap().validate(&b).is_err());
        assert!(ModelParams::garch11(0.0, 0.2, 0.5).unwrap().validate(&b).is_err());
        assert!(ModelParams::arma_garch(0.3, -0.3, 0.1, 0.1, 0.5).unwrap().validate(&b).is_err());
        assert!(ModelParams::arma_garch(1.2, 0.0, 0.1, 0.1, 0.5).unwrap().validate(&b).is_err());
        assert!(ModelParams::ar_garch(0.0, 0.1, 0.1, 0.5).unwrap().validate(&b).is_ok());
    }

    proptest! {
        #[test]
        fn projection_lands_in_theta_and_is_idempotent(
            raw in proptest::collection::vec(-2.0f64..2.0, 5),
        ) {
            let bounds = Bounds::default();
            let p = ModelParams::from_vec(ModelKind::ARMA_GARCH, raw).unwrap();
            let once = p.project(&bounds);
            let mut relaxed = once.clone();
            // a + b = 0 is allowed by the projection, so skip that check.
            if relaxed.a() + relaxed.b() == 0.0 {
                relaxed.values[1] += if relaxed.b() > 0.0 { -1e-3 } else { 1e-3 };
            }
            prop_assert!(relaxed.validate(&bounds).is_ok());
            let twice = once.project(&bounds);
            for (x, y) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
