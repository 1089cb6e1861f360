//! Residual and conditional-variance recursions with their analytic first
//! derivatives, and the W-block weights built from them.
//!
//! For a path of length n the gradient arrays are stored row-major: row i of
//! `dh` holds ∂h_i/∂s in parameter storage order (location block first).

use serde::Serialize;

use super::params::{ModelKind, ModelParams};
use crate::error::{Error, Result};

/// Recursion state just before the first filtered observation.
///
/// Histories are stored most recent first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Presample {
    /// ε_{0}, ε_{−1}, … (length p₁); for pure GARCH these are past y values.
    pub eps: Vec<f64>,
    /// h_{0}, h_{−1}, … (length p₂).
    pub h: Vec<f64>,
    pub y_prev: f64,
}

/// Per-observation weights W₁₁ (q), W₁₂ (q) and W₂₂ (r), row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WBlocks {
    pub q: usize,
    pub r: usize,
    pub w11: Vec<f64>,
    pub w12: Vec<f64>,
    pub w22: Vec<f64>,
}

impl WBlocks {
    pub fn len(&self) -> usize {
        self.w22.len() / self.r
    }

    pub fn is_empty(&self) -> bool {
        self.w22.is_empty()
    }

    pub fn w11(&self, i: usize) -> &[f64] {
        &self.w11[i * self.q..(i + 1) * self.q]
    }

    pub fn w12(&self, i: usize) -> &[f64] {
        &self.w12[i * self.q..(i + 1) * self.q]
    }

    pub fn w22(&self, i: usize) -> &[f64] {
        &self.w22[i * self.r..(i + 1) * self.r]
    }

    /// Σ_i W₂₂,i.
    pub fn w22_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.r];
        for row in self.w22.chunks_exact(self.r) {
            for (acc, w) in s.iter_mut().zip(row) {
                *acc += w;
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gradients {
    /// ∂μ_i/∂s₁ = −∂ε_i/∂s₁, n × q.
    pub dmu: Vec<f64>,
    /// ∂h_i/∂s, n × (q + r).
    pub dh: Vec<f64>,
}

/// Output of [`filter`] / [`gradients`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilteredPath {
    pub kind: ModelKind,
    /// Index in the input series of the first filtered observation.
    pub offset: usize,
    pub eps: Vec<f64>,
    pub h: Vec<f64>,
    pub eta: Vec<f64>,
    pub gradients: Option<Gradients>,
    pub weights: Option<WBlocks>,
}

impl FilteredPath {
    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn q(&self) -> usize {
        self.kind.q()
    }

    pub fn r(&self) -> usize {
        self.kind.r()
    }

    pub fn dh(&self, i: usize) -> Option<&[f64]> {
        let d = self.kind.dim();
        self.gradients.as_ref().map(|g| &g.dh[i * d..(i + 1) * d])
    }

    pub fn dmu(&self, i: usize) -> Option<&[f64]> {
        let q = self.kind.q();
        self.gradients.as_ref().map(|g| &g.dmu[i * q..(i + 1) * q])
    }

    /// Gaussian quasi-log-likelihood Σ [−½ log h_i − ε_i²/(2h_i)].
    pub fn gaussian_loglik(&self) -> f64 {
        self.eps
            .iter()
            .zip(&self.h)
            .map(|(e, h)| -0.5 * h.ln() - e * e / (2.0 * h))
            .sum()
    }
}

/// Runs the ε and h recursions from the stationary presample.
pub fn filter(series: &[f64], params: &ModelParams) -> Result<FilteredPath> {
    run(series, params, None, false)
}

/// Runs the recursions from an explicit presample state.
pub fn filter_from(series: &[f64], params: &ModelParams, presample: &Presample) -> Result<FilteredPath> {
    run(series, params, Some(presample), false)
}

/// Filter plus first-derivative recursions and W-blocks.
pub fn gradients(series: &[f64], params: &ModelParams) -> Result<FilteredPath> {
    run(series, params, None, true)
}

pub fn gradients_from(series: &[f64], params: &ModelParams, presample: &Presample) -> Result<FilteredPath> {
    run(series, params, Some(presample), true)
}

/// The W-blocks of a path produced by [`gradients`].
pub fn w_blocks(path: &FilteredPath) -> Result<&WBlocks> {
    path.weights
        .as_ref()
        .ok_or_else(|| Error::Input("path was filtered without gradients".into()))
}

/// Minimum series length accepted by the filter.
pub fn min_length(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Garch { p1, p2 } => p1.max(p2) + 1,
        ModelKind::ArmaGarch { .. } => 2,
    }
}

fn run(series: &[f64], params: &ModelParams, presample: Option<&Presample>, with_grad: bool) -> Result<FilteredPath> {
    let kind = params.kind();
    let (p1, p2) = kind.garch_orders();
    let q = kind.q();
    let d = kind.dim();
    let has_mean = kind.has_mean();
    let ma = kind == ModelKind::ARMA_GARCH;

    if let Some(pos) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("series value at index {pos} is not finite")));
    }
    if series.len() < min_length(kind) {
        return Err(Error::Input(format!(
            "{kind} needs at least {} observations, got {}",
            min_length(kind),
            series.len()
        )));
    }
    let persistence = params.persistence();
    if !(persistence < 1.0) || params.alpha0() <= 0.0 {
        return Err(Error::Validation(format!(
            "non-stationary variance parameters (alpha0 = {}, persistence = {persistence})",
            params.alpha0()
        )));
    }

    let (a, b) = (params.a(), params.b());
    let alpha0 = params.alpha0();
    let alpha = params.alpha();
    let beta = params.beta();

    // Histories, most recent first.
    let mut eps_hist: Vec<f64>;
    let mut h_hist: Vec<f64>;
    let mut y_prev: f64;
    let offset: usize;
    // Derivative states: de_hist is p1 × q, dh_hist is p2 × d.
    let mut de_hist = vec![0.0; p1 * q];
    let mut dh_hist = vec![0.0; p2 * d];
    match presample {
        Some(state) => {
            if state.eps.len() != p1 || state.h.len() != p2 {
                return Err(Error::Input("presample state does not match the model orders".into()));
            }
            eps_hist = state.eps.clone();
            h_hist = state.h.clone();
            y_prev = state.y_prev;
            offset = 0;
        }
        None => {
            let unconditional = alpha0 / (1.0 - persistence);
            eps_hist = vec![0.0; p1];
            h_hist = vec![unconditional; p2];
            if has_mean {
                y_prev = series[0];
                offset = 1;
            } else {
                y_prev = 0.0;
                offset = 0;
            }
            if with_grad {
                // Exact derivative of the stationary starting value.
                let slope = 1.0 / (1.0 - persistence);
                let coef_slope = alpha0 * slope * slope;
                for row in dh_hist.chunks_exact_mut(d) {
                    row[q] = slope;
                    for v in &mut row[q + 1..] {
                        *v = coef_slope;
                    }
                }
            }
        }
    }
    let mut eps_prev = eps_hist.first().copied().unwrap_or(0.0);

    let n = series.len() - offset;
    let mut eps_out = Vec::with_capacity(n);
    let mut h_out = Vec::with_capacity(n);
    let mut eta_out = Vec::with_capacity(n);
    let mut dmu_out = Vec::with_capacity(if with_grad { n * q } else { 0 });
    let mut dh_out = Vec::with_capacity(if with_grad { n * d } else { 0 });
    let mut de = vec![0.0; q];
    let mut dh = vec![0.0; d];

    for (i, &y) in series[offset..].iter().enumerate() {
        let eps = if has_mean { y - a * y_prev - b * eps_prev } else { y };

        let mut h = alpha0;
        for (j, &c) in alpha.iter().enumerate() {
            h += c * eps_hist[j] * eps_hist[j];
        }
        for (j, &c) in beta.iter().enumerate() {
            h += c * h_hist[j];
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Numeric(format!("conditional variance {h} at observation {}", i + offset)));
        }

        if with_grad {
            if has_mean {
                // ε_i = y_i − a y_{i−1} − b ε_{i−1}
                let de_prev_a = if p1 > 0 { de_hist[0] } else { 0.0 };
                de[0] = -y_prev - b * de_prev_a;
                if ma {
                    de[1] = -eps_prev - b * de_hist[1];
                }
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..q {
                let mut acc = 0.0;
                for (j, &c) in alpha.iter().enumerate() {
                    acc += 2.0 * c * eps_hist[j] * de_hist[j * q + k];
                }
                dh[k] = acc;
            }
            dh[q] = 1.0;
            for j in 0..p1 {
                dh[q + 1 + j] = eps_hist[j] * eps_hist[j];
            }
            for j in 0..p2 {
                dh[q + 1 + p1 + j] = h_hist[j];
            }
            for (j, &c) in beta.iter().enumerate() {
                let past = &dh_hist[j * d..(j + 1) * d];
                for (acc, v) in dh.iter_mut().zip(past) {
                    *acc += c * v;
                }
            }
            dmu_out.extend(de.iter().map(|v| -v));
            dh_out.extend_from_slice(&dh);
            if p2 > 0 {
                dh_hist.copy_within(0..(p2 - 1) * d, d);
                dh_hist[..d].copy_from_slice(&dh);
            }
            if q > 0 && p1 > 0 {
                de_hist.copy_within(0..(p1 - 1) * q, q);
                de_hist[..q].copy_from_slice(&de);
            }
        }

        if p1 > 0 {
            eps_hist.copy_within(0..p1 - 1, 1);
            eps_hist[0] = eps;
        }
        if p2 > 0 {
            h_hist.copy_within(0..p2 - 1, 1);
            h_hist[0] = h;
        }
        y_prev = y;
        eps_prev = eps;

        eps_out.push(eps);
        h_out.push(h);
        eta_out.push(eps / h.sqrt());
    }

    let (gradients, weights) = if with_grad {
        let weights = build_w_blocks(kind, &h_out, &dmu_out, &dh_out);
        (Some(Gradients { dmu: dmu_out, dh: dh_out }), Some(weights))
    } else {
        (None, None)
    };

    Ok(FilteredPath { kind, offset, eps: eps_out, h: h_out, eta: eta_out, gradients, weights })
}

fn build_w_blocks(kind: ModelKind, h: &[f64], dmu: &[f64], dh: &[f64]) -> WBlocks {
    let (q, r, d) = (kind.q(), kind.r(), kind.dim());
    let n = h.len();
    let mut w11 = Vec::with_capacity(n * q);
    let mut w12 = Vec::with_capacity(n * q);
    let mut w22 = Vec::with_capacity(n * r);
    for (i, &hi) in h.iter().enumerate() {
        let root = hi.sqrt();
        w11.extend(dmu[i * q..(i + 1) * q].iter().map(|v| v / root));
        let row = &dh[i * d..(i + 1) * d];
        w12.extend(row[..q].iter().map(|v| v / hi));
        w22.extend(row[q..].iter().map(|v| v / hi));
    }
    WBlocks { q, r, w11, w12, w22 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::params::Bounds;
    use crate::rng;
    use rand::Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn beta_zero_gives_one_term_recursion() {
        let y = noise(30, 1);
        let p = ModelParams::garch11(0.2, 0.3, 0.0).unwrap();
        let path = gradients(&y, &p).unwrap();
        for i in 1..y.len() {
            let expect = 0.2 + 0.3 * y[i - 1] * y[i - 1];
            assert_eq!(path.h[i], expect);
            assert_eq!(path.dh(i).unwrap()[1], y[i - 1] * y[i - 1]);
        }
    }

    #[test]
    fn eta_times_root_h_is_eps() {
        let y = noise(100, 2);
        let p = ModelParams::arma_garch(0.4, 0.2, 0.1, 0.1, 0.6).unwrap();
        let path = filter(&y, &p).unwrap();
        assert_eq!(path.len(), 99);
        for i in 0..path.len() {
            let back = path.eta[i] * path.h[i].sqrt();
            assert!((back - path.eps[i]).abs() <= 4.0 * f64::EPSILON * path.eps[i].abs());
        }
    }

    #[test]
    fn variance_is_bounded_below_by_alpha0() {
        let y = noise(200, 3);
        let p = ModelParams::garch(0.05, &[0.1, 0.05], &[0.3, 0.2]).unwrap();
        let path = filter(&y, &p).unwrap();
        assert!(path.h.iter().all(|&h| h >= 0.05));
    }

    #[test]
    fn alpha0_derivative_settles_at_inverse_one_minus_beta() {
        let y = noise(400, 4);
        let p = ModelParams::garch11(0.025, 0.25, 0.5).unwrap();
        let path = gradients(&y, &p).unwrap();
        for i in 100..path.len() {
            assert!((path.dh(i).unwrap()[0] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_garch_has_empty_location_blocks() {
        let y = noise(50, 5);
        let path = gradients(&y, &ModelParams::garch11(0.1, 0.2, 0.5).unwrap()).unwrap();
        let w = w_blocks(&path).unwrap();
        assert_eq!((w.q, w.r), (0, 3));
        assert!(w.w11.is_empty() && w.w12.is_empty());
        assert_eq!(w.len(), 50);
    }

    #[test]
    fn arma_garch_block_dimensions_and_signs() {
        let y = noise(300, 6);
        let p = ModelParams::arma_garch(0.3, 0.2, 0.1, 0.15, 0.6).unwrap();
        let path = gradients(&y, &p).unwrap();
        let w = w_blocks(&path).unwrap();
        assert_eq!((w.q, w.r), (2, 3));
        for i in 0..w.len() {
            assert!(w.w11(i).iter().chain(w.w12(i)).chain(w.w22(i)).all(|v| v.is_finite()));
            assert!(w.w22(i)[0] > 0.0);
            let dh = path.dh(i).unwrap();
            assert_eq!(w.w22(i)[0], dh[2] / path.h[i]);
        }
        for i in 100..w.len() {
            assert!((w.w22(i)[0] - 1.0 / (0.4 * path.h[i])).abs() < 1e-10 * w.w22(i)[0]);
        }
    }

    #[test]
    fn gradients_without_weights_error() {
        let y = noise(20, 7);
        let path = filter(&y, &ModelParams::garch11(0.1, 0.2, 0.5).unwrap()).unwrap();
        assert!(w_blocks(&path).is_err());
    }

    #[test]
    fn rejects_bad_series() {
        let p = ModelParams::garch11(0.1, 0.2, 0.5).unwrap();
        assert!(matches!(filter(&[1.0, f64::NAN, 0.3], &p), Err(Error::Input(_))));
        assert!(matches!(filter(&[1.0], &p), Err(Error::Input(_))));
        let g = ModelParams::arma_garch(0.2, 0.1, 0.1, 0.2, 0.5).unwrap();
        assert!(filter(&[0.3], &g).is_err());
        assert!(filter(&[0.3, 0.1], &g).is_ok());
        let _ = Bounds::default();
    }

    #[test]
    fn filter_is_history_causal() {
        let y = noise(120, 8);
        let p = ModelParams::arma_garch(0.5, -0.3, 0.05, 0.2, 0.6).unwrap();
        let base = filter(&y, &p).unwrap();
        for j in [10usize, 57, 119] {
            let mut z = y.clone();
            z[j] += 0.7;
            let pert = filter(&z, &p).unwrap();
            // Filtered index k corresponds to series index k + offset.
            for k in 0..base.len() {
                let idx = k + base.offset;
                if idx < j {
                    assert_eq!(base.eps[k], pert.eps[k]);
                    assert_eq!(base.h[k], pert.h[k]);
                }
            }
            assert_ne!(base.eps[j - base.offset], pert.eps[j - base.offset]);
        }
    }
}
