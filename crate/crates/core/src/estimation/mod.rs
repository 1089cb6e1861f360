//! Gaussian quasi-maximum likelihood, the efficient one-step update and the
//! sample information matrix.
//!
//! The one-step update is the scoring step
//! θ̂ = θ̃ − Î(θ̃)⁻¹ · n⁻¹ Σ W_i(θ̃) (ψ₀(η_i), φ₀(η_i))′,
//! where −W_i(ψ₀, φ₀)′ is the score of −½ log h_i + log f₀(η_i).

mod optimizer;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use optimizer::{minimize, numeric_gradient, Minimum, OptimizerConfig};

use crate::error::{Error, Result};
use crate::errordist::NullFamily;
use crate::linalg;
use crate::models::{self, project_values, Bounds, FilteredPath, ModelKind, ModelParams};

pub const MIN_FIT_LENGTH: usize = 50;

/// Outcome of the Gaussian QMLE stage.
#[derive(Debug, Clone, Serialize)]
pub struct QmleFit {
    pub params: ModelParams,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub projected_gradient: f64,
}

/// Full fit: QMLE followed by one scoring step under F₀.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub theta_tilde: ModelParams,
    pub theta_hat: ModelParams,
    /// Î(θ̂), row-major (q + r)².
    #[serde(serialize_with = "serialize_matrix")]
    pub info: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    /// Gaussian quasi-log-likelihood at θ̂.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub path: FilteredPath,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

fn check_series(series: &[f64]) -> Result<()> {
    if series.len() < MIN_FIT_LENGTH {
        return Err(Error::Input(format!(
            "estimation needs at least {MIN_FIT_LENGTH} observations, got {}",
            series.len()
        )));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("series value at index {i} is not finite")));
    }
    Ok(())
}

fn mean_and_variance(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Method-of-moments starting point inside Θ.
pub fn initial_guess(series: &[f64], kind: ModelKind, bounds: &Bounds) -> Result<ModelParams> {
    check_series(series)?;
    let (mean, var) = mean_and_variance(series);
    if !(var > 0.0) {
        return Err(Error::Estimation("series is constant; the variance model is not identified".into()));
    }
    let (p1, p2) = kind.garch_orders();
    let mut v = Vec::with_capacity(kind.dim());
    if let ModelKind::ArmaGarch { ma } = kind {
        let c1: f64 = series.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / series.len() as f64;
        let a = (c1 / var).clamp(-0.9, 0.9);
        v.push(a);
        if ma {
            v.push(0.0);
        }
    }
    v.push(0.1 * var);
    v.extend(std::iter::repeat_n(0.1 / p1 as f64, p1));
    v.extend(std::iter::repeat_n(if p2 > 0 { 0.7 / p2 as f64 } else { 0.0 }, p2));
    let mut params = ModelParams::from_vec(kind, v)?.project(bounds);
    if kind == ModelKind::ARMA_GARCH && params.a() + params.b() == 0.0 {
        let mut v = params.to_vec();
        v[1] = 0.01;
        params = params.with_values(v)?;
    }
    Ok(params)
}

fn box_limits(kind: ModelKind, bounds: &Bounds) -> (Vec<f64>, Vec<f64>) {
    let q = kind.q();
    let r = kind.r();
    let mut lower = vec![-bounds.arma_limit; q];
    let mut upper = vec![bounds.arma_limit; q];
    lower.push(bounds.alpha0_lower);
    upper.push(bounds.alpha0_upper);
    lower.extend(std::iter::repeat_n(bounds.coef_lower, r - 1));
    upper.extend(std::iter::repeat_n(bounds.coef_upper, r - 1));
    (lower, upper)
}

/// Maximises the Gaussian quasi-log-likelihood over Θ.
///
/// Non-convergence is reported through the flag, not as an error.
pub fn gaussian_qmle(
    series: &[f64],
    kind: ModelKind,
    init: Option<&ModelParams>,
    bounds: &Bounds,
) -> Result<QmleFit> {
    gaussian_qmle_with(series, kind, init, bounds, &OptimizerConfig::default())
}

pub fn gaussian_qmle_with(
    series: &[f64],
    kind: ModelKind,
    init: Option<&ModelParams>,
    bounds: &Bounds,
    cfg: &OptimizerConfig,
) -> Result<QmleFit> {
    check_series(series)?;
    let start = match init {
        Some(p) => {
            if p.kind() != kind {
                return Err(Error::Input(format!("initial point is {} but the model is {kind}", p.kind())));
            }
            p.validate(bounds)?;
            p.clone()
        }
        None => initial_guess(series, kind, bounds)?,
    };
    let n = series.len() as f64;
    let objective = |x: &[f64]| -> f64 {
        let Ok(p) = ModelParams::from_vec(kind, x.to_vec()) else {
            return f64::INFINITY;
        };
        match models::filter(series, &p) {
            Ok(path) => -path.gaussian_loglik() / n,
            Err(_) => f64::INFINITY,
        }
    };
    let project = |x: &mut [f64]| project_values(kind, x, bounds);
    let (lower, upper) = box_limits(kind, bounds);
    let min = minimize(objective, project, start.as_slice(), &lower, &upper, cfg);
    if !min.value.is_finite() {
        return Err(Error::Estimation("quasi-likelihood is not finite at any visited point".into()));
    }
    if !min.converged {
        log::warn!(
            "QMLE stopped after {} iterations with projected gradient {:.3e}",
            min.iterations,
            min.projected_gradient
        );
    }
    Ok(QmleFit {
        params: ModelParams::from_vec(kind, min.x)?,
        loglik: -min.value * n,
        converged: min.converged,
        iterations: min.iterations,
        projected_gradient: min.projected_gradient,
    })
}

/// Î = n⁻¹ Σ W_i 𝓑 W_i′ with 𝓑 = diag(b₁, b₂).
pub fn information_matrix(path: &FilteredPath, null: &NullFamily) -> Result<DMatrix<f64>> {
    let info = information_matrix_unchecked(path, null)?;
    linalg::check_conditioning(&info)?;
    Ok(info)
}

/// As [`information_matrix`] without the conditioning check.
pub fn information_matrix_unchecked(path: &FilteredPath, null: &NullFamily) -> Result<DMatrix<f64>> {
    let w = models::w_blocks(path)?;
    let (q, r) = (w.q, w.r);
    let d = q + r;
    let (b1, b2) = null.fisher_constants();
    let n = w.len();
    if n == 0 {
        return Err(Error::Input("empty path".into()));
    }
    let mut info = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let (w11, w12, w22) = (w.w11(i), w.w12(i), w.w22(i));
        for j in 0..q {
            for k in j..q {
                info[(j, k)] += b1 * w11[j] * w11[k] + b2 * w12[j] * w12[k];
            }
            for k in 0..r {
                info[(j, q + k)] += b2 * w12[j] * w22[k];
            }
        }
        for j in 0..r {
            for k in j..r {
                info[(q + j, q + k)] += b2 * w22[j] * w22[k];
            }
        }
    }
    info /= n as f64;
    linalg::symmetrize(&mut info);
    Ok(info)
}

/// n⁻¹ Σ W_i (ψ₀(η_i), φ₀(η_i))′ in parameter storage order.
pub fn mean_weighted_score(path: &FilteredPath, null: &NullFamily) -> Result<DVector<f64>> {
    let w = models::w_blocks(path)?;
    let (q, r) = (w.q, w.r);
    let mut s = DVector::<f64>::zeros(q + r);
    for (i, &eta) in path.eta.iter().enumerate() {
        let (psi, phi) = (null.psi0(eta), null.phi0(eta));
        for j in 0..q {
            s[j] += w.w11(i)[j] * psi + w.w12(i)[j] * phi;
        }
        for j in 0..r {
            s[q + j] += w.w22(i)[j] * phi;
        }
    }
    Ok(s / path.len() as f64)
}

/// One scoring iteration from `theta_tilde`, projected back into Θ.
pub fn one_step_update(
    series: &[f64],
    theta_tilde: &ModelParams,
    null: &NullFamily,
    bounds: &Bounds,
) -> Result<ModelParams> {
    let path = models::gradients(series, theta_tilde)?;
    let info = information_matrix(&path, null)?;
    let score = mean_weighted_score(&path, null)?;
    let step = linalg::spd_solve(&info, &score)?;
    let raw: Vec<f64> = theta_tilde.as_slice().iter().zip(step.iter()).map(|(t, s)| t - s).collect();
    let raw = theta_tilde.with_values(raw)?;
    let projected = raw.project(bounds);
    if projected != raw {
        log::info!("one-step update left the parameter space and was projected back");
    }
    if projected.validate(bounds).is_err() {
        // Only a + b = 0 can survive projection; keep the QMLE instead.
        log::warn!("one-step update hit a + b = 0; keeping the initial estimate");
        return Ok(theta_tilde.clone());
    }
    Ok(projected)
}

/// √diag(Î⁻¹)/√n.
pub fn standard_errors(info: &DMatrix<f64>, n: usize) -> Result<Vec<f64>> {
    let inv = linalg::spd_inverse(info)?;
    Ok((0..inv.nrows()).map(|i| (inv[(i, i)] / n as f64).max(0.0).sqrt()).collect())
}

/// QMLE, one-step update under `null`, and the information at θ̂.
pub fn fit(series: &[f64], kind: ModelKind, null: &NullFamily, bounds: &Bounds) -> Result<FitResult> {
    let qmle = gaussian_qmle(series, kind, None, bounds)?;
    let theta_hat = one_step_update(series, &qmle.params, null, bounds)?;
    let path = models::gradients(series, &theta_hat)?;
    let info = information_matrix(&path, null)?;
    let std_errors = standard_errors(&info, path.len())?;
    let mut warnings = Vec::new();
    if !qmle.converged {
        warnings.push(format!(
            "quasi-MLE did not reach the gradient tolerance (projected gradient {:.2e})",
            qmle.projected_gradient
        ));
    }
    let fm = theta_hat.fourth_moment_index();
    if fm >= 1.0 {
        let msg = format!("fourth-moment condition 3a^2 + 2ab + b^2 < 1 fails at the estimate ({fm:.4})");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(FitResult {
        theta_tilde: qmle.params,
        loglik: path.gaussian_loglik(),
        theta_hat,
        info,
        std_errors,
        converged: qmle.converged,
        iterations: qmle.iterations,
        warnings,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate, InnovationLaw, DEFAULT_BURN_IN};
    use crate::rng;

    fn garch_series(n: usize, seed: u64) -> (ModelParams, Vec<f64>) {
        let p = ModelParams::garch11(0.025, 0.25, 0.5).unwrap();
        let y = simulate(&p, &InnovationLaw::Normal, n, DEFAULT_BURN_IN, &mut rng::seeded(seed)).unwrap().y;
        (p, y)
    }

    #[test]
    fn constant_series_is_an_estimation_error() {
        let y = vec![0.0; 200];
        assert!(matches!(gaussian_qmle(&y, ModelKind::GARCH11, None, &Bounds::default()), Err(Error::Estimation(_))));
    }

    #[test]
    fn short_series_is_an_input_error() {
        let y = vec![0.1; 10];
        assert!(matches!(gaussian_qmle(&y, ModelKind::GARCH11, None, &Bounds::default()), Err(Error::Input(_))));
    }

    #[test]
    fn initial_guess_is_inside_theta() {
        let (_, y) = garch_series(500, 1);
        for kind in [ModelKind::GARCH11, ModelKind::ARMA_GARCH, ModelKind::AR_GARCH, ModelKind::Garch { p1: 2, p2: 2 }] {
            initial_guess(&y, kind, &Bounds::default()).unwrap().validate(&Bounds::default()).unwrap();
        }
    }

    #[test]
    fn qmle_beats_truth_on_its_own_objective() {
        let bounds = Bounds::default();
        let mut wins = 0;
        for seed in 0..20 {
            let (truth, y) = garch_series(1000, 100 + seed);
            let fit = gaussian_qmle(&y, ModelKind::GARCH11, None, &bounds).unwrap();
            let at_truth = models::filter(&y, &truth).unwrap().gaussian_loglik();
            if fit.loglik >= at_truth - 1e-9 {
                wins += 1;
            }
        }
        assert!(wins >= 19, "{wins}/20");
    }

    #[test]
    fn pure_garch_information_is_scale_block_only() {
        let (p, y) = garch_series(400, 2);
        let null = NullFamily::normal();
        let path = models::gradients(&y, &p).unwrap();
        let info = information_matrix(&path, &null).unwrap();
        let w = models::w_blocks(&path).unwrap();
        let mut direct = DMatrix::<f64>::zeros(3, 3);
        for i in 0..w.len() {
            let v = DVector::from_column_slice(w.w22(i));
            direct += &v * v.transpose();
        }
        direct *= 0.5 / w.len() as f64;
        assert!((&info - &direct).amax() < 1e-12 * direct.amax());
        assert_eq!(info, info.transpose());
    }

    #[test]
    fn information_is_symmetric_psd_for_arma_garch() {
        let p = ModelParams::arma_garch(0.4, 0.2, 0.05, 0.15, 0.6).unwrap();
        let y = simulate(&p, &InnovationLaw::Normal, 2000, 500, &mut rng::seeded(3)).unwrap().y;
        for null in [NullFamily::normal(), NullFamily::double_exponential()] {
            let path = models::gradients(&y, &p).unwrap();
            let info = information_matrix(&path, &null).unwrap();
            assert_eq!(info, info.transpose());
            assert!(linalg::min_eigenvalue(&info) >= -1e-10 * info.norm());
        }
    }

    #[test]
    fn zero_score_is_a_fixed_point() {
        // With b₂-only information and zero mean score the step vanishes.
        let (p, y) = garch_series(300, 4);
        let null = NullFamily::normal();
        let path = models::gradients(&y, &p).unwrap();
        let info = information_matrix(&path, &null).unwrap();
        let step = linalg::spd_solve(&info, &DVector::zeros(3)).unwrap();
        assert!(step.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_step_update_is_permutation_equivariant() {
        let p = ModelParams::arma_garch(0.3, 0.2, 0.05, 0.2, 0.5).unwrap();
        let y = simulate(&p, &InnovationLaw::A1, 1500, 500, &mut rng::seeded(5)).unwrap().y;
        let null = NullFamily::normal();
        let path = models::gradients(&y, &p).unwrap();
        let info = information_matrix(&path, &null).unwrap();
        let score = mean_weighted_score(&path, &null).unwrap();
        let step = linalg::spd_solve(&info, &score).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let pinfo = DMatrix::from_fn(5, 5, |i, j| info[(perm[i], perm[j])]);
        let pscore = DVector::from_fn(5, |i, _| score[perm[i]]);
        let pstep = linalg::spd_solve(&pinfo, &pscore).unwrap();
        for i in 0..5 {
            assert!((pstep[i] - step[perm[i]]).abs() < 1e-10 * step.amax());
        }
    }

    #[test]
    fn fit_produces_standard_errors() {
        let (_, y) = garch_series(2000, 6);
        let fit = fit(&y, ModelKind::GARCH11, &NullFamily::normal(), &Bounds::default()).unwrap();
        assert_eq!(fit.std_errors.len(), 3);
        assert!(fit.std_errors.iter().all(|s| s.is_finite() && *s > 0.0));
        fit.theta_hat.validate(&Bounds::default()).unwrap();
        assert!(fit.converged);
    }
}
