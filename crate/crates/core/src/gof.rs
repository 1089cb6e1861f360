//! The weighted residual empirical process
//! K_n(x, s) = (2√n)⁻¹ Σ W₂₂,i(s) [I(η_i(s) ≤ x) − F₀(x)],
//! its normalising matrix Î_n = (4n)⁻¹ Σ W₂₂,i W₂₂,i′, and the
//! Kolmogorov–Smirnov type statistic T = sup_x K′ Î_n⁻¹ K.
//!
//! T is reported on the quadratic-form scale, the scale on which the
//! critical values in [`crate::limitproc`] are tabulated (K = sup ‖Z‖²).
//!
//! Between two consecutive order statistics every component of K is affine
//! in F₀(x), so the quadratic form is convex in F₀(x) there and its supremum
//! is attained at a jump point or at a left limit. Only those points are
//! evaluated.
//!
//! The module also carries the uniform-expansion diagnostics used to check
//! the asymptotic theory by simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::errordist::{Family, NullFamily};
use crate::linalg;
use crate::models::{self, FilteredPath, Innovations, ModelParams};
use crate::rng;

/// K_n(·, s) for fixed weights, evaluable at any x in O(log n).
#[derive(Debug, Clone)]
pub struct WeightedProcess {
    r: usize,
    n: usize,
    sorted_eta: Vec<f64>,
    /// Prefix sums of the weights in η order, (n + 1) × r.
    prefix: Vec<f64>,
}

impl WeightedProcess {
    /// `weights` is row-major n × r.
    pub fn new(eta: &[f64], weights: &[f64], r: usize) -> Result<Self> {
        let n = eta.len();
        if n == 0 {
            return Err(Error::Input("weighted process needs at least one residual".into()));
        }
        if r == 0 || weights.len() != n * r {
            return Err(Error::Input("weights do not match the residuals".into()));
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("residuals must be finite".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eta[a].total_cmp(&eta[b]));
        let sorted_eta: Vec<f64> = order.iter().map(|&i| eta[i]).collect();
        let mut prefix = vec![0.0; (n + 1) * r];
        for (k, &i) in order.iter().enumerate() {
            for j in 0..r {
                prefix[(k + 1) * r + j] = prefix[k * r + j] + weights[i * r + j];
            }
        }
        Ok(WeightedProcess { r, n, sorted_eta, prefix })
    }

    pub fn from_path(path: &FilteredPath) -> Result<Self> {
        let w = models::w_blocks(path)?;
        Self::new(&path.eta, &w.w22, w.r)
    }

    pub fn dim(&self) -> usize {
        self.r
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn sorted_eta(&self) -> &[f64] {
        &self.sorted_eta
    }

    pub fn total(&self) -> &[f64] {
        &self.prefix[self.n * self.r..]
    }

    /// K(x) with the indicator I(η ≤ x), or I(η < x) when `left_limit`.
    pub fn eval_into(&self, x: f64, cdf: f64, left_limit: bool, out: &mut [f64]) {
        let count = if left_limit {
            self.sorted_eta.partition_point(|&e| e < x)
        } else {
            self.sorted_eta.partition_point(|&e| e <= x)
        };
        let scale = 1.0 / (2.0 * (self.n as f64).sqrt());
        let cum = &self.prefix[count * self.r..(count + 1) * self.r];
        let total = self.total();
        for j in 0..self.r {
            out[j] = (cum[j] - cdf * total[j]) * scale;
        }
    }

    pub fn eval(&self, x: f64, null: &NullFamily, left_limit: bool) -> Vec<f64> {
        let mut out = vec![0.0; self.r];
        self.eval_into(x, null.cdf(x), left_limit, &mut out);
        out
    }
}

/// K_n evaluated on the jump points of the residual empirical process.
#[derive(Debug, Clone, Serialize)]
pub struct ProcessEval {
    /// Evaluation points in ascending order; each order statistic appears
    /// twice, first as a left limit.
    pub xs: Vec<f64>,
    pub left_limit: Vec<bool>,
    /// Row-major (2n) × r values of K_n.
    pub k: Vec<f64>,
    pub r: usize,
}

impl ProcessEval {
    pub fn at(&self, idx: usize) -> &[f64] {
        &self.k[idx * self.r..(idx + 1) * self.r]
    }
}

/// K_n(x, θ̂) at every order statistic and its left limit.
pub fn k_process(path: &FilteredPath, null: &NullFamily) -> Result<ProcessEval> {
    let proc_ = WeightedProcess::from_path(path)?;
    Ok(evaluate_on_jumps(&proc_, null))
}

fn evaluate_on_jumps(proc_: &WeightedProcess, null: &NullFamily) -> ProcessEval {
    let r = proc_.dim();
    let m = 2 * proc_.len();
    let mut xs = Vec::with_capacity(m);
    let mut left = Vec::with_capacity(m);
    let mut k = vec![0.0; m * r];
    for (idx, &x) in proc_.sorted_eta().iter().enumerate() {
        let cdf = null.cdf(x);
        for (slot, is_left) in [(2 * idx, true), (2 * idx + 1, false)] {
            proc_.eval_into(x, cdf, is_left, &mut k[slot * r..(slot + 1) * r]);
            xs.push(x);
            left.push(is_left);
        }
    }
    ProcessEval { xs, left_limit: left, k, r }
}

/// Î_n = (4n)⁻¹ Σ W₂₂,i W₂₂,i′, rejected when its condition number exceeds 1e12.
pub fn ihat_n(path: &FilteredPath) -> Result<DMatrix<f64>> {
    let w = models::w_blocks(path)?;
    ihat_from_weights(&w.w22, w.r)
}

pub fn ihat_from_weights(w22: &[f64], r: usize) -> Result<DMatrix<f64>> {
    let n = w22.len() / r;
    if n == 0 {
        return Err(Error::Input("no weights".into()));
    }
    let mut m = DMatrix::<f64>::zeros(r, r);
    for row in w22.chunks_exact(r) {
        for j in 0..r {
            for k in j..r {
                m[(j, k)] += row[j] * row[k];
            }
        }
    }
    m /= 4.0 * n as f64;
    linalg::symmetrize(&mut m);
    linalg::check_conditioning(&m)?;
    Ok(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct Statistic {
    /// sup_x K′ Î_n⁻¹ K.
    pub t: f64,
    /// Where the supremum is attained.
    pub argmax: f64,
    /// Whether the maximising point is a left limit.
    pub argmax_is_left_limit: bool,
}

/// Whitens K vectors with a Cholesky factor of Î_n.
struct Whitener {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Whitener {
    fn new(ihat: &DMatrix<f64>) -> Result<Self> {
        Ok(Whitener { chol: linalg::cholesky_with_jitter(ihat)? })
    }

    /// K′ Î⁻¹ K.
    fn quadratic(&self, k: &[f64]) -> f64 {
        let l = self.chol.l_dirty();
        let r = k.len();
        // Forward substitution with the lower factor.
        let mut z = [0.0f64; 64];
        let mut buf;
        let z: &mut [f64] = if r <= 64 {
            &mut z[..r]
        } else {
            buf = vec![0.0; r];
            &mut buf
        };
        let mut q = 0.0;
        for i in 0..r {
            let mut s = k[i];
            for j in 0..i {
                s -= l[(i, j)] * z[j];
            }
            z[i] = s / l[(i, i)];
            q += z[i] * z[i];
        }
        q
    }
}

/// T = sup_x K_n(x, θ̂)′ Î_n⁻¹ K_n(x, θ̂).
pub fn kn_statistic(path: &FilteredPath, null: &NullFamily) -> Result<Statistic> {
    let w = models::w_blocks(path)?;
    let ihat = ihat_from_weights(&w.w22, w.r)?;
    let proc_ = WeightedProcess::new(&path.eta, &w.w22, w.r)?;
    statistic_from_process(&proc_, &ihat, null)
}

pub fn statistic_from_process(proc_: &WeightedProcess, ihat: &DMatrix<f64>, null: &NullFamily) -> Result<Statistic> {
    let whiten = Whitener::new(ihat)?;
    let eval = evaluate_on_jumps(proc_, null);
    let mut best = Statistic { t: 0.0, argmax: f64::NAN, argmax_is_left_limit: false };
    let mut best_q = -1.0;
    for idx in 0..eval.xs.len() {
        let q = whiten.quadratic(eval.at(idx));
        if q > best_q {
            best_q = q;
            best.argmax = eval.xs[idx];
            best.argmax_is_left_limit = eval.left_limit[idx];
        }
    }
    best.t = best_q.max(0.0);
    Ok(best)
}

/// K(x)′ Î⁻¹ K(x) at arbitrary points, by direct evaluation.
pub fn statistic_profile(path: &FilteredPath, null: &NullFamily, xs: &[f64]) -> Result<Vec<f64>> {
    let w = models::w_blocks(path)?;
    let ihat = ihat_from_weights(&w.w22, w.r)?;
    let whiten = Whitener::new(&ihat)?;
    let proc_ = WeightedProcess::new(&path.eta, &w.w22, w.r)?;
    let mut k = vec![0.0; w.r];
    Ok(xs
        .iter()
        .map(|&x| {
            proc_.eval_into(x, null.cdf(x), false, &mut k);
            whiten.quadratic(&k).max(0.0)
        })
        .collect())
}

/// sup_x ‖K_n(x, θ̂) − [K_n(x, θ) − x f₀(x)/(4b₂√n) Σ W₂₂,i(θ) φ₀(η_i(θ))]‖,
/// evaluated at the jump points (and left limits) of both processes.
pub fn drift_corrected_discrepancy(path_hat: &FilteredPath, path_true: &FilteredPath, null: &NullFamily) -> Result<f64> {
    if path_hat.len() != path_true.len() {
        return Err(Error::Input("paths must have the same length".into()));
    }
    let hat = WeightedProcess::from_path(path_hat)?;
    let truth = WeightedProcess::from_path(path_true)?;
    let w = models::w_blocks(path_true)?;
    let r = w.r;
    let n = path_true.len() as f64;
    let mut drift = vec![0.0; r];
    for (i, &eta) in path_true.eta.iter().enumerate() {
        let phi = null.phi0(eta);
        for (d, wj) in drift.iter_mut().zip(w.w22(i)) {
            *d += wj * phi;
        }
    }
    let drift_scale = 1.0 / (4.0 * null.b2() * n.sqrt());
    let mut a = vec![0.0; r];
    let mut b = vec![0.0; r];
    let mut sup: f64 = 0.0;
    for &x in hat.sorted_eta().iter().chain(truth.sorted_eta()) {
        let cdf = null.cdf(x);
        let shift = x * null.pdf(x) * drift_scale;
        for left in [true, false] {
            hat.eval_into(x, cdf, left, &mut a);
            truth.eval_into(x, cdf, left, &mut b);
            let d2: f64 = (0..r).map(|j| (a[j] - (b[j] - shift * drift[j])).powi(2)).sum();
            sup = sup.max(d2.sqrt());
        }
    }
    Ok(sup)
}

/// One draw of the array (η_ni, γ_ni, τ_ni, ξ_ni).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionSample {
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Weights and disturbances for [`expansion_harness`].
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// γ ≡ `gamma`, τ ≡ `tau`/√n, ξ ≡ `xi`/√n.
    Constant { gamma: f64, tau: f64, xi: f64 },
    /// γ_i = 1 + |Z_i|, τ_i = `tau`·Z′_i/√n, ξ_i = `xi`·Z″_i/√n with
    /// independent standard normals, independent of η.
    Random { tau: f64, xi: f64 },
    /// The GARCH-type instantiation: along a simulated path at `params`,
    /// ℓ_i = W₂₂ⱼ,i(θ + t/√n), v_i = √(h_i(θ + t/√n)/h_i(θ)) − 1 and
    /// u_i = (μ_i(θ + t/√n) − μ_i(θ))/√h_i(θ).
    Model { params: ModelParams, direction: Vec<f64>, component: usize },
}

#[derive(Debug, Clone)]
pub struct ExpansionConfig {
    /// Innovation law H (also used as F₀ for the model instantiation).
    pub law: Family,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionSummary {
    pub n: usize,
    pub median: f64,
    pub q90: f64,
    pub mean: f64,
    pub discrepancies: Vec<f64>,
}

/// Ũ_n(x) − U_n*(x) at one point.
///
/// Ũ_n(x) = n^{-1/2} Σ γ_i [I(η_i ≤ x + xτ_i + ξ_i) − H(x + xτ_i + ξ_i)],
/// U_n*(x) = n^{-1/2} Σ γ_i [I(η_i ≤ x) − H(x)].
pub fn expansion_difference_at(sample: &ExpansionSample, cdf: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    let n = sample.eta.len() as f64;
    let mut acc = 0.0;
    for i in 0..sample.eta.len() {
        let shifted = x + x * sample.tau[i] + sample.xi[i];
        let a = f64::from(u8::from(sample.eta[i] <= shifted)) - cdf(shifted);
        let b = f64::from(u8::from(sample.eta[i] <= x)) - cdf(x);
        acc += sample.gamma[i] * (a - b);
    }
    acc / n.sqrt()
}

/// sup_x |Ũ_n(x) − U_n*(x)| over the jump points of both processes and
/// their left limits.
pub fn sup_discrepancy(sample: &ExpansionSample, cdf: &(dyn Fn(f64) -> f64 + Sync)) -> Result<f64> {
    let n = sample.eta.len();
    if n == 0 || sample.gamma.len() != n || sample.tau.len() != n || sample.xi.len() != n {
        return Err(Error::Input("expansion sample arrays must share a nonzero length".into()));
    }
    if sample.tau.iter().any(|t| !(1.0 + t > 0.0)) {
        return Err(Error::Input("scale disturbances must satisfy 1 + τ > 0".into()));
    }
    // Ũ jumps where x = (η_i − ξ_i)/(1 + τ_i); U* jumps at η_i.
    let z: Vec<f64> = (0..n).map(|i| (sample.eta[i] - sample.xi[i]) / (1.0 + sample.tau[i])).collect();
    let tilde = WeightedProcessScalar::new(&z, &sample.gamma);
    let star = WeightedProcessScalar::new(&sample.eta, &sample.gamma);
    let gamma_total: f64 = sample.gamma.iter().sum();
    let common = sample.tau.iter().all(|&t| t == sample.tau[0]) && sample.xi.iter().all(|&v| v == sample.xi[0]);
    let root_n = (n as f64).sqrt();

    let points: Vec<f64> = z.iter().chain(&sample.eta).copied().collect();
    let sup = points
        .par_iter()
        .map(|&x| {
            let smooth = if common {
                gamma_total * (cdf(x + x * sample.tau[0] + sample.xi[0]) - cdf(x))
            } else {
                (0..n)
                    .map(|i| sample.gamma[i] * (cdf(x + x * sample.tau[i] + sample.xi[i]) - cdf(x)))
                    .sum()
            };
            [true, false]
                .iter()
                .map(|&left| ((tilde.cum(x, left) - star.cum(x, left) - smooth) / root_n).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(sup)
}

/// Σ γ_i I(z_i ≤ x) through sorted prefix sums.
struct WeightedProcessScalar {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl WeightedProcessScalar {
    fn new(points: &[f64], weights: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
        let mut prefix = Vec::with_capacity(points.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &i in &order {
            acc += weights[i];
            prefix.push(acc);
        }
        WeightedProcessScalar { sorted: order.iter().map(|&i| points[i]).collect(), prefix }
    }

    fn cum(&self, x: f64, left_limit: bool) -> f64 {
        let c = if left_limit {
            self.sorted.partition_point(|&v| v < x)
        } else {
            self.sorted.partition_point(|&v| v <= x)
        };
        self.prefix[c]
    }
}

/// Draws one array for sample size `n`.
pub fn draw_expansion_sample<R: Rng>(
    law: Family,
    perturbation: &Perturbation,
    n: usize,
    rng: &mut R,
) -> Result<ExpansionSample> {
    let root_n = (n as f64).sqrt();
    match perturbation {
        Perturbation::Constant { gamma, tau, xi } => Ok(ExpansionSample {
            eta: (0..n).map(|_| law.sample_one(rng)).collect(),
            gamma: vec![*gamma; n],
            tau: vec![tau / root_n; n],
            xi: vec![xi / root_n; n],
        }),
        Perturbation::Random { tau, xi } => {
            let eta: Vec<f64> = (0..n).map(|_| law.sample_one(rng)).collect();
            let mut normal = || -> f64 { StandardNormal.sample(rng) };
            let gamma = (0..n).map(|_| 1.0 + normal().abs()).collect();
            let tau_v = (0..n).map(|_| tau * normal() / root_n).collect();
            let xi_v = (0..n).map(|_| xi * normal() / root_n).collect();
            Ok(ExpansionSample { eta, gamma, tau: tau_v, xi: xi_v })
        }
        Perturbation::Model { params, direction, component } => {
            model_based_sample(params, direction, *component, law, n, rng)
        }
    }
}

/// The weights and disturbances induced by moving a GARCH-type model from θ
/// to θ + t/√n along a path simulated at θ.
pub fn model_based_sample<R: Rng>(
    params: &ModelParams,
    direction: &[f64],
    component: usize,
    law: Family,
    n: usize,
    rng: &mut R,
) -> Result<ExpansionSample> {
    let kind = params.kind();
    if direction.len() != kind.dim() || component >= kind.r() {
        return Err(Error::Input("direction or component does not match the model".into()));
    }
    let sim = models::simulate(params, &NullInnovations(law), n, models::DEFAULT_BURN_IN, rng)?;
    let root_n = (n as f64).sqrt();
    let moved: Vec<f64> = params.as_slice().iter().zip(direction).map(|(p, t)| p + t / root_n).collect();
    let moved = params.with_values(moved)?;
    let at_truth = models::filter_from(&sim.y, params, &sim.presample)?;
    let at_moved = models::gradients_from(&sim.y, &moved, &sim.presample)?;
    let w = models::w_blocks(&at_moved)?;
    let mut sample = ExpansionSample {
        eta: at_truth.eta.clone(),
        gamma: Vec::with_capacity(n),
        tau: Vec::with_capacity(n),
        xi: Vec::with_capacity(n),
    };
    for i in 0..n {
        let root_h = at_truth.h[i].sqrt();
        sample.gamma.push(w.w22(i)[component]);
        sample.tau.push((at_moved.h[i] / at_truth.h[i]).sqrt() - 1.0);
        // μ = y − ε, so μ(θ′) − μ(θ) = ε(θ) − ε(θ′).
        sample.xi.push((at_truth.eps[i] - at_moved.eps[i]) / root_h);
    }
    Ok(sample)
}

struct NullInnovations(Family);

impl Innovations for NullInnovations {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.0.sample_one(rng)
    }
}

/// Median/90% summaries of sup_x |Ũ_n − U_n*| across replications, per n.
pub fn expansion_harness(config: &ExpansionConfig) -> Result<Vec<ExpansionSummary>> {
    if config.reps == 0 {
        return Err(Error::Input("need at least one replication".into()));
    }
    let law = config.law;
    let cdf = move |x: f64| law.cdf(x);
    config
        .sizes
        .iter()
        .enumerate()
        .map(|(size_idx, &n)| {
            let discrepancies = (0..config.reps)
                .into_par_iter()
                .map(|rep| {
                    let mut r = rng::stream(config.seed, ((size_idx as u64) << 32) | rep as u64);
                    let sample = draw_expansion_sample(law, &config.perturbation, n, &mut r)?;
                    sup_discrepancy(&sample, &cdf)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(summarize(n, discrepancies))
        })
        .collect()
}

fn summarize(n: usize, discrepancies: Vec<f64>) -> ExpansionSummary {
    let mut sorted = discrepancies.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    let q90 = sorted[((0.9 * m as f64).ceil() as usize).saturating_sub(1).min(m - 1)];
    let mean = sorted.iter().sum::<f64>() / m as f64;
    ExpansionSummary { n, median, q90, mean, discrepancies }
}

/// Convenience: Σ_i W₂₂,i as a vector.
pub fn weight_total(path: &FilteredPath) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(models::w_blocks(path)?.w22_sum()))
}
