//! Projected quasi-Newton minimisation over a convex feasible set, with
//! central-difference gradients.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    /// Stop when the projected-gradient sup norm falls below this.
    pub grad_tol: f64,
    /// Accepted as stationary when the line search stalls below this norm.
    pub stall_tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step: h_k = step·(1 + |s_k|).
    pub fd_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { grad_tol: 1e-8, stall_tol: 1e-5, max_iter: 500, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub projected_gradient: f64,
}

/// Central differences, shrunk to a one-sided step when the symmetric
/// stencil would leave the box `[lower, upper]`.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = step * (1.0 + x[k].abs());
            let hi = (x[k] + h).min(upper[k]);
            let lo = (x[k] - h).max(lower[k]);
            probe[k] = hi;
            let f_hi = f(&probe);
            probe[k] = lo;
            let f_lo = f(&probe);
            probe[k] = x[k];
            (f_hi - f_lo) / (hi - lo)
        })
        .collect()
}

/// Minimises `f` over the set onto which `project` maps.
///
/// `lower`/`upper` are the coordinate boxes (used for the gradient stencil
/// and the active set); `project` must be the exact Euclidean projection onto
/// the full feasible set.
pub fn minimize<F, P>(f: F, project: P, x0: &[f64], lower: &[f64], upper: &[f64], cfg: &OptimizerConfig) -> Minimum
where
    F: Fn(&[f64]) -> f64,
    P: Fn(&mut [f64]),
{
    let d = x0.len();
    let mut x = x0.to_vec();
    project(&mut x);
    let mut fx = f(&x);
    let mut g = numeric_gradient(&f, &x, lower, upper, cfg.fd_step);
    let mut h_inv = DMatrix::<f64>::identity(d, d);
    let mut fresh = true;
    let mut converged = false;
    let mut iterations = 0;
    let mut pg_norm = projected_gradient_norm(&x, &g, &project);

    while iterations < cfg.max_iter {
        if !fx.is_finite() {
            break;
        }
        if pg_norm < cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let gv = DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (-(&h_inv * &gv)).iter().copied().collect();
        for k in 0..d {
            let at_lower = x[k] <= lower[k] && g[k] > 0.0;
            let at_upper = x[k] >= upper[k] && g[k] < 0.0;
            if at_lower || at_upper {
                dir[k] = 0.0;
            }
        }
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(d, d);
            fresh = true;
            dir = g.iter().map(|v| -v).collect();
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-14 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            project(&mut trial);
            let decrease: f64 = trial.iter().zip(&x).zip(&g).map(|((a, b), gk)| (a - b) * gk).sum();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * decrease.min(0.0) && trial != x {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            if fresh {
                converged = pg_norm < cfg.stall_tol;
                break;
            }
            h_inv = DMatrix::identity(d, d);
            fresh = true;
            continue;
        };

        let g_new = numeric_gradient(&f, &x_new, lower, upper, cfg.fd_step);
        let s = DVector::from_iterator(d, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(d, g_new.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                // Scale the initial inverse Hessian to the observed curvature.
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }

        x = x_new;
        fx = f_new;
        g = g_new;
        pg_norm = projected_gradient_norm(&x, &g, &project);
    }

    if !converged && pg_norm < cfg.grad_tol {
        converged = true;
    }
    Minimum { x, value: fx, converged, iterations, projected_gradient: pg_norm }
}

fn projected_gradient_norm<P: Fn(&mut [f64])>(x: &[f64], g: &[f64], project: &P) -> f64 {
    let mut stepped: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    project(&mut stepped);
    stepped.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
