use rand::Rng;

use super::filter::Presample;
use super::innovations::Innovations;
use super::params::{Bounds, ModelParams};
use crate::error::Result;

pub const DEFAULT_BURN_IN: usize = 500;

/// A simulated path together with the quantities the simulator used
/// internally.
#[derive(Debug, Clone)]
pub struct SimulatedPath {
    pub y: Vec<f64>,
    /// Injected innovations η_i.
    pub eta: Vec<f64>,
    pub eps: Vec<f64>,
    pub h: Vec<f64>,
    /// Recursion state at the end of burn-in; filtering `y` from this state
    /// reproduces `h` exactly.
    pub presample: Presample,
}

/// Simulates `n` observations after discarding `burn_in`, starting the
/// variance recursion at its unconditional value.
pub fn simulate<I: Innovations, R: Rng + ?Sized>(
    params: &ModelParams,
    innovations: &I,
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<SimulatedPath> {
    params.validate(&Bounds::default())?;
    simulate_unchecked(params, innovations, n, burn_in, rng)
}

/// As [`simulate`] but only requires a stationary variance recursion, so
/// degenerate points such as α = β = 0 can be simulated.
pub fn simulate_unchecked<I: Innovations, R: Rng + ?Sized>(
    params: &ModelParams,
    innovations: &I,
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<SimulatedPath> {
    if !(params.persistence() < 1.0) || params.alpha0() <= 0.0 {
        return Err(crate::Error::Validation("variance recursion is not stationary".into()));
    }
    let (a, b) = (params.a(), params.b());
    let alpha0 = params.alpha0();
    let alpha = params.alpha();
    let beta = params.beta();
    let (p1, p2) = (alpha.len(), beta.len());

    let mut eps_hist = vec![0.0; p1];
    let mut h_hist = vec![params.unconditional_variance(); p2];
    let mut y_prev = 0.0;
    let mut eps_prev = 0.0;
    let mut presample = None;

    let mut out = SimulatedPath {
        y: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
        eps: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        presample: Presample { eps: Vec::new(), h: Vec::new(), y_prev: 0.0 },
    };

    for t in 0..burn_in + n {
        if t == burn_in {
            presample = Some(Presample { eps: eps_hist.clone(), h: h_hist.clone(), y_prev });
        }
        let mut h = alpha0;
        for (j, &c) in alpha.iter().enumerate() {
            h += c * eps_hist[j] * eps_hist[j];
        }
        for (j, &c) in beta.iter().enumerate() {
            h += c * h_hist[j];
        }
        let eta = innovations.draw(rng);
        let eps = eta * h.sqrt();
        let y = if params.kind().has_mean() { a * y_prev + b * eps_prev + eps } else { eps };

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

        if t >= burn_in {
            out.y.push(y);
            out.eta.push(eta);
            out.eps.push(eps);
            out.h.push(h);
        }
    }
    out.presample = presample.unwrap_or(Presample { eps: eps_hist, h: h_hist, y_prev });
    Ok(out)
}
