//! Experiment orchestration: size and power studies, single-series test
//! reports, residual diagnostics and critical-value tabulation.
//!
//! Every replication draws from its own random stream derived from the
//! run seed and the replication index, and results are folded in index
//! order, so outputs do not depend on the number of worker threads.

use std::fmt;
use std::io::{Read, Write};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::errordist::NullFamily;
use crate::estimation::{self, FitResult};
use crate::gof;
use crate::limitproc::{self, CritTable, LEVELS};
use crate::models::{self, Bounds, Contaminated, InnovationLaw, Innovations, ModelKind, ModelParams};
use crate::rng;

/// Smallest series length accepted by experiments and reports.
pub const MIN_SERIES_LENGTH: usize = 100;
/// Largest share of failed fits a run may exclude before it errors.
pub const MAX_FAILURE_SHARE: f64 = 0.02;
/// Lags of the squared-residual portmanteau diagnostic in reports.
pub const QM_LAGS: [usize; 2] = [6, 12];

fn default_levels() -> Vec<f64> {
    vec![0.10, 0.05, 0.01]
}

fn default_null() -> String {
    "normal".into()
}

fn default_burn_in() -> usize {
    models::DEFAULT_BURN_IN
}

/// Flat key-value description of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `garch`, `garch(p1,p2)`, `arma-garch` or `ar-garch`.
    pub model: String,
    /// True parameter vector in storage order.
    pub params: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    /// `normal`, `dexp` or `a1`..`a5`.
    pub law: String,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_null")]
    pub null: String,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; the global pool when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl ExperimentConfig {
    /// The AR(1)–GARCH(1,1) design with (a, α₀, α, β) = (0.5, 0.025, 0.25, 0.5).
    pub fn ar_garch_design(law: &str, n: usize, reps: usize, seed: u64) -> Self {
        ExperimentConfig {
            model: "ar-garch".into(),
            params: vec![0.5, 0.025, 0.25, 0.5],
            n,
            reps,
            law: law.into(),
            levels: default_levels(),
            null: default_null(),
            seed,
            workers: None,
            burn_in: default_burn_in(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("experiment config: {e}")))
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let kind: ModelKind = self.model.parse()?;
        let params = ModelParams::from_vec(kind, self.params.clone())?;
        params.validate(&Bounds::default())?;
        let law: InnovationLaw = self.law.parse()?;
        let null = NullFamily::from_key(&self.null)?;
        if self.reps == 0 {
            return Err(Error::Input("reps must be at least 1".into()));
        }
        if self.n < MIN_SERIES_LENGTH {
            return Err(Error::Input(format!("n must be at least {MIN_SERIES_LENGTH}, got {}", self.n)));
        }
        if self.levels.is_empty() {
            return Err(Error::Input("at least one level is required".into()));
        }
        for &a in &self.levels {
            if !LEVELS.iter().any(|&l| (l - a).abs() < 1e-12) {
                return Err(Error::Input(format!("level {a} is not one of {LEVELS:?}")));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Input("workers must be at least 1".into()));
        }
        Ok(ResolvedConfig { config: self.clone(), kind, params, law, null })
    }
}

/// A validated [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    pub kind: ModelKind,
    pub params: ModelParams,
    pub law: InnovationLaw,
    pub null: NullFamily,
}

/// Rejection frequency at one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRate {
    pub alpha: f64,
    pub critical_value: f64,
    pub rejections: usize,
    pub rate: f64,
    /// Binomial standard error √(p(1 − p)/m).
    pub se: f64,
}

/// Outcome of [`run_size_power`].
#[derive(Debug, Clone, Serialize)]
pub struct SizePowerResult {
    pub law: String,
    pub n: usize,
    pub reps: usize,
    pub valid: usize,
    pub failures: usize,
    pub rates: Vec<LevelRate>,
    /// Statistic per replication, `None` where the fit failed.
    pub statistics: Vec<Option<f64>>,
}

impl SizePowerResult {
    pub fn rate(&self, alpha: f64) -> Option<f64> {
        self.rates.iter().find(|r| (r.alpha - alpha).abs() < 1e-12).map(|r| r.rate)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Input(format!("writing results: {e}"));
        wtr.write_record(["law", "n", "reps", "valid", "failures", "alpha", "critical_value", "rejections", "rate", "se"])
            .map_err(io)?;
        for r in &self.rates {
            wtr.write_record([
                self.law.clone(),
                self.n.to_string(),
                self.reps.to_string(),
                self.valid.to_string(),
                self.failures.to_string(),
                r.alpha.to_string(),
                r.critical_value.to_string(),
                r.rejections.to_string(),
                r.rate.to_string(),
                r.se.to_string(),
            ])
            .map_err(io)?;
        }
        wtr.flush().map_err(|e| Error::Input(format!("writing results: {e}")))
    }
}

fn in_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Input(format!("cannot start {w} workers: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Simulate, fit (quasi-MLE plus one step) and compute T, once.
fn replicate<I: Innovations>(cfg: &ResolvedConfig, innovations: &I, n: usize, rep: usize) -> Result<f64> {
    let mut g = rng::stream(cfg.config.seed, rep as u64);
    let sim = models::simulate(&cfg.params, innovations, n, cfg.config.burn_in, &mut g)?;
    let fit = estimation::fit(&sim.y, cfg.kind, &cfg.null, &Bounds::default())?;
    Ok(gof::kn_statistic(&fit.path, &cfg.null)?.t)
}

fn run_with<I: Innovations>(cfg: &ResolvedConfig, innovations: &I, n: usize) -> Result<SizePowerResult> {
    let reps = cfg.config.reps;
    let outcomes: Vec<Result<f64>> =
        in_pool(cfg.config.workers, || (0..reps).into_par_iter().map(|rep| replicate(cfg, innovations, n, rep)).collect())?;
    let mut statistics = Vec::with_capacity(reps);
    let mut failures = 0;
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(t) => statistics.push(Some(t)),
            Err(e) => {
                warn!("replication {rep} failed: {e}");
                failures += 1;
                statistics.push(None);
            }
        }
    }
    if failures as f64 >= MAX_FAILURE_SHARE * reps as f64 && failures > 0 {
        return Err(Error::Estimation(format!("{failures} of {reps} replications failed to fit")));
    }
    let valid = reps - failures;
    let r = cfg.kind.r();
    let rates = cfg
        .config
        .levels
        .iter()
        .map(|&alpha| {
            let cv = limitproc::critical_value(&cfg.null, r, alpha)?;
            let rejections = statistics.iter().flatten().filter(|&&t| t > cv).count();
            let rate = rejections as f64 / valid as f64;
            Ok(LevelRate { alpha, critical_value: cv, rejections, rate, se: (rate * (1.0 - rate) / valid as f64).sqrt() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SizePowerResult { law: cfg.config.law.clone(), n, reps, valid, failures, rates, statistics })
}

/// Rejection rates of the test over `reps` simulated series.
pub fn run_size_power(config: &ExperimentConfig) -> Result<SizePowerResult> {
    let cfg = config.resolve()?;
    run_with(&cfg, &cfg.law, config.n)
}

/// Rejection rates along n under the local alternatives
/// F_n = (1 − δ/√n) F₀ + (δ/√n) F̃.
///
/// The base config's `law` is ignored; draws come from F₀ with probability
/// 1 − δ/√n and from `alternative` otherwise.
pub fn local_power_probe(
    config: &ExperimentConfig,
    delta: f64,
    alternative: InnovationLaw,
    sizes: &[usize],
) -> Result<Vec<SizePowerResult>> {
    if !(delta >= 0.0) {
        return Err(Error::Input(format!("delta must be nonnegative, got {delta}")));
    }
    let cfg = config.resolve()?;
    sizes
        .iter()
        .map(|&n| {
            if n < MIN_SERIES_LENGTH {
                return Err(Error::Input(format!("n must be at least {MIN_SERIES_LENGTH}, got {n}")));
            }
            // The mixture weight δ/√n has to be a probability.
            if delta > (n as f64).sqrt() {
                return Err(Error::Input(format!("delta = {delta} exceeds sqrt(n) for n = {n}")));
            }
            let law = Contaminated {
                null: InnovationLaw::from_family(cfg.null.family()),
                alternative,
                weight: delta / (n as f64).sqrt(),
            };
            let mut out = run_with(&cfg, &law, n)?;
            out.law = format!("local({delta},{alternative})");
            Ok(out)
        })
        .collect()
}

/// Ljung–Box statistic on squared residuals,
/// n(n + 2) Σ_{k=1..M} r̂_k²/(n − k), with r̂_k the lag-k autocorrelation
/// of η_i². Returns 0 (with a warning) when η² is constant.
pub fn qm_diagnostic(eta: &[f64], lags: usize) -> f64 {
    let n = eta.len();
    if lags == 0 || n < 2 {
        return 0.0;
    }
    let sq: Vec<f64> = eta.iter().map(|e| e * e).collect();
    let mean = sq.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = sq.iter().map(|v| v - mean).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    if c0 <= (f64::EPSILON * mean).powi(2) * n as f64 {
        warn!("squared residuals are constant; portmanteau statistic set to 0");
        return 0.0;
    }
    let nf = n as f64;
    let mut q = 0.0;
    for k in 1..=lags.min(n - 1) {
        let ck: f64 = dev[k..].iter().zip(&dev[..n - k]).map(|(a, b)| a * b).sum();
        let rk = ck / c0;
        q += rk * rk / (nf - k as f64);
    }
    nf * (nf + 2.0) * q
}

/// Portmanteau value with its χ²_M upper-tail probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QmValue {
    pub lags: usize,
    pub statistic: f64,
    pub p_value: f64,
}

fn qm_value(eta: &[f64], lags: usize) -> QmValue {
    let statistic = qm_diagnostic(eta, lags);
    let p_value = ChiSquared::new(lags as f64).map(|c| c.sf(statistic)).unwrap_or(f64::NAN);
    QmValue { lags, statistic, p_value }
}

/// Estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub std_error: f64,
}

/// Decision at one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDecision {
    pub alpha: f64,
    /// Upper-α point of the simulated K sample used for the p-value.
    pub critical_value: f64,
    /// Reference table entry, when tabulated.
    pub reference_value: Option<f64>,
    pub reject: bool,
}

/// Full single-series report.
#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub model: String,
    pub null: String,
    pub n: usize,
    pub estimates: Vec<Estimate>,
    pub loglik: f64,
    pub qm: Vec<QmValue>,
    /// sup_x K_n′ Î_n⁻¹ K_n.
    pub statistic: f64,
    pub argmax: f64,
    pub r: usize,
    pub decisions: Vec<LevelDecision>,
    /// Share of simulated K at least as large as the statistic.
    pub p_value_mc: f64,
    pub mc_reps: usize,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub fit: Option<FitResult>,
}

/// Settings for the simulated reference distribution in [`analyze_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub grid_points: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings { grid_points: limitproc::DEFAULT_GRID_POINTS, reps: limitproc::DEFAULT_REPS, seed: limitproc::DEFAULT_SEED }
    }
}

/// Quasi-MLE, one-step update, statistic, decisions and diagnostics for
/// one series, with the default reference simulation.
pub fn analyze(series: &[f64], kind: ModelKind, null: &NullFamily, levels: &[f64]) -> Result<TestReport> {
    analyze_with(series, kind, null, levels, McSettings::default())
}

pub fn analyze_with(
    series: &[f64],
    kind: ModelKind,
    null: &NullFamily,
    levels: &[f64],
    mc: McSettings,
) -> Result<TestReport> {
    if series.len() < MIN_SERIES_LENGTH {
        return Err(Error::Input(format!(
            "need at least {MIN_SERIES_LENGTH} observations, got {}",
            series.len()
        )));
    }
    for &a in levels {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Domain(format!("level {a} outside (0, 1)")));
        }
    }
    let fit = estimation::fit(series, kind, null, &Bounds::default())?;
    let stat = gof::kn_statistic(&fit.path, null)?;
    let r = kind.r();
    let samples = if mc == McSettings::default() {
        limitproc::default_samples(null, r)?
    } else {
        let sampler = limitproc::KSampler::new(null, limitproc::GridSpec::with_points(null.family(), mc.grid_points))?;
        std::sync::Arc::new(sampler.sample(r, mc.reps, mc.seed)?)
    };
    let decisions = levels
        .iter()
        .map(|&alpha| {
            let cv = samples.critical_value(r, alpha)?;
            Ok(LevelDecision {
                alpha,
                critical_value: cv,
                reference_value: limitproc::reference_value(null.family(), r, alpha),
                reject: stat.t > cv,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let estimates = kind
        .parameter_names()
        .into_iter()
        .zip(fit.theta_hat.as_slice())
        .zip(&fit.std_errors)
        .map(|((name, &value), &std_error)| Estimate { name, value, std_error })
        .collect();
    Ok(TestReport {
        model: kind.to_string(),
        null: null.key().to_string(),
        n: series.len(),
        estimates,
        loglik: fit.loglik,
        qm: QM_LAGS.iter().map(|&m| qm_value(&fit.path.eta, m)).collect(),
        statistic: stat.t,
        argmax: stat.argmax,
        r,
        decisions,
        p_value_mc: samples.p_value(r, stat.t)?,
        mc_reps: samples.reps,
        warnings: fit.warnings.clone(),
        fit: Some(fit),
    })
}

impl fmt::Display for TestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {}  null {}  n = {}", self.model, self.null, self.n)?;
        writeln!(f)?;
        writeln!(f, "{:<10} {:>12} {:>12}", "parameter", "estimate", "std.err")?;
        for e in &self.estimates {
            writeln!(f, "{:<10} {:>12.6} {:>12.6}", e.name, e.value, e.std_error)?;
        }
        writeln!(f)?;
        writeln!(f, "log-likelihood {:.4}", self.loglik)?;
        for q in &self.qm {
            writeln!(f, "QM({}) {:.4}  (p = {:.4})", q.lags, q.statistic, q.p_value)?;
        }
        writeln!(f)?;
        writeln!(f, "K_n = {:.4} (r = {}, attained at x = {:.4})", self.statistic, self.r, self.argmax)?;
        writeln!(f, "Monte Carlo p-value {:.4} from {} draws", self.p_value_mc, self.mc_reps)?;
        writeln!(f, "{:>6} {:>10} {:>10} {:>8}", "alpha", "critical", "table", "decision")?;
        for d in &self.decisions {
            let table = d.reference_value.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
            let verdict = if d.reject { "reject" } else { "accept" };
            writeln!(f, "{:>6.2} {:>10.3} {:>10} {:>8}", d.alpha, d.critical_value, table, verdict)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Reads a univariate series: one value per line in the first CSV column,
/// with an optional non-numeric header line.
pub fn read_series<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Input(format!("line {}: {e}", idx + 1)))?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        let Some(field) = record.get(0) else { continue };
        if field.is_empty() && record.len() == 1 {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => return Err(Error::Input(format!("line {line}: value `{field}` is not finite"))),
            Err(_) if out.is_empty() && idx == 0 => continue,
            Err(_) => return Err(Error::Input(format!("line {line}: cannot parse `{field}` as a number"))),
        }
    }
    if out.is_empty() {
        return Err(Error::Input("series is empty".into()));
    }
    Ok(out)
}

/// Writes a series as a single `y` column.
pub fn write_series<W: Write>(series: &[f64], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Input(format!("writing series: {e}"));
    wtr.write_record(["y"]).map_err(io)?;
    for v in series {
        wtr.write_record([format!("{v:e}")]).map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::Input(format!("writing series: {e}")))
}

/// Simulates and writes a critical-value table in the cache format.
pub fn tabulate<W: Write>(
    null: &NullFamily,
    r_max: usize,
    reps: usize,
    grid_points: usize,
    seed: u64,
    out: W,
) -> Result<CritTable> {
    let table = limitproc::tabulate(null, r_max, reps, grid_points, seed)?;
    table.write_csv(out)?;
    Ok(table)
}
