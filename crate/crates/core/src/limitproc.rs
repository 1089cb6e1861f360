//! The Gaussian limit of the normalised process and the distribution of
//! K = sup_x ‖Z(x)‖², the limit of the statistic in [`crate::gof`].
//!
//! Z has r independent coordinates, each a centred Gaussian process with
//! covariance ρ(x, y) = F₀(x∧y) − F₀(x)F₀(y) − xy f₀(x) f₀(y)/(4b₂). Paths
//! are drawn on a fixed grid through one Cholesky factorisation of the grid
//! covariance, shared read-only across replications.
//!
//! A run simulates `r_max` coordinates per replication and reads off
//! K for every r ≤ r_max from cumulative sums of squares, so the tabulated
//! values are coupled across r and monotone in r path by path.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Mutex, OnceLock};

use log::{info, warn};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errordist::{Family, NullFamily};
use crate::rng;

/// Significance levels of the reference tables.
pub const LEVELS: [f64; 6] = [0.01, 0.03, 0.05, 0.10, 0.15, 0.20];
pub const DEFAULT_GRID_POINTS: usize = 2000;
pub const DEFAULT_REPS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 20_070_401;
pub const MAX_TABLE_R: usize = 10;

const JITTER_SCHEDULE: [f64; 5] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8];
/// Replications per GEMM block.
const CHUNK_REPS: usize = 64;
/// Row blocks used to skip the zero upper triangle of the factor.
const ROW_BLOCKS: usize = 8;

/// Reference upper percentage points for F₀ = N(0, 1); rows follow
/// [`LEVELS`], columns r = 1..10.
pub const REFERENCE_NORMAL: [[f64; 10]; 6] = [
    [2.465, 3.150, 3.737, 4.361, 4.769, 5.173, 5.642, 6.065, 6.508, 6.938],
    [1.890, 2.595, 3.100, 3.640, 4.094, 4.468, 4.946, 5.336, 5.677, 6.083],
    [1.650, 2.289, 2.804, 3.267, 3.751, 4.118, 4.553, 4.922, 5.298, 5.679],
    [1.317, 1.891, 2.382, 2.822, 3.262, 3.628, 4.033, 4.384, 4.716, 5.106],
    [1.113, 1.666, 2.126, 2.552, 2.980, 3.325, 3.685, 4.022, 4.367, 4.720],
    [0.988, 1.498, 1.931, 2.339, 2.750, 3.089, 3.436, 3.768, 4.101, 4.445],
];

/// Reference upper percentage points for the double exponential F₀.
pub const REFERENCE_DEXP: [[f64; 10]; 6] = [
    [2.402, 3.149, 3.702, 4.298, 4.809, 5.173, 5.683, 5.937, 6.360, 6.845],
    [1.876, 2.523, 3.073, 3.569, 4.015, 4.399, 4.872, 5.260, 5.611, 6.015],
    [1.630, 2.250, 2.781, 3.218, 3.680, 4.067, 4.500, 4.865, 5.247, 5.607],
    [1.299, 1.873, 2.344, 2.788, 3.222, 3.605, 3.969, 4.335, 4.680, 5.051],
    [1.098, 1.640, 2.092, 2.533, 2.933, 3.279, 3.639, 3.991, 4.317, 4.691],
    [0.961, 1.464, 1.902, 2.314, 2.703, 3.046, 3.399, 3.729, 4.065, 4.046],
];

/// Reference entries that break monotonicity in r and are treated as
/// misprints: (family, r, α).
pub const SUSPECT_ENTRIES: [(Family, usize, f64); 1] = [(Family::DoubleExponential, 10, 0.20)];

/// ρ(x, y) = F₀(x∧y) − F₀(x)F₀(y) − xy f₀(x) f₀(y)/(4b₂).
pub fn rho(x: f64, y: f64, null: &NullFamily) -> f64 {
    let (fx, fy) = (null.cdf(x), null.cdf(y));
    let lo = if x <= y { fx } else { fy };
    lo - fx * fy - x * y * null.pdf(x) * null.pdf(y) / (4.0 * null.b2())
}

/// An equally spaced evaluation grid, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl GridSpec {
    pub fn default_for(family: Family) -> Self {
        let (lo, hi) = family.grid_range();
        GridSpec { points: DEFAULT_GRID_POINTS, lo, hi }
    }

    pub fn with_points(family: Family, points: usize) -> Self {
        GridSpec { points, ..Self::default_for(family) }
    }

    pub fn nodes(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lo + step * i as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::Input(format!("grid needs at least 2 points, got {}", self.points)));
        }
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Input(format!("invalid grid range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// ρ evaluated on all pairs of grid nodes.
pub fn grid_covariance(nodes: &[f64], null: &NullFamily) -> DMatrix<f64> {
    let m = nodes.len();
    let mut c = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for i in j..m {
            let v = rho(nodes[i], nodes[j], null);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Draws grid paths of Z through a fixed lower-triangular factor.
#[derive(Debug, Clone)]
pub struct KSampler {
    null: NullFamily,
    grid: GridSpec,
    nodes: Vec<f64>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl KSampler {
    pub fn new(null: &NullFamily, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        let nodes = grid.nodes();
        let cov = grid_covariance(&nodes, null);
        let (factor, jitter) = factorize(cov)?;
        Ok(KSampler { null: *null, grid, nodes, factor, jitter })
    }

    pub fn null(&self) -> &NullFamily {
        &self.null
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Diagonal jitter that was needed for the factorisation (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Sorted samples of K for r = 1..=r_max from `reps` replications.
    ///
    /// Replication k draws its normals from its own stream derived from
    /// (seed, k), so the output does not depend on the thread count.
    pub fn sample(&self, r_max: usize, reps: usize, seed: u64) -> Result<KSamples> {
        if r_max == 0 {
            return Err(Error::Input("dimension r must be at least 1".into()));
        }
        if reps == 0 {
            return Err(Error::Input("need at least one replication".into()));
        }
        let chunks: Vec<usize> = (0..reps).step_by(CHUNK_REPS).collect();
        let per_chunk: Vec<Vec<f64>> = chunks
            .par_iter()
            .map(|&start| self.chunk(start, (start + CHUNK_REPS).min(reps), r_max, seed))
            .collect();
        let mut by_r = vec![Vec::with_capacity(reps); r_max];
        for block in per_chunk {
            // Each block holds r_max values per replication.
            for rep_vals in block.chunks_exact(r_max) {
                for (r, &v) in rep_vals.iter().enumerate() {
                    by_r[r].push(v);
                }
            }
        }
        for v in &mut by_r {
            v.sort_by(f64::total_cmp);
        }
        Ok(KSamples { family: self.null.family(), grid: self.grid, reps, seed, by_r })
    }

    fn chunk(&self, start: usize, end: usize, r_max: usize, seed: u64) -> Vec<f64> {
        let m = self.nodes.len();
        let cols = (end - start) * r_max;
        let mut e = DMatrix::<f64>::zeros(m, cols);
        for (local, rep) in (start..end).enumerate() {
            let mut g = rng::stream(seed, rep as u64);
            for j in 0..r_max {
                for v in e.column_mut(local * r_max + j).iter_mut() {
                    *v = StandardNormal.sample(&mut g);
                }
            }
        }
        let z = self.lower_times(&e);
        let mut out = Vec::with_capacity((end - start) * r_max);
        let mut acc = vec![0.0; m];
        for local in 0..end - start {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for j in 0..r_max {
                let col = z.column(local * r_max + j);
                let mut best = 0.0f64;
                for (a, &v) in acc.iter_mut().zip(col.iter()) {
                    *a += v * v;
                    best = best.max(*a);
                }
                out.push(best);
            }
        }
        out
    }

    /// factor · e, skipping the zero upper triangle in row blocks.
    fn lower_times(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.nodes.len();
        let mut z = DMatrix::<f64>::zeros(m, e.ncols());
        let block = m.div_ceil(ROW_BLOCKS);
        let mut a = 0;
        while a < m {
            let b = (a + block).min(m);
            let lhs = self.factor.view((a, 0), (b - a, b));
            let rhs = e.rows(0, b);
            z.rows_mut(a, b - a).gemm(1.0, &lhs, &rhs, 0.0);
            a = b;
        }
        z
    }
}

fn factorize(cov: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok((ch.l(), 0.0));
    }
    for &jitter in &JITTER_SCHEDULE {
        let mut c = cov.clone();
        for i in 0..c.nrows() {
            c[(i, i)] += jitter;
        }
        if let Some(ch) = c.cholesky() {
            warn!("grid covariance factorised with diagonal jitter {jitter:e}");
            return Ok((ch.l(), jitter));
        }
    }
    Err(Error::Numeric(format!(
        "grid covariance is not positive definite even with jitter {:e}",
        JITTER_SCHEDULE[JITTER_SCHEDULE.len() - 1]
    )))
}

/// Sorted simulated values of K for r = 1..=r_max.
#[derive(Debug, Clone)]
pub struct KSamples {
    pub family: Family,
    pub grid: GridSpec,
    pub reps: usize,
    pub seed: u64,
    by_r: Vec<Vec<f64>>,
}

impl KSamples {
    pub fn r_max(&self) -> usize {
        self.by_r.len()
    }

    /// Sorted sample for dimension r (1-based).
    pub fn for_r(&self, r: usize) -> Result<&[f64]> {
        self.by_r
            .get(r.wrapping_sub(1))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Input(format!("r = {r} outside 1..={}", self.by_r.len())))
    }

    pub fn critical_value(&self, r: usize, alpha: f64) -> Result<f64> {
        percentile(self.for_r(r)?, alpha)
    }

    /// Monte Carlo p-value, the fraction of simulated K at least `t`.
    ///
    /// With critical values taken from the same sample, `t` exceeds the
    /// upper-α point exactly when this p-value is at most α.
    pub fn p_value(&self, r: usize, t: f64) -> Result<f64> {
        let s = self.for_r(r)?;
        let below = s.partition_point(|&v| v < t);
        Ok((s.len() - below) as f64 / s.len() as f64)
    }
}

/// Sorted sample of K for one dimension r on `grid_points` nodes over the
/// family's default range.
pub fn simulate_k_distribution(null: &NullFamily, r: usize, grid_points: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = KSampler::new(null, GridSpec::with_points(null.family(), grid_points))?;
    let mut s = sampler.sample(r, reps, seed)?;
    Ok(s.by_r.pop().expect("r ≥ 1"))
}

/// Upper-α point of an ascending sample: the element at index
/// ⌈(1 − α)·len⌉ − 1.
pub fn percentile(sorted: &[f64], alpha: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Input("percentile of an empty sample".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    Ok(sorted[upper_index(sorted.len(), alpha)])
}

fn upper_index(len: usize, alpha: f64) -> usize {
    // The guard stops (1 − α)·len from rounding up past an exact integer.
    let k = ((1.0 - alpha) * len as f64 - 1e-9).ceil() as usize;
    k.clamp(1, len) - 1
}

fn level_index(alpha: f64) -> Option<usize> {
    LEVELS.iter().position(|&l| (l - alpha).abs() < 1e-12)
}

/// Reference table entry, if (r, α) is tabulated and not a suspected misprint.
pub fn reference_value(family: Family, r: usize, alpha: f64) -> Option<f64> {
    let row = level_index(alpha)?;
    if !(1..=MAX_TABLE_R).contains(&r) || is_suspect(family, r, alpha) {
        return None;
    }
    let table = match family {
        Family::StandardNormal => &REFERENCE_NORMAL,
        Family::DoubleExponential => &REFERENCE_DEXP,
    };
    Some(table[row][r - 1])
}

/// Whether the reference table entry is believed to be misprinted.
pub fn is_suspect(family: Family, r: usize, alpha: f64) -> bool {
    SUSPECT_ENTRIES.iter().any(|&(f, rr, a)| f == family && rr == r && (a - alpha).abs() < 1e-12)
}

/// Lookup-only critical value.
pub fn critical_value_lookup(family: Family, r: usize, alpha: f64) -> Result<f64> {
    reference_value(family, r, alpha).ok_or_else(|| {
        Error::Domain(format!("no reference value for {family}, r = {r}, alpha = {alpha}"))
    })
}

/// Critical value from the reference tables, or from a fresh simulation
/// with the default grid, replication count and seed when the entry is not
/// tabulated (or is a suspected misprint). Simulations are cached per
/// (family, r) for the lifetime of the process.
pub fn critical_value(null: &NullFamily, r: usize, alpha: f64) -> Result<f64> {
    if let Some(v) = reference_value(null.family(), r, alpha) {
        return Ok(v);
    }
    default_samples(null, r)?.critical_value(r, alpha)
}

/// Default-settings K sample for (family, r), computed once per process.
type SampleCache = Mutex<HashMap<(Family, usize), std::sync::Arc<KSamples>>>;

pub fn default_samples(null: &NullFamily, r: usize) -> Result<std::sync::Arc<KSamples>> {
    static CACHE: OnceLock<SampleCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (null.family(), r);
    if let Some(s) = cache.lock().expect("cache poisoned").get(&key) {
        return Ok(s.clone());
    }
    info!("simulating the K distribution for {} with r = {r}", null.family());
    let sampler = KSampler::new(null, GridSpec::default_for(null.family()))?;
    let mut s = sampler.sample(r, DEFAULT_REPS, DEFAULT_SEED)?;
    // Keep only the requested dimension.
    let wanted = s.by_r.swap_remove(r - 1);
    s.by_r = vec![Vec::new(); r - 1];
    s.by_r.push(wanted);
    let s = std::sync::Arc::new(s);
    cache.lock().expect("cache poisoned").insert(key, s.clone());
    Ok(s)
}

/// One line of a critical-value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritRow {
    pub family: String,
    pub r: usize,
    pub alpha: f64,
    pub value: f64,
    pub grid_points: usize,
    pub range_lo: f64,
    pub range_hi: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Simulated upper percentage points for r = 1..=r_max at [`LEVELS`].
#[derive(Debug, Clone, PartialEq)]
pub struct CritTable {
    pub family: Family,
    pub grid: GridSpec,
    pub reps: usize,
    pub seed: u64,
    pub r_max: usize,
    /// values[r − 1][level index].
    pub values: Vec<[f64; 6]>,
}

impl CritTable {
    pub fn from_samples(samples: &KSamples) -> Result<Self> {
        let values = (1..=samples.r_max())
            .map(|r| {
                let s = samples.for_r(r)?;
                let mut row = [0.0; 6];
                for (slot, &a) in row.iter_mut().zip(&LEVELS) {
                    *slot = percentile(s, a)?;
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CritTable {
            family: samples.family,
            grid: samples.grid,
            reps: samples.reps,
            seed: samples.seed,
            r_max: samples.r_max(),
            values,
        })
    }

    pub fn get(&self, r: usize, alpha: f64) -> Option<f64> {
        let idx = level_index(alpha)?;
        self.values.get(r.checked_sub(1)?).map(|row| row[idx])
    }

    /// Fewer than 1000 replications leave the tail percentiles too noisy to use.
    pub fn low_precision(&self) -> bool {
        self.reps < 1000
    }

    pub fn rows(&self) -> Vec<CritRow> {
        let mut out = Vec::with_capacity(self.r_max * LEVELS.len());
        for (r0, row) in self.values.iter().enumerate() {
            for (&alpha, &value) in LEVELS.iter().zip(row) {
                out.push(CritRow {
                    family: self.family.key().to_string(),
                    r: r0 + 1,
                    alpha,
                    value,
                    grid_points: self.grid.points,
                    range_lo: self.grid.lo,
                    range_hi: self.grid.hi,
                    reps: self.reps,
                    seed: self.seed,
                });
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in self.rows() {
            wtr.serialize(row).map_err(|e| Error::Input(format!("writing table: {e}")))?;
        }
        wtr.flush().map_err(|e| Error::Input(format!("writing table: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(rdr: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(rdr);
        let rows: Vec<CritRow> = rdr
            .deserialize()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| Error::Input(format!("table line {}: {e}", i + 2))))
            .collect::<Result<_>>()?;
        let first = rows.first().ok_or_else(|| Error::Input("empty critical-value table".into()))?;
        let family: Family = first.family.parse()?;
        let grid = GridSpec { points: first.grid_points, lo: first.range_lo, hi: first.range_hi };
        let r_max = rows.iter().map(|r| r.r).max().unwrap_or(0);
        let mut values = vec![[f64::NAN; 6]; r_max];
        for row in &rows {
            let same_meta = row.family == first.family
                && row.grid_points == first.grid_points
                && row.range_lo == first.range_lo
                && row.range_hi == first.range_hi
                && row.reps == first.reps
                && row.seed == first.seed;
            if !same_meta {
                return Err(Error::Input("critical-value table mixes settings".into()));
            }
            let idx = level_index(row.alpha)
                .ok_or_else(|| Error::Input(format!("untabulated level {}", row.alpha)))?;
            if row.r == 0 {
                return Err(Error::Input("r must be at least 1".into()));
            }
            values[row.r - 1][idx] = row.value;
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Input("critical-value table is incomplete".into()));
        }
        Ok(CritTable { family, grid, reps: first.reps, seed: first.seed, r_max, values })
    }
}

/// Simulates and tabulates upper percentage points for r = 1..=r_max.
pub fn tabulate(null: &NullFamily, r_max: usize, reps: usize, grid_points: usize, seed: u64) -> Result<CritTable> {
    let sampler = KSampler::new(null, GridSpec::with_points(null.family(), grid_points))?;
    let table = CritTable::from_samples(&sampler.sample(r_max, reps, seed)?)?;
    if table.low_precision() {
        warn!("only {reps} replications; tail percentiles are low precision");
    }
    Ok(table)
}
