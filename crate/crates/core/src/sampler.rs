//! Training-data generation for the entropy closure.
//!
//! Two generators produce labeled triplets `(ubar, alpha, h)`:
//!
//! * uniform moments: rejection sampling from the bounding box of the
//!   reduced realizable set, keeping draws with margin above the boundary
//!   standoff `delta`, labeled by the Newton solver;
//! * uniform multipliers: reduced multipliers drawn from a box `A`, with
//!   `alpha_0` from the unit-mass identity and `ubar` from quadrature of the
//!   reconstructed density, so labels are consistent to machine precision.
//!
//! The RNG is split per sample index, so parallel and serial generation
//! produce identical datasets for a fixed seed.
//!
//! Datasets persist as CSV with `#`-prefixed `key = value` header lines and
//! one row `u1..uN, alpha0..alphaN, h` per sample; floats are written in
//! shortest round-trip form, making the files lossless.

use crate::entropy::{alpha_zero_from_reduced, entropy_functional, reconstruct_density};
use crate::error::{Error, Result};
use crate::moments::{Dimension, LagrangeMultipliers, MomentVector};
use crate::newton::{solve_dual, NewtonConfig};
use crate::realizability::{check, ReducedMoments};
use crate::velocity::{moments_of, MomentBasis, QuadratureRule};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

/// One labeled training point. `u` is normalized (unit density), `alpha`
/// includes the dependent zero component.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosureSample {
    pub u: MomentVector,
    pub alpha: LagrangeMultipliers,
    pub h: f64,
}

impl ClosureSample {
    /// Re-check the three-way consistency between the fields: moments of the
    /// reconstructed density against `u`, and the algebraic entropy value
    /// against `h`.
    pub fn verify(
        &self,
        basis: &MomentBasis,
        rule: &QuadratureRule,
        moment_tol: f64,
        entropy_tol: f64,
    ) -> Result<()> {
        let f = reconstruct_density(&self.alpha, basis, rule)?;
        let recon = moments_of(&f, basis, rule);
        for (i, (a, b)) in recon.values.iter().zip(self.u.as_slice()).enumerate() {
            if (a - b).abs() > moment_tol {
                return Err(Error::Sampler(format!(
                    "moment {i} off by {:.3e} (tolerance {moment_tol:.1e})",
                    (a - b).abs()
                )));
            }
        }
        let h = entropy_functional(&self.u, &self.alpha, basis, rule)?;
        if (h - self.h).abs() > entropy_tol {
            return Err(Error::Sampler(format!(
                "entropy off by {:.3e} (tolerance {entropy_tol:.1e})",
                (h - self.h).abs()
            )));
        }
        let (_, reduced) = crate::realizability::normalize(&self.u)?;
        let report = check(&reduced)?;
        if !report.realizable {
            return Err(Error::Sampler(format!(
                "sample not realizable ({}, margin {:.3e})",
                report.binding_constraint, report.margin
            )));
        }
        Ok(())
    }

    /// Margin of the sample's reduced moments.
    pub fn margin(&self, _basis: &MomentBasis) -> Result<f64> {
        let (_, reduced) = crate::realizability::normalize(&self.u)?;
        Ok(check(&reduced)?.margin)
    }
}

/// Which generator produced a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleAlgorithm {
    UniformMoments,
    UniformAlpha,
}

impl std::fmt::Display for SampleAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleAlgorithm::UniformMoments => f.write_str("uniform-moments"),
            SampleAlgorithm::UniformAlpha => f.write_str("uniform-alpha"),
        }
    }
}

impl std::str::FromStr for SampleAlgorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-moments" | "uniform-u" => Ok(SampleAlgorithm::UniformMoments),
            "uniform-alpha" => Ok(SampleAlgorithm::UniformAlpha),
            other => Err(Error::Config(format!("unknown sampling algorithm {other}"))),
        }
    }
}

/// Generator configuration shared by both algorithms.
#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub order: usize,
    pub dimension: Dimension,
    pub count: usize,
    /// Boundary standoff for uniform-moment sampling.
    pub delta: f64,
    /// Newton settings used to label uniform-moment draws; the tolerance is
    /// also the moment-consistency tolerance of those labels.
    pub newton: NewtonConfig,
    /// Box bounds for reduced multipliers in uniform-alpha sampling.
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            order: 1,
            dimension: Dimension::One,
            count: 1000,
            delta: 0.01,
            newton: NewtonConfig::default(),
            alpha_min: -50.0,
            alpha_max: 50.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    fn validate(&self, for_alpha: bool) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("sample count must be positive".into()));
        }
        if for_alpha {
            if !(self.alpha_min < self.alpha_max) {
                return Err(Error::Config("alpha box must be non-empty".into()));
            }
        } else if !(self.delta > 0.0) {
            return Err(Error::Config("boundary standoff delta must be positive".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index as u64)))
}

/// Bounding-box draw for one reduced coordinate: odd-order moments live in
/// [-1,1], even-order ones in [0,1]; 2D components in [-1,1].
fn draw_reduced(rng: &mut ChaCha8Rng, order: usize, dimension: Dimension) -> Vec<f64> {
    match dimension {
        Dimension::One => (1..=order)
            .map(|k| {
                if k % 2 == 0 {
                    rng.gen_range(0.0..1.0)
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect(),
        Dimension::Two => (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

const ACCEPTANCE_WINDOW: u64 = 100_000;
const MAX_ATTEMPTS_PER_SAMPLE: usize = 1_000_000;

/// Draw/acceptance counters of one generation run.
#[derive(Clone, Copy, Debug, Default)]
pub struct SampleStats {
    pub draws: u64,
    pub accepted: u64,
    /// Draws discarded after a failed or overflowing labeling step.
    pub discarded: u64,
}

impl SampleStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.draws == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.draws as f64
    }
}

/// Uniform sampling of the reduced realizable set with Newton labels.
///
/// Rejection sampling keeps the distribution exactly uniform over the
/// delta-shrunk region. Draws whose Newton solve fails to converge are
/// discarded (logged) and redrawn; a window acceptance rate below 1%
/// aborts, since that indicates a mis-specified region.
pub fn sample_uniform_moments(
    cfg: &SamplerConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<Vec<ClosureSample>> {
    sample_uniform_moments_with_stats(cfg, basis, rule).map(|(s, _)| s)
}

/// [`sample_uniform_moments`] plus draw statistics.
pub fn sample_uniform_moments_with_stats(
    cfg: &SamplerConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<(Vec<ClosureSample>, SampleStats)> {
    cfg.validate(false)?;
    let draws = AtomicU64::new(0);
    let accepts = AtomicU64::new(0);
    let discarded = AtomicU64::new(0);

    let samples: Result<Vec<ClosureSample>> = (0..cfg.count)
        .into_par_iter()
        .map(|index| {
            let mut rng = sample_rng(cfg.seed, index);
            for _ in 0..MAX_ATTEMPTS_PER_SAMPLE {
                let total = draws.fetch_add(1, Ordering::Relaxed) + 1;
                if total % ACCEPTANCE_WINDOW == 0 {
                    let acc = accepts.load(Ordering::Relaxed);
                    if acc * 100 < total {
                        return Err(Error::Sampler(format!(
                            "acceptance rate {acc}/{total} fell below 1%; \
                             sampling region is likely mis-specified"
                        )));
                    }
                }
                let coords = draw_reduced(&mut rng, cfg.order, cfg.dimension);
                let reduced = ReducedMoments {
                    values: coords.clone(),
                    order: cfg.order,
                    dimension: cfg.dimension,
                };
                let report = check(&reduced)?;
                if report.margin <= cfg.delta {
                    continue;
                }
                let mut values = Vec::with_capacity(coords.len() + 1);
                values.push(1.0);
                values.extend_from_slice(&coords);
                let u = MomentVector::new(values, cfg.order, cfg.dimension)?;
                match solve_dual(&u, None, &cfg.newton, basis, rule) {
                    Ok(res) if res.converged => {
                        accepts.fetch_add(1, Ordering::Relaxed);
                        return Ok(ClosureSample {
                            u,
                            alpha: res.alpha,
                            h: res.h,
                        });
                    }
                    Ok(_) | Err(Error::BoundaryProximity { .. }) => {
                        discarded.fetch_add(1, Ordering::Relaxed);
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Sampler(format!(
                "no acceptable draw for sample {index} after {MAX_ATTEMPTS_PER_SAMPLE} attempts"
            )))
        })
        .collect();
    let n_discarded = discarded.load(Ordering::Relaxed);
    if n_discarded > 0 {
        log::warn!("{n_discarded} draws discarded after Newton non-convergence");
    }
    let stats = SampleStats {
        draws: draws.load(Ordering::Relaxed),
        accepted: accepts.load(Ordering::Relaxed),
        discarded: n_discarded,
    };
    samples.map(|s| (s, stats))
}

/// Uniform sampling of reduced multipliers with analytic labels.
///
/// `alpha_0` comes from the unit-mass identity, `ubar` from quadrature of
/// the reconstructed density, and `h` from the algebraic entropy form, so
/// every label is consistent to quadrature precision. Draws that overflow
/// the exponential guard are discarded and redrawn.
pub fn sample_uniform_alpha(
    cfg: &SamplerConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<Vec<ClosureSample>> {
    cfg.validate(true)?;
    let reduced_len = basis.basis_size() - 1;
    let discarded = AtomicU64::new(0);
    let samples: Result<Vec<ClosureSample>> = (0..cfg.count)
        .into_par_iter()
        .map(|index| {
            let mut rng = sample_rng(cfg.seed, index);
            for _ in 0..MAX_ATTEMPTS_PER_SAMPLE {
                let alpha_r: Vec<f64> = (0..reduced_len)
                    .map(|_| rng.gen_range(cfg.alpha_min..cfg.alpha_max))
                    .collect();
                let alpha0 = match alpha_zero_from_reduced(&alpha_r, basis, rule) {
                    Ok(a) => a,
                    Err(Error::Overflow { .. }) => {
                        discarded.fetch_add(1, Ordering::Relaxed);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let alpha = LagrangeMultipliers::from_reduced(alpha0, &alpha_r);
                let f = match reconstruct_density(&alpha, basis, rule) {
                    Ok(f) => f,
                    Err(Error::Overflow { .. }) => {
                        discarded.fetch_add(1, Ordering::Relaxed);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let u = moments_of(&f, basis, rule);
                let h = entropy_functional(&u, &alpha, basis, rule)?;
                let sample = ClosureSample { u, alpha, h };
                // moments of a strictly positive density must be realizable;
                // a failure here is a formula or quadrature bug
                let (_, reduced) = crate::realizability::normalize(&sample.u)?;
                let report = check(&reduced)?;
                if !report.realizable {
                    return Err(Error::Sampler(format!(
                        "reconstructed moments failed the realizability check \
                         ({}, margin {:.3e}); this indicates a quadrature bug",
                        report.binding_constraint, report.margin
                    )));
                }
                return Ok(sample);
            }
            Err(Error::Sampler(format!(
                "no admissible multiplier draw for sample {index}"
            )))
        })
        .collect();
    let n_discarded = discarded.load(Ordering::Relaxed);
    if n_discarded > 0 {
        log::warn!("{n_discarded} multiplier draws discarded after overflow");
    }
    samples
}

/// Dataset header fields; everything needed to reproduce the generation run.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub algorithm: SampleAlgorithm,
    pub order: usize,
    pub dimension: Dimension,
    pub count: usize,
    pub seed: u64,
    pub delta: Option<f64>,
    pub tau: Option<f64>,
    pub alpha_box: Option<(f64, f64)>,
}

impl DatasetMeta {
    pub fn for_config(cfg: &SamplerConfig, algorithm: SampleAlgorithm) -> Self {
        DatasetMeta {
            algorithm,
            order: cfg.order,
            dimension: cfg.dimension,
            count: cfg.count,
            seed: cfg.seed,
            delta: match algorithm {
                SampleAlgorithm::UniformMoments => Some(cfg.delta),
                SampleAlgorithm::UniformAlpha => None,
            },
            tau: match algorithm {
                SampleAlgorithm::UniformMoments => Some(cfg.newton.tolerance),
                SampleAlgorithm::UniformAlpha => None,
            },
            alpha_box: match algorithm {
                SampleAlgorithm::UniformMoments => None,
                SampleAlgorithm::UniformAlpha => Some((cfg.alpha_min, cfg.alpha_max)),
            },
        }
    }
}

pub fn write_dataset(
    path: impl AsRef<Path>,
    meta: &DatasetMeta,
    samples: &[ClosureSample],
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "# mnkit-dataset v1").map_err(io_err)?;
    writeln!(w, "# algorithm = {}", meta.algorithm).map_err(io_err)?;
    writeln!(w, "# dimension = {}", meta.dimension).map_err(io_err)?;
    writeln!(w, "# order = {}", meta.order).map_err(io_err)?;
    writeln!(w, "# count = {}", samples.len()).map_err(io_err)?;
    writeln!(w, "# seed = {}", meta.seed).map_err(io_err)?;
    if let Some(delta) = meta.delta {
        writeln!(w, "# delta = {delta}").map_err(io_err)?;
    }
    if let Some(tau) = meta.tau {
        writeln!(w, "# tau = {tau}").map_err(io_err)?;
    }
    if let Some((lo, hi)) = meta.alpha_box {
        writeln!(w, "# alpha_box = {lo} {hi}").map_err(io_err)?;
    }
    let n_red = reduced_len(meta);
    let cols: Vec<String> = (1..=n_red)
        .map(|i| format!("u{i}"))
        .chain((0..=n_red).map(|i| format!("alpha{i}")))
        .chain(std::iter::once("h".to_string()))
        .collect();
    writeln!(w, "# columns = {}", cols.join(",")).map_err(io_err)?;
    for s in samples {
        let mut fields: Vec<String> = s.u.values[1..].iter().map(|v| format!("{v}")).collect();
        fields.extend(s.alpha.values.iter().map(|v| format!("{v}")));
        fields.push(format!("{}", s.h));
        writeln!(w, "{}", fields.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Number of reduced moment components for the dataset's basis tag.
fn reduced_len(meta: &DatasetMeta) -> usize {
    match meta.dimension {
        Dimension::One => meta.order,
        Dimension::Two => 2,
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetMeta, Vec<ClosureSample>)> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let reader = std::io::BufReader::new(file);

    let mut algorithm = None;
    let mut dimension = None;
    let mut order = None;
    let mut count = None;
    let mut seed = 0u64;
    let mut delta = None;
    let mut tau = None;
    let mut alpha_box = None;
    let mut samples = Vec::new();
    let mut saw_magic = false;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        let parse_err = |message: String| Error::Parse {
            path: display.clone(),
            line: lineno,
            message,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim();
            if lineno == 1 {
                if rest != "mnkit-dataset v1" {
                    return Err(parse_err(format!("unrecognized dataset magic: {rest}")));
                }
                saw_magic = true;
                continue;
            }
            if let Some((key, value)) = rest.split_once('=') {
                let key = key.trim();
                let value = value.trim();
                match key {
                    "algorithm" => algorithm = Some(value.parse::<SampleAlgorithm>()?),
                    "dimension" => {
                        dimension = Some(match value {
                            "1" => Dimension::One,
                            "2" => Dimension::Two,
                            other => {
                                return Err(parse_err(format!("bad dimension {other}")));
                            }
                        })
                    }
                    "order" => {
                        order = Some(value.parse().map_err(|_| {
                            parse_err(format!("bad order {value}"))
                        })?)
                    }
                    "count" => {
                        count = Some(value.parse().map_err(|_| {
                            parse_err(format!("bad count {value}"))
                        })?)
                    }
                    "seed" => {
                        seed = value
                            .parse()
                            .map_err(|_| parse_err(format!("bad seed {value}")))?
                    }
                    "delta" => {
                        delta = Some(value.parse().map_err(|_| {
                            parse_err(format!("bad delta {value}"))
                        })?)
                    }
                    "tau" => {
                        tau = Some(value.parse().map_err(|_| {
                            parse_err(format!("bad tau {value}"))
                        })?)
                    }
                    "alpha_box" => {
                        let parts: Vec<&str> = value.split_whitespace().collect();
                        if parts.len() != 2 {
                            return Err(parse_err("alpha_box needs two bounds".into()));
                        }
                        let lo = parts[0]
                            .parse()
                            .map_err(|_| parse_err(format!("bad bound {}", parts[0])))?;
                        let hi = parts[1]
                            .parse()
                            .map_err(|_| parse_err(format!("bad bound {}", parts[1])))?;
                        alpha_box = Some((lo, hi));
                    }
                    "columns" => {}
                    other => {
                        return Err(parse_err(format!("unknown header key {other}")));
                    }
                }
            }
            continue;
        }
        if !saw_magic {
            return Err(parse_err("missing dataset magic line".into()));
        }
        let (order, dimension) = match (order, dimension) {
            (Some(o), Some(d)) => (o, d),
            _ => return Err(parse_err("data row before order/dimension header".into())),
        };
        let n_red = match dimension {
            Dimension::One => order,
            Dimension::Two => 2,
        };
        let expected = n_red + (n_red + 1) + 1;
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != expected {
            return Err(parse_err(format!(
                "expected {expected} fields, found {}",
                fields.len()
            )));
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("bad number {f}")))
            })
            .collect::<Result<_>>()?;
        let mut u = Vec::with_capacity(n_red + 1);
        u.push(1.0);
        u.extend_from_slice(&nums[..n_red]);
        let alpha = nums[n_red..n_red + n_red + 1].to_vec();
        let h = nums[expected - 1];
        samples.push(ClosureSample {
            u: MomentVector::new(u, order, dimension)?,
            alpha: LagrangeMultipliers::new(alpha),
            h,
        });
    }

    let parse_err0 = |message: String| Error::Parse {
        path: display.clone(),
        line: 0,
        message,
    };
    if samples.is_empty() {
        return Err(parse_err0("dataset contains no samples".into()));
    }
    let meta = DatasetMeta {
        algorithm: algorithm.ok_or_else(|| parse_err0("missing algorithm header".into()))?,
        order: order.ok_or_else(|| parse_err0("missing order header".into()))?,
        dimension: dimension.ok_or_else(|| parse_err0("missing dimension header".into()))?,
        count: count.ok_or_else(|| parse_err0("missing count header".into()))?,
        seed,
        delta,
        tau,
        alpha_box,
    };
    if meta.count != samples.len() {
        return Err(parse_err0(format!(
            "header count {} does not match {} data rows",
            meta.count,
            samples.len()
        )));
    }
    Ok((meta, samples))
}

/// Error when a dataset's basis tag differs from what the caller needs.
pub fn expect_shape(meta: &DatasetMeta, order: usize, dimension: Dimension) -> Result<()> {
    if meta.order != order || meta.dimension != dimension {
        return Err(Error::Config(format!(
            "dataset is order {} in {}D, requested order {order} in {dimension}D",
            meta.order, meta.dimension
        )));
    }
    Ok(())
}
