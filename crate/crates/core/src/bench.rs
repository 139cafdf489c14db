//! Timing comparison of the Newton closure against the neural surrogate.
//!
//! Three moment populations stress the solvers differently: uniform draws
//! over the reduced realizable set, draws pinned at a small margin to the
//! boundary (where the dual problem is ill-conditioned and Newton slows
//! down by orders of magnitude), and draws from the deep interior. The
//! surrogate's cost is input-independent, which is the point of the
//! comparison.

use crate::error::{Error, Result};
use crate::icnn::{infer_normalized_batch, IcnnModel};
use crate::moments::{Dimension, MomentVector};
use crate::newton::{solve_dual_batch, NewtonConfig};
use crate::realizability::{check, ReducedMoments};
use crate::velocity::{MomentBasis, QuadratureRule};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Population {
    /// Uniform over the reduced realizable set with a small standoff.
    Uniform,
    /// Margin pinned at `boundary_margin` (default 0.01).
    Boundary,
    /// Deep interior, margin above 0.3.
    Interior,
}

impl std::fmt::Display for Population {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Population::Uniform => "uniform",
            Population::Boundary => "boundary",
            Population::Interior => "interior",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub order: usize,
    pub dimension: Dimension,
    pub batch_size: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub boundary_margin: f64,
    pub newton: NewtonConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            order: 2,
            dimension: Dimension::One,
            batch_size: 1000,
            repetitions: 20,
            seed: 0,
            boundary_margin: 0.01,
            newton: NewtonConfig::default(),
        }
    }
}

/// Mean and standard deviation over repetitions, in seconds.
#[derive(Clone, Copy, Debug)]
pub struct TimingStats {
    pub mean: f64,
    pub std: f64,
    pub batch_size: usize,
    pub repetitions: usize,
}

impl TimingStats {
    fn from_durations(times: &[f64], batch_size: usize) -> TimingStats {
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        TimingStats {
            mean,
            std: var.sqrt(),
            batch_size,
            repetitions: times.len(),
        }
    }

    pub fn per_sample(&self) -> f64 {
        self.mean / self.batch_size as f64
    }
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub population: Population,
    pub newton: TimingStats,
    pub icnn: TimingStats,
}

/// Draw a normalized moment population for benchmarking. Supports the 1D
/// M1/M2 and 2D M1 closures.
pub fn build_population(
    population: Population,
    cfg: &BenchConfig,
) -> Result<Vec<MomentVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.batch_size;
    let mut out = Vec::with_capacity(n);
    let draw_with_margin = |rng: &mut ChaCha8Rng, lo: f64| -> Result<Vec<f64>> {
        for _ in 0..1_000_000 {
            let coords: Vec<f64> = match (cfg.dimension, cfg.order) {
                (Dimension::One, 1) => vec![rng.gen_range(-1.0..1.0)],
                (Dimension::One, 2) => {
                    vec![rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)]
                }
                (Dimension::Two, 1) => {
                    vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
                }
                _ => {
                    return Err(Error::Config(format!(
                        "benchmark populations support 1D M1/M2 and 2D M1, got order {} in {}D",
                        cfg.order, cfg.dimension
                    )))
                }
            };
            let reduced = ReducedMoments {
                values: coords.clone(),
                order: cfg.order,
                dimension: cfg.dimension,
            };
            if check(&reduced)?.margin > lo {
                return Ok(coords);
            }
        }
        Err(Error::Sampler("population rejection sampling stalled".into()))
    };
    for _ in 0..n {
        let coords = match population {
            Population::Uniform => draw_with_margin(&mut rng, 0.01)?,
            Population::Interior => draw_with_margin(&mut rng, 0.3)?,
            Population::Boundary => match (cfg.dimension, cfg.order) {
                // constructions with the margin exactly at the target
                (Dimension::One, 1) => {
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    vec![sign * (1.0 - cfg.boundary_margin)]
                }
                (Dimension::One, 2) => {
                    let u1: f64 = rng.gen_range(-0.9..0.9);
                    vec![u1, u1 * u1 + cfg.boundary_margin]
                }
                (Dimension::Two, 1) => {
                    let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                    let r = 1.0 - cfg.boundary_margin;
                    vec![r * phi.cos(), r * phi.sin()]
                }
                _ => {
                    return Err(Error::Config(format!(
                        "benchmark populations support 1D M1/M2 and 2D M1, got order {} in {}D",
                        cfg.order, cfg.dimension
                    )))
                }
            },
        };
        let mut values = Vec::with_capacity(coords.len() + 1);
        values.push(1.0);
        values.extend_from_slice(&coords);
        out.push(MomentVector::new(values, cfg.order, cfg.dimension)?);
    }
    Ok(out)
}

/// Wall time of repeated Newton batch solves.
pub fn time_newton(
    us: &[MomentVector],
    cfg: &BenchConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<TimingStats> {
    let mut times = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let start = Instant::now();
        let results = solve_dual_batch(us, &cfg.newton, basis, rule);
        let elapsed = start.elapsed().as_secs_f64();
        for r in results {
            let r = r?;
            if !r.converged {
                return Err(Error::Sampler(
                    "newton failed to converge during benchmarking".into(),
                ));
            }
        }
        times.push(elapsed);
    }
    Ok(TimingStats::from_durations(&times, us.len()))
}

/// Wall time of repeated surrogate batch inference (forward, input
/// gradient, multiplier assembly, and moment reconstruction).
pub fn time_icnn(
    model: &IcnnModel,
    us: &[MomentVector],
    cfg: &BenchConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<TimingStats> {
    let inputs: Vec<Vec<f64>> = us.iter().map(|u| u.values[1..].to_vec()).collect();
    let mut times = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let start = Instant::now();
        let results = infer_normalized_batch(model, &inputs, basis, rule);
        let elapsed = start.elapsed().as_secs_f64();
        for r in results {
            r?;
        }
        times.push(elapsed);
    }
    Ok(TimingStats::from_durations(&times, us.len()))
}

/// Full benchmark: all three populations, both backends.
pub fn run_bench(
    model: &IcnnModel,
    cfg: &BenchConfig,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<Vec<BenchRow>> {
    if cfg.repetitions < 2 {
        return Err(Error::Config(
            "timing statistics need at least 2 repetitions".into(),
        ));
    }
    let mut rows = Vec::new();
    for population in [Population::Uniform, Population::Boundary, Population::Interior] {
        let us = build_population(population, cfg)?;
        let newton = time_newton(&us, cfg, basis, rule)?;
        let icnn = time_icnn(model, &us, cfg, basis, rule)?;
        rows.push(BenchRow {
            population,
            newton,
            icnn,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::realizability::normalize;

    #[test]
    fn populations_have_requested_margins() {
        let cfg = BenchConfig {
            batch_size: 50,
            seed: 3,
            ..Default::default()
        };
        for (pop, lo, hi) in [
            (Population::Uniform, 0.01, 0.51),
            (Population::Boundary, 0.0099, 0.0101),
            (Population::Interior, 0.3, 0.51),
        ] {
            let us = build_population(pop, &cfg).unwrap();
            assert_eq!(us.len(), 50);
            for u in &us {
                let (_, reduced) = normalize(u).unwrap();
                let margin = check(&reduced).unwrap().margin;
                assert!(
                    margin >= lo - 1e-12 && margin <= hi,
                    "{pop}: margin {margin} outside [{lo}, {hi}]"
                );
            }
        }
    }

    #[test]
    fn timing_smoke() {
        let rule = QuadratureRule::gauss_legendre(28).unwrap();
        let basis = MomentBasis::new(2, &rule).unwrap();
        let cfg = BenchConfig {
            batch_size: 20,
            repetitions: 2,
            seed: 1,
            ..Default::default()
        };
        let us = build_population(Population::Interior, &cfg).unwrap();
        let stats = time_newton(&us, &cfg, &basis, &rule).unwrap();
        assert!(stats.mean > 0.0);
        assert_eq!(stats.repetitions, 2);
        let model = crate::icnn::IcnnModel::init(2, crate::icnn::Layout::new(4, 2).unwrap(), 0)
            .unwrap();
        let stats = time_icnn(&model, &us, &cfg, &basis, &rule).unwrap();
        assert!(stats.per_sample() > 0.0);
    }
}
