use super::{ensure_out_dir, parse_dimension, resolve, write_resolved_config, FileConfig};
use clap::Args;
use mnkit::error::Result;
use mnkit::newton::NewtonConfig;
use mnkit::sampler::{
    sample_uniform_alpha, sample_uniform_moments_with_stats, write_dataset, ClosureSample,
    DatasetMeta, SampleAlgorithm, SampleStats, SamplerConfig,
};
use mnkit::velocity::{MomentBasis, QuadratureRule};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Sampling algorithm: uniform-u | uniform-alpha.
    #[arg(long)]
    alg: Option<SampleAlgorithm>,
    /// Moment order N.
    #[arg(long)]
    order: Option<usize>,
    /// Velocity dimension (1 or 2).
    #[arg(long)]
    dim: Option<usize>,
    /// Number of samples.
    #[arg(long)]
    count: Option<usize>,
    /// Boundary standoff for uniform-u.
    #[arg(long)]
    delta: Option<f64>,
    /// Newton tolerance for uniform-u labels.
    #[arg(long)]
    tau: Option<f64>,
    /// Multiplier box bounds for uniform-alpha.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    r#box: Option<Vec<f64>>,
    /// Quadrature nodes (1D) or nodes per mu direction (2D, phi gets 2x).
    #[arg(long)]
    nq: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: SampleArgs, file_cfg: &FileConfig) -> Result<()> {
    let alg = resolve(args.alg, file_cfg, "alg", SampleAlgorithm::UniformMoments)?;
    let order = resolve(args.order, file_cfg, "order", 1)?;
    let dim = parse_dimension(resolve(args.dim, file_cfg, "dim", 1)?)?;
    let count = resolve(args.count, file_cfg, "count", 1000)?;
    let delta = resolve(args.delta, file_cfg, "delta", 0.01)?;
    let tau = resolve(args.tau, file_cfg, "tau", 1e-8)?;
    let nq = resolve(args.nq, file_cfg, "nq", default_nq(dim))?;
    let seed = resolve(args.seed, file_cfg, "seed", 0)?;
    let out = resolve(args.out, file_cfg, "out", PathBuf::from("out-sample"))?;
    let (box_lo, box_hi) = match args.r#box {
        Some(b) => (b[0], b[1]),
        None => (
            resolve(None, file_cfg, "box-min", -50.0)?,
            resolve(None, file_cfg, "box-max", 50.0)?,
        ),
    };

    let rule = match dim {
        mnkit::moments::Dimension::One => QuadratureRule::gauss_legendre(nq)?,
        mnkit::moments::Dimension::Two => QuadratureRule::projected_sphere(nq, 2 * nq)?,
    };
    let basis = MomentBasis::new(order, &rule)?;
    let cfg = SamplerConfig {
        order,
        dimension: dim,
        count,
        delta,
        newton: NewtonConfig::with_tolerance(tau),
        alpha_min: box_lo,
        alpha_max: box_hi,
        seed,
    };

    let (samples, stats) = match alg {
        SampleAlgorithm::UniformMoments => sample_uniform_moments_with_stats(&cfg, &basis, &rule)?,
        SampleAlgorithm::UniformAlpha => {
            let samples = sample_uniform_alpha(&cfg, &basis, &rule)?;
            let stats = SampleStats {
                draws: count as u64,
                accepted: count as u64,
                discarded: 0,
            };
            (samples, stats)
        }
    };

    ensure_out_dir(&out)?;
    let meta = DatasetMeta::for_config(&cfg, alg);
    let dataset_path = out.join("dataset.csv");
    write_dataset(&dataset_path, &meta, &samples)?;
    write_resolved_config(
        &out,
        &[
            ("alg", alg.to_string()),
            ("order", order.to_string()),
            ("dim", dim.to_string()),
            ("count", count.to_string()),
            ("delta", delta.to_string()),
            ("tau", tau.to_string()),
            ("box-min", box_lo.to_string()),
            ("box-max", box_hi.to_string()),
            ("nq", nq.to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    )?;

    println!("wrote {} samples to {}", samples.len(), dataset_path.display());
    println!(
        "draws {}  accepted {}  discarded {}  acceptance rate {:.1}%",
        stats.draws,
        stats.accepted,
        stats.discarded,
        100.0 * stats.acceptance_rate()
    );
    print_margin_histogram(&samples, &basis)?;
    Ok(())
}

pub fn default_nq(dim: mnkit::moments::Dimension) -> usize {
    match dim {
        mnkit::moments::Dimension::One => 28,
        mnkit::moments::Dimension::Two => 10,
    }
}

fn print_margin_histogram(samples: &[ClosureSample], basis: &MomentBasis) -> Result<()> {
    let mut bins = [0usize; 10];
    for s in samples {
        let margin = s.margin(basis)?;
        let idx = ((margin * 10.0).floor() as usize).min(9);
        bins[idx] += 1;
    }
    println!("margin histogram (bin width 0.1):");
    for (i, count) in bins.iter().enumerate() {
        println!("  [{:.1}, {:.1})  {count}", i as f64 * 0.1, (i + 1) as f64 * 0.1);
    }
    Ok(())
}
