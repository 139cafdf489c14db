use super::{ensure_out_dir, parse_dimension, resolve, write_resolved_config, write_text, FileConfig};
use clap::Args;
use mnkit::bench::{run_bench, BenchConfig};
use mnkit::error::{Error, Result};
use mnkit::icnn::load_model;
use mnkit::velocity::{MomentBasis, QuadratureRule};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Trained model for the surrogate side.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Samples per batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Timing repetitions (at least 2).
    #[arg(long)]
    reps: Option<usize>,
    /// Margin of the boundary population.
    #[arg(long)]
    boundary_margin: Option<f64>,
    #[arg(long)]
    nq: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: BenchArgs, file_cfg: &FileConfig) -> Result<()> {
    let model_path = args
        .model
        .or_else(|| file_cfg.get("model").map(PathBuf::from))
        .ok_or_else(|| Error::Config("bench needs --model".into()))?;
    let order = resolve(args.order, file_cfg, "order", 2)?;
    let dim = parse_dimension(resolve(args.dim, file_cfg, "dim", 1)?)?;
    let batch = resolve(args.batch, file_cfg, "batch", 100_000)?;
    let reps = resolve(args.reps, file_cfg, "reps", 20)?;
    let boundary_margin = resolve(args.boundary_margin, file_cfg, "boundary-margin", 0.01)?;
    let nq = resolve(args.nq, file_cfg, "nq", super::sample_cmd::default_nq(dim))?;
    let seed = resolve(args.seed, file_cfg, "seed", 0)?;
    let out = resolve(args.out, file_cfg, "out", PathBuf::from("out-bench"))?;

    let rule = match dim {
        mnkit::moments::Dimension::One => QuadratureRule::gauss_legendre(nq)?,
        mnkit::moments::Dimension::Two => QuadratureRule::projected_sphere(nq, 2 * nq)?,
    };
    let basis = MomentBasis::new(order, &rule)?;
    let model = load_model(&model_path)?;
    let cfg = BenchConfig {
        order,
        dimension: dim,
        batch_size: batch,
        repetitions: reps,
        seed,
        boundary_margin,
        ..Default::default()
    };
    let rows = run_bench(&model, &cfg, &basis, &rule)?;

    ensure_out_dir(&out)?;
    let mut csv = String::from(
        "population,backend,batch_size,repetitions,mean_s,std_s,per_sample_s\n",
    );
    println!("population  newton mean +- std (per sample)      icnn mean +- std (per sample)");
    for row in &rows {
        println!(
            "{:<10}  {:.5}s +- {:.5}s ({:.3e}s)   {:.5}s +- {:.5}s ({:.3e}s)",
            row.population.to_string(),
            row.newton.mean,
            row.newton.std,
            row.newton.per_sample(),
            row.icnn.mean,
            row.icnn.std,
            row.icnn.per_sample(),
        );
        for (backend, stats) in [("newton", &row.newton), ("icnn", &row.icnn)] {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.population,
                backend,
                stats.batch_size,
                stats.repetitions,
                stats.mean,
                stats.std,
                stats.per_sample()
            ));
        }
    }
    write_text(&out.join("timings.csv"), &csv)?;
    write_resolved_config(
        &out,
        &[
            ("model", model_path.display().to_string()),
            ("order", order.to_string()),
            ("dim", dim.to_string()),
            ("batch", batch.to_string()),
            ("reps", reps.to_string()),
            ("boundary-margin", boundary_margin.to_string()),
            ("nq", nq.to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    )?;
    println!("timings written to {}", out.join("timings.csv").display());
    Ok(())
}
