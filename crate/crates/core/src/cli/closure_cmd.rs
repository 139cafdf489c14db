use super::{ensure_out_dir, parse_dimension, resolve, resolve_opt, write_resolved_config, write_text, FileConfig};
use clap::Args;
use mnkit::error::{Error, Result};
use mnkit::icnn::{infer_scaled, load_model, IcnnModel};
use mnkit::moments::{Dimension, MomentVector};
use mnkit::newton::{solve_dual, NewtonConfig};
use mnkit::realizability::{check, normalize};
use mnkit::velocity::{MomentBasis, QuadratureRule};
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BackendChoice {
    Newton,
    Icnn,
    Both,
}

impl std::str::FromStr for BackendChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(BackendChoice::Newton),
            "icnn" => Ok(BackendChoice::Icnn),
            "both" => Ok(BackendChoice::Both),
            other => Err(Error::Config(format!("unknown backend {other}"))),
        }
    }
}

#[derive(Args, Debug)]
pub struct ClosureArgs {
    /// newton | icnn | both.
    #[arg(long)]
    backend: Option<String>,
    /// Model file for the icnn backend.
    #[arg(long)]
    model: Option<PathBuf>,
    /// One moment vector as comma-separated values u0,u1,...
    #[arg(long, allow_hyphen_values = true)]
    u: Option<String>,
    /// CSV file of moment vectors (one u0,...,uN row per line).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Newton tolerance.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    nq: Option<usize>,
    /// Optional output directory for a result CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: ClosureArgs, file_cfg: &FileConfig) -> Result<()> {
    let backend: BackendChoice = resolve(
        args.backend.map(|s| s.parse()).transpose()?,
        file_cfg,
        "backend",
        BackendChoice::Newton,
    )?;
    let dim = parse_dimension(resolve(args.dim, file_cfg, "dim", 1)?)?;
    let tau = resolve(args.tau, file_cfg, "tau", 1e-8)?;
    let nq = resolve(args.nq, file_cfg, "nq", super::sample_cmd::default_nq(dim))?;
    let out = resolve_opt(args.out, file_cfg, "out")?;

    // collect input moment vectors
    let mut rows: Vec<Vec<f64>> = Vec::new();
    if let Some(u) = args.u.or_else(|| file_cfg.get("u").cloned()) {
        rows.push(parse_row(&u, "--u", 0)?);
    }
    if let Some(path) = args.input.or_else(|| file_cfg.get("input").map(PathBuf::from)) {
        let display = path.display().to_string();
        let text =
            std::fs::read_to_string(&path).map_err(|e| Error::io(display.clone(), e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            rows.push(parse_row(line, &display, lineno + 1)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("closure needs --u or --input".into()));
    }
    let order = resolve(args.order, file_cfg, "order", rows[0].len() - 1)?;

    let rule = match dim {
        Dimension::One => QuadratureRule::gauss_legendre(nq)?,
        Dimension::Two => QuadratureRule::projected_sphere(nq, 2 * nq)?,
    };
    let basis = MomentBasis::new(order, &rule)?;
    let model: Option<IcnnModel> = match backend {
        BackendChoice::Newton => None,
        _ => {
            let path = args
                .model
                .or_else(|| file_cfg.get("model").map(PathBuf::from))
                .ok_or_else(|| Error::Config("icnn backend needs --model".into()))?;
            Some(load_model(path)?)
        }
    };
    let newton_cfg = NewtonConfig::with_tolerance(tau);

    let mut lines = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let u = MomentVector::new(row.clone(), order, dim)?;
        // realizability gate before any solve
        let (_, reduced) = normalize(&u)?;
        let report = check(&reduced)?;
        if !report.realizable {
            println!(
                "u = {:?}: NOT realizable ({}, margin {:.6e})",
                row, report.binding_constraint, report.margin
            );
            return Err(Error::NotRealizable {
                margin: report.margin,
                binding: report.binding_constraint.to_string(),
            });
        }
        let mut line = format!("{i}");
        if matches!(backend, BackendChoice::Newton | BackendChoice::Both) {
            let res = solve_dual(&u, None, &newton_cfg, &basis, &rule)?;
            if !res.converged {
                return Err(Error::CellClosure {
                    cell: i,
                    detail: format!(
                        "newton stopped at |g| = {:.3e} after {} iterations",
                        res.final_gradient_norm, res.iterations
                    ),
                });
            }
            println!(
                "u = {row:?}  [newton]  alpha = {:?}  h = {:.12}  iterations = {}",
                res.alpha.values, res.h, res.iterations
            );
            line.push_str(&format!(",newton,{:?},{}", res.alpha.values, res.h));
        }
        if let Some(model) = &model {
            let res = infer_scaled(model, &u, &basis, &rule)?;
            let h_display = res.h;
            println!(
                "u = {row:?}  [icnn]    alpha = {:?}  h(normalized) = {:.12}",
                res.alpha.values, h_display
            );
            line.push_str(&format!(",icnn,{:?},{}", res.alpha.values, res.h));
            if backend == BackendChoice::Both {
                let newton = solve_dual(&u, None, &newton_cfg, &basis, &rule)?;
                let delta: Vec<f64> = newton
                    .alpha
                    .values
                    .iter()
                    .zip(&res.alpha.values)
                    .map(|(a, b)| b - a)
                    .collect();
                let max = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                println!("  delta alpha (icnn - newton) = {delta:?}  max |delta| = {max:.3e}");
            }
        }
        lines.push(line);
    }

    if let Some(out) = out {
        ensure_out_dir(&out)?;
        write_text(&out.join("closure.csv"), &(lines.join("\n") + "\n"))?;
        write_resolved_config(
            &out,
            &[
                ("backend", format!("{backend:?}").to_lowercase()),
                ("order", order.to_string()),
                ("dim", dim.to_string()),
                ("tau", tau.to_string()),
                ("nq", nq.to_string()),
            ],
        )?;
    }
    Ok(())
}

fn parse_row(text: &str, source: &str, line: usize) -> Result<Vec<f64>> {
    text.split(',')
        .map(|f| {
            f.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: source.to_string(),
                line,
                message: format!("bad number {f:?}"),
            })
        })
        .collect()
}
