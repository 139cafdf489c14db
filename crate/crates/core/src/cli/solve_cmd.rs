use super::{ensure_out_dir, resolve, resolve_opt, write_resolved_config, write_text, FileConfig};
use clap::Args;
use mnkit::error::{Error, Result};
use mnkit::icnn::load_model;
use mnkit::newton::NewtonConfig;
use mnkit::solver::{
    Backend, CaseConfig, KineticSolver, QuadSpec, ReconstructionMode, RunResult, SolverState,
    TestCase,
};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// inflow-1d-m1 | inflow-1d-m2 | periodic-2d-m1.
    #[arg(long)]
    case: Option<TestCase>,
    /// newton | icnn.
    #[arg(long)]
    backend: Option<String>,
    /// Model file for the icnn backend (or for --compare).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Run both backends on identical configs and record error series.
    #[arg(long)]
    compare: bool,
    #[arg(long)]
    cfl: Option<f64>,
    /// Cells per spatial direction.
    #[arg(long)]
    nx: Option<usize>,
    /// 1D quadrature nodes.
    #[arg(long)]
    nv: Option<usize>,
    /// 2D quadrature: nodes in mu.
    #[arg(long)]
    nv_mu: Option<usize>,
    /// 2D quadrature: nodes in phi.
    #[arg(long)]
    nv_phi: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// auto | on | off.
    #[arg(long)]
    reconstruction: Option<ReconstructionMode>,
    /// Newton tolerance.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: SolveArgs, file_cfg: &FileConfig) -> Result<()> {
    let case = resolve(args.case, file_cfg, "case", TestCase::Inflow1dM1)?;
    let mut cfg = CaseConfig::preset(case);
    cfg.cfl = resolve(args.cfl, file_cfg, "cfl", cfg.cfl)?;
    cfg.nx = resolve(args.nx, file_cfg, "nx", cfg.nx)?;
    cfg.sigma = resolve(args.sigma, file_cfg, "sigma", cfg.sigma)?;
    cfg.t_final = resolve(args.t_final, file_cfg, "t-final", cfg.t_final)?;
    cfg.reconstruction = resolve(
        args.reconstruction,
        file_cfg,
        "reconstruction",
        ReconstructionMode::Auto,
    )?;
    let tau = resolve(args.tau, file_cfg, "tau", cfg.newton.tolerance)?;
    cfg.newton = NewtonConfig::with_tolerance(tau);
    cfg.quad = match cfg.quad {
        QuadSpec::Legendre { n } => QuadSpec::Legendre {
            n: resolve(args.nv, file_cfg, "nv", n)?,
        },
        QuadSpec::ProjectedSphere { n_mu, n_phi } => QuadSpec::ProjectedSphere {
            n_mu: resolve(args.nv_mu, file_cfg, "nv-mu", n_mu)?,
            n_phi: resolve(args.nv_phi, file_cfg, "nv-phi", n_phi)?,
        },
    };
    let backend_name = resolve(args.backend, file_cfg, "backend", "newton".to_string())?;
    let out = resolve(args.out, file_cfg, "out", PathBuf::from("out-solve"))?;
    let model_path = resolve_opt(args.model, file_cfg, "model")?;

    let solver = KineticSolver::new(cfg.clone())?;
    ensure_out_dir(&out)?;
    write_resolved_config(
        &out,
        &[
            ("case", case.to_string()),
            ("backend", backend_name.clone()),
            ("compare", args.compare.to_string()),
            ("cfl", cfg.cfl.to_string()),
            ("nx", cfg.nx.to_string()),
            ("sigma", cfg.sigma.to_string()),
            ("t-final", cfg.t_final.to_string()),
            ("quad", format!("{:?}", cfg.quad)),
            ("reconstruction", format!("{:?}", cfg.reconstruction).to_lowercase()),
            ("tau", tau.to_string()),
            (
                "model",
                model_path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "-".into()),
            ),
            ("out", out.display().to_string()),
        ],
    )?;
    println!(
        "case {case}: {} cells, dt = {:.6e}, {} steps to t = {:.4}",
        solver.mesh.n_cells(),
        solver.dt(),
        solver.n_steps(),
        solver.n_steps() as f64 * solver.dt()
    );

    if args.compare {
        let model_path =
            model_path.ok_or_else(|| Error::Config("--compare needs --model".into()))?;
        let model = load_model(model_path)?;
        let result = solver.run_compare(&model)?;
        let mut csv = String::from(
            "step,t,mass_newton,entropy_newton,mass_icnn,entropy_icnn,mre_u0\n",
        );
        for ((a, b), mre) in result
            .newton
            .diagnostics
            .iter()
            .zip(&result.icnn.diagnostics)
            .zip(&result.mean_relative_error_u0)
        {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                a.step, a.t, a.mass, a.entropy, b.mass, b.entropy, mre
            ));
        }
        write_text(&out.join("diagnostics.csv"), &csv)?;
        write_final_state(&out.join("final_state_newton.csv"), &solver, &result.newton)?;
        write_final_state(&out.join("final_state_icnn.csv"), &solver, &result.icnn)?;
        write_error_field(
            &out.join("error_field.csv"),
            &solver,
            &result.newton.final_state,
            &result.icnn.final_state,
        )?;
        let max_mre = result
            .mean_relative_error_u0
            .iter()
            .fold(0.0f64, |m, v| m.max(*v));
        println!("max mean relative error in u0: {:.4e}", max_mre);
    } else {
        let model;
        let backend = match backend_name.as_str() {
            "newton" => Backend::Newton,
            "icnn" => {
                let path = model_path
                    .ok_or_else(|| Error::Config("icnn backend needs --model".into()))?;
                model = load_model(path)?;
                Backend::Icnn(&model)
            }
            other => return Err(Error::Config(format!("unknown backend {other}"))),
        };
        let result = solver.run(&backend)?;
        let mut csv = String::from("step,t,mass,entropy\n");
        for d in &result.diagnostics {
            csv.push_str(&format!("{},{},{},{}\n", d.step, d.t, d.mass, d.entropy));
        }
        write_text(&out.join("diagnostics.csv"), &csv)?;
        write_final_state(&out.join("final_state.csv"), &solver, &result)?;
        let last = result.diagnostics.last().unwrap();
        println!(
            "finished {} steps: mass {:.6e}, entropy {:.6e}",
            result.final_state.step_index, last.mass, last.entropy
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn write_final_state(
    path: &std::path::Path,
    solver: &KineticSolver,
    result: &RunResult,
) -> Result<()> {
    let size = solver.basis.basis_size();
    let mut csv = String::from("x,y");
    for i in 0..size {
        csv.push_str(&format!(",u{i}"));
    }
    csv.push('\n');
    for (center, u) in solver.mesh.centers.iter().zip(&result.final_state.u) {
        csv.push_str(&format!("{},{}", center[0], center[1]));
        for v in &u.values {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    write_text(path, &csv)
}

fn write_error_field(
    path: &std::path::Path,
    solver: &KineticSolver,
    reference: &SolverState,
    other: &SolverState,
) -> Result<()> {
    let mut csv = String::from("x,y,rel_err_u0\n");
    for ((center, a), b) in solver
        .mesh
        .centers
        .iter()
        .zip(&reference.u)
        .zip(&other.u)
    {
        let rel = (a.u0() - b.u0()).abs() / a.u0();
        csv.push_str(&format!("{},{},{}\n", center[0], center[1], rel));
    }
    write_text(path, &csv)
}
