//! First-order kinetic finite-volume solver for the closed moment system.
//!
//! Each step closes the moment field cell by cell (Newton or neural
//! backend), optionally replaces the moments by those of the reconstructed
//! density so the (u, alpha) pair is exact, assembles kinetic upwind fluxes
//! through the velocity quadrature, adds isotropic collision moments, and
//! advances with explicit Euler. Every completed step re-checks strict
//! realizability of every cell and fails loudly otherwise.

pub mod mesh;

pub use mesh::{BoundaryKind, Face, Mesh, Neighbor};

use crate::entropy::{entropy_functional, reconstruct_density};
use crate::error::{Error, Result};
use crate::icnn::{infer_scaled, IcnnModel};
use crate::moments::{Dimension, LagrangeMultipliers, MomentVector};
use crate::newton::{solve_dual, NewtonConfig};
use crate::realizability::{check, normalize};
use crate::velocity::{moments_of, MomentBasis, QuadratureRule};
use rayon::prelude::*;

/// The shipped test cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestCase {
    Inflow1dM1,
    Inflow1dM2,
    Periodic2dM1,
}

impl std::str::FromStr for TestCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inflow-1d-m1" => Ok(TestCase::Inflow1dM1),
            "inflow-1d-m2" => Ok(TestCase::Inflow1dM2),
            "periodic-2d-m1" => Ok(TestCase::Periodic2dM1),
            other => Err(Error::Config(format!("unknown case {other}"))),
        }
    }
}

impl std::fmt::Display for TestCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TestCase::Inflow1dM1 => "inflow-1d-m1",
            TestCase::Inflow1dM2 => "inflow-1d-m2",
            TestCase::Periodic2dM1 => "periodic-2d-m1",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadSpec {
    Legendre { n: usize },
    ProjectedSphere { n_mu: usize, n_phi: usize },
}

/// Whether the moments are replaced by the reconstruction's moments before
/// the flux assembly. `Auto` turns it on for the neural backend only, where
/// it repairs the inexact closure; the Newton closure is already consistent
/// to its tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReconstructionMode {
    #[default]
    Auto,
    On,
    Off,
}

impl std::str::FromStr for ReconstructionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ReconstructionMode::Auto),
            "on" => Ok(ReconstructionMode::On),
            "off" => Ok(ReconstructionMode::Off),
            other => Err(Error::Config(format!("unknown reconstruction mode {other}"))),
        }
    }
}

/// Case setup; presets carry the reference computational parameters of the
/// three shipped cases.
#[derive(Clone, Debug)]
pub struct CaseConfig {
    pub case: TestCase,
    pub t_final: f64,
    /// Cells per spatial direction.
    pub nx: usize,
    pub cfl: f64,
    pub sigma: f64,
    pub quad: QuadSpec,
    pub vacuum_floor: f64,
    pub reconstruction: ReconstructionMode,
    pub newton: NewtonConfig,
}

impl CaseConfig {
    pub fn preset(case: TestCase) -> CaseConfig {
        match case {
            TestCase::Inflow1dM1 | TestCase::Inflow1dM2 => CaseConfig {
                case,
                t_final: 0.7,
                nx: 100,
                cfl: 0.05,
                sigma: 1.0,
                quad: QuadSpec::Legendre { n: 28 },
                vacuum_floor: 1e-6,
                reconstruction: ReconstructionMode::Auto,
                newton: NewtonConfig::default(),
            },
            TestCase::Periodic2dM1 => CaseConfig {
                case,
                t_final: 1.84,
                nx: 100,
                cfl: 0.1,
                sigma: 0.0,
                quad: QuadSpec::ProjectedSphere { n_mu: 10, n_phi: 20 },
                vacuum_floor: 1e-6,
                reconstruction: ReconstructionMode::Auto,
                newton: NewtonConfig::default(),
            },
        }
    }

    pub fn order(&self) -> usize {
        match self.case {
            TestCase::Inflow1dM1 | TestCase::Periodic2dM1 => 1,
            TestCase::Inflow1dM2 => 2,
        }
    }

    pub fn dimension(&self) -> Dimension {
        match self.case {
            TestCase::Inflow1dM1 | TestCase::Inflow1dM2 => Dimension::One,
            TestCase::Periodic2dM1 => Dimension::Two,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) || self.nx == 0 || !(self.cfl > 0.0) {
            return Err(Error::Config(
                "case needs positive final time, cell count, and CFL".into(),
            ));
        }
        if self.sigma < 0.0 {
            return Err(Error::Config("scattering coefficient must be >= 0".into()));
        }
        if !(self.vacuum_floor > 0.0) {
            return Err(Error::Config("vacuum floor must be positive".into()));
        }
        Ok(())
    }
}

/// Closure backend selection for a run.
pub enum Backend<'a> {
    Newton,
    Icnn(&'a IcnnModel),
}

impl Backend<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Newton => "newton",
            Backend::Icnn(_) => "icnn",
        }
    }
}

/// Per-cell moment field plus warm-start multipliers.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub u: Vec<MomentVector>,
    pub alpha: Vec<Option<LagrangeMultipliers>>,
    pub t: f64,
    pub step_index: usize,
}

/// Mass and entropy of the state a step departed from.
#[derive(Clone, Copy, Debug)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    /// `sum_i A_i u0_i`.
    pub mass: f64,
    /// `sum_i A_i h(u_i)` with the backend's multipliers.
    pub entropy: f64,
}

/// Closure evaluation of a whole field: nodal densities, multipliers, and
/// per-cell entropy values.
pub struct ClosureField {
    pub densities: Vec<Vec<f64>>,
    pub alpha: Vec<LagrangeMultipliers>,
    pub h: Vec<f64>,
}

pub struct RunResult {
    pub diagnostics: Vec<StepDiagnostics>,
    pub final_state: SolverState,
}

pub struct CompareResult {
    pub newton: RunResult,
    pub icnn: RunResult,
    /// Mean relative error of the density component, per recorded step.
    pub mean_relative_error_u0: Vec<f64>,
}

/// Time-step size `CFL * dx / d`; the maximum characteristic speed is one
/// because velocities live in the unit ball.
pub fn timestep_size(cfg: &CaseConfig) -> f64 {
    let dx = domain_width(cfg) / cfg.nx as f64;
    cfg.cfl * dx / cfg.dimension().spatial() as f64
}

fn domain_width(cfg: &CaseConfig) -> f64 {
    match cfg.case {
        TestCase::Inflow1dM1 | TestCase::Inflow1dM2 => 1.0,
        TestCase::Periodic2dM1 => 3.0,
    }
}

/// Number of completed steps: the largest `n` with `n * dt` strictly below
/// the final time. Reproduces the reference step counts of the shipped
/// cases from their CFL numbers.
pub fn num_steps(t_final: f64, dt: f64) -> usize {
    let mut n = (t_final / dt).floor() as usize;
    while n > 0 && (n as f64) * dt >= t_final {
        n -= 1;
    }
    while ((n + 1) as f64) * dt < t_final {
        n += 1;
    }
    n
}

/// Kinetic upwind flux through a face with outward normal `n`:
/// `sum_q w_q (v_q . n) m(v_q) f_up(v_q)`, upwinding `f_left` where the
/// node leaves the owner and `f_right` where it enters.
pub fn upwind_flux(
    f_left: &[f64],
    f_right: &[f64],
    normal: [f64; 2],
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Vec<f64> {
    let n_q = rule.n_q();
    assert_eq!(f_left.len(), n_q);
    assert_eq!(f_right.len(), n_q);
    let mut flux = vec![0.0; basis.basis_size()];
    for q in 0..n_q {
        let v = rule.nodes()[q];
        let vn = v[0] * normal[0] + v[1] * normal[1];
        let f = if vn > 0.0 { f_left[q] } else { f_right[q] };
        let factor = rule.weights()[q] * vn * f;
        for (i, acc) in flux.iter_mut().enumerate() {
            *acc += basis.row(i)[q] * factor;
        }
    }
    flux
}

/// Moments of the isotropic relaxation operator
/// `Q(f) = sigma (<f>/<1> - f)`: component zero vanishes exactly, and
/// `D_i = sigma (u0 <m_i>/<1> - u_i)` for the rest.
pub fn collision_moments(
    u: &MomentVector,
    sigma: f64,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Vec<f64> {
    let iso = isotropic_basis_means(basis, rule);
    collision_moments_cached(u, sigma, &iso)
}

fn collision_moments_cached(u: &MomentVector, sigma: f64, iso: &[f64]) -> Vec<f64> {
    u.as_slice()
        .iter()
        .zip(iso)
        .map(|(ui, mi)| sigma * (u.u0() * mi - ui))
        .collect()
}

/// `<m_i>/<1>` per basis function; component zero is exactly one.
fn isotropic_basis_means(basis: &MomentBasis, rule: &QuadratureRule) -> Vec<f64> {
    let total = rule.total_weight();
    (0..basis.basis_size())
        .map(|i| crate::velocity::bracket(basis.row(i), rule) / total)
        .collect()
}

pub struct KineticSolver {
    pub cfg: CaseConfig,
    pub mesh: Mesh,
    pub rule: QuadratureRule,
    pub basis: MomentBasis,
    iso_means: Vec<f64>,
    dt: f64,
    n_steps: usize,
}

impl KineticSolver {
    pub fn new(cfg: CaseConfig) -> Result<Self> {
        cfg.validate()?;
        let rule = match cfg.quad {
            QuadSpec::Legendre { n } => QuadratureRule::gauss_legendre(n)?,
            QuadSpec::ProjectedSphere { n_mu, n_phi } => {
                QuadratureRule::projected_sphere(n_mu, n_phi)?
            }
        };
        if rule.dimension() != cfg.dimension() {
            return Err(Error::Config(format!(
                "quadrature dimension {} does not match case {}",
                rule.dimension(),
                cfg.case
            )));
        }
        let basis = MomentBasis::new(cfg.order(), &rule)?;
        let mesh = match cfg.case {
            TestCase::Inflow1dM1 | TestCase::Inflow1dM2 => Mesh::line(
                0.0,
                1.0,
                cfg.nx,
                BoundaryKind::Inflow { density: 0.5 },
                BoundaryKind::Vacuum,
            ),
            TestCase::Periodic2dM1 => {
                Mesh::periodic_rect((-1.5, 1.5), (-1.5, 1.5), cfg.nx, cfg.nx)
            }
        };
        let iso_means = isotropic_basis_means(&basis, &rule);
        let dt = timestep_size(&cfg);
        let n_steps = num_steps(cfg.t_final, dt);
        Ok(KineticSolver {
            cfg,
            mesh,
            rule,
            basis,
            iso_means,
            dt,
            n_steps,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Initial state: isotropic vacuum floor for the inflow cases, the
    /// cosine density profile with 30% directed flux for the periodic case.
    pub fn initial_state(&self) -> SolverState {
        let n_cells = self.mesh.n_cells();
        let size = self.basis.basis_size();
        let total = self.rule.total_weight();
        let u = match self.cfg.case {
            TestCase::Inflow1dM1 | TestCase::Inflow1dM2 => {
                let values: Vec<f64> = (0..size)
                    .map(|i| self.cfg.vacuum_floor * total * self.iso_means[i])
                    .collect();
                vec![
                    MomentVector {
                        values,
                        order: self.basis.order(),
                        dimension: self.basis.dimension(),
                    };
                    n_cells
                ]
            }
            TestCase::Periodic2dM1 => self
                .mesh
                .centers
                .iter()
                .map(|c| {
                    let two_pi = 2.0 * std::f64::consts::PI;
                    let u0 = 1.5 + (two_pi * c[0]).cos() * (two_pi * c[1]).cos();
                    MomentVector {
                        values: vec![u0, 0.3 * u0, 0.3 * u0],
                        order: 1,
                        dimension: Dimension::Two,
                    }
                })
                .collect(),
        };
        SolverState {
            u,
            alpha: vec![None; n_cells],
            t: 0.0,
            step_index: 0,
        }
    }

    /// Close every cell with the chosen backend. Newton cells warm-start
    /// from their previous multipliers; any failure aborts with the cell
    /// index and its moments.
    pub fn apply_closure(&self, state: &SolverState, backend: &Backend) -> Result<ClosureField> {
        let cells: Vec<Result<(Vec<f64>, LagrangeMultipliers, f64)>> = state
            .u
            .par_iter()
            .zip(&state.alpha)
            .enumerate()
            .map(|(cell, (u, warm))| {
                let alpha = match backend {
                    Backend::Newton => {
                        let res = solve_dual(u, warm.as_ref(), &self.cfg.newton, &self.basis, &self.rule)
                            .map_err(|e| Error::CellClosure {
                                cell,
                                detail: format!("{e}; u = {:?}", u.values),
                            })?;
                        if !res.converged {
                            return Err(Error::CellClosure {
                                cell,
                                detail: format!(
                                    "no convergence after {} iterations (|g| = {:.3e}); u = {:?}",
                                    res.iterations, res.final_gradient_norm, u.values
                                ),
                            });
                        }
                        res.alpha
                    }
                    Backend::Icnn(model) => {
                        infer_scaled(model, u, &self.basis, &self.rule)
                            .map_err(|e| Error::CellClosure {
                                cell,
                                detail: format!("{e}; u = {:?}", u.values),
                            })?
                            .alpha
                    }
                };
                let f = reconstruct_density(&alpha, &self.basis, &self.rule)?;
                let h = entropy_functional(u, &alpha, &self.basis, &self.rule)?;
                Ok((f, alpha, h))
            })
            .collect();
        let mut densities = Vec::with_capacity(cells.len());
        let mut alpha = Vec::with_capacity(cells.len());
        let mut h = Vec::with_capacity(cells.len());
        for cell in cells {
            let (f, a, hv) = cell?;
            densities.push(f);
            alpha.push(a);
            h.push(hv);
        }
        Ok(ClosureField {
            densities,
            alpha,
            h,
        })
    }

    /// Replace each cell's moments by the moments of its reconstructed
    /// density, making the (u, alpha) pair exact. Trades conservation for
    /// consistency; a second application with the same densities is a
    /// no-op.
    pub fn reconstruction_step(&self, state: &mut SolverState, closure: &ClosureField) {
        for (u, f) in state.u.iter_mut().zip(&closure.densities) {
            *u = moments_of(f, &self.basis, &self.rule);
        }
    }

    fn reconstruction_enabled(&self, backend: &Backend) -> bool {
        match self.cfg.reconstruction {
            ReconstructionMode::On => true,
            ReconstructionMode::Off => false,
            ReconstructionMode::Auto => matches!(backend, Backend::Icnn(_)),
        }
    }

    fn ghost_density(&self, kind: BoundaryKind) -> Vec<f64> {
        match kind {
            BoundaryKind::Vacuum => vec![self.cfg.vacuum_floor; self.rule.n_q()],
            BoundaryKind::Inflow { density } => self
                .rule
                .nodes()
                .iter()
                .map(|v| if v[0] > 0.0 { density } else { self.cfg.vacuum_floor })
                .collect(),
        }
    }

    /// Advance one explicit Euler step. Returns the diagnostics of the
    /// state the step departed from (using this step's closure).
    pub fn step(&self, state: &mut SolverState, backend: &Backend) -> Result<StepDiagnostics> {
        let closure = self.apply_closure(state, backend)?;
        let diag = self.diagnostics_of(state, &closure);
        if self.reconstruction_enabled(backend) {
            self.reconstruction_step(state, &closure);
        }

        let size = self.basis.basis_size();
        let area = self.mesh.cell_area;
        let n_cells = self.mesh.n_cells();
        let mut new_u = Vec::with_capacity(n_cells);
        for cell in 0..n_cells {
            let mut divergence = vec![0.0; size];
            for face in self.mesh.faces_of(cell) {
                let flux = match face.neighbor {
                    Neighbor::Cell(j) => upwind_flux(
                        &closure.densities[cell],
                        &closure.densities[j],
                        face.normal,
                        &self.basis,
                        &self.rule,
                    ),
                    Neighbor::Boundary(kind) => upwind_flux(
                        &closure.densities[cell],
                        &self.ghost_density(kind),
                        face.normal,
                        &self.basis,
                        &self.rule,
                    ),
                };
                for (acc, f) in divergence.iter_mut().zip(&flux) {
                    *acc += f * face.length;
                }
            }
            let collision =
                collision_moments_cached(&state.u[cell], self.cfg.sigma, &self.iso_means);
            let values: Vec<f64> = state.u[cell]
                .values
                .iter()
                .zip(divergence.iter().zip(&collision))
                .map(|(u, (g, d))| u + self.dt * (d - g / area))
                .collect();
            new_u.push(MomentVector {
                values,
                order: self.basis.order(),
                dimension: self.basis.dimension(),
            });
        }

        for (cell, u) in new_u.iter().enumerate() {
            let report = normalize(u).and_then(|(_, reduced)| check(&reduced));
            match report {
                Ok(r) if r.realizable => {}
                Ok(r) => {
                    return Err(Error::SolverFailure {
                        step: state.step_index,
                        cell,
                        detail: format!(
                            "margin {:.3e} ({}); u = {:?}",
                            r.margin, r.binding_constraint, u.values
                        ),
                    })
                }
                Err(e) => {
                    return Err(Error::SolverFailure {
                        step: state.step_index,
                        cell,
                        detail: format!("{e}; u = {:?}", u.values),
                    })
                }
            }
        }

        state.u = new_u;
        state.alpha = closure.alpha.into_iter().map(Some).collect();
        state.step_index += 1;
        state.t = state.step_index as f64 * self.dt;
        Ok(diag)
    }

    fn diagnostics_of(&self, state: &SolverState, closure: &ClosureField) -> StepDiagnostics {
        let area = self.mesh.cell_area;
        let mass: f64 = state.u.iter().map(|u| area * u.u0()).sum();
        let entropy: f64 = closure.h.iter().map(|h| area * h).sum();
        StepDiagnostics {
            step: state.step_index,
            t: state.t,
            mass,
            entropy,
        }
    }

    /// Run the configured number of steps from the initial state. The
    /// diagnostics carry one row per step plus a final row for the end
    /// state.
    pub fn run(&self, backend: &Backend) -> Result<RunResult> {
        let mut state = self.initial_state();
        let mut diagnostics = Vec::with_capacity(self.n_steps + 1);
        for _ in 0..self.n_steps {
            diagnostics.push(self.step(&mut state, backend)?);
        }
        let closure = self.apply_closure(&state, backend)?;
        diagnostics.push(self.diagnostics_of(&state, &closure));
        Ok(RunResult {
            diagnostics,
            final_state: state,
        })
    }

    /// Run Newton and neural backends in lockstep on identical configs and
    /// record the mean relative density error per step.
    pub fn run_compare(&self, model: &IcnnModel) -> Result<CompareResult> {
        let newton_backend = Backend::Newton;
        let icnn_backend = Backend::Icnn(model);
        let mut newton_state = self.initial_state();
        let mut icnn_state = self.initial_state();
        let mut newton_diag = Vec::with_capacity(self.n_steps + 1);
        let mut icnn_diag = Vec::with_capacity(self.n_steps + 1);
        let mut mre = Vec::with_capacity(self.n_steps + 1);
        mre.push(mean_relative_error_u0(&newton_state, &icnn_state));
        for _ in 0..self.n_steps {
            newton_diag.push(self.step(&mut newton_state, &newton_backend)?);
            icnn_diag.push(self.step(&mut icnn_state, &icnn_backend)?);
            mre.push(mean_relative_error_u0(&newton_state, &icnn_state));
        }
        let closure = self.apply_closure(&newton_state, &newton_backend)?;
        newton_diag.push(self.diagnostics_of(&newton_state, &closure));
        let closure = self.apply_closure(&icnn_state, &icnn_backend)?;
        icnn_diag.push(self.diagnostics_of(&icnn_state, &closure));
        Ok(CompareResult {
            newton: RunResult {
                diagnostics: newton_diag,
                final_state: newton_state,
            },
            icnn: RunResult {
                diagnostics: icnn_diag,
                final_state: icnn_state,
            },
            mean_relative_error_u0: mre,
        })
    }
}

/// Mean over cells of `|u0_a - u0_b| / u0_a`.
pub fn mean_relative_error_u0(reference: &SolverState, other: &SolverState) -> f64 {
    let n = reference.u.len() as f64;
    reference
        .u
        .iter()
        .zip(&other.u)
        .map(|(a, b)| (a.u0() - b.u0()).abs() / a.u0())
        .sum::<f64>()
        / n
}
