//! Discrete optimality system: state, adjoint and a box-constrained control
//! in `R^l`, solved by an active-set iteration on the reduced problem.
//!
//! The control enters the state linearly, so on a fixed mesh
//!
//! ```text
//! y = y0 + sum_j u_j Y_j,      p = p0 + sum_j u_j P_j,
//! ```
//!
//! where `Y_j` is the state response to a unit source at `z_j` and `P_j`
//! the adjoint driven by `Y_j`. Evaluating the adjoints at the sources gives
//! the `l x l` matrix `G_ij = P_j(z_i)` and offset `c_i = p0(z_i)`, and the
//! optimality condition becomes the box QP `u = clamp(-(c + G u) / lambda)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::fem::{
    assemble_l2_load, assemble_mass, assemble_point_source_load, assemble_stiffness, CgOptions, DirichletSolver,
    FeFunction, P1Space,
};
use crate::mesh::{Refinement, SimplicialMesh};
use crate::quadrature::ElementQuadrature;
use crate::{Error, Point, Result};

/// A thread-safe scalar field.
pub type ScalarField = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// Problem data: sources, box bounds, regularization and desired state.
#[derive(Clone)]
pub struct OcpProblem {
    pub sources: Vec<Point>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub desired_state: ScalarField,
    /// Dirichlet data of the state; homogeneous when `None`.
    pub state_boundary: Option<ScalarField>,
    /// Dirichlet data of the adjoint; homogeneous when `None`.
    pub adjoint_boundary: Option<ScalarField>,
}

impl fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpProblem")
            .field("sources", &self.sources)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("lambda", &self.lambda)
            .field("alpha", &self.alpha)
            .field("state_boundary", &self.state_boundary.is_some())
            .field("adjoint_boundary", &self.adjoint_boundary.is_some())
            .finish()
    }
}

impl OcpProblem {
    pub fn new(
        sources: Vec<Point>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        lambda: f64,
        alpha: f64,
        desired_state: ScalarField,
    ) -> Result<Self> {
        let p = Self {
            sources,
            lower,
            upper,
            lambda,
            alpha,
            desired_state,
            state_boundary: None,
            adjoint_boundary: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_state_boundary(mut self, g: ScalarField) -> Self {
        self.state_boundary = Some(g);
        self
    }

    pub fn with_adjoint_boundary(mut self, g: ScalarField) -> Self {
        self.adjoint_boundary = Some(g);
        self
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.sources.len();
        if l == 0 {
            return Err(Error::EmptySources);
        }
        if self.lower.len() != l || self.upper.len() != l {
            return Err(Error::InvalidProblem(format!("{l} sources but {} lower and {} upper bounds", self.lower.len(), self.upper.len())));
        }
        if let Some(k) = (0..l).find(|&k| !(self.lower[k] < self.upper[k])) {
            return Err(Error::InvalidProblem(format!("bounds at source {k} do not satisfy a < b")));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidProblem(format!("regularization {} must be positive", self.lambda)));
        }
        Ok(())
    }

    /// `max(a_z, min(b_z, -p_z / lambda))`.
    pub fn project(&self, k: usize, p_at_z: f64) -> f64 {
        (-p_at_z / self.lambda).min(self.upper[k]).max(self.lower[k])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Tolerance on the projection residual.
    pub tol: f64,
    pub max_iter: usize,
    pub cg: CgOptions,
    /// Exactness degree for the desired-state load.
    pub quad_degree: usize,
}

impl SolverOptions {
    pub fn for_dim(dim: usize) -> Self {
        Self { tol: 1e-10, max_iter: 50, cg: CgOptions { floor_tol: Some(1e-10), ..CgOptions::default() }, quad_degree: if dim == 2 { 10 } else { 8 } }
    }
}

/// The reduced problem on one mesh plus the nodal vectors it was built from.
#[derive(Debug, Clone)]
pub struct ReducedOperator {
    /// `G_ij = P_j(z_i)`.
    pub matrix: DMatrix<f64>,
    /// `c_i = p0(z_i)`.
    pub offset: Vec<f64>,
    pub state_basis: Vec<Vec<f64>>,
    pub state_offset: Vec<f64>,
    pub adjoint_basis: Vec<Vec<f64>>,
    pub adjoint_offset: Vec<f64>,
    /// Largest relative residual over all linear solves.
    pub max_solve_residual: f64,
    pub solves: usize,
    pub cg_iterations: usize,
}

impl ReducedOperator {
    /// Adjoint point values `c + G u`.
    pub fn adjoint_at_sources(&self, u: &[f64]) -> Vec<f64> {
        let gu = &self.matrix * DVector::from_column_slice(u);
        self.offset.iter().zip(gu.iter()).map(|(c, g)| c + g).collect()
    }

    /// Interpolates every nodal vector onto a refined mesh, for warm starts.
    pub fn prolongate(&self, refinement: &Refinement) -> Vec<Vec<f64>> {
        self.vectors().map(|v| refinement.prolongate(v)).collect()
    }

    fn vectors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.state_basis
            .iter()
            .chain(std::iter::once(&self.state_offset))
            .chain(self.adjoint_basis.iter())
            .chain(std::iter::once(&self.adjoint_offset))
    }
}

/// Initial data carried over from a coarser mesh.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub control: Option<Vec<f64>>,
    /// Guesses in the order `Y_1..Y_l, y0, P_1..P_l, p0`.
    pub vectors: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub y: FeFunction,
    pub p: FeFunction,
    pub u: Vec<f64>,
    pub active_lower: Vec<usize>,
    pub active_upper: Vec<usize>,
    pub iterations: usize,
    /// Largest relative residual of the linear solves behind this solution.
    pub max_solve_residual: f64,
}

/// Builds `G`, `c` and the nodal responses with `2l + 2` Dirichlet solves.
pub fn reduced_operator(
    space: &P1Space,
    problem: &OcpProblem,
    opts: &SolverOptions,
    guesses: Option<&[Vec<f64>]>,
) -> Result<ReducedOperator> {
    problem.validate()?;
    let mesh = space.mesh();
    let l = problem.n_sources();
    let n = space.n_dofs();
    let stiffness = assemble_stiffness(space);
    let mass = assemble_mass(space);
    let solver = DirichletSolver::new(space, &stiffness).with_options(opts.cg);
    let guess = |k: usize| guesses.and_then(|g| g.get(k)).map(Vec::as_slice);

    let mut max_res: f64 = 0.0;
    let mut cg_iterations = 0;
    let mut track = |(x, rep): (Vec<f64>, crate::fem::CgReport)| {
        max_res = max_res.max(rep.relative_residual);
        cg_iterations += rep.iterations;
        x
    };

    let mut state_basis = Vec::with_capacity(l);
    for j in 0..l {
        let mut unit = vec![0.0; l];
        unit[j] = 1.0;
        let load = assemble_point_source_load(space, &problem.sources, &unit)?;
        state_basis.push(track(solver.solve(&load, None, guess(j))?));
    }
    let state_offset = match &problem.state_boundary {
        Some(g) => {
            let bv = space.boundary_values(|x| g(x));
            track(solver.solve(&vec![0.0; n], Some(&bv), guess(l))?)
        }
        None => vec![0.0; n],
    };

    let quad = ElementQuadrature::new(mesh.dim(), opts.quad_degree)?.with_singular_points(&problem.sources);
    let desired = &problem.desired_state;
    let desired_load = assemble_l2_load(space, &quad, |x| desired(x));

    let mut adjoint_basis = Vec::with_capacity(l);
    for j in 0..l {
        let load = mass.matvec(&state_basis[j]);
        adjoint_basis.push(track(solver.solve(&load, None, guess(l + 1 + j))?));
    }
    let mut load = mass.matvec(&state_offset);
    for (b, d) in load.iter_mut().zip(&desired_load) {
        *b -= d;
    }
    let adjoint_bv = problem.adjoint_boundary.as_ref().map(|g| space.boundary_values(|x| g(x)));
    let adjoint_offset = track(solver.solve(&load, adjoint_bv.as_deref(), guess(2 * l + 1))?);

    let located = locate_sources(mesh, &problem.sources)?;
    let eval = |v: &[f64], (t, lam): &(usize, [f64; 4])| -> f64 {
        mesh.element_vertices(*t).iter().zip(lam).map(|(&k, w)| w * v[k]).sum()
    };
    let matrix = DMatrix::from_fn(l, l, |i, j| eval(&adjoint_basis[j], &located[i]));
    let offset = located.iter().map(|loc| eval(&adjoint_offset, loc)).collect();

    Ok(ReducedOperator {
        matrix,
        offset,
        state_basis,
        state_offset,
        adjoint_basis,
        adjoint_offset,
        max_solve_residual: max_res,
        solves: 2 * l + 2,
        cg_iterations,
    })
}

fn locate_sources(mesh: &SimplicialMesh, sources: &[Point]) -> Result<Vec<(usize, [f64; 4])>> {
    sources
        .iter()
        .map(|z| {
            let t = mesh.locate(z)?;
            Ok((t, mesh.barycentric(t, z)))
        })
        .collect()
}

/// Outcome of the active-set iteration on the reduced QP.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQpSolution {
    pub u: Vec<f64>,
    pub active_lower: Vec<usize>,
    pub active_upper: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Lower,
    Free,
    Upper,
}

/// Primal-dual active-set iteration for `lambda u + c + G u = 0` on the
/// inactive set with `u` clamped to `[lower, upper]` elsewhere. Stops when
/// the active sets repeat.
pub fn solve_box_qp(
    matrix: &DMatrix<f64>,
    offset: &[f64],
    lambda: f64,
    lower: &[f64],
    upper: &[f64],
    initial: Option<&[f64]>,
    max_iter: usize,
) -> Result<BoxQpSolution> {
    let l = offset.len();
    let adjoint = |u: &[f64]| -> Vec<f64> {
        let gu = matrix * DVector::from_column_slice(u);
        offset.iter().zip(gu.iter()).map(|(c, g)| c + g).collect()
    };
    let classify = |p: &[f64]| -> Vec<Status> {
        (0..l)
            .map(|k| {
                let v = -p[k] / lambda;
                if v < lower[k] {
                    Status::Lower
                } else if v > upper[k] {
                    Status::Upper
                } else {
                    Status::Free
                }
            })
            .collect()
    };

    let start = match initial {
        Some(u0) => u0.to_vec(),
        None => {
            let sys = DMatrix::identity(l, l) * lambda + matrix;
            let rhs = -DVector::from_column_slice(offset);
            sys.lu().solve(&rhs).ok_or_else(|| Error::InvalidProblem("singular reduced system".into()))?.as_slice().to_vec()
        }
    };
    let mut status = classify(&adjoint(&start));
    let mut history = vec![status.clone()];
    let mut u = vec![0.0; l];
    for it in 1..=max_iter {
        let free: Vec<usize> = (0..l).filter(|&k| status[k] == Status::Free).collect();
        for k in 0..l {
            u[k] = match status[k] {
                Status::Lower => lower[k],
                Status::Upper => upper[k],
                Status::Free => 0.0,
            };
        }
        if !free.is_empty() {
            let m = free.len();
            let fixed = adjoint(&u);
            let sys = DMatrix::from_fn(m, m, |a, b| matrix[(free[a], free[b])] + if a == b { lambda } else { 0.0 });
            let rhs = DVector::from_fn(m, |a, _| -fixed[free[a]]);
            let sol = sys.lu().solve(&rhs).ok_or_else(|| Error::InvalidProblem("singular reduced system".into()))?;
            for (a, &k) in free.iter().enumerate() {
                u[k] = sol[a];
            }
        }
        let next = classify(&adjoint(&u));
        if next == status {
            let pick = |s: Status| (0..l).filter(|&k| status[k] == s).collect();
            return Ok(BoxQpSolution { u, active_lower: pick(Status::Lower), active_upper: pick(Status::Upper), iterations: it });
        }
        if history.contains(&next) {
            return Err(Error::ActiveSetCycle(it));
        }
        history.push(next.clone());
        status = next;
    }
    let p = adjoint(&u);
    let residual = (0..l)
        .map(|k| (u[k] - (-p[k] / lambda).min(upper[k]).max(lower[k])).abs())
        .fold(0.0, f64::max);
    Err(Error::ActiveSetNonConvergence { iterations: max_iter, residual })
}

/// Exact solution of the box QP by enumerating all `3^l` active-set
/// guesses and keeping the one that satisfies the projection formula.
/// Used when the active-set iteration cycles.
pub fn solve_box_qp_exhaustive(
    matrix: &DMatrix<f64>,
    offset: &[f64],
    lambda: f64,
    lower: &[f64],
    upper: &[f64],
) -> Result<BoxQpSolution> {
    let l = offset.len();
    if l > 10 {
        return Err(Error::InvalidProblem(format!("exhaustive box QP with {l} sources")));
    }
    let combos = 3usize.pow(l as u32);
    let mut best: Option<(f64, BoxQpSolution)> = None;
    for code in 0..combos {
        let mut status = Vec::with_capacity(l);
        let mut c = code;
        for _ in 0..l {
            status.push([Status::Free, Status::Lower, Status::Upper][c % 3]);
            c /= 3;
        }
        let free: Vec<usize> = (0..l).filter(|&k| status[k] == Status::Free).collect();
        let mut u: Vec<f64> = (0..l)
            .map(|k| match status[k] {
                Status::Lower => lower[k],
                Status::Upper => upper[k],
                Status::Free => 0.0,
            })
            .collect();
        if !free.is_empty() {
            let fixed = matrix * DVector::from_column_slice(&u);
            let m = free.len();
            let sys = DMatrix::from_fn(m, m, |a, b| matrix[(free[a], free[b])] + if a == b { lambda } else { 0.0 });
            let rhs = DVector::from_fn(m, |a, _| -(offset[free[a]] + fixed[free[a]]));
            let Some(sol) = sys.lu().solve(&rhs) else { continue };
            for (a, &k) in free.iter().enumerate() {
                u[k] = sol[a];
            }
        }
        let gu = matrix * DVector::from_column_slice(&u);
        let residual = (0..l)
            .map(|k| (u[k] - (-(offset[k] + gu[k]) / lambda).min(upper[k]).max(lower[k])).abs())
            .fold(0.0, f64::max);
        if best.as_ref().map_or(true, |(r, _)| residual < *r) {
            let pick = |s: Status| (0..l).filter(|&k| status[k] == s).collect();
            let sol = BoxQpSolution { u, active_lower: pick(Status::Lower), active_upper: pick(Status::Upper), iterations: 1 };
            best = Some((residual, sol));
        }
    }
    let (_, sol) = best.expect("at least one active-set guess");
    Ok(sol)
}

/// Active-set iteration with the exhaustive solver as a fallback when the
/// iteration cycles or stalls.
pub fn solve_reduced_qp(
    matrix: &DMatrix<f64>,
    offset: &[f64],
    lambda: f64,
    lower: &[f64],
    upper: &[f64],
    initial: Option<&[f64]>,
    max_iter: usize,
) -> Result<BoxQpSolution> {
    match solve_box_qp(matrix, offset, lambda, lower, upper, initial, max_iter) {
        Err(Error::ActiveSetCycle(it)) | Err(Error::ActiveSetNonConvergence { iterations: it, .. }) if offset.len() <= 10 => {
            let mut sol = solve_box_qp_exhaustive(matrix, offset, lambda, lower, upper)?;
            sol.iterations += it;
            Ok(sol)
        }
        other => other,
    }
}

/// Solves the discrete optimality system on `space`.
pub fn solve_active_set(problem: &OcpProblem, space: &P1Space, tol: f64, max_iter: usize) -> Result<OcpSolution> {
    let opts = SolverOptions { tol, max_iter, ..SolverOptions::for_dim(space.mesh().dim()) };
    Ok(solve_active_set_with(problem, space, &opts, &WarmStart::default())?.0)
}

/// As [`solve_active_set`], with warm starts; also returns the reduced
/// operator so the caller can prolongate its vectors.
pub fn solve_active_set_with(
    problem: &OcpProblem,
    space: &P1Space,
    opts: &SolverOptions,
    warm: &WarmStart,
) -> Result<(OcpSolution, ReducedOperator)> {
    let red = reduced_operator(space, problem, opts, warm.vectors.as_deref())?;
    let qp = solve_reduced_qp(
        &red.matrix,
        &red.offset,
        problem.lambda,
        &problem.lower,
        &problem.upper,
        warm.control.as_deref(),
        opts.max_iter,
    )?;
    let n = space.n_dofs();
    let mut y = red.state_offset.clone();
    let mut p = red.adjoint_offset.clone();
    for (j, &uj) in qp.u.iter().enumerate() {
        for k in 0..n {
            y[k] += uj * red.state_basis[j][k];
            p[k] += uj * red.adjoint_basis[j][k];
        }
    }
    let sol = OcpSolution {
        y: space.function(y),
        p: space.function(p),
        u: qp.u,
        active_lower: qp.active_lower,
        active_upper: qp.active_upper,
        iterations: qp.iterations,
        max_solve_residual: red.max_solve_residual,
    };
    let res = vi_residual(&sol, problem)?;
    if res > opts.tol {
        return Err(Error::ActiveSetNonConvergence { iterations: sol.iterations, residual: res });
    }
    Ok((sol, red))
}

/// `max_z |u_z - clamp(-p(z) / lambda)|` with `p` the discrete adjoint.
pub fn vi_residual(solution: &OcpSolution, problem: &OcpProblem) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, z) in problem.sources.iter().enumerate() {
        let pz = solution.p.evaluate(z)?;
        worst = worst.max((solution.u[k] - problem.project(k, pz)).abs());
    }
    Ok(worst)
}

/// `1/2 |y - y_d|^2 + lambda/2 |u|^2`.
pub fn evaluate_cost(solution: &OcpSolution, problem: &OcpProblem, quad: &ElementQuadrature) -> f64 {
    let y = &solution.y;
    let mesh = y.mesh();
    let desired = &problem.desired_state;
    let tracking: f64 = (0..mesh.n_elements())
        .map(|t| quad.integrate(mesh, t, |x| (y.evaluate_in(t, x) - desired(x)).powi(2)))
        .sum();
    0.5 * tracking + 0.5 * problem.lambda * solution.u.iter().map(|u| u * u).sum::<f64>()
}
