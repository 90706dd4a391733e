//! Marking and the adaptive loop SOLVE, ESTIMATE, MARK, REFINE.

use std::fmt;
use std::sync::Arc;

use crate::estimators::{estimate, IndicatorField};
use crate::fem::P1Space;
use crate::manufactured::{exact_errors, ExactErrors, ManufacturedCase};
use crate::mesh::{ensure_source_separation, refine_with_history, SimplicialMesh};
use crate::ocp::{solve_active_set_with, vi_residual, OcpProblem, SolverOptions, WarmStart};
use crate::quadrature::ElementQuadrature;
use crate::weights::DEFAULT_DEPTH;
use crate::{Error, Result};

/// Marks every element whose combined indicator exceeds `theta` times the
/// maximum, plus the maximizers themselves. Empty only when all indicators
/// vanish.
pub fn mark(indicators: &IndicatorField, theta: f64) -> Vec<usize> {
    mark_values(&indicators.combined, theta)
}

pub fn mark_values(values: &[f64], theta: f64) -> Vec<usize> {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let threshold = theta * max;
    (0..values.len()).filter(|&t| values[t] == max || values[t] > threshold).collect()
}

/// One row of the adaptive history.
#[derive(Debug, Clone, PartialEq)]
pub struct AfemRecord {
    pub iter: usize,
    /// `2 * #vertices + l`.
    pub ndof: usize,
    pub n_elem: usize,
    pub ey: f64,
    pub ep: f64,
    pub eocp: f64,
    pub log_factor: f64,
    pub errors: Option<ExactErrors>,
    /// `eocp / err_total`.
    pub effectivity: Option<f64>,
    pub vi_residual: f64,
    pub max_solve_residual: f64,
    pub active_set_iterations: usize,
}

impl AfemRecord {
    /// Column value by CSV name; `None` for absent error columns.
    pub fn field(&self, name: &str) -> Option<f64> {
        let e = self.errors.as_ref();
        match name {
            "iter" => Some(self.iter as f64),
            "ndof" => Some(self.ndof as f64),
            "n_elem" => Some(self.n_elem as f64),
            "ey" => Some(self.ey),
            "ep" => Some(self.ep),
            "eocp" => Some(self.eocp),
            "log_factor" => Some(self.log_factor),
            "err_y" => e.map(|e| e.err_y),
            "err_p" => e.map(|e| e.err_p),
            "err_u" => e.map(|e| e.err_u),
            "err_total" => e.map(|e| e.err_total),
            "effectivity" => self.effectivity,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriteria {
    pub max_ndof: usize,
    pub max_iter: usize,
    pub estimator_tol: f64,
}

impl StopCriteria {
    pub fn for_dim(dim: usize) -> Self {
        Self { max_ndof: if dim == 2 { 100_000 } else { 300_000 }, max_iter: 200, estimator_tol: 0.0 }
    }

    pub fn is_met(&self, record: &AfemRecord) -> bool {
        record.iter >= self.max_iter || record.ndof >= self.max_ndof || record.eocp <= self.estimator_tol
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AfemOptions {
    pub theta: f64,
    pub solver: SolverOptions,
    /// Exactness degree of the data term in the adjoint indicator.
    pub estimator_degree: usize,
    /// Grading depth of the weighted error quadrature.
    pub error_depth: usize,
}

impl AfemOptions {
    pub fn for_dim(dim: usize) -> Self {
        Self { theta: 0.5, solver: SolverOptions::for_dim(dim), estimator_degree: 6, error_depth: DEFAULT_DEPTH }
    }
}

/// Records up to a failed iteration, and the failure.
#[derive(Debug)]
pub struct AfemFailure {
    pub records: Vec<AfemRecord>,
    pub iteration: usize,
    pub error: Error,
}

impl fmt::Display for AfemFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "adaptive iteration {} failed: {}", self.iteration, self.error)
    }
}

impl std::error::Error for AfemFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs the adaptive loop from `seed` until a stop criterion holds.
pub fn run_afem(
    problem: &OcpProblem,
    seed: &SimplicialMesh,
    stop: &StopCriteria,
    exact: Option<&ManufacturedCase>,
    opts: &AfemOptions,
) -> std::result::Result<Vec<AfemRecord>, AfemFailure> {
    run_afem_with(problem, seed, stop, exact, opts, |_| {})
}

/// As [`run_afem`], calling `observe` after each recorded iteration.
pub fn run_afem_with<F: FnMut(&AfemRecord)>(
    problem: &OcpProblem,
    seed: &SimplicialMesh,
    stop: &StopCriteria,
    exact: Option<&ManufacturedCase>,
    opts: &AfemOptions,
    mut observe: F,
) -> std::result::Result<Vec<AfemRecord>, AfemFailure> {
    let mut records = Vec::new();
    let mut iteration = 0;
    let result = (|| -> Result<()> {
        problem.validate()?;
        let mut mesh = ensure_source_separation(seed, &problem.sources)?;
        let mut warm = WarmStart::default();
        let quad = ElementQuadrature::new(mesh.dim(), opts.estimator_degree)?.with_singular_points(&problem.sources);
        loop {
            let space = P1Space::new(Arc::new(mesh));
            let (sol, reduced) = solve_active_set_with(problem, &space, &opts.solver, &warm)?;
            let indicators = estimate(&sol, problem, &quad)?;
            let errors = exact.map(|case| exact_errors(&sol, case, opts.error_depth)).transpose()?;
            let m = space.mesh();
            let record = AfemRecord {
                iter: iteration,
                ndof: 2 * m.n_vertices() + problem.n_sources(),
                n_elem: m.n_elements(),
                ey: indicators.ey_global,
                ep: indicators.ep_global,
                eocp: indicators.eocp_global,
                log_factor: indicators.log_factor,
                effectivity: errors.map(|e| indicators.eocp_global / e.err_total),
                errors,
                vi_residual: vi_residual(&sol, problem)?,
                max_solve_residual: sol.max_solve_residual,
                active_set_iterations: sol.iterations,
            };
            observe(&record);
            let done = stop.is_met(&record);
            records.push(record);
            if done {
                return Ok(());
            }
            let marked = mark(&indicators, opts.theta);
            if marked.is_empty() {
                return Ok(());
            }
            let refinement = refine_with_history(m, &marked)?;
            warm = WarmStart { vectors: Some(reduced.prolongate(&refinement)), control: Some(sol.u) };
            mesh = refinement.mesh;
            iteration += 1;
        }
    })();
    match result {
        Ok(()) => Ok(records),
        Err(error) => Err(AfemFailure { records, iteration, error }),
    }
}

/// Least-squares slope of `log values` against `log ndof` over the last
/// `window` points.
pub fn fit_loglog(ndof: &[f64], values: &[f64], window: usize) -> Result<f64> {
    assert_eq!(ndof.len(), values.len());
    let n = ndof.len();
    if window < 3 || window > n {
        return Err(Error::InsufficientData(format!("window {window} with {n} records")));
    }
    let (xs, ys) = (&ndof[n - window..], &values[n - window..]);
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InsufficientData("non-positive values in the fit window".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let w = window as f64;
    let mx = lx.iter().sum::<f64>() / w;
    let my = ly.iter().sum::<f64>() / w;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("constant ndof in the fit window".into()));
    }
    Ok(sxy / sxx)
}

/// Fitted convergence rate of a record column against ndof.
pub fn fit_rate(records: &[AfemRecord], field: &str, window: usize) -> Result<f64> {
    let mut ndof = Vec::with_capacity(records.len());
    let mut values = Vec::with_capacity(records.len());
    for r in records {
        let v = r.field(field).ok_or_else(|| Error::InsufficientData(format!("field {field} is absent")))?;
        ndof.push(r.ndof as f64);
        values.push(v);
    }
    fit_loglog(&ndof, &values, window)
}
