//! A posteriori error indicators.
//!
//! * the weighted residual indicator of the state, built from normal
//!   gradient jumps scaled by `h_T D_T^alpha` plus a term for every source
//!   in the element;
//! * the maximum-norm indicator of a Poisson problem with `L2` data,
//!   `h_T^(2-n/2) |f|_{L2(T)} + h_T max_S |jump|`, used for the adjoint;
//! * data oscillation and the logarithmic factor of the max-norm bound.

use nalgebra::{DMatrix, DVector};

use crate::fem::{gradient_jump, FeFunction};
use crate::mesh::{source_reach, SimplicialMesh};
use crate::ocp::{OcpProblem, OcpSolution};
use crate::quadrature::ElementQuadrature;
use crate::weights::check_alpha;
use crate::{Point, Result};

/// Per-element indicators and their global aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorField {
    /// Squared state indicators.
    pub ey_sq: Vec<f64>,
    /// Adjoint (max-norm) indicators.
    pub ep: Vec<f64>,
    /// `ey_sq + ep^2`, used for marking.
    pub combined: Vec<f64>,
    /// `(sum ey_sq)^(1/2)`.
    pub ey_global: f64,
    /// `max ep`.
    pub ep_global: f64,
    /// `(ey_global^2 + ep_global^2)^(1/2)`.
    pub eocp_global: f64,
    pub log_factor: f64,
}

impl IndicatorField {
    pub fn from_parts(ey_sq: Vec<f64>, ep: Vec<f64>, log_factor: f64) -> Self {
        assert_eq!(ey_sq.len(), ep.len());
        let combined = ey_sq.iter().zip(&ep).map(|(a, b)| a + b * b).collect();
        let ey_global = ey_sq.iter().sum::<f64>().sqrt();
        let ep_global = ep.iter().copied().fold(0.0, f64::max);
        Self {
            ey_sq,
            ep,
            combined,
            ey_global,
            ep_global,
            eocp_global: ey_global.hypot(ep_global),
            log_factor,
        }
    }
}

/// Per-element values with their global aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementEstimate {
    pub local: Vec<f64>,
    pub global: f64,
}

/// `|jump|` of the normal gradient for every face; zero on boundary faces.
pub fn face_jumps(f: &FeFunction) -> Vec<f64> {
    let mesh = f.mesh();
    (0..mesh.faces().len())
        .map(|k| mesh.interior_side(k).map_or(0.0, |s| gradient_jump(f, &s).abs()))
        .collect()
}

/// Squared state indicators; `global` is the square root of their sum.
pub fn estimate_state(y: &FeFunction, controls: &[f64], sources: &[Point], alpha: f64) -> Result<ElementEstimate> {
    let mesh = y.mesh();
    let n = mesh.dim();
    check_alpha(alpha, n)?;
    let jumps = face_jumps(y);
    let measures: Vec<f64> =
        mesh.faces().iter().map(|f| if f.is_interior() { mesh.face_measure(f) } else { 0.0 }).collect();
    let mut local = Vec::with_capacity(mesh.n_elements());
    for t in 0..mesh.n_elements() {
        let h = mesh.geometry(t).diameter;
        let reach = source_reach(mesh, t, sources)?;
        let jump_sq: f64 = mesh.element_interior_faces(t).map(|k| jumps[k] * jumps[k] * measures[k]).sum();
        let mut value = h * reach.powf(alpha) * jump_sq;
        for (z, u) in sources.iter().zip(controls) {
            if mesh.contains(t, z, 1e-12) {
                value += h.powf(alpha + 2.0 - n as f64) * u * u;
            }
        }
        local.push(value);
    }
    let global = local.iter().sum::<f64>().sqrt();
    Ok(ElementEstimate { local, global })
}

/// Max-norm indicator for `-Δu = f` with `f` given per element:
/// `f(t, x)` is evaluated at points of element `t`.
pub fn estimate_max_norm<F: Fn(usize, &Point) -> f64>(u: &FeFunction, f: F, quad: &ElementQuadrature) -> ElementEstimate {
    let mesh = u.mesh();
    let n = mesh.dim() as f64;
    let jumps = face_jumps(u);
    let local: Vec<f64> = (0..mesh.n_elements())
        .map(|t| {
            let h = mesh.geometry(t).diameter;
            let l2 = quad.integrate(mesh, t, |x| f(t, x).powi(2)).max(0.0).sqrt();
            let jump = mesh.element_interior_faces(t).map(|k| jumps[k]).fold(0.0, f64::max);
            h.powf(2.0 - 0.5 * n) * l2 + h * jump
        })
        .collect();
    let global = local.iter().copied().fold(0.0, f64::max);
    ElementEstimate { local, global }
}

/// Max-norm indicator for the Poisson problem `-Δu = f`.
pub fn estimate_poisson_max<F: Fn(&Point) -> f64>(u: &FeFunction, f: F, quad: &ElementQuadrature) -> ElementEstimate {
    estimate_max_norm(u, |_, x| f(x), quad)
}

/// Adjoint indicator: the max-norm indicator with data `y - y_d`.
pub fn estimate_adjoint<F: Fn(&Point) -> f64>(
    p: &FeFunction,
    y: &FeFunction,
    desired: F,
    quad: &ElementQuadrature,
) -> ElementEstimate {
    estimate_max_norm(p, |t, x| y.evaluate_in(t, x) - desired(x), quad)
}

/// All indicators for a discrete optimal triple.
pub fn estimate(solution: &OcpSolution, problem: &OcpProblem, quad: &ElementQuadrature) -> Result<IndicatorField> {
    let state = estimate_state(&solution.y, &solution.u, &problem.sources, problem.alpha)?;
    let desired = &problem.desired_state;
    let adjoint = estimate_adjoint(&solution.p, &solution.y, |x| desired(x), quad);
    Ok(IndicatorField::from_parts(state.local, adjoint.local, log_factor(solution.y.mesh())))
}

/// `h_T^(2(2-n/2)) |g - P g|^2_{L2(T)}` with `P` the L2 projection onto
/// linears on `T`.
pub fn local_oscillation_sq<G: Fn(&Point) -> f64>(g: &G, mesh: &SimplicialMesh, t: usize, quad: &ElementQuadrature) -> f64 {
    let n = mesh.dim();
    let k = n + 1;
    let vol = mesh.geometry(t).volume;
    let denom = (k * (k + 1)) as f64;
    let mass = DMatrix::from_fn(k, k, |i, j| vol * if i == j { 2.0 } else { 1.0 } / denom);
    let mut rhs = DVector::zeros(k);
    quad.visit(mesh, t, |x, w| {
        let lam = mesh.barycentric(t, x);
        let gx = g(x);
        for i in 0..k {
            rhs[i] += w * gx * lam[i];
        }
    });
    let coef = mass.cholesky().expect("element mass matrix is SPD").solve(&rhs);
    let err = quad.integrate(mesh, t, |x| {
        let lam = mesh.barycentric(t, x);
        let proj: f64 = (0..k).map(|i| coef[i] * lam[i]).sum();
        (g(x) - proj).powi(2)
    });
    let h = mesh.geometry(t).diameter;
    h.powf(2.0 * (2.0 - 0.5 * n as f64)) * err.max(0.0)
}

/// Oscillation of `g` over the elements in `subset`.
pub fn oscillation<G: Fn(&Point) -> f64>(g: G, mesh: &SimplicialMesh, subset: &[usize], quad: &ElementQuadrature) -> f64 {
    subset.iter().map(|&t| local_oscillation_sq(&g, mesh, t, quad)).sum::<f64>().sqrt()
}

/// `|log(1 / min_T h_T)|`.
pub fn log_factor(mesh: &SimplicialMesh) -> f64 {
    (1.0 / mesh.h_min()).ln().abs()
}
