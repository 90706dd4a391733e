//! Closed-form test problems and the six experiment presets.
//!
//! A manufactured case fixes the adjoint `p̄` in closed form. The control
//! follows from the projection formula, the state is the matching
//! combination of fundamental solutions, and the desired state is chosen
//! so that the adjoint equation `-Δp̄ = ȳ - y_d` holds.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::mesh::{build_initial_mesh, ensure_source_separation, source_distance, uniform_refine, DomainPreset, SimplicialMesh};
use crate::ocp::{OcpProblem, OcpSolution, ScalarField};
use crate::weights::{weighted_grad_error, WeightSpec, DEFAULT_DEPTH};
use crate::{Error, Point, Result};

/// `sum_z w_z G(x - z)` with `G` the fundamental solution of `-Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalState {
    sources: Vec<Point>,
    weights: Vec<f64>,
    dim: usize,
}

pub fn fundamental_state(sources: &[Point], weights: &[f64], dim: usize) -> FundamentalState {
    assert_eq!(sources.len(), weights.len());
    assert!(dim == 2 || dim == 3);
    FundamentalState { sources: sources.to_vec(), weights: weights.to_vec(), dim }
}

impl FundamentalState {
    fn check(&self, x: &Point) -> Result<()> {
        match self.sources.iter().position(|z| z == x) {
            Some(_) => Err(Error::OutsideMesh([x.x, x.y, x.z])),
            None => Ok(()),
        }
    }

    /// Errors exactly at a source.
    pub fn value(&self, x: &Point) -> Result<f64> {
        self.check(x)?;
        Ok(self.value_unchecked(x))
    }

    pub fn gradient(&self, x: &Point) -> Result<Point> {
        self.check(x)?;
        Ok(self.gradient_unchecked(x))
    }

    /// Infinite at a source.
    pub fn value_unchecked(&self, x: &Point) -> f64 {
        self.sources
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| {
                let r = (x - z).norm();
                if self.dim == 2 {
                    -w * r.ln() / (2.0 * PI)
                } else {
                    w / (4.0 * PI * r)
                }
            })
            .sum()
    }

    pub fn gradient_unchecked(&self, x: &Point) -> Point {
        self.sources
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| {
                let d = x - z;
                let r2 = d.norm_squared();
                if self.dim == 2 {
                    d * (-w / (2.0 * PI * r2))
                } else {
                    d * (-w / (4.0 * PI * r2 * r2.sqrt()))
                }
            })
            .fold(Point::zeros(), |a, b| a + b)
    }
}

/// A problem with known optimal state, adjoint and control.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub dim: usize,
    pub sources: Vec<Point>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub state: Arc<FundamentalState>,
    pub adjoint: ScalarField,
    pub adjoint_laplacian: ScalarField,
    pub control: Vec<f64>,
    pub desired_state: ScalarField,
}

impl fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("dim", &self.dim)
            .field("sources", &self.sources)
            .field("lambda", &self.lambda)
            .field("alpha", &self.alpha)
            .field("control", &self.control)
            .finish()
    }
}

impl ManufacturedCase {
    pub fn exact_state(&self, x: &Point) -> f64 {
        self.state.value_unchecked(x)
    }

    pub fn exact_adjoint(&self, x: &Point) -> f64 {
        (self.adjoint)(x)
    }

    /// The optimal control problem whose solution this case is, with the
    /// traces of the exact state and adjoint as Dirichlet data.
    pub fn problem(&self) -> Result<OcpProblem> {
        let state = self.state.clone();
        Ok(OcpProblem::new(
            self.sources.clone(),
            self.lower.clone(),
            self.upper.clone(),
            self.lambda,
            self.alpha,
            self.desired_state.clone(),
        )?
        .with_state_boundary(Arc::new(move |x| state.value_unchecked(x)))
        .with_adjoint_boundary(self.adjoint.clone()))
    }
}

/// Derives control, state and desired state from a closed-form adjoint.
#[allow(clippy::too_many_arguments)]
pub fn build_case(
    adjoint: ScalarField,
    adjoint_laplacian: ScalarField,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lambda: f64,
    sources: Vec<Point>,
    alpha: f64,
    dim: usize,
) -> ManufacturedCase {
    let control: Vec<f64> = sources
        .iter()
        .enumerate()
        .map(|(k, z)| (-adjoint(z) / lambda).min(upper[k]).max(lower[k]))
        .collect();
    let state = Arc::new(fundamental_state(&sources, &control, dim));
    let desired_state: ScalarField = {
        let state = state.clone();
        let lap = adjoint_laplacian.clone();
        Arc::new(move |x| state.value_unchecked(x) + lap(x))
    };
    ManufacturedCase {
        dim,
        sources,
        lower,
        upper,
        lambda,
        alpha,
        state,
        adjoint,
        adjoint_laplacian,
        control,
        desired_state,
    }
}

/// Exact errors of a discrete solution against a manufactured case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactErrors {
    /// Weighted `L2` norm of the state gradient error.
    pub err_y: f64,
    /// Sampled maximum norm of the adjoint error.
    pub err_p: f64,
    /// Euclidean norm of the control error.
    pub err_u: f64,
    pub err_total: f64,
}

/// Barycentric lattice points with denominator 4 on a `dim`-simplex.
fn sample_lattice(dim: usize) -> Vec<[f64; 4]> {
    const M: usize = 4;
    let mut out = Vec::new();
    for i in 0..=M {
        for j in 0..=M - i {
            if dim == 2 {
                out.push([i as f64 / M as f64, j as f64 / M as f64, (M - i - j) as f64 / M as f64, 0.0]);
                continue;
            }
            for k in 0..=M - i - j {
                let l = M - i - j - k;
                out.push([i as f64, j as f64, k as f64, l as f64].map(|v| v / M as f64));
            }
        }
    }
    out
}

pub fn exact_errors(solution: &OcpSolution, case: &ManufacturedCase, depth: usize) -> Result<ExactErrors> {
    let mesh = solution.y.mesh();
    let separation = source_distance(mesh, &case.sources)?;
    let spec = WeightSpec::from_parts(case.alpha, case.dim, case.sources.clone(), separation);
    let state = &case.state;
    let err_y = weighted_grad_error(&solution.y, |x| state.gradient_unchecked(x), &spec, depth)?;

    let lattice = sample_lattice(mesh.dim());
    let mut err_p: f64 = 0.0;
    for t in 0..mesh.n_elements() {
        let pts = mesh.element_points(t);
        let vals: Vec<f64> = mesh.element_vertices(t).iter().map(|&v| solution.p.values()[v]).collect();
        for lam in &lattice {
            let mut x = Point::zeros();
            let mut ph = 0.0;
            for i in 0..=mesh.dim() {
                x += pts[i] * lam[i];
                ph += vals[i] * lam[i];
            }
            err_p = err_p.max((case.exact_adjoint(&x) - ph).abs());
        }
    }

    let err_u = solution.u.iter().zip(&case.control).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let err_total = (err_y * err_y + err_p * err_p + err_u * err_u).sqrt();
    Ok(ExactErrors { err_y, err_p, err_u, err_total })
}

/// [`exact_errors`] with the default grading depth.
pub fn exact_errors_default(solution: &OcpSolution, case: &ManufacturedCase) -> Result<ExactErrors> {
    exact_errors(solution, case, DEFAULT_DEPTH)
}

/// A named experiment: domain, problem data and, when known, the exact
/// solution.
#[derive(Clone)]
pub struct ExperimentPreset {
    pub name: String,
    pub domain: DomainPreset,
    pub problem: OcpProblem,
    pub case: Option<ManufacturedCase>,
}

impl fmt::Debug for ExperimentPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExperimentPreset")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("problem", &self.problem)
            .field("manufactured", &self.case.is_some())
            .finish()
    }
}

pub const PRESET_NAMES: [&str; 6] = ["example1", "example2", "example3", "example4", "example5", "example6"];

impl ExperimentPreset {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Initial mesh, two uniform sweeps, then source separation.
    pub fn seed_mesh(&self) -> Result<SimplicialMesh> {
        let mut mesh = build_initial_mesh(self.domain);
        for _ in 0..2 {
            mesh = uniform_refine(&mesh);
        }
        ensure_source_separation(&mesh, &self.problem.sources)
    }
}

/// Looks up a preset by name with its default parameters.
pub fn preset(name: &str) -> Result<ExperimentPreset> {
    preset_with(name, None, None)
}

/// Looks up a preset, optionally overriding the regularization and the
/// weight exponent.
pub fn preset_with(name: &str, lambda: Option<f64>, alpha: Option<f64>) -> Result<ExperimentPreset> {
    let p2 = |x: f64, y: f64| Point::new(x, y, 0.0);
    let p3 = Point::new;
    let quarters2 = vec![p2(0.25, 0.25), p2(0.75, 0.25), p2(0.25, 0.75), p2(0.75, 0.75)];
    let diagonal3 = vec![p3(0.25, 0.25, 0.25), p3(0.75, 0.75, 0.75)];

    let data_only = |domain: DomainPreset, sources: Vec<Point>, a: f64, b: f64, lam: f64, alpha: f64, yd: ScalarField| {
        let l = sources.len();
        let problem = OcpProblem::new(sources, vec![a; l], vec![b; l], lam, alpha, yd)?;
        Ok(ExperimentPreset { name: name.to_string(), domain, problem, case: None })
    };
    let manufactured = |domain: DomainPreset, case: ManufacturedCase| {
        Ok(ExperimentPreset { name: name.to_string(), domain, problem: case.problem()?, case: Some(case) })
    };

    match name {
        "example1" => {
            let mut d = quarters2.clone();
            d.push(p2(0.5, 0.5));
            let yd: ScalarField = Arc::new(|x| -(2.0 * PI * x.x).sin() * (2.0 * PI * x.y).cos() * (x.x * x.y).exp());
            data_only(DomainPreset::UnitSquare, d, -0.5, 1.0, lambda.unwrap_or(1.0), alpha.unwrap_or(1.5), yd)
        }
        "example2" => {
            let l = quarters2.len();
            let case = build_case(
                Arc::new(|x| -32.0 * x.x * x.y * (1.0 - x.x) * (1.0 - x.y)),
                Arc::new(|x| 64.0 * (x.y * (1.0 - x.y) + x.x * (1.0 - x.x))),
                vec![0.3; l],
                vec![2.0; l],
                lambda.unwrap_or(1.0),
                quarters2,
                alpha.unwrap_or(1.0),
                2,
            );
            manufactured(DomainPreset::UnitSquare, case)
        }
        "example3" => {
            let case = build_case(
                Arc::new(lshape_adjoint),
                Arc::new(|_| 0.0),
                vec![0.1],
                vec![0.9],
                lambda.unwrap_or(1.0),
                vec![p2(0.5, 0.5)],
                alpha.unwrap_or(1.0),
                2,
            );
            manufactured(DomainPreset::LShape2d, case)
        }
        "example4" => {
            let yd: ScalarField = Arc::new(|x| {
                -(2.0 * PI * x.x).sin() * (2.0 * PI * x.y).sin() * (2.0 * PI * x.z).sin() * (x.x * x.y * x.z).exp()
            });
            data_only(DomainPreset::UnitCube, diagonal3, -0.5, 1.0, lambda.unwrap_or(1.0), alpha.unwrap_or(1.99), yd)
        }
        "example5" => {
            let case = build_case(
                Arc::new(|x| {
                    -64.0 * x.x * x.y * x.z * x.z * (1.0 - x.x) * (1.0 - x.y) * (1.0 - x.z)
                }),
                Arc::new(|x| {
                    let f = x.x * (1.0 - x.x);
                    let g = x.y * (1.0 - x.y);
                    let h = x.z * x.z * (1.0 - x.z);
                    -64.0 * (-2.0 * g * h - 2.0 * f * h + f * g * (2.0 - 6.0 * x.z))
                }),
                vec![0.0; 2],
                vec![0.25; 2],
                lambda.unwrap_or(1.0),
                diagonal3,
                alpha.unwrap_or(1.99),
                3,
            );
            manufactured(DomainPreset::UnitCube, case)
        }
        "example6" => {
            // the stated point (0.5, 0.5, 0.5) lies in the removed block;
            // mirrored across the plane x = 0 into the domain
            let yd: ScalarField = Arc::new(|_| 1.0);
            data_only(DomainPreset::LShape3d, vec![p3(-0.5, 0.5, 0.5)], -1.0, 1.0, lambda.unwrap_or(1.0), alpha.unwrap_or(1.99), yd)
        }
        _ => Err(Error::UnknownPreset(name.to_string())),
    }
}

/// `r^(2/3) sin(2θ/3)` with `θ ∈ [0, 2π)` measured counterclockwise from
/// the positive first axis.
pub fn lshape_adjoint(x: &Point) -> f64 {
    let r = x.x.hypot(x.y);
    if r == 0.0 {
        return 0.0;
    }
    let mut theta = x.y.atan2(x.x);
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    r.powf(2.0 / 3.0) * (2.0 * theta / 3.0).sin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::P1Space;
    use crate::ocp::solve_active_set;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Fourth-order central differences.
    fn fd_laplacian<F: Fn(&Point) -> f64>(f: F, x: &Point, dim: usize, h: f64) -> f64 {
        let mut s = -30.0 * dim as f64 * f(x);
        for k in 0..dim {
            let mut e = Point::zeros();
            e[k] = h;
            s += 16.0 * (f(&(x + e)) + f(&(x - e))) - f(&(x + 2.0 * e)) - f(&(x - 2.0 * e));
        }
        s / (12.0 * h * h)
    }

    #[test]
    fn fundamental_values() {
        let z = Point::new(0.2, 0.3, 0.0);
        let g = fundamental_state(&[z], &[1.0], 2);
        assert_eq!(g.value(&Point::new(1.2, 0.3, 0.0)).unwrap(), 0.0);
        assert!(g.value(&z).is_err());
        let z3 = Point::new(0.0, 0.0, 0.0);
        let g3 = fundamental_state(&[z3], &[4.0 * PI], 3);
        assert_relative_eq!(g3.value(&Point::new(0.0, 2.0, 0.0)).unwrap(), 0.5, epsilon = 1e-15);
        assert!(g3.gradient(&z3).is_err());
    }

    #[test]
    fn fundamental_gradient_magnitude() {
        let z = Point::new(0.5, 0.5, 0.0);
        let g = fundamental_state(&[z], &[2.0], 2);
        let x = Point::new(0.5, 0.51, 0.0);
        assert_relative_eq!(g.gradient(&x).unwrap().norm(), 2.0 / (2.0 * PI * 0.01), max_relative = 1e-12);
        let g3 = fundamental_state(&[z], &[2.0], 3);
        assert_relative_eq!(g3.gradient(&x).unwrap().norm(), 2.0 / (4.0 * PI * 1e-4), max_relative = 1e-12);
    }

    #[test]
    fn fundamental_state_is_harmonic_away_from_sources() {
        let z2 = [Point::new(0.25, 0.25, 0.0), Point::new(0.75, 0.5, 0.0)];
        let g2 = fundamental_state(&z2, &[1.0, -0.4], 2);
        let z3 = [Point::new(0.25, 0.25, 0.25), Point::new(0.75, 0.75, 0.75)];
        let g3 = fundamental_state(&z3, &[1.0, 0.3], 3);
        for x in [Point::new(0.6, 0.1, 0.4), Point::new(0.1, 0.9, 0.8), Point::new(0.5, 0.5, 0.1)] {
            let x2 = Point::new(x.x, x.y, 0.0);
            assert!(fd_laplacian(|p| g2.value_unchecked(p), &x2, 2, 1e-3).abs() < 1e-8);
            assert!(fd_laplacian(|p| g3.value_unchecked(p), &x, 3, 1e-3).abs() < 1e-8);
        }
    }

    #[test]
    fn fundamental_gradient_matches_differences() {
        let z3 = [Point::new(0.25, 0.25, 0.25)];
        let g = fundamental_state(&z3, &[0.7], 3);
        let x = Point::new(0.6, 0.4, 0.1);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Point::zeros();
            e[k] = h;
            let fd = (g.value_unchecked(&(x + e)) - g.value_unchecked(&(x - e))) / (2.0 * h);
            assert_relative_eq!(fd, g.gradient_unchecked(&x)[k], max_relative = 1e-7);
        }
    }

    #[test]
    fn example2_control() {
        let p = preset("example2").unwrap();
        let case = p.case.unwrap();
        assert_relative_eq!(case.exact_adjoint(&Point::new(0.25, 0.25, 0.0)), -1.125, epsilon = 1e-15);
        for u in &case.control {
            assert_relative_eq!(*u, 1.125, epsilon = 1e-15);
        }
    }

    #[test]
    fn example3_control_is_at_the_lower_bound() {
        let case = preset("example3").unwrap().case.unwrap();
        let pz = case.exact_adjoint(&Point::new(0.5, 0.5, 0.0));
        assert_relative_eq!(pz, 0.5f64.powf(1.0 / 3.0) * 0.5, epsilon = 1e-14);
        assert_eq!(case.control, vec![0.1]);
        // vanishes on the re-entrant edges
        assert!(lshape_adjoint(&Point::new(0.5, 0.0, 0.0)).abs() < 1e-15);
        assert!(lshape_adjoint(&Point::new(0.0, -0.5, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn example5_controls() {
        let case = preset("example5").unwrap().case.unwrap();
        assert_relative_eq!(case.control[0], 27.0 / 256.0, epsilon = 1e-15);
        assert_relative_eq!(-case.exact_adjoint(&Point::new(0.75, 0.75, 0.75)), 0.31640625, epsilon = 1e-15);
        assert_eq!(case.control[1], 0.25);
    }

    #[test]
    fn preset_parameters() {
        let e1 = preset_with("example1", Some(0.01), None).unwrap();
        assert_eq!(e1.problem.lambda, 0.01);
        assert_eq!(e1.problem.alpha, 1.5);
        assert_eq!(e1.problem.sources.len(), 5);
        assert!(e1.case.is_none());
        let e4 = preset("example4").unwrap();
        assert_eq!((e4.problem.lower[0], e4.problem.upper[0], e4.problem.alpha), (-0.5, 1.0, 1.99));
        let e6 = preset("example6").unwrap();
        assert_eq!((e6.problem.lower[0], e6.problem.upper[0]), (-1.0, 1.0));
        assert_eq!((e6.problem.desired_state)(&Point::new(0.1, 0.2, 0.3)), 1.0);
        assert_eq!(preset_with("example2", None, Some(1.9)).unwrap().problem.alpha, 1.9);
        assert!(matches!(preset("example7"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn seed_meshes_separate_sources() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            let mesh = p.seed_mesh().unwrap();
            assert!(source_distance(&mesh, &p.problem.sources).is_ok(), "{name}");
            assert!(crate::mesh::patch_source_violations(&mesh, &p.problem.sources).is_empty());
        }
    }

    #[test]
    fn adjoint_equation_holds_for_manufactured_cases() {
        for name in ["example2", "example3", "example5"] {
            let case = preset(name).unwrap().case.unwrap();
            let dim = case.dim;
            for i in 0..30 {
                let s = |k: u32| ((i as f64 + 1.0) * (0.618 + 0.1 * k as f64)).fract();
                let mut x = Point::new(0.05 + 0.9 * s(1), 0.05 + 0.9 * s(2), if dim == 3 { 0.05 + 0.9 * s(3) } else { 0.0 });
                if name == "example3" {
                    x.x = -x.x;
                }
                let lhs = -fd_laplacian(|p| case.exact_adjoint(p), &x, dim, 1e-3);
                let rhs = case.exact_state(&x) - (case.desired_state)(&x);
                assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs().max(1.0), "{name} {x:?}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn interpolant_errors() {
        let p = preset("example2").unwrap();
        let case = p.case.clone().unwrap();
        let space = P1Space::new(Arc::new(p.seed_mesh().unwrap()));
        let sol = solve_active_set(&p.problem, &space, 1e-10, 50).unwrap();
        let exact = OcpSolution {
            p: space.interpolate(|x| case.exact_adjoint(x)),
            u: case.control.clone(),
            ..sol.clone()
        };
        let e = exact_errors(&exact, &case, 8).unwrap();
        assert_eq!(e.err_u, 0.0);
        assert!(e.err_p > 0.0);
        let e = exact_errors(&sol, &case, 8).unwrap();
        for c in [e.err_y, e.err_p, e.err_u] {
            assert!(c <= e.err_total);
        }
        assert!(e.err_y.is_finite() && e.err_y > 0.0);
    }

    #[test]
    fn lattice_sizes() {
        assert_eq!(sample_lattice(2).len(), 15);
        assert_eq!(sample_lattice(3).len(), 35);
        for l in sample_lattice(3) {
            assert_relative_eq!(l.iter().sum::<f64>(), 1.0);
        }
    }

    proptest! {
        #[test]
        fn projection_formula_holds(lambda in 0.01f64..10.0, a in -2.0f64..0.0, w in 0.1f64..3.0) {
            let sources = vec![Point::new(0.3, 0.4, 0.0), Point::new(0.7, 0.6, 0.0)];
            let case = build_case(
                Arc::new(|x| (3.0 * x.x).sin() - x.y),
                Arc::new(|x| -9.0 * (3.0 * x.x).sin()),
                vec![a; 2],
                vec![a + w; 2],
                lambda,
                sources.clone(),
                1.0,
                2,
            );
            for (k, z) in sources.iter().enumerate() {
                let expect = (-case.exact_adjoint(z) / lambda).min(a + w).max(a);
                prop_assert_eq!(case.control[k], expect);
            }
        }
    }
}
