//! Simplex quadrature.
//!
//! Rules are conical products of Gauss–Jacobi rules in collapsed coordinates,
//! so any polynomial exactness degree can be requested. Integrands with a
//! point singularity inside or on an element are handled by splitting the
//! element into cones with apex at the singular point and integrating the
//! radial direction over geometrically graded intervals.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::mesh::SimplicialMesh;
use crate::{Error, Point, Result};

/// Highest exactness degree accepted by [`SimplexRule::new`].
pub const MAX_DEGREE: usize = 40;

/// Gauss–Jacobi rule on `[0, 1]` for the weight `(1 - t)^a`, `m` points.
///
/// Returns `(nodes, weights)` sorted by node. Exact for polynomials of
/// degree `2m - 1` against the weight.
pub fn gauss_jacobi_unit(m: usize, a: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(m > 0);
    let b = 0.0;
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        jac[(k, k)] = if k == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
        if k >= 1 {
            let beta = 4.0 * kf * (kf + a) * (kf + b) * (kf + a + b)
                / (s * s * (s + 1.0) * (s - 1.0));
            let off = beta.sqrt();
            jac[(k, k - 1)] = off;
            jac[(k - 1, k)] = off;
        }
    }
    // integral of (1-x)^a over [-1, 1]
    let mu0 = 2f64.powf(a + 1.0) / (a + 1.0);
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            let t = 0.5 * (1.0 + x);
            let w = mu0 * v0 * v0 / 2f64.powf(a + 1.0);
            (t, w)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs.into_iter().unzip()
}

/// Gauss–Legendre on `[0, 1]`.
pub fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_jacobi_unit(m, 0.0)
}

fn points_for_degree(degree: usize) -> usize {
    degree / 2 + 1
}

/// A quadrature rule on the reference `dim`-simplex.
///
/// Points are stored as barycentric coordinates (only the first `dim + 1`
/// entries are meaningful) and the weights sum to one, so the integral over a
/// physical simplex `T` is `|T| * sum_q w_q f(x_q)`.
#[derive(Debug, Clone)]
pub struct SimplexRule {
    dim: usize,
    degree: usize,
    points: Vec<[f64; 4]>,
    weights: Vec<f64>,
}

impl SimplexRule {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedQuadrature(format!("simplex dimension {dim}")));
        }
        if degree > MAX_DEGREE {
            return Err(Error::UnsupportedQuadrature(format!(
                "exactness degree {degree} exceeds {MAX_DEGREE}"
            )));
        }
        let m = points_for_degree(degree);
        let (u, wu) = gauss_jacobi_unit(m, 0.0);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        match dim {
            1 => {
                for (x, w) in u.iter().zip(&wu) {
                    points.push([1.0 - x, *x, 0.0, 0.0]);
                    weights.push(*w);
                }
            }
            2 => {
                let (v, wv) = gauss_jacobi_unit(m, 1.0);
                for (x, wx) in u.iter().zip(&wu) {
                    for (y, wy) in v.iter().zip(&wv) {
                        let x1 = x * (1.0 - y);
                        let x2 = *y;
                        points.push([1.0 - x1 - x2, x1, x2, 0.0]);
                        // reference triangle has area 1/2
                        weights.push(2.0 * wx * wy);
                    }
                }
            }
            _ => {
                let (v, wv) = gauss_jacobi_unit(m, 1.0);
                let (s, ws) = gauss_jacobi_unit(m, 2.0);
                for (x, wx) in u.iter().zip(&wu) {
                    for (y, wy) in v.iter().zip(&wv) {
                        for (z, wz) in s.iter().zip(&ws) {
                            let x3 = *z;
                            let x2 = y * (1.0 - z);
                            let x1 = x * (1.0 - y) * (1.0 - z);
                            points.push([1.0 - x1 - x2 - x3, x1, x2, x3]);
                            // reference tetrahedron has volume 1/6
                            weights.push(6.0 * wx * wy * wz);
                        }
                    }
                }
            }
        }
        Ok(Self { dim, degree, points, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn barycentric(&self) -> &[[f64; 4]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over the simplex spanned by `verts` (`dim + 1` points)
    /// with measure `measure`.
    pub fn integrate<F: Fn(&Point) -> f64>(&self, verts: &[Point], measure: f64, f: F) -> f64 {
        let mut acc = 0.0;
        for (lam, w) in self.points.iter().zip(&self.weights) {
            acc += w * f(&map_barycentric(verts, lam));
        }
        acc * measure
    }

    /// Calls `visit(x, w)` for every physical point and weight.
    pub fn visit<F: FnMut(&Point, f64)>(&self, verts: &[Point], measure: f64, mut visit: F) {
        for (lam, w) in self.points.iter().zip(&self.weights) {
            visit(&map_barycentric(verts, lam), w * measure);
        }
    }
}

pub fn map_barycentric(verts: &[Point], lam: &[f64; 4]) -> Point {
    let mut x = Point::zeros();
    for (v, l) in verts.iter().zip(lam) {
        x += v * *l;
    }
    x
}

/// Measure of a `k`-simplex embedded in 3-space (`k = verts.len() - 1`).
pub fn simplex_measure(verts: &[Point]) -> f64 {
    match verts.len() {
        1 => 1.0,
        2 => (verts[1] - verts[0]).norm(),
        3 => 0.5 * (verts[1] - verts[0]).cross(&(verts[2] - verts[0])).norm(),
        4 => (verts[1] - verts[0]).dot(&(verts[2] - verts[0]).cross(&(verts[3] - verts[0]))).abs() / 6.0,
        _ => panic!("unsupported simplex with {} vertices", verts.len()),
    }
}

/// Composite rule for integrands singular at one point of a closed simplex.
#[derive(Debug, Clone)]
pub struct GradedRule {
    facet: SimplexRule,
    radial: (Vec<f64>, Vec<f64>),
    /// Rule on the innermost radial interval, `(nodes, weights, exponent)`.
    tip: Option<(Vec<f64>, Vec<f64>, f64)>,
    depth: usize,
}

impl GradedRule {
    /// `dim` is the simplex dimension; `degree` the exactness of each
    /// fragment rule; `depth` the number of geometric halvings toward the
    /// singular point.
    pub fn new(dim: usize, degree: usize, depth: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::UnsupportedQuadrature(format!("graded rule in dimension {dim}")));
        }
        let facet = SimplexRule::new(dim - 1, degree)?;
        let radial = gauss_legendre_unit(points_for_degree(degree));
        Ok(Self { facet, radial, tip: None, depth })
    }

    /// Declares that the radial integrand behaves like `t^beta` times a
    /// smooth function at the apex (`beta > -1`, Jacobian included); the
    /// innermost interval then uses a Gauss–Jacobi rule for that weight.
    pub fn with_tip_exponent(mut self, beta: f64) -> Result<Self> {
        if !(beta > -1.0) {
            return Err(Error::UnsupportedQuadrature(format!("tip exponent {beta} is not integrable")));
        }
        let (t, w) = gauss_jacobi_unit(self.radial.0.len(), beta);
        // reflect the (1 - s)^beta rule to s^beta
        let nodes: Vec<f64> = t.iter().rev().map(|t| 1.0 - t).collect();
        let weights: Vec<f64> = w.iter().rev().copied().collect();
        self.tip = Some((nodes, weights, beta));
        Ok(self)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Integrates `f` over the simplex `verts` of measure `measure`, grading
    /// toward `z`, which must lie in the closed simplex with barycentric
    /// coordinates `z_bary`.
    pub fn integrate<F: Fn(&Point) -> f64>(
        &self,
        verts: &[Point],
        measure: f64,
        z: &Point,
        z_bary: &[f64],
        f: F,
    ) -> f64 {
        let mut acc = 0.0;
        self.visit(verts, measure, z, z_bary, |x, w| acc += w * f(x));
        acc
    }

    /// Point visitor behind [`GradedRule::integrate`].
    ///
    /// Each cone with apex `z` over a facet `F` contributes
    /// `n |cone| int_0^1 t^(n-1) avg_F f(z + t (y - z)) dt`, with the radial
    /// integral split at `2^-k`, `k = 1..=depth`.
    pub fn visit<F: FnMut(&Point, f64)>(
        &self,
        verts: &[Point],
        measure: f64,
        z: &Point,
        z_bary: &[f64],
        mut visit: F,
    ) {
        let n = verts.len() - 1;
        let mut facet = [Point::zeros(); 3];
        let (tn, tw) = &self.radial;
        for (i, &mu) in z_bary.iter().enumerate().take(n + 1) {
            // cones over facets containing z are empty
            if mu <= 1e-14 {
                continue;
            }
            let mut k = 0;
            for (j, v) in verts.iter().enumerate() {
                if j != i {
                    facet[k] = *v;
                    k += 1;
                }
            }
            let facet_points: Vec<Point> =
                self.facet.barycentric().iter().map(|lam| map_barycentric(&facet[..n], lam)).collect();
            let cone_measure = mu * measure;
            let mut emit = |t: f64, wt: f64| {
                let radial_w = cone_measure * wt * (n as f64) * t.powi(n as i32 - 1);
                for (y, w) in facet_points.iter().zip(self.facet.weights()) {
                    visit(&(z + (y - z) * t), radial_w * w);
                }
            };
            let mut hi = 1.0;
            for _ in 0..self.depth {
                let lo = hi * 0.5;
                let len = hi - lo;
                for (s, ws) in tn.iter().zip(tw) {
                    emit(lo + s * len, ws * len);
                }
                hi = lo;
            }
            match &self.tip {
                // int_0^hi g = hi sum_k w_k s_k^-beta g(hi s_k)
                Some((sn, sw, beta)) => {
                    for (s, ws) in sn.iter().zip(sw) {
                        emit(hi * s, hi * ws * s.powf(-beta));
                    }
                }
                None => {
                    for (s, ws) in tn.iter().zip(tw) {
                        emit(hi * s, hi * ws);
                    }
                }
            }
        }
    }
}

/// Element integration that switches to the graded rule on elements whose
/// closure contains one of the registered singular points.
#[derive(Debug, Clone)]
pub struct ElementQuadrature {
    rule: SimplexRule,
    graded: GradedRule,
    singular: Vec<Point>,
}

impl ElementQuadrature {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        Ok(Self {
            rule: SimplexRule::new(dim, degree)?,
            graded: GradedRule::new(dim, degree.min(8), 12)?,
            singular: Vec::new(),
        })
    }

    /// Registers points where integrands may be singular.
    pub fn with_singular_points(mut self, points: &[Point]) -> Self {
        self.singular = points.to_vec();
        self
    }

    pub fn with_graded(mut self, graded: GradedRule) -> Self {
        self.graded = graded;
        self
    }

    pub fn rule(&self) -> &SimplexRule {
        &self.rule
    }

    pub fn integrate<F: Fn(&Point) -> f64>(&self, mesh: &SimplicialMesh, t: usize, f: F) -> f64 {
        let mut acc = 0.0;
        self.visit(mesh, t, |x, w| acc += w * f(x));
        acc
    }

    /// Whether element `t` is integrated with the graded rule.
    pub fn is_singular(&self, mesh: &SimplicialMesh, t: usize) -> bool {
        self.singular_point(mesh, t).is_some()
    }

    fn singular_point(&self, mesh: &SimplicialMesh, t: usize) -> Option<(Point, [f64; 4])> {
        self.singular.iter().find_map(|z| {
            let bary = mesh.barycentric(t, z);
            bary[..=mesh.dim()].iter().all(|&b| b >= -1e-12).then_some((*z, bary))
        })
    }

    pub fn visit<F: FnMut(&Point, f64)>(&self, mesh: &SimplicialMesh, t: usize, visit: F) {
        let verts = mesh.element_points(t);
        let verts = &verts[..mesh.dim() + 1];
        let vol = mesh.geometry(t).volume;
        match self.singular_point(mesh, t) {
            Some((z, bary)) => self.graded.visit(verts, vol, &z, &bary[..=mesh.dim()], visit),
            None => self.rule.visit(verts, vol, visit),
        }
    }
}
