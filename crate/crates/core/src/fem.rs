//! Continuous piecewise-linear finite elements.

use std::sync::Arc;

use crate::mesh::{InteriorSide, SimplicialMesh};
use crate::quadrature::ElementQuadrature;
use crate::{Error, Point, Result};

/// Nodal P1 space on a mesh; one dof per vertex, Dirichlet dofs on the
/// boundary vertices.
#[derive(Debug, Clone)]
pub struct P1Space {
    mesh: Arc<SimplicialMesh>,
    dirichlet: Vec<usize>,
    free: Vec<usize>,
    free_index: Vec<Option<usize>>,
}

impl P1Space {
    pub fn new(mesh: Arc<SimplicialMesh>) -> Self {
        let mut dirichlet = Vec::new();
        let mut free = Vec::new();
        let mut free_index = vec![None; mesh.n_vertices()];
        for v in 0..mesh.n_vertices() {
            if mesh.is_boundary_vertex(v) {
                dirichlet.push(v);
            } else {
                free_index[v] = Some(free.len());
                free.push(v);
            }
        }
        Self { mesh, dirichlet, free, free_index }
    }

    pub fn mesh(&self) -> &Arc<SimplicialMesh> {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_vertices()
    }

    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    /// Position of dof `v` among the free dofs.
    pub fn free_index(&self, v: usize) -> Option<usize> {
        self.free_index[v]
    }

    pub fn function(&self, values: Vec<f64>) -> FeFunction {
        FeFunction::new(self.mesh.clone(), values)
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate<F: Fn(&Point) -> f64>(&self, f: F) -> FeFunction {
        self.function(self.mesh.vertices().iter().map(f).collect())
    }

    /// Nodal values of `f` on the Dirichlet dofs, zero elsewhere.
    pub fn boundary_values<F: Fn(&Point) -> f64>(&self, f: F) -> Vec<f64> {
        let mut g = vec![0.0; self.n_dofs()];
        for &v in &self.dirichlet {
            g[v] = f(self.mesh.vertex(v));
        }
        g
    }
}

/// Square sparse matrix in compressed row storage with sorted columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut offsets = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last = None;
        for &(i, j, v) in &sorted {
            assert!(i < n && j < n, "triplet ({i}, {j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                offsets[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Self { n, offsets, cols, vals }
    }

    /// Zero matrix with the vertex-adjacency pattern of `mesh`.
    fn mesh_pattern(mesh: &SimplicialMesh) -> Self {
        let n = mesh.n_vertices();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut cols = Vec::new();
        let mut row = Vec::new();
        for v in 0..n {
            row.clear();
            for &t in mesh.vertex_star(v) {
                row.extend_from_slice(mesh.element_vertices(t));
            }
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(&row);
            offsets.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        Self { n, offsets, cols, vals }
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.cols[self.offsets[i]..self.offsets[i + 1]];
        row.binary_search(&j).ok().map(|k| self.offsets[i] + k)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j).expect("entry inside the sparsity pattern");
        self.vals[k] += v;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.vals[k])
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for k in self.offsets[i]..self.offsets[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// `max |a_ij - a_ji| / max |a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut defect: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                scale = scale.max(v.abs());
                defect = defect.max((v - self.get(j, i)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            defect / scale
        }
    }

    /// Submatrix with rows `rows` and columns `cols`, where `col_index` maps
    /// a global column to its position in the submatrix.
    fn extract(&self, rows: &[usize], col_index: &[Option<usize>], n_cols: usize) -> SubMatrix {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for &i in rows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                if let Some(jj) = col_index[j] {
                    cols.push(jj);
                    vals.push(a);
                }
            }
            offsets.push(cols.len());
        }
        SubMatrix { n_rows: rows.len(), n_cols, offsets, cols, vals }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                d[(i, j)] = a;
            }
        }
        d
    }
}

/// Rectangular block of a [`CsrMatrix`].
#[derive(Debug, Clone)]
struct SubMatrix {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SubMatrix {
    fn into_square(self) -> CsrMatrix {
        debug_assert_eq!(self.n_rows, self.n_cols);
        CsrMatrix { n: self.n_rows, offsets: self.offsets, cols: self.cols, vals: self.vals }
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| (self.offsets[i]..self.offsets[i + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum())
            .collect()
    }
}

/// `A_ij = int grad phi_i . grad phi_j`, exact for P1.
pub fn assemble_stiffness(space: &P1Space) -> CsrMatrix {
    let mesh = space.mesh();
    let mut a = CsrMatrix::mesh_pattern(mesh);
    let n = mesh.dim() + 1;
    for t in 0..mesh.n_elements() {
        let g = mesh.geometry(t);
        let vs = mesh.element_vertices(t);
        for i in 0..n {
            for j in 0..n {
                a.add(vs[i], vs[j], g.volume * g.grads[i].dot(&g.grads[j]));
            }
        }
    }
    a
}

/// Consistent P1 mass matrix, `|T| (1 + delta_ij) / ((n+1)(n+2))` per element.
pub fn assemble_mass(space: &P1Space) -> CsrMatrix {
    let mesh = space.mesh();
    let mut m = CsrMatrix::mesh_pattern(mesh);
    let n = mesh.dim() + 1;
    let denom = (n * (n + 1)) as f64;
    for t in 0..mesh.n_elements() {
        let vol = mesh.geometry(t).volume;
        let vs = mesh.element_vertices(t);
        for i in 0..n {
            for j in 0..n {
                let f = if i == j { 2.0 } else { 1.0 };
                m.add(vs[i], vs[j], vol * f / denom);
            }
        }
    }
    m
}

/// Load vector of `sum_z u_z delta_z`: entry `i` is `sum_z u_z phi_i(z)`.
pub fn assemble_point_source_load(space: &P1Space, points: &[Point], controls: &[f64]) -> Result<Vec<f64>> {
    let mesh = space.mesh();
    let mut b = vec![0.0; space.n_dofs()];
    for (z, &u) in points.iter().zip(controls) {
        let t = mesh.locate(z)?;
        let lam = mesh.barycentric(t, z);
        for (k, &v) in mesh.element_vertices(t).iter().enumerate() {
            b[v] += u * lam[k];
        }
    }
    Ok(b)
}

/// `int g phi_i` by element quadrature.
pub fn assemble_l2_load<F: Fn(&Point) -> f64>(space: &P1Space, quad: &ElementQuadrature, g: F) -> Vec<f64> {
    let mesh = space.mesh();
    let n = mesh.dim() + 1;
    let mut b = vec![0.0; space.n_dofs()];
    for t in 0..mesh.n_elements() {
        let mut local = [0.0; 4];
        quad.visit(mesh, t, |x, w| {
            let lam = mesh.barycentric(t, x);
            let gx = w * g(x);
            for k in 0..n {
                local[k] += gx * lam[k];
            }
        });
        for (k, &v) in mesh.element_vertices(t).iter().enumerate() {
            b[v] += local[k];
        }
    }
    b
}

/// Free-dof system after eliminating Dirichlet values.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub matrix: CsrMatrix,
    /// Free-dof right-hand side including the lifting term.
    pub rhs: Vec<f64>,
    /// `-A[free, dirichlet] g`.
    pub lifting: Vec<f64>,
}

/// Restricts `matrix x = rhs` to the free dofs, moving the prescribed
/// values `boundary_values[d]` (read on Dirichlet dofs only) to the rhs.
pub fn apply_dirichlet(space: &P1Space, matrix: &CsrMatrix, rhs: &[f64], boundary_values: &[f64]) -> ReducedSystem {
    let ops = DirichletSolver::new(space, matrix);
    let lifting = ops.lifting(boundary_values);
    let rhs = space.free_dofs().iter().zip(&lifting).map(|(&v, l)| rhs[v] + l).collect();
    ReducedSystem { matrix: ops.free_block.clone(), rhs, lifting }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// Iteration cap; `None` means ten times the system size.
    pub max_iter: Option<usize>,
    /// When set, a run whose true residual stagnates below this relative
    /// level returns its iterate instead of failing.
    pub floor_tol: Option<f64>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-12, max_iter: None, floor_tol: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// True residual `|b - A x| / |b|` of the returned iterate.
    pub relative_residual: f64,
    /// Stopped on stagnation above `rel_tol` (only with `floor_tol`).
    pub stagnated: bool,
}

/// `b - A x` with each row accumulated in compensated arithmetic, so the
/// evaluation adds no rounding beyond the final sum.
pub fn accurate_residual(matrix: &CsrMatrix, x: &[f64], rhs: &[f64]) -> Vec<f64> {
    (0..matrix.n())
        .map(|i| {
            let (cols, vals) = matrix.row(i);
            let mut s = rhs[i];
            let mut c = 0.0;
            for (&j, &a) in cols.iter().zip(vals) {
                let p = -a * x[j];
                let pe = (-a).mul_add(x[j], -p);
                let t = s + p;
                let bp = t - s;
                c += (s - (t - bp)) + (p - bp) + pe;
                s = t;
            }
            s + c
        })
        .collect()
}

/// Replacement checks without progress before giving up.
const STAGNATION_CHECKS: usize = 40;
/// Replacement checks without progress before accepting an iterate that
/// already meets `floor_tol`.
const FLOOR_CHECKS: usize = 4;

/// Jacobi-preconditioned conjugate gradients with periodic residual
/// replacement. Convergence is decided on the true residual; the run stops
/// early when the true residual no longer decreases.
pub fn solve_spd(matrix: &CsrMatrix, rhs: &[f64], guess: Option<&[f64]>, opts: CgOptions) -> Result<(Vec<f64>, CgReport)> {
    let n = matrix.n();
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], CgReport::default()));
    }
    let cap = opts.max_iter.unwrap_or((10 * n).max(50));
    let inv_diag: Vec<f64> = matrix.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = guess.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);

    let mut r = accurate_residual(matrix, &x, rhs);
    let target = opts.rel_tol * b_norm;
    let mut res = norm(&r);
    if res <= target {
        return Ok((x, CgReport { iterations: 0, relative_residual: res / b_norm, stagnated: false }));
    }
    let mut best = res;
    let mut stalled = 0;
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut since_replace = 0;
    let mut iterations = cap;
    for it in 1..=cap {
        matrix.matvec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            iterations = it;
            break;
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        since_replace += 1;
        let recursive = norm(&r);
        if since_replace >= 50 || recursive <= target {
            r = accurate_residual(matrix, &x, rhs);
            since_replace = 0;
            res = norm(&r);
            if res <= target {
                return Ok((x, CgReport { iterations: it, relative_residual: res / b_norm, stagnated: false }));
            }
            if res < 0.9 * best {
                best = res;
                stalled = 0;
            } else {
                stalled += 1;
                let at_floor = opts.floor_tol.is_some_and(|f| res <= f * b_norm);
                if at_floor && stalled >= FLOOR_CHECKS {
                    return Ok((x, CgReport { iterations: it, relative_residual: res / b_norm, stagnated: true }));
                }
                if stalled >= STAGNATION_CHECKS {
                    iterations = it;
                    break;
                }
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let r = accurate_residual(matrix, &x, rhs);
    Err(Error::SolverFailure { iterations, residual: norm(&r) / b_norm })
}

/// Repeated Dirichlet solves with one operator: keeps the free block and
/// the free-by-Dirichlet coupling.
#[derive(Debug, Clone)]
pub struct DirichletSolver {
    free: Vec<usize>,
    dirichlet: Vec<usize>,
    n_dofs: usize,
    free_block: CsrMatrix,
    coupling: SubMatrix,
    options: CgOptions,
}

impl DirichletSolver {
    pub fn new(space: &P1Space, matrix: &CsrMatrix) -> Self {
        let n = space.n_dofs();
        let mut dir_index = vec![None; n];
        for (k, &d) in space.dirichlet_dofs().iter().enumerate() {
            dir_index[d] = Some(k);
        }
        let free_index: Vec<Option<usize>> = (0..n).map(|v| space.free_index(v)).collect();
        let free_block = matrix.extract(space.free_dofs(), &free_index, space.free_dofs().len()).into_square();
        let coupling = matrix.extract(space.free_dofs(), &dir_index, space.dirichlet_dofs().len());
        Self {
            free: space.free_dofs().to_vec(),
            dirichlet: space.dirichlet_dofs().to_vec(),
            n_dofs: n,
            free_block,
            coupling,
            options: CgOptions::default(),
        }
    }

    pub fn with_options(mut self, options: CgOptions) -> Self {
        self.options = options;
        self
    }

    pub fn free_block(&self) -> &CsrMatrix {
        &self.free_block
    }

    /// `-A[free, dirichlet] g` for nodal values `g` (read on Dirichlet dofs).
    pub fn lifting(&self, g: &[f64]) -> Vec<f64> {
        let gd: Vec<f64> = self.dirichlet.iter().map(|&d| g[d]).collect();
        self.coupling.matvec(&gd).into_iter().map(|v| -v).collect()
    }

    /// Solves with full-length load `load`, Dirichlet values from
    /// `boundary` (zero when `None`) and an optional full-length guess.
    pub fn solve(&self, load: &[f64], boundary: Option<&[f64]>, guess: Option<&[f64]>) -> Result<(Vec<f64>, CgReport)> {
        let mut rhs: Vec<f64> = self.free.iter().map(|&v| load[v]).collect();
        if let Some(g) = boundary {
            for (r, l) in rhs.iter_mut().zip(self.lifting(g)) {
                *r += l;
            }
        }
        let x0: Option<Vec<f64>> = guess.map(|g| self.free.iter().map(|&v| g[v]).collect());
        let (xf, report) = solve_spd(&self.free_block, &rhs, x0.as_deref(), self.options)?;
        let mut x = vec![0.0; self.n_dofs];
        if let Some(g) = boundary {
            for &d in &self.dirichlet {
                x[d] = g[d];
            }
        }
        for (&v, xv) in self.free.iter().zip(xf) {
            x[v] = xv;
        }
        Ok((x, report))
    }
}

/// A P1 function given by its nodal values.
#[derive(Debug, Clone)]
pub struct FeFunction {
    mesh: Arc<SimplicialMesh>,
    values: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<SimplicialMesh>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), mesh.n_vertices(), "one value per vertex");
        Self { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<SimplicialMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at `x`, attributed to the lowest-index containing element.
    pub fn evaluate(&self, x: &Point) -> Result<f64> {
        let t = self.mesh.locate(x)?;
        Ok(self.evaluate_in(t, x))
    }

    /// Value at `x` using the affine representation on element `t`.
    pub fn evaluate_in(&self, t: usize, x: &Point) -> f64 {
        let lam = self.mesh.barycentric(t, x);
        self.mesh.element_vertices(t).iter().zip(&lam).map(|(&v, l)| l * self.values[v]).sum()
    }

    pub fn gradient(&self, t: usize) -> Point {
        let g = self.mesh.geometry(t);
        self.mesh
            .element_vertices(t)
            .iter()
            .enumerate()
            .map(|(k, &v)| g.grads[k] * self.values[v])
            .sum()
    }
}

/// `nu+ . (grad v|T+ - grad v|T-)`, constant along the side.
pub fn gradient_jump(f: &FeFunction, side: &InteriorSide) -> f64 {
    side.normal.dot(&(f.gradient(side.plus) - f.gradient(side.minus)))
}

/// [`gradient_jump`] by face index; boundary faces are rejected.
pub fn gradient_jump_on_face(f: &FeFunction, face: usize) -> Result<f64> {
    let side = f.mesh().interior_side(face).ok_or(Error::BoundarySide(face))?;
    Ok(gradient_jump(f, &side))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
