//! Conforming simplicial meshes in two and three dimensions.
//!
//! A [`SimplicialMesh`] is immutable: refinement produces a new value. All
//! topology (faces, element adjacency, vertex stars) and per-element
//! geometry (volume, diameter, barycentric gradients) is computed once at
//! construction.

mod io;
mod locate;
mod presets;
mod refine;
mod sources;

use std::collections::HashMap;

use nalgebra::{Matrix2, Matrix3, Vector2};

use crate::{Error, Point, Result};

pub use io::{read_mesh, write_mesh};
pub use locate::PointLocator;
pub use presets::{build_initial_mesh, uniform_refine, DomainPreset};
pub use refine::{refine, refine_with_history, RefineStats, Refinement};
pub use sources::{ensure_source_separation, patch_source_violations, source_distance, source_reach, SourceSet};

/// Marker for "no element" in face adjacency.
pub const NONE: usize = usize::MAX;

/// A simplex of the mesh: `dim + 1` vertex indices (unused slots hold
/// [`NONE`]), the local refinement edge and the bisection depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Simplex {
    pub vertices: [usize; 4],
    pub refinement_edge: [u8; 2],
    pub generation: u32,
}

/// An `(n-1)`-face with its one or two neighbouring elements.
#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub vertices: [usize; 3],
    pub elements: [usize; 2],
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.elements[1] != NONE
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub volume: f64,
    pub diameter: f64,
    pub inradius: f64,
    /// Gradients of the barycentric coordinates (constant on the element).
    pub grads: [Point; 4],
}

/// An interior side `S = T+ ∩ T-` with the unit normal pointing from `T+`
/// into `T-`.
#[derive(Debug, Clone, Copy)]
pub struct InteriorSide {
    pub face: usize,
    pub vertices: [usize; 3],
    pub plus: usize,
    pub minus: usize,
    pub normal: Point,
    pub measure: f64,
    pub diameter: f64,
}

#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    dim: usize,
    vertices: Vec<Point>,
    elements: Vec<Simplex>,
    geometry: Vec<ElementGeometry>,
    faces: Vec<Face>,
    element_faces: Vec<[usize; 4]>,
    vertex_star_offsets: Vec<usize>,
    vertex_star: Vec<usize>,
    on_boundary: Vec<bool>,
}

impl SimplicialMesh {
    /// Builds a mesh from raw connectivity. Elements are reoriented to have
    /// positive volume; refinement edges default to the longest edge.
    pub fn new(dim: usize, vertices: Vec<Point>, elements: &[Vec<usize>]) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::NonConforming(format!("unsupported dimension {dim}")));
        }
        let mut simplices = Vec::with_capacity(elements.len());
        for (t, e) in elements.iter().enumerate() {
            if e.len() != dim + 1 {
                return Err(Error::NonConforming(format!("element {t} has {} vertices", e.len())));
            }
            let mut vs = [NONE; 4];
            for (k, &v) in e.iter().enumerate() {
                if v >= vertices.len() {
                    return Err(Error::NonConforming(format!("element {t} references vertex {v}")));
                }
                vs[k] = v;
            }
            simplices.push(Simplex { vertices: vs, refinement_edge: [0, 1], generation: 0 });
        }
        Self::from_simplices(dim, vertices, simplices)
    }

    pub(crate) fn from_simplices(dim: usize, vertices: Vec<Point>, mut elements: Vec<Simplex>) -> Result<Self> {
        let mut geometry = Vec::with_capacity(elements.len());
        for (t, s) in elements.iter_mut().enumerate() {
            let mut g = element_geometry(dim, &vertices, &s.vertices);
            if g.volume < 0.0 {
                s.vertices.swap(0, 1);
                g = element_geometry(dim, &vertices, &s.vertices);
            }
            if !(g.volume > 0.0) {
                return Err(Error::DegenerateElement(t));
            }
            s.refinement_edge = longest_edge(dim, &vertices, &s.vertices);
            geometry.push(g);
        }

        let n_local = dim + 1;
        let mut face_ids: HashMap<[usize; 3], usize> = HashMap::with_capacity(elements.len() * n_local);
        let mut faces: Vec<Face> = Vec::new();
        let mut element_faces = vec![[NONE; 4]; elements.len()];
        for (t, s) in elements.iter().enumerate() {
            for i in 0..n_local {
                let key = face_key(dim, &s.vertices, i);
                let id = *face_ids.entry(key).or_insert_with(|| {
                    faces.push(Face { vertices: key, elements: [NONE, NONE] });
                    faces.len() - 1
                });
                let f = &mut faces[id];
                if f.elements[0] == NONE {
                    f.elements[0] = t;
                } else if f.elements[1] == NONE {
                    f.elements[1] = t;
                } else {
                    return Err(Error::NonConforming(format!("face {key:?} is shared by more than two elements")));
                }
                element_faces[t][i] = id;
            }
        }

        let mut on_boundary = vec![false; vertices.len()];
        for f in faces.iter().filter(|f| !f.is_interior()) {
            for &v in &f.vertices[..dim] {
                on_boundary[v] = true;
            }
        }

        let mut counts = vec![0usize; vertices.len() + 1];
        for s in &elements {
            for &v in &s.vertices[..n_local] {
                counts[v + 1] += 1;
            }
        }
        for i in 0..vertices.len() {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut star = vec![0usize; offsets[vertices.len()]];
        let mut fill = counts;
        for (t, s) in elements.iter().enumerate() {
            for &v in &s.vertices[..n_local] {
                star[fill[v]] = t;
                fill[v] += 1;
            }
        }

        Ok(Self {
            dim,
            vertices,
            elements,
            geometry,
            faces,
            element_faces,
            vertex_star_offsets: offsets,
            vertex_star: star,
            on_boundary,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    pub fn elements(&self) -> &[Simplex] {
        &self.elements
    }

    pub fn element(&self, t: usize) -> &Simplex {
        &self.elements[t]
    }

    pub fn element_vertices(&self, t: usize) -> &[usize] {
        &self.elements[t].vertices[..=self.dim]
    }

    pub fn element_points(&self, t: usize) -> [Point; 4] {
        let mut pts = [Point::zeros(); 4];
        for (k, &v) in self.element_vertices(t).iter().enumerate() {
            pts[k] = self.vertices[v];
        }
        pts
    }

    pub fn geometry(&self, t: usize) -> &ElementGeometry {
        &self.geometry[t]
    }

    pub fn check_element(&self, t: usize) -> Result<()> {
        if t < self.elements.len() {
            Ok(())
        } else {
            Err(Error::ElementOutOfRange { index: t, count: self.elements.len() })
        }
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Face ids of element `t`; entry `i` is the face opposite local vertex `i`.
    pub fn element_faces(&self, t: usize) -> &[usize] {
        &self.element_faces[t][..=self.dim]
    }

    pub fn boundary_faces(&self) -> impl Iterator<Item = &Face> {
        self.faces.iter().filter(|f| !f.is_interior())
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.on_boundary[v]
    }

    pub fn boundary_vertices(&self) -> &[bool] {
        &self.on_boundary
    }

    /// Elements having `v` as a vertex.
    pub fn vertex_star(&self, v: usize) -> &[usize] {
        &self.vertex_star[self.vertex_star_offsets[v]..self.vertex_star_offsets[v + 1]]
    }

    pub fn total_volume(&self) -> f64 {
        self.geometry.iter().map(|g| g.volume).sum()
    }

    pub fn h_min(&self) -> f64 {
        self.geometry.iter().map(|g| g.diameter).fold(f64::INFINITY, f64::min)
    }

    pub fn h_max(&self) -> f64 {
        self.geometry.iter().map(|g| g.diameter).fold(0.0, f64::max)
    }

    /// Worst ratio `h_T / r_T` over all elements.
    pub fn max_shape_ratio(&self) -> f64 {
        self.geometry.iter().map(|g| g.diameter / g.inradius).fold(0.0, f64::max)
    }

    pub fn face_points(&self, f: &Face) -> Vec<Point> {
        f.vertices[..self.dim].iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn face_measure(&self, f: &Face) -> f64 {
        crate::quadrature::simplex_measure(&self.face_points(f))
    }

    pub fn boundary_measure(&self) -> f64 {
        self.boundary_faces().map(|f| self.face_measure(f)).sum()
    }

    /// Interior side geometry for face `face`, or `None` on the boundary.
    pub fn interior_side(&self, face: usize) -> Option<InteriorSide> {
        let f = &self.faces[face];
        if !f.is_interior() {
            return None;
        }
        let pts = self.face_points(f);
        let (mut normal, measure) = if self.dim == 2 {
            let tau = pts[1] - pts[0];
            (Point::new(tau.y, -tau.x, 0.0), tau.norm())
        } else {
            let c = (pts[1] - pts[0]).cross(&(pts[2] - pts[0]));
            (c, 0.5 * c.norm())
        };
        normal /= normal.norm();
        let plus = f.elements[0];
        let opposite = self
            .element_vertices(plus)
            .iter()
            .find(|v| !f.vertices[..self.dim].contains(v))
            .copied()
            .expect("face vertices are a strict subset of the element");
        if normal.dot(&(self.vertices[opposite] - pts[0])) > 0.0 {
            normal = -normal;
        }
        let mut diameter: f64 = 0.0;
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                diameter = diameter.max((pts[a] - pts[b]).norm());
            }
        }
        Some(InteriorSide {
            face,
            vertices: f.vertices,
            plus,
            minus: f.elements[1],
            normal,
            measure,
            diameter,
        })
    }

    /// Every interior side, each listed once, in face order.
    pub fn interior_sides(&self) -> Vec<InteriorSide> {
        (0..self.faces.len()).filter_map(|f| self.interior_side(f)).collect()
    }

    /// Face ids of the interior sides of element `t`.
    pub fn element_interior_faces(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.element_faces(t).iter().copied().filter(move |&f| self.faces[f].is_interior())
    }

    /// `N_T`: all elements sharing at least a vertex with `t` (including `t`).
    pub fn patch(&self, t: usize) -> Result<Vec<usize>> {
        self.check_element(t)?;
        let mut out: Vec<usize> = self
            .element_vertices(t)
            .iter()
            .flat_map(|&v| self.vertex_star(v).iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// `N_T*`: `t` together with the elements sharing an interior side with it.
    pub fn patch_star(&self, t: usize) -> Result<Vec<usize>> {
        self.check_element(t)?;
        let mut out = vec![t];
        for f in self.element_faces(t) {
            let face = &self.faces[*f];
            if face.is_interior() {
                out.push(if face.elements[0] == t { face.elements[1] } else { face.elements[0] });
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Barycentric coordinates of `x` with respect to element `t`.
    pub fn barycentric(&self, t: usize, x: &Point) -> [f64; 4] {
        let g = &self.geometry[t];
        let v0 = self.vertices[self.elements[t].vertices[0]];
        let mut lam = [0.0; 4];
        let mut sum = 0.0;
        for i in 1..=self.dim {
            lam[i] = g.grads[i].dot(&(x - v0));
            sum += lam[i];
        }
        lam[0] = 1.0 - sum;
        lam
    }

    /// Whether `x` lies in the closed element `t` up to a relative tolerance.
    pub fn contains(&self, t: usize, x: &Point, tol: f64) -> bool {
        self.barycentric(t, x)[..=self.dim].iter().all(|&l| l >= -tol)
    }

    /// All elements whose closure contains `x`, in increasing index order.
    pub fn elements_containing(&self, x: &Point) -> Vec<usize> {
        (0..self.elements.len()).filter(|&t| self.contains(t, x, 1e-12)).collect()
    }

    /// The lowest-index element containing `x`.
    pub fn locate(&self, x: &Point) -> Result<usize> {
        (0..self.elements.len())
            .find(|&t| self.contains(t, x, 1e-12))
            .ok_or(Error::OutsideMesh([x.x, x.y, x.z]))
    }
}

fn face_key(dim: usize, verts: &[usize; 4], skip: usize) -> [usize; 3] {
    let mut key = [NONE; 3];
    let mut k = 0;
    for (i, &v) in verts[..=dim].iter().enumerate() {
        if i != skip {
            key[k] = v;
            k += 1;
        }
    }
    key[..dim].sort_unstable();
    key
}

/// Longest edge by length; near-ties go to the lexicographically smallest
/// sorted global vertex pair.
pub(crate) fn longest_edge(dim: usize, coords: &[Point], verts: &[usize; 4]) -> [u8; 2] {
    let mut best: Option<(f64, (usize, usize), [u8; 2])> = None;
    for i in 0..=dim {
        for j in i + 1..=dim {
            let (a, b) = (verts[i], verts[j]);
            let len2 = (coords[a] - coords[b]).norm_squared();
            let pair = (a.min(b), a.max(b));
            let better = match &best {
                None => true,
                Some((l, p, _)) => {
                    let tol = 1e-12 * l.max(len2);
                    if (len2 - l).abs() <= tol {
                        pair < *p
                    } else {
                        len2 > *l
                    }
                }
            };
            if better {
                best = Some((len2, pair, [i as u8, j as u8]));
            }
        }
    }
    best.map(|b| b.2).unwrap_or([0, 1])
}

pub(crate) fn element_geometry(dim: usize, coords: &[Point], verts: &[usize; 4]) -> ElementGeometry {
    let p: Vec<Point> = verts[..=dim].iter().map(|&v| coords[v]).collect();
    let mut grads = [Point::zeros(); 4];
    let (det, volume_factor) = if dim == 2 {
        let b = Matrix2::new(p[1].x - p[0].x, p[2].x - p[0].x, p[1].y - p[0].y, p[2].y - p[0].y);
        let det = b.determinant();
        if let Some(inv) = b.try_inverse() {
            for i in 0..2 {
                let row: Vector2<f64> = inv.row(i).transpose();
                grads[i + 1] = Point::new(row.x, row.y, 0.0);
            }
        }
        (det, 0.5)
    } else {
        let e1 = p[1] - p[0];
        let e2 = p[2] - p[0];
        let e3 = p[3] - p[0];
        let b = Matrix3::from_columns(&[e1, e2, e3]);
        let det = b.determinant();
        if let Some(inv) = b.try_inverse() {
            for i in 0..3 {
                grads[i + 1] = inv.row(i).transpose();
            }
        }
        (det, 1.0 / 6.0)
    };
    grads[0] = -(grads[1..=dim].iter().sum::<Point>());

    let mut diameter: f64 = 0.0;
    for i in 0..=dim {
        for j in i + 1..=dim {
            diameter = diameter.max((p[i] - p[j]).norm());
        }
    }
    let volume = det * volume_factor;
    let mut surface = 0.0;
    for skip in 0..=dim {
        let facet: Vec<Point> = (0..=dim).filter(|&k| k != skip).map(|k| p[k]).collect();
        surface += crate::quadrature::simplex_measure(&facet);
    }
    let inradius = dim as f64 * volume.abs() / surface;
    ElementGeometry { volume, diameter, inradius, grads }
}
