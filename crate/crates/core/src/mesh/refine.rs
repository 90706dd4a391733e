use std::collections::HashMap;

use super::{longest_edge, SimplicialMesh, Simplex};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefineStats {
    pub bisections: usize,
    /// Largest number of successive bisections applied to one input element.
    pub max_depth: u32,
}

/// Result of a refinement step together with the data needed to transfer
/// nodal functions onto the new mesh.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub mesh: SimplicialMesh,
    /// For vertex `n_old + k`, the edge whose midpoint it is, in creation order.
    pub new_vertex_parents: Vec<(usize, usize)>,
    pub stats: RefineStats,
}

impl Refinement {
    /// Interpolates a nodal vector from the parent mesh onto the refined one.
    pub fn prolongate(&self, values: &[f64]) -> Vec<f64> {
        let mut out = values.to_vec();
        out.reserve(self.new_vertex_parents.len());
        for &(a, b) in &self.new_vertex_parents {
            out.push(0.5 * (out[a] + out[b]));
        }
        out
    }
}

/// Bisects every element of `marked` at least once, then closes the mesh
/// by longest-edge bisection until no hanging vertex remains.
pub fn refine(mesh: &SimplicialMesh, marked: &[usize]) -> Result<SimplicialMesh> {
    Ok(refine_with_history(mesh, marked)?.mesh)
}

pub fn refine_with_history(mesh: &SimplicialMesh, marked: &[usize]) -> Result<Refinement> {
    for &t in marked {
        mesh.check_element(t)?;
    }
    let mut work = Bisector::new(mesh);
    let mut queue: Vec<usize> = marked.to_vec();
    queue.sort_unstable();
    queue.dedup();
    for &t in &queue {
        work.pending[t] = true;
    }
    // process in ascending order
    queue.reverse();
    while let Some(t) = queue.pop() {
        if work.pending[t] || work.has_hanging_edge(t) {
            work.bisect(t, &mut queue);
        }
    }
    let stats = RefineStats {
        bisections: work.bisections,
        max_depth: work
            .elements
            .iter()
            .zip(&work.root_generation)
            .map(|(s, g)| s.generation - g)
            .max()
            .unwrap_or(0),
    };
    let parents = work.parents;
    let new_mesh = SimplicialMesh::from_simplices(mesh.dim(), work.coords, work.elements)
        .map_err(|e| Error::NonConforming(format!("refinement produced an invalid mesh: {e}")))?;
    Ok(Refinement { mesh: new_mesh, new_vertex_parents: parents, stats })
}

struct Bisector {
    dim: usize,
    coords: Vec<Point>,
    elements: Vec<Simplex>,
    stars: Vec<Vec<usize>>,
    midpoints: HashMap<(usize, usize), usize>,
    parents: Vec<(usize, usize)>,
    pending: Vec<bool>,
    root_generation: Vec<u32>,
    bisections: usize,
}

impl Bisector {
    fn new(mesh: &SimplicialMesh) -> Self {
        let stars = (0..mesh.n_vertices()).map(|v| mesh.vertex_star(v).to_vec()).collect();
        Self {
            dim: mesh.dim(),
            coords: mesh.vertices().to_vec(),
            elements: mesh.elements().to_vec(),
            stars,
            midpoints: HashMap::new(),
            parents: Vec::new(),
            pending: vec![false; mesh.n_elements()],
            root_generation: mesh.elements().iter().map(|s| s.generation).collect(),
            bisections: 0,
        }
    }

    fn has_hanging_edge(&self, t: usize) -> bool {
        if self.midpoints.is_empty() {
            return false;
        }
        let v = &self.elements[t].vertices;
        for i in 0..=self.dim {
            for j in i + 1..=self.dim {
                let key = (v[i].min(v[j]), v[i].max(v[j]));
                if self.midpoints.contains_key(&key) {
                    return true;
                }
            }
        }
        false
    }

    fn bisect(&mut self, t: usize, queue: &mut Vec<usize>) {
        let s = self.elements[t];
        let [i, j] = s.refinement_edge;
        let (i, j) = (i as usize, j as usize);
        let (a, b) = (s.vertices[i], s.vertices[j]);
        let key = (a.min(b), a.max(b));
        let m = match self.midpoints.get(&key) {
            Some(&m) => m,
            None => {
                let m = self.coords.len();
                self.coords.push(0.5 * (self.coords[a] + self.coords[b]));
                self.stars.push(Vec::new());
                self.parents.push(key);
                self.midpoints.insert(key, m);
                m
            }
        };

        let mut first = s;
        first.vertices[j] = m;
        first.generation += 1;
        first.refinement_edge = longest_edge(self.dim, &self.coords, &first.vertices);
        let mut second = s;
        second.vertices[i] = m;
        second.generation += 1;
        second.refinement_edge = longest_edge(self.dim, &self.coords, &second.vertices);

        let t2 = self.elements.len();
        self.elements[t] = first;
        self.elements.push(second);
        self.pending[t] = false;
        self.pending.push(false);
        self.root_generation.push(self.root_generation[t]);
        self.bisections += 1;

        self.stars[b].retain(|&e| e != t);
        self.stars[b].push(t2);
        self.stars[m].push(t);
        self.stars[m].push(t2);
        for &v in &s.vertices[..=self.dim] {
            if v != a && v != b {
                self.stars[v].push(t2);
            }
        }

        // elements still holding the bisected edge now carry a hanging vertex
        for &e in &self.stars[a] {
            if self.stars[b].contains(&e) {
                queue.push(e);
            }
        }
        queue.push(t);
        queue.push(t2);
    }
}
