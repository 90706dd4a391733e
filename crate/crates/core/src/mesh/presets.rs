use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::{refine, SimplicialMesh};
use crate::{Error, Point};

/// Named polytopal domains with canonical structured seed meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainPreset {
    /// `(0,1)^2`, split along the diagonal into two triangles.
    UnitSquare,
    /// `(-1,1)^2 \ [0,1) x (-1,0]`, three diagonally split unit squares.
    LShape2d,
    /// `(0,1)^3`, Kuhn subdivision into six tetrahedra.
    UnitCube,
    /// `(-√2,√2)^2 x (0,1)` minus `[0,√2)^2 x (0,1)`, three Kuhn boxes.
    LShape3d,
}

impl DomainPreset {
    pub const ALL: [DomainPreset; 4] =
        [DomainPreset::UnitSquare, DomainPreset::LShape2d, DomainPreset::UnitCube, DomainPreset::LShape3d];

    pub fn name(self) -> &'static str {
        match self {
            DomainPreset::UnitSquare => "unit_square",
            DomainPreset::LShape2d => "lshape2d",
            DomainPreset::UnitCube => "unit_cube",
            DomainPreset::LShape3d => "lshape3d",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            DomainPreset::UnitSquare | DomainPreset::LShape2d => 2,
            DomainPreset::UnitCube | DomainPreset::LShape3d => 3,
        }
    }
}

impl fmt::Display for DomainPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainPreset::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::UnknownDomain(s.to_string()))
    }
}

pub fn build_initial_mesh(preset: DomainPreset) -> SimplicialMesh {
    match preset {
        DomainPreset::UnitSquare => square_cells([0.0, 1.0], [0.0, 1.0], &[(0, 0)]),
        DomainPreset::LShape2d => square_cells([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], &[(0, 0), (0, 1), (1, 1)]),
        DomainPreset::UnitCube => kuhn_boxes([0.0, 1.0], [0.0, 1.0], &[(0, 0)]),
        DomainPreset::LShape3d => {
            let s = 2f64.sqrt();
            kuhn_boxes([-s, 0.0, s], [-s, 0.0, s], &[(0, 0), (0, 1), (1, 0)])
        }
    }
}

/// One sweep of bisection on every element.
pub fn uniform_refine(mesh: &SimplicialMesh) -> SimplicialMesh {
    let all: Vec<usize> = (0..mesh.n_elements()).collect();
    refine(mesh, &all).expect("all element indices are valid")
}

struct VertexPool {
    ids: HashMap<[usize; 3], usize>,
    coords: Vec<Point>,
}

impl VertexPool {
    fn new() -> Self {
        Self { ids: HashMap::new(), coords: Vec::new() }
    }

    fn get(&mut self, key: [usize; 3], p: Point) -> usize {
        let coords = &mut self.coords;
        *self.ids.entry(key).or_insert_with(|| {
            coords.push(p);
            coords.len() - 1
        })
    }
}

fn square_cells<const N: usize>(xs: [f64; N], ys: [f64; N], cells: &[(usize, usize)]) -> SimplicialMesh {
    let mut pool = VertexPool::new();
    let mut elements = Vec::new();
    for &(i, j) in cells {
        let mut corner = |di: usize, dj: usize| {
            pool.get([i + di, j + dj, 0], Point::new(xs[i + di], ys[j + dj], 0.0))
        };
        let v00 = corner(0, 0);
        let v10 = corner(1, 0);
        let v11 = corner(1, 1);
        let v01 = corner(0, 1);
        elements.push(vec![v00, v10, v11]);
        elements.push(vec![v00, v11, v01]);
    }
    SimplicialMesh::new(2, pool.coords, &elements).expect("structured seed mesh is valid")
}

fn kuhn_boxes<const N: usize>(xs: [f64; N], ys: [f64; N], cells: &[(usize, usize)]) -> SimplicialMesh {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let zs = [0.0, 1.0];
    let mut pool = VertexPool::new();
    let mut elements = Vec::new();
    for &(i, j) in cells {
        for perm in PERMS {
            let mut idx = [0usize; 3];
            let mut tet = Vec::with_capacity(4);
            let push = |idx: [usize; 3], pool: &mut VertexPool| {
                let key = [i + idx[0], j + idx[1], idx[2]];
                pool.get(key, Point::new(xs[key[0]], ys[key[1]], zs[key[2]]))
            };
            tet.push(push(idx, &mut pool));
            for axis in perm {
                idx[axis] = 1;
                tet.push(push(idx, &mut pool));
            }
            elements.push(tet);
        }
    }
    SimplicialMesh::new(3, pool.coords, &elements).expect("structured seed mesh is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn seed_volumes() {
        assert_relative_eq!(build_initial_mesh(DomainPreset::UnitSquare).total_volume(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(build_initial_mesh(DomainPreset::LShape2d).total_volume(), 3.0, epsilon = 1e-14);
        assert_relative_eq!(build_initial_mesh(DomainPreset::UnitCube).total_volume(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(build_initial_mesh(DomainPreset::LShape3d).total_volume(), 6.0, epsilon = 1e-13);
    }

    #[test]
    fn kuhn_cube_has_six_tets_with_conforming_faces() {
        let m = build_initial_mesh(DomainPreset::UnitCube);
        assert_eq!(m.n_elements(), 6);
        assert_eq!(m.n_vertices(), 8);
        // every Kuhn tet contains the main diagonal
        for s in m.elements() {
            assert!(s.vertices.contains(&0));
        }
        // boundary: 6 square faces, 2 triangles each
        assert_eq!(m.boundary_faces().count(), 12);
        assert_relative_eq!(m.boundary_measure(), 6.0, epsilon = 1e-14);
        for f in m.faces() {
            if f.is_interior() {
                assert_ne!(f.elements[0], f.elements[1]);
            }
        }
    }

    #[test]
    fn lshape_boundaries() {
        let m2 = build_initial_mesh(DomainPreset::LShape2d);
        assert_relative_eq!(m2.boundary_measure(), 8.0, epsilon = 1e-14);
        let m3 = build_initial_mesh(DomainPreset::LShape3d);
        let s = 2f64.sqrt();
        // top and bottom: 2 * 3 * s^2, sides: perimeter 8 s times height 1
        assert_relative_eq!(m3.boundary_measure(), 6.0 * s * s + 8.0 * s, epsilon = 1e-12);
    }

    #[test]
    fn names_round_trip() {
        for d in DomainPreset::ALL {
            assert_eq!(d.name().parse::<DomainPreset>().unwrap(), d);
        }
        assert!("torus".parse::<DomainPreset>().is_err());
    }
}
