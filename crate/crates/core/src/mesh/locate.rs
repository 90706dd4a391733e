use super::SimplicialMesh;
use crate::{Error, Point, Result};

/// Uniform bucket grid over element bounding boxes for repeated point
/// location on a fixed mesh.
#[derive(Debug, Clone)]
pub struct PointLocator {
    lo: Point,
    cell: Point,
    shape: [usize; 3],
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl PointLocator {
    pub fn new(mesh: &SimplicialMesh) -> Self {
        let dim = mesh.dim();
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for p in mesh.vertices() {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let per_axis = ((mesh.n_elements() as f64).powf(1.0 / dim as f64).ceil() as usize).max(1);
        let mut shape = [1usize; 3];
        let mut cell = Point::repeat(1.0);
        for k in 0..dim {
            shape[k] = per_axis;
            let w = (hi[k] - lo[k]).max(f64::MIN_POSITIVE);
            cell[k] = w / per_axis as f64;
        }
        let n_cells = shape.iter().product::<usize>();

        let ranges: Vec<[(usize, usize); 3]> = (0..mesh.n_elements())
            .map(|t| {
                let pts = mesh.element_points(t);
                let mut r = [(0usize, 0usize); 3];
                for k in 0..dim {
                    let (a, b) = pts[..=dim]
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[k]), b.max(p[k])));
                    let pad = 1e-10 * cell[k];
                    r[k] = (Self::bucket(lo[k], cell[k], shape[k], a - pad), Self::bucket(lo[k], cell[k], shape[k], b + pad));
                }
                r
            })
            .collect();

        let index = |i: usize, j: usize, k: usize| (i * shape[1] + j) * shape[2] + k;
        let mut counts = vec![0usize; n_cells + 1];
        for r in &ranges {
            for i in r[0].0..=r[0].1 {
                for j in r[1].0..=r[1].1 {
                    for k in r[2].0..=r[2].1 {
                        counts[index(i, j, k) + 1] += 1;
                    }
                }
            }
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut items = vec![0usize; offsets[n_cells]];
        for (t, r) in ranges.iter().enumerate() {
            for i in r[0].0..=r[0].1 {
                for j in r[1].0..=r[1].1 {
                    for k in r[2].0..=r[2].1 {
                        let c = index(i, j, k);
                        items[fill[c]] = t;
                        fill[c] += 1;
                    }
                }
            }
        }
        Self { lo, cell, shape, offsets, items }
    }

    fn bucket(lo: f64, cell: f64, n: usize, x: f64) -> usize {
        (((x - lo) / cell).floor().max(0.0) as usize).min(n - 1)
    }

    /// Elements whose bounding box may contain `x`, in increasing order.
    pub fn candidates(&self, x: &Point) -> &[usize] {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            if self.shape[k] > 1 {
                let rel = (x[k] - self.lo[k]) / self.cell[k];
                if rel < -1e-9 || rel > self.shape[k] as f64 + 1e-9 {
                    return &[];
                }
                idx[k] = Self::bucket(self.lo[k], self.cell[k], self.shape[k], x[k]);
            }
        }
        let c = (idx[0] * self.shape[1] + idx[1]) * self.shape[2] + idx[2];
        &self.items[self.offsets[c]..self.offsets[c + 1]]
    }

    /// Same contract as [`SimplicialMesh::locate`]: the lowest-index element
    /// whose closure contains `x`.
    pub fn locate(&self, mesh: &SimplicialMesh, x: &Point) -> Result<usize> {
        self.candidates(x)
            .iter()
            .copied()
            .find(|&t| mesh.contains(t, x, 1e-12))
            .ok_or(Error::OutsideMesh([x.x, x.y, x.z]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_initial_mesh, uniform_refine, DomainPreset};

    #[test]
    fn agrees_with_brute_force() {
        for preset in [DomainPreset::LShape2d, DomainPreset::UnitCube] {
            let mut m = build_initial_mesh(preset);
            for _ in 0..3 {
                m = uniform_refine(&m);
            }
            let loc = PointLocator::new(&m);
            let dim = m.dim();
            for i in 0..200 {
                let s = i as f64 * 0.6180339887498949;
                let mut x = Point::zeros();
                for k in 0..dim {
                    x[k] = -1.1 + 2.2 * ((s * (k as f64 + 1.3)).fract());
                }
                match m.locate(&x) {
                    Ok(t) => assert_eq!(loc.locate(&m, &x).unwrap(), t),
                    Err(_) => assert!(loc.locate(&m, &x).is_err()),
                }
            }
            for v in m.vertices() {
                assert_eq!(loc.locate(&m, v).unwrap(), m.locate(v).unwrap());
            }
        }
    }
}
