use super::{refine, SimplicialMesh};
use crate::{Error, Point, Result};

/// Ordered interior source points with their separation distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    points: Vec<Point>,
    separation: f64,
}

impl SourceSet {
    /// Validates `points` against `mesh` and computes the separation.
    pub fn new(mesh: &SimplicialMesh, points: Vec<Point>) -> Result<Self> {
        let separation = source_distance(mesh, &points)?;
        Ok(Self { points, separation })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Minimum of the boundary distance and the pairwise distances.
    pub fn separation(&self) -> f64 {
        self.separation
    }
}

/// Separation of the source set: boundary distance of the sources combined
/// with their pairwise distances.
pub fn source_distance(mesh: &SimplicialMesh, points: &[Point]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptySources);
    }
    check_distinct(points)?;
    let scale = mesh.h_max();
    let mut d = f64::INFINITY;
    for (i, z) in points.iter().enumerate() {
        if mesh.locate(z).is_err() {
            return Err(Error::SourceNotInterior(i));
        }
        let db = boundary_distance(mesh, z);
        if db <= 1e-12 * scale {
            return Err(Error::SourceNotInterior(i));
        }
        d = d.min(db);
        for w in &points[i + 1..] {
            d = d.min((z - w).norm());
        }
    }
    Ok(d)
}

/// Smallest over sources of the largest vertex distance of element `t`.
pub fn source_reach(mesh: &SimplicialMesh, t: usize, points: &[Point]) -> Result<f64> {
    mesh.check_element(t)?;
    if points.is_empty() {
        return Err(Error::EmptySources);
    }
    let verts = mesh.element_points(t);
    Ok(points
        .iter()
        .map(|z| verts[..=mesh.dim()].iter().map(|v| (v - z).norm()).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min))
}

/// Elements whose vertex patch meets two or more sources.
pub fn patch_source_violations(mesh: &SimplicialMesh, points: &[Point]) -> Vec<usize> {
    let mut count = vec![0u32; mesh.n_elements()];
    let mut seen = vec![usize::MAX; mesh.n_elements()];
    for (s, z) in points.iter().enumerate() {
        for t in mesh.elements_containing(z) {
            for &v in mesh.element_vertices(t) {
                for &e in mesh.vertex_star(v) {
                    if seen[e] != s {
                        seen[e] = s;
                        count[e] += 1;
                    }
                }
            }
        }
    }
    (0..mesh.n_elements()).filter(|&t| count[t] >= 2).collect()
}

/// Bisects violating elements until every patch holds at most one source.
pub fn ensure_source_separation(mesh: &SimplicialMesh, points: &[Point]) -> Result<SimplicialMesh> {
    check_distinct(points)?;
    let mut current = mesh.clone();
    for _ in 0..200 {
        let bad = patch_source_violations(&current, points);
        if bad.is_empty() {
            return Ok(current);
        }
        current = refine(&current, &bad)?;
    }
    Err(Error::NonConforming("source separation did not terminate".into()))
}

fn check_distinct(points: &[Point]) -> Result<()> {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if points[i] == points[j] {
                return Err(Error::CoincidentSources(i, j));
            }
        }
    }
    Ok(())
}

fn boundary_distance(mesh: &SimplicialMesh, z: &Point) -> f64 {
    mesh.boundary_faces()
        .map(|f| {
            let p = mesh.face_points(f);
            if mesh.dim() == 2 {
                point_segment_distance(z, &p[0], &p[1])
            } else {
                point_triangle_distance(z, &p[0], &p[1], &p[2])
            }
        })
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn point_segment_distance(x: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let t = ((x - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (x - (a + t * ab)).norm()
}

/// Exact distance via Voronoi-region classification of the closest point.
pub(crate) fn point_triangle_distance(x: &Point, a: &Point, b: &Point, c: &Point) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = x - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = x - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return point_segment_distance(x, a, b);
    }
    let cp = x - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return point_segment_distance(x, a, c);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return point_segment_distance(x, b, c);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (x - (a + v * ab + w * ac)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_initial_mesh, uniform_refine, DomainPreset};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p2(x: f64, y: f64) -> Point {
        Point::new(x, y, 0.0)
    }

    #[test]
    fn separation_examples() {
        let m = build_initial_mesh(DomainPreset::UnitSquare);
        assert_relative_eq!(source_distance(&m, &[p2(0.5, 0.5)]).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(source_distance(&m, &[p2(0.25, 0.25), p2(0.75, 0.75)]).unwrap(), 0.25, epsilon = 1e-15);
        let five = [p2(0.25, 0.25), p2(0.25, 0.75), p2(0.75, 0.25), p2(0.75, 0.75), p2(0.5, 0.5)];
        assert_relative_eq!(source_distance(&m, &five).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn separation_errors() {
        let m = build_initial_mesh(DomainPreset::UnitSquare);
        assert!(matches!(source_distance(&m, &[]), Err(Error::EmptySources)));
        assert!(matches!(source_distance(&m, &[p2(1.5, 0.5)]), Err(Error::SourceNotInterior(0))));
        assert!(matches!(source_distance(&m, &[p2(0.2, 0.2), p2(1.0, 0.5)]), Err(Error::SourceNotInterior(1))));
        assert!(matches!(source_distance(&m, &[p2(0.2, 0.2), p2(0.2, 0.2)]), Err(Error::CoincidentSources(0, 1))));
        let l = build_initial_mesh(DomainPreset::LShape2d);
        // the removed quadrant is outside
        assert!(source_distance(&l, &[p2(0.5, -0.5)]).is_err());
        assert_relative_eq!(source_distance(&l, &[p2(0.5, 0.5)]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn separation_in_three_dimensions() {
        let m = build_initial_mesh(DomainPreset::UnitCube);
        let z = [Point::new(0.25, 0.25, 0.25), Point::new(0.75, 0.75, 0.75)];
        assert_relative_eq!(source_distance(&m, &z).unwrap(), 0.25, epsilon = 1e-15);
        let l = build_initial_mesh(DomainPreset::LShape3d);
        // nearest boundary is the re-entrant face x = 0 or y = 0 at distance 0.5
        assert_relative_eq!(source_distance(&l, &[Point::new(-0.5, 0.5, 0.5)]).unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn reach_examples() {
        let v = vec![p2(0.0, 0.0), p2(1.0, 0.0), p2(0.0, 1.0)];
        let m = SimplicialMesh::new(2, v, &[vec![0, 1, 2]]).unwrap();
        assert_relative_eq!(source_reach(&m, 0, &[p2(0.0, 0.0)]).unwrap(), 1.0);
        let eq = vec![p2(0.0, 0.0), p2(1.0, 0.0), p2(0.5, 3f64.sqrt() / 2.0)];
        let me = SimplicialMesh::new(2, eq, &[vec![0, 1, 2]]).unwrap();
        let c = p2(0.5, 3f64.sqrt() / 6.0);
        assert_relative_eq!(source_reach(&me, 0, &[c]).unwrap(), 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert!(source_reach(&me, 0, &[]).is_err());
        assert!(source_reach(&me, 3, &[c]).is_err());
    }

    #[test]
    fn two_sources_in_one_triangle_get_separated() {
        let m = build_initial_mesh(DomainPreset::UnitSquare);
        let z = [p2(0.6, 0.2), p2(0.8, 0.3)];
        assert!(!patch_source_violations(&m, &z).is_empty());
        let out = ensure_source_separation(&m, &z).unwrap();
        assert!(patch_source_violations(&out, &z).is_empty());
        assert!(brute_force_ok(&out, &z));
    }

    #[test]
    fn single_source_mesh_is_unchanged() {
        let m = uniform_refine(&build_initial_mesh(DomainPreset::UnitSquare));
        let out = ensure_source_separation(&m, &[p2(0.3, 0.4)]).unwrap();
        assert_eq!(out.n_elements(), m.n_elements());
    }

    #[test]
    fn cube_sources_are_separated() {
        let m = build_initial_mesh(DomainPreset::UnitCube);
        let z = [Point::new(0.25, 0.25, 0.25), Point::new(0.75, 0.75, 0.75)];
        let out = ensure_source_separation(&m, &z).unwrap();
        assert!(brute_force_ok(&out, &z));
    }

    #[test]
    fn identical_sources_are_rejected() {
        let m = build_initial_mesh(DomainPreset::UnitSquare);
        assert!(matches!(
            ensure_source_separation(&m, &[p2(0.3, 0.3), p2(0.3, 0.3)]),
            Err(Error::CoincidentSources(0, 1))
        ));
    }

    // independent check: patch by vertex sharing, membership by barycentrics
    fn brute_force_ok(m: &SimplicialMesh, z: &[Point]) -> bool {
        (0..m.n_elements()).all(|t| {
            let vt = m.element_vertices(t);
            let patch: Vec<usize> = (0..m.n_elements())
                .filter(|&s| m.element_vertices(s).iter().any(|v| vt.contains(v)))
                .collect();
            z.iter().filter(|p| patch.iter().any(|&s| m.contains(s, p, 1e-12))).count() <= 1
        })
    }

    proptest! {
        #[test]
        fn triangle_distance_matches_sampling(
            x in prop::array::uniform3(-1.0f64..2.0),
        ) {
            let a = Point::new(0.0, 0.0, 0.0);
            let b = Point::new(1.0, 0.2, 0.1);
            let c = Point::new(0.3, 0.9, -0.2);
            let x = Point::new(x[0], x[1], x[2]);
            let d = point_triangle_distance(&x, &a, &b, &c);
            let n = 200;
            let mut best = f64::INFINITY;
            for i in 0..=n {
                for j in 0..=n - i {
                    let (s, t) = (i as f64 / n as f64, j as f64 / n as f64);
                    best = best.min((x - (a + s * (b - a) + t * (c - a))).norm());
                }
            }
            prop_assert!(d <= best + 1e-12);
            prop_assert!(best - d <= 1e-2);
        }

        #[test]
        fn extra_source_never_increases_reach(x in 0.05f64..0.95, y in 0.05f64..0.95) {
            let m = uniform_refine(&build_initial_mesh(DomainPreset::UnitSquare));
            let z1 = [p2(0.5, 0.5)];
            let z2 = [p2(0.5, 0.5), p2(x, y)];
            for t in 0..m.n_elements() {
                prop_assert!(source_reach(&m, t, &z2).unwrap() <= source_reach(&m, t, &z1).unwrap());
            }
        }
    }
}
