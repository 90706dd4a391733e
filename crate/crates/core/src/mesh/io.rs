use std::io::{BufRead, Write};

use super::SimplicialMesh;
use crate::{Error, Point, Result};

/// Writes `n #vertices #elements`, then one vertex per line and one
/// zero-based element per line. Floats use the shortest round-trip form.
pub fn write_mesh<W: Write>(mesh: &SimplicialMesh, mut out: W) -> Result<()> {
    let n = mesh.dim();
    writeln!(out, "{} {} {}", n, mesh.n_vertices(), mesh.n_elements())?;
    for p in mesh.vertices() {
        let coords: Vec<String> = (0..n).map(|k| format!("{}", p[k])).collect();
        writeln!(out, "{}", coords.join(" "))?;
    }
    for t in 0..mesh.n_elements() {
        let ids: Vec<String> = mesh.element_vertices(t).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", ids.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mesh<R: BufRead>(input: R) -> Result<SimplicialMesh> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|s| (i + 1, s)))
        .filter(|r| r.as_ref().map_or(true, |(_, s)| !s.trim().is_empty()));

    let mut next = |what: &str| -> Result<(usize, String)> {
        lines.next().transpose()?.ok_or_else(|| Error::MeshFormat(format!("unexpected end of input, expected {what}")))
    };

    let (ln, header) = next("header")?;
    let head: Vec<usize> = parse_fields(ln, &header)?;
    let [n, nv, ne] = head[..] else {
        return Err(Error::MeshFormat(format!("line {ln}: header needs three integers")));
    };
    if !(2..=3).contains(&n) {
        return Err(Error::MeshFormat(format!("line {ln}: unsupported dimension {n}")));
    }

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, line) = next("a vertex")?;
        let c: Vec<f64> = parse_fields(ln, &line)?;
        if c.len() != n {
            return Err(Error::MeshFormat(format!("line {ln}: expected {n} coordinates")));
        }
        vertices.push(Point::new(c[0], c[1], if n == 3 { c[2] } else { 0.0 }));
    }
    let mut elements = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (ln, line) = next("an element")?;
        let ids: Vec<usize> = parse_fields(ln, &line)?;
        if ids.len() != n + 1 {
            return Err(Error::MeshFormat(format!("line {ln}: expected {} vertex indices", n + 1)));
        }
        elements.push(ids);
    }
    SimplicialMesh::new(n, vertices, &elements)
}

fn parse_fields<T: std::str::FromStr>(ln: usize, line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|_| Error::MeshFormat(format!("line {ln}: cannot parse `{tok}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_initial_mesh, refine, DomainPreset};

    #[test]
    fn round_trip_preserves_coordinates_bitwise() {
        for preset in [DomainPreset::LShape2d, DomainPreset::LShape3d] {
            let m = refine(&build_initial_mesh(preset), &[0, 2]).unwrap();
            let mut buf = Vec::new();
            write_mesh(&m, &mut buf).unwrap();
            let back = read_mesh(buf.as_slice()).unwrap();
            assert_eq!(back.vertices(), m.vertices());
            for t in 0..m.n_elements() {
                assert_eq!(back.element_vertices(t), m.element_vertices(t));
            }
        }
    }

    #[test]
    fn golden_unit_square() {
        let m = build_initial_mesh(DomainPreset::UnitSquare);
        let mut buf = Vec::new();
        write_mesh(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "2 4 2\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 2 3\n");
    }

    #[test]
    fn malformed_input_reports_line() {
        let err = read_mesh("2 3 1\n0 0\n1 x\n0 1\n0 1 2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(read_mesh("2 3 1\n0 0\n".as_bytes()).is_err());
    }
}
