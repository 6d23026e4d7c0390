//! Isosurface extraction by marching cubes, with OBJ export.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::tables::{EDGE_TABLE, TRI_TABLE};
use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::render::RadianceField;

/// Corner offsets of a cell, in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pair joined by each edge, in table order.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Triangles whose area is at or below this are dropped.
const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Indexed triangle mesh. Triangles wind counter-clockwise seen from outside.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: [usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        0.5 * math::norm(math::cross(math::sub(b, a), math::sub(c, a)))
    }

    /// Volume enclosed by a closed mesh, positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                math::dot(a, math::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// True when every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        counts.values().all(|&c| c == 2)
    }

    /// ASCII OBJ: `v x y z` lines, then 1-based `f i j k` lines.
    pub fn write_obj(&self, out: &mut impl Write) -> Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        self.write_obj(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Extracts the `{σ = iso}` surface of `field` from an `n³` lattice of
/// points spanning `[-1, 1]³`, welding vertices shared between cells.
/// The region with `σ > iso` is treated as the inside.
pub fn marching_cubes(field: &impl RadianceField, n: usize, iso: f64) -> Result<Mesh> {
    if n < 8 {
        return Err(Error::config(format!("marching cubes needs n ≥ 8, got {n}")));
    }
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
    let index = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
    let mut values = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                values.push(field.query([coord(i), coord(j), coord(k)]).sigma);
            }
        }
    }

    let mut mesh = Mesh::default();
    // Welded vertex per lattice edge, keyed by its lower endpoint and axis.
    let mut welded: HashMap<(usize, u8), usize> = HashMap::new();
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            for k in 0..n - 1 {
                let lattice = CORNERS.map(|o| [i + o[0], j + o[1], k + o[2]]);
                let v = lattice.map(|c| values[index(c[0], c[1], c[2])]);
                let case = (0..8).filter(|&c| v[c] < iso).fold(0usize, |acc, c| acc | 1 << c);
                let crossing = EDGE_TABLE[case];
                if crossing == 0 {
                    continue;
                }
                let mut edge_vertex = [usize::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if crossing & (1 << e) == 0 {
                        continue;
                    }
                    let (lo, hi) = if lattice[a] <= lattice[b] { (a, b) } else { (b, a) };
                    let axis = (0..3).find(|&d| lattice[lo][d] != lattice[hi][d]).unwrap() as u8;
                    let key = (index(lattice[lo][0], lattice[lo][1], lattice[lo][2]), axis);
                    edge_vertex[e] = *welded.entry(key).or_insert_with(|| {
                        let (v0, v1) = (v[lo], v[hi]);
                        let s = if (v1 - v0).abs() > f64::EPSILON {
                            ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0)
                        } else {
                            0.5
                        };
                        let p0 = lattice[lo].map(coord);
                        let p1 = lattice[hi].map(coord);
                        mesh.vertices.push([0, 1, 2].map(|d| p0[d] + s * (p1[d] - p0[d])));
                        mesh.vertices.len() - 1
                    });
                }
                for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                    let t = [edge_vertex[tri[0] as usize], edge_vertex[tri[1] as usize], edge_vertex[tri[2] as usize]];
                    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || mesh.triangle_area(t) <= MIN_TRIANGLE_AREA {
                        continue;
                    }
                    mesh.triangles.push(t);
                }
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldSample;
    use crate::scenes::AnalyticScene;

    #[test]
    fn tables_agree_with_corner_signs() {
        for case in 0..256usize {
            let mut crossing = 0u16;
            for (e, &[a, b]) in EDGES.iter().enumerate() {
                if (case >> a) & 1 != (case >> b) & 1 {
                    crossing |= 1 << e;
                }
            }
            assert_eq!(EDGE_TABLE[case], crossing, "case {case}");
            let mut used = 0u16;
            let row = TRI_TABLE[case];
            let len = row.iter().position(|&x| x < 0).unwrap_or(16);
            assert_eq!(len % 3, 0);
            assert!(row[len..].iter().all(|&x| x == -1));
            for &e in &row[..len] {
                used |= 1 << e;
            }
            assert_eq!(used, crossing, "case {case}");
        }
    }

    #[test]
    fn below_iso_everywhere_gives_an_empty_mesh() {
        let empty = |_p: Vec3| FieldSample::EMPTY;
        assert!(marching_cubes(&empty, 16, 0.5).unwrap().is_empty());
        assert!(marching_cubes(&empty, 4, 0.5).is_err());
    }

    #[test]
    fn sphere_vertices_lie_on_the_isosurface() {
        let s = AnalyticScene::sphere();
        let n = 64;
        let mesh = marching_cubes(&s, n, s.kappa / 2.0).unwrap();
        assert!(!mesh.is_empty());
        let tol = 2.0 / n as f64;
        for v in &mesh.vertices {
            let r = math::norm(*v);
            assert!((r - 0.5).abs() <= tol, "radius {r}");
        }
        assert!(mesh.is_watertight());
        let ball = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        let vol = mesh.signed_volume();
        assert!(vol > 0.0 && (vol - ball).abs() / ball < 0.02, "{vol}");
        for t in &mesh.triangles {
            assert!(t.iter().all(|&i| i < mesh.vertices.len()));
            assert!(mesh.triangle_area(*t) > MIN_TRIANGLE_AREA);
        }
        assert!(mesh.vertices.iter().flatten().all(|c| (-1.0..=1.0).contains(c)));
    }

    #[test]
    fn vertex_count_grows_quadratically() {
        let s = AnalyticScene::sphere();
        let a = marching_cubes(&s, 64, s.kappa / 2.0).unwrap().vertices.len() as f64;
        let b = marching_cubes(&s, 128, s.kappa / 2.0).unwrap().vertices.len() as f64;
        let ratio = b / a;
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn torus_is_closed_with_genus_one() {
        let s = AnalyticScene::torus();
        let mesh = marching_cubes(&s, 48, s.kappa / 2.0).unwrap();
        assert!(mesh.is_watertight());
        let mut edges = std::collections::HashSet::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let euler = mesh.vertices.len() as i64 - edges.len() as i64 + mesh.triangles.len() as i64;
        assert_eq!(euler, 0);
    }

    #[test]
    fn obj_output_is_one_based() {
        let mesh = Mesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        let mut buf = Vec::new();
        mesh.write_obj(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    }
}
