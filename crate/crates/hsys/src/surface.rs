//! Doubled-surface construction and mesh export.
//!
//! Assembles the map u = (lambda a, lambda b, lambda^2 phi) on the annulus,
//! glues a second copy carrying (lambda a, lambda b, -lambda^2 phi) with
//! opposite orientation along both boundary circles, and exports the closed
//! torus-topology mesh as Wavefront OBJ (optionally binary PLY). Since phi
//! vanishes on the boundary, the two sheets agree there and the seam is an
//! exact weld: seam vertices are shared, never duplicated.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::minimizer::Solution;

/// Where a mesh vertex came from in the gluing construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Interior node of the original sheet.
    Original,
    /// Interior node of the oppositely oriented copy.
    Mirrored,
    /// Welded boundary-circle node shared by both sheets.
    Seam,
}

/// Closed quad mesh produced by the doubling construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Counter-clockwise quads, 0-based vertex indices.
    pub faces: Vec<[usize; 4]>,
    pub provenance: Vec<Provenance>,
}

impl SurfaceMesh {
    /// V - E + F with E counted from undirected face edges.
    pub fn euler_characteristic(&self) -> i64 {
        let v = self.vertices.len() as i64;
        let f = self.faces.len() as i64;
        let e = self.undirected_edge_counts().len() as i64;
        v - e + f
    }

    /// Multiplicity of every undirected edge over all faces.
    pub fn undirected_edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for q in &self.faces {
            for s in 0..4 {
                let (a, b) = (q[s], q[(s + 1) % 4]);
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// True when every edge bounds exactly two faces and the two incident
    /// faces traverse it in opposite directions (consistent orientation).
    pub fn is_closed_oriented(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut directed = HashMap::new();
        for q in &self.faces {
            for s in 0..4 {
                *directed.entry((q[s], q[(s + 1) % 4])).or_insert(0usize) += 1;
            }
        }
        self.undirected_edge_counts().values().all(|&c| c == 2)
            && directed.values().all(|&c| c == 1)
    }
}

/// The nodewise map u = (lambda a, lambda b, lambda^2 phi).
pub fn assemble_map(sol: &Solution) -> Array2<[f64; 3]> {
    assemble_fields(&sol.pair.a, &sol.pair.b, &sol.eval.phi, sol.eval.lambda)
}

pub(crate) fn assemble_fields(
    a: &ScalarField,
    b: &ScalarField,
    phi: &ScalarField,
    lambda: f64,
) -> Array2<[f64; 3]> {
    let l2 = lambda * lambda;
    let mut u = Array2::from_elem(a.values.dim(), [0.0; 3]);
    for ((uv, (av, bv)), pv) in u
        .iter_mut()
        .zip(a.values.iter().zip(b.values.iter()))
        .zip(phi.values.iter())
    {
        *uv = [lambda * av, lambda * bv, l2 * pv];
    }
    u
}

/// Default ceiling on the pre-weld seam gap max |2 lambda^2 phi| at the rings.
pub const SEAM_TOL: f64 = 1e-10;

/// Glue the annulus image to its oppositely oriented mirror copy along both
/// boundary circles. The result is a closed surface of torus topology:
/// V = (2 n_r - 2) n_theta, F = 2 (n_r - 1) n_theta, E = 2F, so V - E + F = 0.
pub fn double_surface(sol: &Solution) -> Result<SurfaceMesh> {
    double_fields(
        &sol.pair.a,
        &sol.pair.b,
        &sol.eval.phi,
        sol.eval.lambda,
        SEAM_TOL,
    )
}

/// Field-level doubling; `tol` bounds the admissible pre-weld seam gap.
pub fn double_fields(
    a: &ScalarField,
    b: &ScalarField,
    phi: &ScalarField,
    lambda: f64,
    tol: f64,
) -> Result<SurfaceMesh> {
    let grid = &a.grid;
    let (n_r, n_theta) = (grid.n_r(), grid.n_theta());
    let u = assemble_fields(a, b, phi, lambda);

    // the sheets differ by the sign of the third coordinate, so the gap
    // between them at the rings is twice its boundary magnitude
    let mut gap: f64 = 0.0;
    for j in 0..n_theta {
        gap = gap.max(2.0 * u[[0, j]][2].abs());
        gap = gap.max(2.0 * u[[n_r - 1, j]][2].abs());
    }
    if gap > tol {
        return Err(Error::SeamGap { gap, tol });
    }

    // sheet-one vertices keep grid order; the mirror contributes interior
    // rings only, with both boundary rings welded to sheet one
    let mut vertices = Vec::with_capacity((2 * n_r - 2) * n_theta);
    let mut provenance = Vec::with_capacity((2 * n_r - 2) * n_theta);
    for i in 0..n_r {
        let seam = i == 0 || i == n_r - 1;
        for j in 0..n_theta {
            vertices.push(u[[i, j]]);
            provenance.push(if seam { Provenance::Seam } else { Provenance::Original });
        }
    }
    let mirror_base = n_r * n_theta;
    for i in 1..n_r - 1 {
        for j in 0..n_theta {
            let [x, y, z] = u[[i, j]];
            vertices.push([x, y, -z]);
            provenance.push(Provenance::Mirrored);
        }
    }

    let original = |i: usize, j: usize| i * n_theta + j % n_theta;
    let mirrored = |i: usize, j: usize| {
        if i == 0 || i == n_r - 1 {
            original(i, j)
        } else {
            mirror_base + (i - 1) * n_theta + j % n_theta
        }
    };
    let mut faces = Vec::with_capacity(2 * (n_r - 1) * n_theta);
    for i in 0..n_r - 1 {
        for j in 0..n_theta {
            faces.push([
                original(i, j),
                original(i + 1, j),
                original(i + 1, j + 1),
                original(i, j + 1),
            ]);
        }
    }
    // reversed winding on the copy keeps the directed seam edges opposed
    for i in 0..n_r - 1 {
        for j in 0..n_theta {
            faces.push([
                mirrored(i, j),
                mirrored(i, j + 1),
                mirrored(i + 1, j + 1),
                mirrored(i + 1, j),
            ]);
        }
    }

    Ok(SurfaceMesh {
        vertices,
        faces,
        provenance,
    })
}

/// Write a Wavefront OBJ file: ASCII, LF line endings, 1-based indices,
/// 17 significant digits. Quads by default; `triangulate` splits each into
/// two triangles along the (0,2) diagonal.
pub fn export_obj(mesh: &SurfaceMesh, path: &Path, triangulate: bool) -> Result<()> {
    if mesh.vertices.is_empty() || mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        write!(out, "v {:.16e} {:.16e} {:.16e}\n", v[0], v[1], v[2])?;
    }
    for q in &mesh.faces {
        if triangulate {
            write!(out, "f {} {} {}\n", q[0] + 1, q[1] + 1, q[2] + 1)?;
            write!(out, "f {} {} {}\n", q[0] + 1, q[2] + 1, q[3] + 1)?;
        } else {
            write!(out, "f {} {} {} {}\n", q[0] + 1, q[1] + 1, q[2] + 1, q[3] + 1)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Minimal OBJ reader for round-trip checks: v and f records only, with
/// triangle pairs from `triangulate` left as triangles padded by repetition.
pub fn import_obj(path: &Path) -> Result<SurfaceMesh> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for slot in &mut v {
                    *slot = tok
                        .next()
                        .ok_or_else(|| Error::Format("short vertex record".into()))?
                        .parse()
                        .map_err(|e| Error::Format(format!("bad vertex: {e}")))?;
                }
                vertices.push(v);
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        t.split('/')
                            .next()
                            .unwrap_or(t)
                            .parse::<usize>()
                            .map_err(|e| Error::Format(format!("bad face: {e}")))
                    })
                    .collect::<Result<_>>()?;
                let q = match idx.len() {
                    3 => [idx[0] - 1, idx[1] - 1, idx[2] - 1, idx[2] - 1],
                    4 => [idx[0] - 1, idx[1] - 1, idx[2] - 1, idx[3] - 1],
                    n => return Err(Error::Format(format!("face with {n} vertices"))),
                };
                faces.push(q);
            }
            _ => {}
        }
    }
    if vertices.is_empty() || faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let provenance = vec![Provenance::Original; vertices.len()];
    Ok(SurfaceMesh {
        vertices,
        faces,
        provenance,
    })
}

/// Write a binary little-endian PLY file (double-precision vertices).
pub fn export_ply(mesh: &SurfaceMesh, path: &Path, triangulate: bool) -> Result<()> {
    if mesh.vertices.is_empty() || mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let n_faces = if triangulate {
        2 * mesh.faces.len()
    } else {
        mesh.faces.len()
    };
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        n_faces
    )?;
    for v in &mesh.vertices {
        for c in v {
            out.write_all(&c.to_le_bytes())?;
        }
    }
    let mut emit = |idx: &[usize]| -> Result<()> {
        out.write_all(&[idx.len() as u8])?;
        for &i in idx {
            out.write_all(&(i as i32).to_le_bytes())?;
        }
        Ok(())
    };
    for q in &mesh.faces {
        if triangulate {
            emit(&[q[0], q[1], q[2]])?;
            emit(&[q[0], q[2], q[3]])?;
        } else {
            emit(&q[..])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariance::{FieldPair, SymmetryOrder};
    use crate::energy::evaluate;
    use crate::grid::{build_grid, GridSpec};
    use crate::minimizer::{minimize, MinimizeConfig};

    fn small_solution() -> Solution {
        let mut cfg = MinimizeConfig::new(
            GridSpec::new(0.5, 33, 24).unwrap(),
            SymmetryOrder::new(3).unwrap(),
        );
        cfg.seed = 1;
        cfg.max_iters = 40;
        cfg.grad_tol = 1e-12;
        minimize(&cfg).unwrap()
    }

    #[test]
    fn boundary_third_coordinate_vanishes() {
        let sol = small_solution();
        let u = assemble_map(&sol);
        let n_r = sol.pair.a.grid.n_r();
        // the per-mode solves have exact zero boundary rows; only inverse
        // FFT roundoff, scaled by lambda^2, survives the reassembly
        let tol = 1e-13 * (1.0 + sol.eval.lambda * sol.eval.lambda);
        for j in 0..sol.pair.a.grid.n_theta() {
            assert!(u[[0, j]][2].abs() < tol);
            assert!(u[[n_r - 1, j]][2].abs() < tol);
        }
    }

    #[test]
    fn rescaled_pair_maps_to_the_same_surface() {
        let sol = small_solution();
        let u = assemble_map(&sol);
        let scaled = sol.pair.scale(3.0);
        let eval = evaluate(&scaled).unwrap();
        let u2 = assemble_fields(&scaled.a, &scaled.b, &eval.phi, eval.lambda);
        for (p, q) in u.iter().zip(u2.iter()) {
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() < 1e-12 * (1.0 + p[c].abs()));
            }
        }
    }

    #[test]
    fn doubled_mesh_is_a_closed_torus() {
        let sol = small_solution();
        let mesh = double_surface(&sol).unwrap();
        let g = &sol.pair.a.grid;
        let (n_r, n_theta) = (g.n_r(), g.n_theta());
        assert_eq!(mesh.vertices.len(), (2 * n_r - 2) * n_theta);
        assert_eq!(mesh.faces.len(), 2 * (n_r - 1) * n_theta);
        assert_eq!(mesh.euler_characteristic(), 0);
        assert!(mesh.is_closed_oriented());
        let seams = mesh
            .provenance
            .iter()
            .filter(|p| **p == Provenance::Seam)
            .count();
        assert_eq!(seams, 2 * n_theta);
    }

    #[test]
    fn seam_gap_above_tolerance_is_refused() {
        let g = build_grid(GridSpec::new(0.5, 17, 16).unwrap()).unwrap();
        let p = FieldPair::coordinates(&g);
        // nonzero boundary values violate the Dirichlet precondition
        let bad_phi = ScalarField::from_fn(&g, |r, _| r);
        match double_fields(&p.a, &p.b, &bad_phi, 1.0, 1e-10) {
            Err(Error::SeamGap { gap, tol }) => {
                assert!(gap > tol);
            }
            other => panic!("expected SeamGap, got {other:?}"),
        }
    }

    #[test]
    fn obj_round_trip_preserves_the_mesh() {
        let sol = small_solution();
        let mesh = double_surface(&sol).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.obj");
        export_obj(&mesh, &path, false).unwrap();
        let back = import_obj(&path).unwrap();
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert_eq!(back.faces, mesh.faces);
        // 17 significant digits round-trip f64 exactly
        for (v, w) in mesh.vertices.iter().zip(back.vertices.iter()) {
            assert_eq!(v, w);
        }
        let text = std::fs::read(&path).unwrap();
        assert!(!text.contains(&b'\r'));
    }

    #[test]
    fn triangulated_export_splits_quads() {
        let sol = small_solution();
        let mesh = double_surface(&sol).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh_tri.obj");
        export_obj(&mesh, &path, true).unwrap();
        let back = import_obj(&path).unwrap();
        assert_eq!(back.faces.len(), 2 * mesh.faces.len());
    }

    #[test]
    fn empty_mesh_is_rejected_without_writing() {
        let mesh = SurfaceMesh {
            vertices: vec![],
            faces: vec![],
            provenance: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.obj");
        assert!(matches!(
            export_obj(&mesh, &path, false),
            Err(Error::EmptyMesh)
        ));
        assert!(!path.exists());
        assert!(matches!(
            export_ply(&mesh, &path, false),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn ply_export_writes_expected_sizes() {
        let sol = small_solution();
        let mesh = double_surface(&sol).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.ply");
        export_ply(&mesh, &path, false).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes
            .windows(11)
            .position(|w| w == b"end_header\n")
            .unwrap()
            + 11;
        let expected =
            mesh.vertices.len() * 24 + mesh.faces.len() * (1 + 16);
        assert_eq!(bytes.len() - header_end, expected);
    }
}
