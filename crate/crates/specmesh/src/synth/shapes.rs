//! Procedural template meshes: subdivided icospheres, plus exact-count
//! spheres obtained by decimating the next-larger icosphere.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::Mesh;
use crate::sampling::decimate;

/// Vertex counts per subdivision level: 12, 42, 162, 642, 2562, ...
pub fn icosphere_vertex_count(level: usize) -> usize {
    10 * 4usize.pow(level as u32) + 2
}

/// Unit-radius icosphere scaled by `radius`, centered at the origin.
pub fn icosphere(level: usize, radius: f64) -> Mesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    normalize_all(&mut verts);
    for _ in 0..level {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for (k, &(a, b)) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].iter().enumerate() {
                let key = if a < b { (a, b) } else { (b, a) };
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let pa = verts[a as usize];
                    let pb = verts[b as usize];
                    let mut m = [
                        0.5 * (pa[0] + pb[0]),
                        0.5 * (pa[1] + pb[1]),
                        0.5 * (pa[2] + pb[2]),
                    ];
                    normalize(&mut m);
                    verts.push(m);
                    (verts.len() - 1) as u32
                });
            }
            next_faces.push([f[0], mid[0], mid[2]]);
            next_faces.push([f[1], mid[1], mid[0]]);
            next_faces.push([f[2], mid[2], mid[1]]);
            next_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = next_faces;
    }
    for v in &mut verts {
        for c in v.iter_mut() {
            *c *= radius;
        }
    }
    Mesh::new(verts, faces).expect("icosphere construction")
}

fn normalize(v: &mut [f64; 3]) {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    for c in v.iter_mut() {
        *c /= n;
    }
}

fn normalize_all(verts: &mut [[f64; 3]]) {
    for v in verts {
        normalize(v);
    }
}

/// Sphere-like mesh with exactly `n` vertices: the smallest icosphere with
/// at least `n` vertices, decimated down to the exact count.
pub fn sphere_mesh(n: usize, radius: f64) -> Result<Mesh> {
    if n < 12 {
        return Err(Error::InvalidArgument(format!(
            "sphere mesh needs at least 12 vertices, got {n}"
        )));
    }
    let mut level = 0;
    while icosphere_vertex_count(level) < n {
        level += 1;
        if level > 7 {
            return Err(Error::InvalidArgument(format!(
                "sphere mesh of {n} vertices is beyond the supported range"
            )));
        }
    }
    let base = icosphere(level, radius);
    if base.vertex_count() == n {
        return Ok(base);
    }
    let (mesh, _, _) = decimate(&base, n)?;
    Ok(mesh)
}

/// Area-weighted vertex normals.
pub fn vertex_normals(mesh: &Mesh) -> Vec<[f64; 3]> {
    use crate::sampling::quadric::{cross, norm, sub};
    let mut normals = vec![[0.0f64; 3]; mesh.vertex_count()];
    for f in &mesh.faces {
        let p0 = mesh.vertices[f[0] as usize];
        let p1 = mesh.vertices[f[1] as usize];
        let p2 = mesh.vertices[f[2] as usize];
        let n = cross(sub(p1, p0), sub(p2, p0));
        for &v in f {
            for k in 0..3 {
                normals[v as usize][k] += n[k];
            }
        }
    }
    for (i, nv) in normals.iter_mut().enumerate() {
        let len = norm(*nv);
        if len > 1e-12 {
            for c in nv.iter_mut() {
                *c /= len;
            }
        } else {
            // Degenerate fan: fall back to the radial direction.
            let p = mesh.vertices[i];
            let len = norm(p).max(1e-12);
            *nv = [p[0] / len, p[1] / len, p[2] / len];
        }
    }
    normals
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        assert_eq!(icosphere(0, 1.0).vertex_count(), 12);
        assert_eq!(icosphere(1, 1.0).vertex_count(), 42);
        assert_eq!(icosphere(2, 1.0).vertex_count(), 162);
        assert_eq!(icosphere(3, 1.0).vertex_count(), 642);
        assert_eq!(icosphere_vertex_count(4), 2562);
    }

    #[test]
    fn icosphere_is_connected_and_on_sphere() {
        let m = icosphere(2, 0.8);
        assert!(m.is_edge_connected());
        for v in &m.vertices {
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((r - 0.8).abs() < 1e-12);
        }
        assert_eq!(m.face_count(), 320);
    }

    #[test]
    fn exact_count_sphere() {
        let m = sphere_mesh(1024, 0.8).unwrap();
        assert_eq!(m.vertex_count(), 1024);
        assert!(m.is_edge_connected());
        let m = sphere_mesh(642, 1.0).unwrap();
        assert_eq!(m.vertex_count(), 642);
    }

    #[test]
    fn sphere_normals_point_outward() {
        let m = icosphere(1, 1.0);
        for (v, n) in m.vertices.iter().zip(vertex_normals(&m)) {
            let dot = v[0] * n[0] + v[1] * n[1] + v[2] * n[2];
            assert!(dot > 0.5, "normal not outward: {dot}");
        }
    }
}
