//! Orthographic depth rasterizer.
//!
//! Meshes live in the [-1, 1]^3 viewing box. Projection drops z; a per-pixel
//! z-buffer keeps the nearest (largest z) surface, with depth interpolated
//! barycentrically across each triangle. Depth maps to [0, 1] with near = 1
//! and background = 0, replicated across three channels. Pixel (row, col)
//! centers sit at `-1 + (2*index + 1) / size`.

use crate::error::{Error, Result};
use crate::graph::Mesh;
use crate::tensor::Tensor;

pub fn rasterize_depth(mesh: &Mesh, size: usize) -> Result<Tensor<f64>> {
    if mesh.faces.is_empty() {
        return Err(Error::InvalidMesh("cannot rasterize a mesh with no faces".into()));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let mut zbuf = vec![f64::NEG_INFINITY; size * size];
    let px = |i: usize| -1.0 + (2 * i + 1) as f64 / size as f64;
    let to_index = |coord: f64| ((coord + 1.0) * size as f64 / 2.0 - 0.5).round();

    for f in &mesh.faces {
        let a = mesh.vertices[f[0] as usize];
        let b = mesh.vertices[f[1] as usize];
        let c = mesh.vertices[f[2] as usize];
        // Signed doubled area of the projected triangle.
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if det.abs() < 1e-15 {
            continue;
        }
        let min_x = a[0].min(b[0]).min(c[0]);
        let max_x = a[0].max(b[0]).max(c[0]);
        let min_y = a[1].min(b[1]).min(c[1]);
        let max_y = a[1].max(b[1]).max(c[1]);
        let col0 = (to_index(min_x).max(0.0)) as usize;
        let col1 = (to_index(max_x).min(size as f64 - 1.0)).max(0.0) as usize;
        let row0 = (to_index(min_y).max(0.0)) as usize;
        let row1 = (to_index(max_y).min(size as f64 - 1.0)).max(0.0) as usize;
        for row in row0..=row1 {
            let y = px(row);
            for col in col0..=col1 {
                let x = px(col);
                let w0 = ((b[0] - x) * (c[1] - y) - (c[0] - x) * (b[1] - y)) / det;
                let w1 = ((c[0] - x) * (a[1] - y) - (a[0] - x) * (c[1] - y)) / det;
                let w2 = 1.0 - w0 - w1;
                if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                    let z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                    let slot = &mut zbuf[row * size + col];
                    if z > *slot {
                        *slot = z;
                    }
                }
            }
        }
    }

    let mut image = Tensor::<f64>::zeros(&[size, size, 3]);
    for (i, &z) in zbuf.iter().enumerate() {
        let v = if z.is_finite() {
            ((z + 1.0) / 2.0).clamp(0.0, 1.0)
        } else {
            0.0
        };
        for k in 0..3 {
            image.data_mut()[i * 3 + k] = v;
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_triangle_covers_inside_only() {
        // Triangle at constant z = 0: constant value inside, 0 outside.
        let mesh = Mesh::new(
            vec![[-0.6, -0.6, 0.0], [0.6, -0.6, 0.0], [0.0, 0.6, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let img = rasterize_depth(&mesh, 16).unwrap();
        // z = 0 maps to 0.5; pixel (7, 7) center is (-0.0625, -0.0625).
        assert_eq!(img.at3(7, 7, 0), 0.5);
        // Image corners fall outside the triangle.
        for &(r, c) in &[(0usize, 0usize), (0, 15), (15, 0), (15, 15)] {
            assert_eq!(img.at3(r, c, 0), 0.0);
        }
        // All channels replicate.
        assert_eq!(img.at3(7, 7, 1), 0.5);
        assert_eq!(img.at3(7, 7, 2), 0.5);
    }

    #[test]
    fn nearer_surface_wins() {
        // Two stacked triangles; the z = 0.5 one must shadow the z = -0.5
        // one wherever both cover.
        let mesh = Mesh::new(
            vec![
                [-2.0, -2.0, -0.5],
                [2.0, -2.0, -0.5],
                [0.0, 2.0, -0.5],
                [-2.0, -2.0, 0.5],
                [2.0, -2.0, 0.5],
                [0.0, 2.0, 0.5],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let img = rasterize_depth(&mesh, 8).unwrap();
        assert_eq!(img.at3(4, 4, 0), 0.75); // (0.5 + 1) / 2
    }

    #[test]
    fn empty_mesh_rejected() {
        let m = Mesh::new(vec![[0.0; 3]], vec![]).unwrap();
        assert!(rasterize_depth(&m, 8).is_err());
    }

    #[test]
    fn occlusion_between_disjoint_regions() {
        // Near triangle on the left half only; far plane everywhere.
        let mesh = Mesh::new(
            vec![
                [-2.0, -2.0, -0.8],
                [2.0, -2.0, -0.8],
                [0.0, 2.5, -0.8],
                [-0.9, -0.5, 0.6],
                [-0.1, -0.5, 0.6],
                [-0.5, 0.5, 0.6],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let img = rasterize_depth(&mesh, 32).unwrap();
        // Right side sees the far plane: (-0.8 + 1) / 2 = 0.1.
        assert!((img.at3(16, 24, 0) - 0.1).abs() < 1e-12);
        // A pixel inside the near triangle sees 0.8.
        let col = ((-0.5_f64 + 1.0) * 32.0 / 2.0 - 0.5).round() as usize;
        let row = ((-0.2_f64 + 1.0) * 32.0 / 2.0 - 0.5).round() as usize;
        assert!((img.at3(row, col, 0) - 0.8).abs() < 1e-12);
    }
}
