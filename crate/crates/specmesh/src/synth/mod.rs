//! Synthetic dataset generation: smooth spectral deformations of a template
//! mesh rendered to depth images, plus the 2D similarity augmentation
//! applied during training.

pub mod raster;
pub mod sample_io;
pub mod shapes;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_laplacian, spectral::dense_eigenbasis_bounded, Mesh};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use raster::rasterize_depth;
pub use sample_io::{load_sample, save_sample};

/// One training/evaluation example. Image values lie in [0, 1]; vertex
/// coordinates are normalized to the viewing box.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub image: Tensor<f32>,
    pub gt_vertices: Tensor<f32>,
    pub landmark_indices: Option<Vec<u32>>,
    pub yaw_degrees: Option<f64>,
}

/// Deformation model: how many low-frequency basis fields to use and the
/// uniform bound on their coefficients.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DeformSpec {
    pub basis_count: usize,
    pub coeff_range: f64,
}

/// Smooth per-vertex displacement fields: the eigenvectors of the template
/// Laplacian with the smallest nonzero eigenvalues, scaled to unit maximum
/// and directed along vertex normals.
/// Largest template accepted for deformation-basis construction.
pub const DEFORM_BASIS_GUARD: usize = 4096;

pub struct DeformBasis {
    /// basis_count x N scalar fields.
    pub fields: Vec<Vec<f64>>,
    pub normals: Vec<[f64; 3]>,
}

pub fn build_deform_basis(template: &Mesh, basis_count: usize) -> Result<DeformBasis> {
    let lap = build_laplacian(&template.adjacency)?;
    let (values, basis) = dense_eigenbasis_bounded(&lap.matrix, DEFORM_BASIS_GUARD)?;
    let n = template.vertex_count();
    let mut fields = Vec::with_capacity(basis_count);
    for (col, &lambda) in values.iter().enumerate() {
        if lambda <= 1e-8 {
            continue; // constant / per-component modes carry no shape
        }
        let mut field: Vec<f64> = (0..n).map(|r| basis.at2(r, col)).collect();
        let max = field.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if max > 0.0 {
            field.iter_mut().for_each(|v| *v /= max);
        }
        fields.push(field);
        if fields.len() == basis_count {
            break;
        }
    }
    if fields.len() < basis_count {
        return Err(Error::InvalidArgument(format!(
            "template supports only {} deformation fields, requested {basis_count}",
            fields.len()
        )));
    }
    Ok(DeformBasis {
        fields,
        normals: shapes::vertex_normals(template),
    })
}

/// Displace template vertices along their normals by the weighted sum of
/// basis fields.
pub fn deform_mesh(template: &Mesh, basis: &DeformBasis, coeffs: &[f64]) -> Vec<[f64; 3]> {
    let n = template.vertex_count();
    let mut verts = template.vertices.clone();
    for (field, &c) in basis.fields.iter().zip(coeffs) {
        if c == 0.0 {
            continue;
        }
        for i in 0..n {
            let d = c * field[i];
            for k in 0..3 {
                verts[i][k] += d * basis.normals[i][k];
            }
        }
    }
    verts
}

fn in_viewing_box(verts: &[[f64; 3]]) -> bool {
    verts
        .iter()
        .all(|v| v.iter().all(|c| c.abs() <= 1.0 && c.is_finite()))
}

/// Evenly spread landmark vertex ids (68 when the mesh is large enough).
pub fn default_landmarks(n: usize) -> Option<Vec<u32>> {
    if n < 68 {
        return None;
    }
    Some((0..68).map(|i| (i * n / 68) as u32).collect())
}

/// Deterministic dataset generation. Sample `i` draws from the child stream
/// `i` of the seed, so the result is independent of scheduling.
pub fn synth_dataset(
    template: &Mesh,
    spec: &DeformSpec,
    count: usize,
    image_size: usize,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if !template.is_edge_connected() {
        return Err(Error::InvalidMesh(
            "template must be edge-connected".into(),
        ));
    }
    let basis = build_deform_basis(template, spec.basis_count)?;
    let root = SeededRng::new(seed);
    let landmarks = default_landmarks(template.vertex_count());
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = root.split(i as u64);
        let mut verts = None;
        for _attempt in 0..10 {
            let coeffs: Vec<f64> = (0..spec.basis_count)
                .map(|_| rng.uniform_in(-spec.coeff_range, spec.coeff_range))
                .collect();
            let candidate = deform_mesh(template, &basis, &coeffs);
            if in_viewing_box(&candidate) {
                verts = Some(candidate);
                break;
            }
        }
        let verts = verts.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "sample {i}: deformation left the viewing box 10 times; reduce coeff_range"
            ))
        })?;
        let deformed = Mesh::new(verts, template.faces.clone())?;
        let depth = rasterize_depth(&deformed, image_size)?;
        // Quantize to the 8-bit grid up front so serialization round-trips
        // exactly.
        let image = Tensor::from_vec(
            depth.dims(),
            depth
                .data()
                .iter()
                .map(|&v| ((v * 255.0).round().clamp(0.0, 255.0) / 255.0) as f32)
                .collect(),
        )?;
        let gt = Tensor::from_vec(
            &[deformed.vertex_count(), 3],
            deformed
                .vertices
                .iter()
                .flat_map(|v| v.iter().map(|&c| c as f32))
                .collect(),
        )?;
        records.push(SampleRecord {
            image,
            gt_vertices: gt,
            landmark_indices: landmarks.clone(),
            yaw_degrees: None,
        });
    }
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub template: String,
    pub deform: DeformSpec,
    pub seed: u64,
    pub count: usize,
    pub image_size: usize,
}

pub const DATASET_MANIFEST_FILE: &str = "dataset.json";

pub fn save_dataset(
    records: &[SampleRecord],
    manifest: &DatasetManifest,
    dir: &Path,
) -> Result<()> {
    let samples_dir = dir.join("samples");
    std::fs::create_dir_all(&samples_dir)?;
    for (i, r) in records.iter().enumerate() {
        save_sample(r, &samples_dir, &format!("{i:05}"))?;
    }
    std::fs::write(
        dir.join(DATASET_MANIFEST_FILE),
        serde_json::to_string_pretty(manifest)?,
    )?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<SampleRecord>, DatasetManifest)> {
    let manifest_path = dir.join(DATASET_MANIFEST_FILE);
    let manifest: DatasetManifest = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path).map_err(|e| {
            Error::InvalidArgument(format!(
                "cannot read dataset manifest {}: {e}",
                manifest_path.display()
            ))
        })?,
    )?;
    let samples_dir = dir.join("samples");
    let mut records = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        records.push(load_sample(&samples_dir, &format!("{i:05}"))?);
    }
    Ok((records, manifest))
}

/// 2D similarity applied identically to the image (bilinear resampling,
/// zero fill) and to the ground-truth vertices. Rotation is about the image
/// center; `tx`/`ty` are in normalized units (the frame spans [-1, 1]); `z`
/// scales by `s` and ignores rotation and translation.
pub fn apply_similarity(
    record: &SampleRecord,
    theta_degrees: f64,
    tx: f64,
    ty: f64,
    s: f64,
) -> Result<SampleRecord> {
    let (h, w) = (record.image.dims()[0], record.image.dims()[1]);
    if h != w {
        return Err(Error::InvalidArgument("image must be square".into()));
    }
    let size = h;
    let theta = theta_degrees.to_radians();
    let (sin, cos) = theta.sin_cos();

    // Image: for each output pixel, pull from the inverse-transformed source
    // position, working in pixel coordinates so the identity transform is
    // exact.
    let center = (size as f64 - 1.0) / 2.0;
    let t_pix = (tx * size as f64 / 2.0, ty * size as f64 / 2.0);
    let mut image = Tensor::<f32>::zeros(record.image.dims());
    for row in 0..size {
        for col in 0..size {
            // Forward map is p' = s R p + t; invert it.
            let dx = col as f64 - center - t_pix.0;
            let dy = row as f64 - center - t_pix.1;
            let sx = (cos * dx + sin * dy) / s + center;
            let sy = (-sin * dx + cos * dy) / s + center;
            let dst = (row * size + col) * 3;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            for k in 0..3 {
                let mut acc = 0.0f64;
                for (di, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (dj, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        let yy = y0 + di;
                        let xx = x0 + dj;
                        let weight = wy * wx;
                        if weight == 0.0 {
                            continue;
                        }
                        if yy >= 0.0 && yy < size as f64 && xx >= 0.0 && xx < size as f64 {
                            acc += weight
                                * f64::from(record.image.at3(yy as usize, xx as usize, k));
                        }
                    }
                }
                image.data_mut()[dst + k] = acc as f32;
            }
        }
    }

    let n = record.gt_vertices.dims()[0];
    let mut gt = Tensor::<f32>::zeros(&[n, 3]);
    for i in 0..n {
        let x = f64::from(record.gt_vertices.at2(i, 0));
        let y = f64::from(record.gt_vertices.at2(i, 1));
        let z = f64::from(record.gt_vertices.at2(i, 2));
        gt.data_mut()[i * 3] = (s * (cos * x - sin * y) + tx) as f32;
        gt.data_mut()[i * 3 + 1] = (s * (sin * x + cos * y) + ty) as f32;
        gt.data_mut()[i * 3 + 2] = (s * z) as f32;
    }
    Ok(SampleRecord {
        image,
        gt_vertices: gt,
        landmark_indices: record.landmark_indices.clone(),
        yaw_degrees: record.yaw_degrees,
    })
}

/// Random training augmentation: rotation in [-45, 45] degrees, translation
/// up to 10% of the frame per axis, scale in [0.9, 1.2].
pub fn augment(record: &SampleRecord, rng: &mut SeededRng) -> Result<SampleRecord> {
    let theta = rng.uniform_in(-45.0, 45.0);
    // 10% of the image size = 0.2 in normalized units.
    let tx = rng.uniform_in(-0.2, 0.2);
    let ty = rng.uniform_in(-0.2, 0.2);
    let s = rng.uniform_in(0.9, 1.2);
    apply_similarity(record, theta, tx, ty, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::nme;
    use crate::synth::shapes::icosphere;

    fn small_template() -> Mesh {
        icosphere(2, 0.8) // 162 vertices
    }

    #[test]
    fn zero_coefficients_reproduce_template() {
        let t = small_template();
        let basis = build_deform_basis(&t, 4).unwrap();
        let verts = deform_mesh(&t, &basis, &[0.0; 4]);
        assert_eq!(verts, t.vertices);
    }

    #[test]
    fn dataset_is_deterministic_and_shaped() {
        let t = small_template();
        let spec = DeformSpec {
            basis_count: 4,
            coeff_range: 0.1,
        };
        let a = synth_dataset(&t, &spec, 3, 32, 99).unwrap();
        let b = synth_dataset(&t, &spec, 3, 32, 99).unwrap();
        assert_eq!(a.len(), 3);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.image, rb.image);
            assert_eq!(ra.gt_vertices, rb.gt_vertices);
            assert_eq!(ra.image.dims(), &[32, 32, 3]);
            assert_eq!(ra.gt_vertices.dims(), &[162, 3]);
            assert!(ra.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(ra.gt_vertices.data().iter().all(|v| v.is_finite()));
        }
        // Different seeds give different data.
        let c = synth_dataset(&t, &spec, 3, 32, 100).unwrap();
        assert_ne!(a[0].gt_vertices, c[0].gt_vertices);
    }

    #[test]
    fn identity_similarity_is_bit_exact() {
        let t = small_template();
        let spec = DeformSpec {
            basis_count: 3,
            coeff_range: 0.08,
        };
        let r = synth_dataset(&t, &spec, 1, 32, 5).unwrap().remove(0);
        let out = apply_similarity(&r, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(r.image, out.image);
        assert_eq!(r.gt_vertices, out.gt_vertices);
    }

    #[test]
    fn pure_scale_multiplies_gt() {
        let t = small_template();
        let spec = DeformSpec {
            basis_count: 3,
            coeff_range: 0.05,
        };
        let r = synth_dataset(&t, &spec, 1, 16, 6).unwrap().remove(0);
        let out = apply_similarity(&r, 0.0, 0.0, 0.0, 1.2).unwrap();
        for (a, b) in r.gt_vertices.data().iter().zip(out.gt_vertices.data()) {
            assert!((a * 1.2 - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn augmented_gt_matches_transform_of_landmark_subset() {
        // Applying the transform then subsetting equals subsetting then
        // transforming, so the alignment error between them is zero.
        let t = small_template();
        let spec = DeformSpec {
            basis_count: 3,
            coeff_range: 0.05,
        };
        let r = synth_dataset(&t, &spec, 1, 16, 8).unwrap().remove(0);
        let (theta, tx, ty, s) = (17.0, 0.05, -0.1, 1.1);
        let full = apply_similarity(&r, theta, tx, ty, s).unwrap();
        let ids = r.landmark_indices.clone().unwrap();
        let pick = |t: &Tensor<f32>| {
            Tensor::from_vec(
                &[ids.len(), 3],
                ids.iter()
                    .flat_map(|&i| {
                        (0..3).map(move |k| f64::from(t.at2(i as usize, k)))
                    })
                    .collect(),
            )
            .unwrap()
        };
        let subset_then_transform = {
            let sub = SampleRecord {
                image: r.image.clone(),
                gt_vertices: {
                    let gv = &r.gt_vertices;
                    Tensor::from_vec(
                        &[ids.len(), 3],
                        ids.iter()
                            .flat_map(|&i| (0..3).map(move |k| gv.at2(i as usize, k)))
                            .collect(),
                    )
                    .unwrap()
                },
                landmark_indices: None,
                yaw_degrees: None,
            };
            apply_similarity(&sub, theta, tx, ty, s).unwrap()
        };
        let a = pick(&full.gt_vertices);
        let b: Tensor<f64> = subset_then_transform.gt_vertices.cast();
        let e = nme(&a, &b, 3).unwrap();
        assert!(e <= 1e-7, "nme {e}");
    }

    #[test]
    fn augment_draws_are_deterministic() {
        let t = small_template();
        let spec = DeformSpec {
            basis_count: 3,
            coeff_range: 0.05,
        };
        let r = synth_dataset(&t, &spec, 1, 16, 9).unwrap().remove(0);
        let mut rng1 = SeededRng::new(33).split(5);
        let mut rng2 = SeededRng::new(33).split(5);
        let a = augment(&r, &mut rng1).unwrap();
        let b = augment(&r, &mut rng2).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.gt_vertices, b.gt_vertices);
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let t = small_template();
        let spec = DeformSpec {
            basis_count: 3,
            coeff_range: 0.05,
        };
        let records = synth_dataset(&t, &spec, 2, 16, 42).unwrap();
        let manifest = DatasetManifest {
            template: "icosphere-2".into(),
            deform: spec,
            seed: 42,
            count: 2,
            image_size: 16,
        };
        let dir = std::env::temp_dir().join(format!("specmesh-ds-{}", std::process::id()));
        save_dataset(&records, &manifest, &dir).unwrap();
        let (back, m2) = load_dataset(&dir).unwrap();
        assert_eq!(m2.count, 2);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.gt_vertices, b.gt_vertices);
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
}
