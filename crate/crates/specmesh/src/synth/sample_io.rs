//! Sample serialization: binary PPM images, VTX1 vertex blobs, and a JSON
//! sidecar for landmark indices and yaw metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SampleRecord;
use crate::tensor::Tensor;

const VTX_MAGIC: &[u8; 4] = b"VTX1";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    landmark_indices: Option<Vec<u32>>,
    yaw_degrees: Option<f64>,
}

/// P6 PPM with maxval 255. Image values are quantized to `round(v * 255)`.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    if image.rank() != 3 || image.dims()[2] != 3 {
        return Err(Error::ShapeMismatch(format!(
            "image must be HxWx3, got {:?}",
            image.dims()
        )));
    }
    let (h, w) = (image.dims()[0], image.dims()[1]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    for &v in image.data() {
        if !v.is_finite() {
            return Err(Error::NonFinite("image".into()));
        }
        out.push((f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |d: &str| Error::format("PPM", d);
    let mut pos = 0;
    let mut field = |what: &str| -> Result<String> {
        // Skip whitespace and '#' comments between header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(&format!("missing {what}")));
        }
        Ok(std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| bad("non-ascii header"))?
            .to_string())
    };
    if field("magic")? != "P6" {
        return Err(bad("expected P6 magic"));
    }
    let w: usize = field("width")?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = field("height")?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = field("maxval")?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad(&format!("maxval must be 255, got {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let expected = h * w * 3;
    if bytes.len() != pos + expected {
        return Err(bad(&format!(
            "expected {expected} pixel bytes, got {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let data: Vec<f32> = bytes[pos..]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Tensor::from_vec(&[h, w, 3], data)
}

/// VTX1: magic, u32 count (little-endian), then count * 3 f32 coordinates.
pub fn encode_vtx(vertices: &Tensor<f32>) -> Result<Vec<u8>> {
    if vertices.rank() != 2 || vertices.dims()[1] != 3 {
        return Err(Error::ShapeMismatch(format!(
            "vertices must be Nx3, got {:?}",
            vertices.dims()
        )));
    }
    vertices.assert_finite("vertices")?;
    let n = vertices.dims()[0];
    let mut out = Vec::with_capacity(8 + n * 12);
    out.extend_from_slice(VTX_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for &v in vertices.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_vtx(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 8 {
        return Err(Error::format("VTX1", "truncated header"));
    }
    if &bytes[0..4] != VTX_MAGIC {
        return Err(Error::format("VTX1", "bad magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + n * 12;
    if bytes.len() != expected {
        return Err(Error::format(
            "VTX1",
            format!("expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::format("VTX1", "non-finite coordinate"));
    }
    Tensor::from_vec(&[n, 3], data)
}

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.ppm")),
        dir.join(format!("{stem}.vtx")),
        dir.join(format!("{stem}.json")),
    )
}

pub fn save_sample(record: &SampleRecord, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (ppm, vtx, json) = paths(dir, stem);
    fs::write(ppm, encode_ppm(&record.image)?)?;
    fs::write(vtx, encode_vtx(&record.gt_vertices)?)?;
    let sidecar = Sidecar {
        landmark_indices: record.landmark_indices.clone(),
        yaw_degrees: record.yaw_degrees,
    };
    fs::write(json, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_sample(dir: &Path, stem: &str) -> Result<SampleRecord> {
    let (ppm, vtx, json) = paths(dir, stem);
    let image = decode_ppm(&fs::read(ppm)?)?;
    let gt_vertices = decode_vtx(&fs::read(vtx)?)?;
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(json)?)?;
    Ok(SampleRecord {
        image,
        gt_vertices,
        landmark_indices: sidecar.landmark_indices,
        yaw_degrees: sidecar.yaw_degrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantized_image(h: usize, w: usize) -> Tensor<f32> {
        let data: Vec<f32> = (0..h * w * 3)
            .map(|i| ((i * 7) % 256) as f32 / 255.0)
            .collect();
        Tensor::from_vec(&[h, w, 3], data).unwrap()
    }

    #[test]
    fn ppm_round_trip_lossless_for_quantized_values() {
        let img = quantized_image(4, 6);
        let bytes = encode_ppm(&img).unwrap();
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(img, back);
        assert_eq!(bytes, encode_ppm(&back).unwrap());
    }

    #[test]
    fn ppm_rejects_wrong_maxval_and_truncation() {
        let img = quantized_image(2, 2);
        let bytes = encode_ppm(&img).unwrap();
        let text = String::from_utf8_lossy(&bytes[..11]).replace("255", "127");
        let mut bad = text.into_bytes();
        bad.extend_from_slice(&bytes[11..]);
        assert!(decode_ppm(&bad).is_err());
        assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn vtx_round_trip_and_errors() {
        let v = Tensor::from_vec(&[3, 3], vec![0.5f32, -1.0, 2.0, 0.0, 0.25, -0.125, 1.0, 2.0, 3.0])
            .unwrap();
        let bytes = encode_vtx(&v).unwrap();
        let back = decode_vtx(&bytes).unwrap();
        assert_eq!(v, back);
        assert!(decode_vtx(&bytes[..bytes.len() - 4]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_vtx(&bad).is_err());
    }

    #[test]
    fn sample_round_trip() {
        let record = SampleRecord {
            image: quantized_image(4, 4),
            gt_vertices: Tensor::from_vec(&[2, 3], vec![0.1f32, 0.2, 0.3, -0.1, -0.2, -0.3])
                .unwrap(),
            landmark_indices: Some(vec![0, 1]),
            yaw_degrees: Some(12.5),
        };
        let dir = std::env::temp_dir().join(format!("specmesh-sample-{}", std::process::id()));
        save_sample(&record, &dir, "00000").unwrap();
        let back = load_sample(&dir, "00000").unwrap();
        assert_eq!(record.image, back.image);
        assert_eq!(record.gt_vertices, back.gt_vertices);
        assert_eq!(record.landmark_indices, back.landmark_indices);
        assert_eq!(record.yaw_degrees, back.yaw_degrees);
        let _ = fs::remove_dir_all(&dir);
    }
}
