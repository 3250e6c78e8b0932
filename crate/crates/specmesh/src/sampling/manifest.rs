//! On-disk layout for a built hierarchy: per-level OFF meshes, SPM1 files
//! for every transform and rescaled Laplacian, and a JSON manifest tying
//! them together.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{off, spm};
use crate::sampling::{MeshHierarchy, SamplingPair};

#[derive(Debug, Serialize, Deserialize)]
pub struct HierarchyManifest {
    pub level_counts: Vec<usize>,
    pub meshes: Vec<String>,
    pub q_down: Vec<String>,
    pub q_up: Vec<String>,
    pub laplacians: Vec<String>,
    pub lambda_max: Vec<f64>,
}

pub const MANIFEST_FILE: &str = "hierarchy.json";

pub fn save_hierarchy(hierarchy: &MeshHierarchy, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = HierarchyManifest {
        level_counts: hierarchy.level_counts(),
        meshes: Vec::new(),
        q_down: Vec::new(),
        q_up: Vec::new(),
        laplacians: Vec::new(),
        lambda_max: hierarchy.lambda_max.clone(),
    };
    for (i, level) in hierarchy.levels.iter().enumerate() {
        let name = format!("level_{i}.off");
        off::write_off(level, &dir.join(&name))?;
        manifest.meshes.push(name);
        let lname = format!("laplacian_{i}.spm");
        spm::write_spm(&hierarchy.laplacians[i], &dir.join(&lname))?;
        manifest.laplacians.push(lname);
    }
    for (i, pair) in hierarchy.pairs.iter().enumerate() {
        let dname = format!("q_down_{i}.spm");
        spm::write_spm(&pair.q_down, &dir.join(&dname))?;
        manifest.q_down.push(dname);
        let uname = format!("q_up_{i}.spm");
        spm::write_spm(&pair.q_up, &dir.join(&uname))?;
        manifest.q_up.push(uname);
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

pub fn load_hierarchy(dir: &Path) -> Result<MeshHierarchy> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::InvalidArgument(format!(
            "cannot read hierarchy manifest {}: {e}",
            manifest_path.display()
        ))
    })?;
    let manifest: HierarchyManifest = serde_json::from_str(&text)?;
    let levels: Vec<_> = manifest
        .meshes
        .iter()
        .map(|name| off::read_off(&dir.join(name)))
        .collect::<Result<_>>()?;
    let laplacians: Vec<_> = manifest
        .laplacians
        .iter()
        .map(|name| spm::read_spm(&dir.join(name)))
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for i in 0..manifest.q_down.len() {
        let q_down = spm::read_spm(&dir.join(&manifest.q_down[i]))?;
        let q_up = spm::read_spm(&dir.join(&manifest.q_up[i]))?;
        let coarse_mesh: &crate::graph::Mesh = levels
            .get(i + 1)
            .ok_or_else(|| Error::InvalidArgument("manifest missing coarse level".into()))?;
        pairs.push(SamplingPair {
            q_down,
            q_up,
            coarse_mesh: coarse_mesh.clone(),
        });
    }
    let hierarchy = MeshHierarchy {
        levels,
        pairs,
        laplacians,
        lambda_max: manifest.lambda_max,
    };
    if hierarchy.level_counts() != manifest.level_counts {
        return Err(Error::InvalidArgument(
            "hierarchy files disagree with manifest level counts".into(),
        ));
    }
    Ok(hierarchy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::spm::encode_spm;
    use crate::graph::Mesh;
    use crate::sampling::build_hierarchy;

    #[test]
    fn hierarchy_round_trip() {
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        let verts = vec![
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
        let faces = vec![
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
        let mesh = Mesh::new(verts, faces).unwrap();
        let h = build_hierarchy(&mesh, &[12, 6]).unwrap();
        let dir = std::env::temp_dir().join(format!("specmesh-hier-{}", std::process::id()));
        save_hierarchy(&h, &dir).unwrap();
        let back = load_hierarchy(&dir).unwrap();
        assert_eq!(h.level_counts(), back.level_counts());
        assert_eq!(h.lambda_max, back.lambda_max);
        for (a, b) in h.levels.iter().zip(&back.levels) {
            assert_eq!(a.vertices, b.vertices);
            assert_eq!(a.faces, b.faces);
        }
        for (a, b) in h.pairs.iter().zip(&back.pairs) {
            assert_eq!(encode_spm(&a.q_down), encode_spm(&b.q_down));
            assert_eq!(encode_spm(&a.q_up), encode_spm(&b.q_up));
        }
        for (a, b) in h.laplacians.iter().zip(&back.laplacians) {
            assert_eq!(encode_spm(a), encode_spm(b));
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
}
