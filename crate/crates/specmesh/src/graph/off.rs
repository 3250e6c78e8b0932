//! ASCII OFF mesh reader/writer.
//!
//! Layout: an "OFF" header line, a "N F 0" counts line, N vertex lines
//! "x y z", then F face lines "3 i j k". Coordinates are written with
//! shortest round-trip formatting so save/load is lossless.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Mesh;

pub fn write_off(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(mesh.vertex_count() * 24);
    out.push_str("OFF\n");
    out.push_str(&format!("{} {} 0\n", mesh.vertex_count(), mesh.face_count()));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_off(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path)?;
    parse_off(&text)
}

pub fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::format("OFF", "empty file"))?;
    if header != "OFF" {
        return Err(Error::format("OFF", format!("bad header line {header:?}")));
    }
    let counts = lines
        .next()
        .ok_or_else(|| Error::format("OFF", "missing counts line"))?;
    let mut it = counts.split_whitespace();
    let n: usize = parse_field(it.next(), "vertex count")?;
    let f: usize = parse_field(it.next(), "face count")?;
    let _edges: usize = parse_field(it.next(), "edge count")?;

    let mut vertices = Vec::with_capacity(n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::format("OFF", format!("missing vertex line {i}")))?;
        let mut parts = line.split_whitespace();
        let mut v = [0.0f64; 3];
        for c in &mut v {
            *c = parse_field(parts.next(), "vertex coordinate")?;
        }
        vertices.push(v);
    }
    let mut faces = Vec::with_capacity(f);
    for i in 0..f {
        let line = lines
            .next()
            .ok_or_else(|| Error::format("OFF", format!("missing face line {i}")))?;
        let mut parts = line.split_whitespace();
        let arity: usize = parse_field(parts.next(), "face arity")?;
        if arity != 3 {
            return Err(Error::format("OFF", format!("face {i} is not a triangle")));
        }
        let mut face = [0u32; 3];
        for c in &mut face {
            *c = parse_field(parts.next(), "face index")?;
        }
        faces.push(face);
    }
    Mesh::new(vertices, faces)
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    field
        .ok_or_else(|| Error::format("OFF", format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::format("OFF", format!("unparseable {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempdir::with_temp_dir;

    mod tempdir {
        use std::path::PathBuf;

        pub fn with_temp_dir(f: impl FnOnce(&PathBuf)) {
            let dir = std::env::temp_dir().join(format!(
                "specmesh-off-{}-{:?}",
                std::process::id(),
                std::thread::current().id()
            ));
            std::fs::create_dir_all(&dir).unwrap();
            f(&dir);
            let _ = std::fs::remove_dir_all(&dir);
        }
    }

    #[test]
    fn off_round_trip_is_lossless() {
        let mesh = Mesh::new(
            vec![
                [0.1234567890123, -1.0 / 3.0, 2.5e-7],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        with_temp_dir(|dir| {
            let path = dir.join("m.off");
            write_off(&mesh, &path).unwrap();
            let back = read_off(&path).unwrap();
            assert_eq!(mesh.vertices, back.vertices);
            assert_eq!(mesh.faces, back.faces);
        });
    }

    #[test]
    fn off_rejects_garbage() {
        assert!(parse_off("NOT-OFF\n1 0 0\n0 0 0\n").is_err());
        assert!(parse_off("OFF\n2 1 0\n0 0 0\n1 1 1\n3 0 1 5\n").is_err());
        assert!(parse_off("OFF\n1 0 0\n").is_err());
    }
}
