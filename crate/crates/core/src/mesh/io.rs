use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::{Error, Result};

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    if let Some(n) = &mesh.normals {
        for v in n {
            writeln!(w, "vn {} {} {}", v[0], v[1], v[2])?;
        }
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        if mesh.normals.is_some() {
            writeln!(w, "f {a}//{a} {b}//{b} {c}//{c}")?;
        } else {
            writeln!(w, "f {a} {b} {c}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads vertices and triangular faces of an ASCII OBJ; other records are ignored.
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let r = BufReader::new(File::open(path)?);
    let mut mesh = TriangleMesh::default();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        let field = || format!("line {}", ln + 1);
        match it.next() {
            Some("v") => {
                let v: Vec<f64> = it.take(3).map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad(path, &field(), "bad vertex"))?;
                if v.len() != 3 {
                    return Err(bad(path, &field(), "vertex needs 3 coordinates"));
                }
                mesh.vertices.push([v[0], v[1], v[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(path, &field(), "bad face index"))?;
                if idx.len() < 3 || idx.iter().any(|&i| i == 0) {
                    return Err(bad(path, &field(), "face needs 3 or more 1-based indices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1]);
                }
            }
            _ => {}
        }
    }
    if mesh.faces.iter().flatten().any(|&i| i as usize >= mesh.vertices.len()) {
        return Err(bad(path, "f", "vertex index out of range"));
    }
    Ok(mesh)
}

/// Binary little-endian PLY with float positions, optional float normals and
/// `uchar`/`int` face lists.
pub fn write_ply(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if mesh.normals.is_some() {
        writeln!(w, "property float nx\nproperty float ny\nproperty float nz")?;
    }
    writeln!(w, "element face {}", mesh.faces.len())?;
    writeln!(w, "property list uchar int vertex_indices\nend_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        if let Some(n) = &mesh.normals {
            for c in n[i] {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
    }
    for f in &mesh.faces {
        w.write_all(&[3u8])?;
        for i in f {
            w.write_all(&(*i as i32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(path: &Path, field: &str, message: impl Into<String>) -> Error {
    Error::Dataset {
        file: path.to_path_buf(),
        field: field.to_string(),
        message: message.into(),
    }
}

/// Reads meshes written by [`write_ply`]: binary little-endian, float vertex
/// properties (any count, first three are the position) and triangle faces.
pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    let mut r = BufReader::new(File::open(path)?);
    let (mut nv, mut nf, mut props, mut normals) = (0usize, 0usize, 0usize, false);
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad(path, "header", "missing end_header"));
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if first && t != ["ply"] {
            return Err(bad(path, "header", "not a PLY file"));
        }
        first = false;
        match t.as_slice() {
            ["format", f, _] if *f != "binary_little_endian" => return Err(bad(path, "format", format!("unsupported format {f}"))),
            ["element", "vertex", n] => nv = n.parse().map_err(|_| bad(path, "element vertex", "bad count"))?,
            ["element", "face", n] => nf = n.parse().map_err(|_| bad(path, "element face", "bad count"))?,
            ["property", "float", name] => {
                props += 1;
                normals |= *name == "nx";
            }
            ["property", "list", "uchar", "int", _] => {}
            ["property", ty, _] => return Err(bad(path, "property", format!("unsupported type {ty}"))),
            ["end_header"] => break,
            _ => {}
        }
    }
    let mut buf = vec![0u8; nv * props * 4];
    r.read_exact(&mut buf)?;
    let floats: Vec<f64> = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    let mut mesh = TriangleMesh::default();
    let mut nrm = Vec::new();
    for v in floats.chunks_exact(props.max(1)) {
        mesh.vertices.push([v[0], v[1], v[2]]);
        if normals {
            nrm.push([v[3], v[4], v[5]]);
        }
    }
    for _ in 0..nf {
        let mut head = [0u8; 1];
        r.read_exact(&mut head)?;
        if head[0] != 3 {
            return Err(bad(path, "face", "only triangles are supported"));
        }
        let mut b = [0u8; 12];
        r.read_exact(&mut b)?;
        let f: [u32; 3] = std::array::from_fn(|k| i32::from_le_bytes([b[4 * k], b[4 * k + 1], b[4 * k + 2], b[4 * k + 3]]) as u32);
        if f.iter().any(|&i| i as usize >= nv) {
            return Err(bad(path, "face", "vertex index out of range"));
        }
        mesh.faces.push(f);
    }
    mesh.normals = normals.then_some(nrm);
    Ok(mesh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub time: f64,
}

pub fn write_mesh_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(entries)?)?;
    Ok(())
}

pub fn read_mesh_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| bad(&path, "manifest", e.to_string()))?;
    Ok(serde_json::from_str(&text)?)
}
