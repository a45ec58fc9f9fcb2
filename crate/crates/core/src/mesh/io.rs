//! Mesh export: binary little-endian PLY with per-vertex color, and OBJ.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::math::Vec3;

pub fn write_ply(path: impl AsRef<Path>, mesh: &TriMesh, colors: Option<&[[f64; 3]]>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_ply_to(&mut w, mesh, colors)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply_to<W: Write>(w: &mut W, mesh: &TriMesh, colors: Option<&[[f64; 3]]>) -> Result<()> {
    if let Some(c) = colors {
        if c.len() != mesh.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} colors for {} vertices",
                c.len(),
                mesh.vertices.len()
            )));
        }
    }
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    for a in ["x", "y", "z"] {
        writeln!(w, "property float {a}")?;
    }
    if colors.is_some() {
        for a in ["red", "green", "blue"] {
            writeln!(w, "property uchar {a}")?;
        }
    }
    writeln!(w, "element face {}", mesh.faces.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for k in 0..3 {
            w.write_all(&(v[k] as f32).to_le_bytes())?;
        }
        if let Some(c) = colors {
            let rgb = c[i].map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8);
            w.write_all(&rgb)?;
        }
    }
    for f in &mesh.faces {
        w.write_all(&[3u8])?;
        for &i in f {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads binary little-endian PLY files with float positions, optional uchar
/// colors, and triangle faces.
pub fn read_ply(path: impl AsRef<Path>) -> Result<(TriMesh, Option<Vec<[f64; 3]>>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let bad = |m: &str| Error::InvalidInput(format!("unsupported PLY: {m}"));

    let mut line = String::new();
    let mut n_vert = 0usize;
    let mut n_face = 0usize;
    let mut vprops: Vec<String> = Vec::new();
    let mut current = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("missing end_header"));
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["ply"] | ["comment", ..] => {}
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(bad(fmt));
                }
            }
            ["element", name, n] => {
                current = name.to_string();
                let n: usize = n.parse().map_err(|_| bad("element count"))?;
                match *name {
                    "vertex" => n_vert = n,
                    "face" => n_face = n,
                    other => return Err(bad(other)),
                }
            }
            ["property", "list", cnt, idx, _] => {
                if current != "face" || *cnt != "uchar" || !matches!(*idx, "int" | "uint") {
                    return Err(bad("face list layout"));
                }
            }
            ["property", ty, name] => {
                if current != "vertex" {
                    return Err(bad("face property"));
                }
                let expect = if ["x", "y", "z"].contains(name) { "float" } else { "uchar" };
                if *ty != expect {
                    return Err(bad(&format!("{name} as {ty}")));
                }
                vprops.push(name.to_string());
            }
            ["end_header"] => break,
            _ => return Err(bad(line.trim())),
        }
    }
    let has_color = vprops.iter().any(|p| p == "red");
    let mut vertices = Vec::with_capacity(n_vert);
    let mut colors = Vec::with_capacity(if has_color { n_vert } else { 0 });
    let mut b4 = [0u8; 4];
    let mut b1 = [0u8; 1];
    for _ in 0..n_vert {
        let mut v = Vec3::zeros();
        let mut c = [0.0; 3];
        for p in &vprops {
            match p.as_str() {
                "x" | "y" | "z" => {
                    r.read_exact(&mut b4)?;
                    let k = (p.as_bytes()[0] - b'x') as usize;
                    v[k] = f32::from_le_bytes(b4) as f64;
                }
                other => {
                    r.read_exact(&mut b1)?;
                    let k = match other {
                        "red" => 0,
                        "green" => 1,
                        "blue" => 2,
                        _ => continue,
                    };
                    c[k] = b1[0] as f64 / 255.0;
                }
            }
        }
        vertices.push(v);
        if has_color {
            colors.push(c);
        }
    }
    let mut faces = Vec::with_capacity(n_face);
    for _ in 0..n_face {
        r.read_exact(&mut b1)?;
        if b1[0] != 3 {
            return Err(bad("non-triangle face"));
        }
        let mut f = [0u32; 3];
        for slot in &mut f {
            r.read_exact(&mut b4)?;
            let i = i32::from_le_bytes(b4);
            if i < 0 || i as usize >= n_vert {
                return Err(bad("face index out of range"));
            }
            *slot = i as u32;
        }
        faces.push(f);
    }
    Ok((TriMesh::new(vertices, faces), has_color.then_some(colors)))
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        let mesh = icosphere(1);
        let colors: Vec<[f64; 3]> = (0..mesh.vertices.len())
            .map(|i| [i as f64 / 42.0, 0.5, 1.0])
            .collect();
        write_ply(&path, &mesh, Some(&colors)).unwrap();
        let (back, c) = read_ply(&path).unwrap();
        assert_eq!(back.faces, mesh.faces);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert!((a - b).norm() < 1e-6);
        }
        let c = c.unwrap();
        assert!((c[21][0] - (0.5f64 * 255.0).round() / 255.0).abs() < 1e-12);
    }

    #[test]
    fn obj_is_one_based() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        write_obj(&path, &icosphere(0)).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.lines().any(|l| l == "f 1 12 6"));
    }
}
