//! Triangle surface meshes: STL (binary and ASCII) and OBJ readers, an STL
//! writer, and tube triangulation for centerline trees.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshFormat {
    StlBinary,
    StlAscii,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "stl" => {
                let head = std::fs::read(path).ok()?;
                if head.starts_with(b"solid") && std::str::from_utf8(&head).is_ok() {
                    Some(MeshFormat::StlAscii)
                } else {
                    Some(MeshFormat::StlBinary)
                }
            }
            _ => None,
        }
    }
}

/// Indexed triangle mesh, vertices in mm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (k, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::invalid(format!("triangle {k} references a missing vertex")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::invalid(format!("triangle {k} repeats a vertex index")));
            }
        }
        Ok(())
    }

    /// Binary STL bytes (80-byte header, little-endian f32 facets).
    pub fn to_stl_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(84 + 50 * self.triangles.len());
        let mut header = [0u8; 80];
        let tag = b"vesselnav binary stl";
        header[..tag.len()].copy_from_slice(tag);
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.triangles.len() as u32).to_le_bytes());
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            let n = if n.norm() > 0.0 { n.normalize() } else { n };
            for v in [n, a, b, c] {
                for x in v.iter() {
                    out.extend_from_slice(&(*x as f32).to_le_bytes());
                }
            }
            out.extend_from_slice(&0u16.to_le_bytes());
        }
        out
    }

    pub fn to_stl_ascii(&self, name: &str) -> String {
        use std::fmt::Write;
        let mut s = format!("solid {name}\n");
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            let n = if n.norm() > 0.0 { n.normalize() } else { n };
            let _ = writeln!(s, "  facet normal {} {} {}", n.x, n.y, n.z);
            s.push_str("    outer loop\n");
            for v in [a, b, c] {
                let _ = writeln!(s, "      vertex {} {} {}", v.x, v.y, v.z);
            }
            s.push_str("    endloop\n  endfacet\n");
        }
        let _ = writeln!(s, "endsolid {name}");
        s
    }

    pub fn to_obj(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriMesh> {
    let bytes = std::fs::read(path)?;
    parse_mesh(&bytes, format)
}

pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriMesh> {
    let mesh = match format {
        MeshFormat::StlBinary => parse_stl_binary(bytes)?,
        MeshFormat::StlAscii => parse_stl_ascii(bytes)?,
        MeshFormat::Obj => parse_obj(bytes)?,
    };
    if mesh.triangles.is_empty() {
        return Err(Error::invalid("mesh has no triangles"));
    }
    Ok(mesh)
}

/// Welds facet corners that are bitwise-identical in f32.
#[derive(Default)]
struct Welder {
    lookup: HashMap<[u32; 3], u32>,
    mesh: TriMesh,
}

impl Welder {
    fn vertex(&mut self, v: [f32; 3]) -> u32 {
        let key = v.map(f32::to_bits);
        let next = self.mesh.vertices.len() as u32;
        *self.lookup.entry(key).or_insert_with(|| {
            self.mesh
                .vertices
                .push(Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64));
            next
        })
    }

    fn triangle(&mut self, corners: [[f32; 3]; 3]) {
        let t = corners.map(|c| self.vertex(c));
        // Degenerate facets carry no surface; drop them rather than emit repeated indices.
        if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
            self.mesh.triangles.push(t);
        }
    }
}

fn parse_stl_binary(bytes: &[u8]) -> Result<TriMesh> {
    if bytes.len() < 84 {
        return Err(Error::format(bytes.len(), "binary STL shorter than its 84-byte header"));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let needed = 84 + count * 50;
    if bytes.len() < needed {
        let complete = (bytes.len() - 84) / 50;
        return Err(Error::format(
            84 + complete * 50,
            format!("binary STL declares {count} facets but holds {complete}"),
        ));
    }
    let mut welder = Welder::default();
    for f in 0..count {
        let base = 84 + f * 50 + 12;
        let read = |k: usize| f32::from_le_bytes(bytes[base + 4 * k..base + 4 * k + 4].try_into().unwrap());
        let corners = [0, 1, 2].map(|c| [read(3 * c), read(3 * c + 1), read(3 * c + 2)]);
        if corners.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::format(base, "non-finite vertex coordinate"));
        }
        welder.triangle(corners);
    }
    Ok(welder.mesh)
}

/// Whitespace tokens with their byte offsets.
fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let base = text.as_ptr() as usize;
    text.split_ascii_whitespace()
        .map(move |t| (t.as_ptr() as usize - base, t))
}

fn parse_stl_ascii(bytes: &[u8]) -> Result<TriMesh> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::format(e.valid_up_to(), "ASCII STL is not valid UTF-8"))?;
    let mut toks = tokens(text).peekable();
    let expect = |toks: &mut std::iter::Peekable<_>, word: &str| -> Result<usize> {
        match Iterator::next(toks) {
            Some((off, t)) if t == word => Ok(off),
            Some((off, t)) => Err(Error::format(off, format!("expected `{word}`, found `{t}`"))),
            None => Err(Error::format(text.len(), format!("expected `{word}`, found end of file"))),
        }
    };
    let number = |toks: &mut std::iter::Peekable<_>| -> Result<f32> {
        match Iterator::next(toks) {
            Some((off, t)) => {
                let t: &str = t;
                t.parse::<f32>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::format(off, format!("invalid number `{t}`")))
            }
            None => Err(Error::format(text.len(), "expected number, found end of file")),
        }
    };
    expect(&mut toks, "solid")?;
    // Optional solid name up to the first facet.
    while let Some((_, t)) = toks.peek() {
        if *t == "facet" || *t == "endsolid" {
            break;
        }
        toks.next();
    }
    let mut welder = Welder::default();
    loop {
        match toks.peek() {
            Some((_, "endsolid")) => break,
            Some(_) => {}
            None => return Err(Error::format(text.len(), "missing `endsolid`")),
        }
        expect(&mut toks, "facet")?;
        expect(&mut toks, "normal")?;
        for _ in 0..3 {
            number(&mut toks)?;
        }
        expect(&mut toks, "outer")?;
        expect(&mut toks, "loop")?;
        let mut corners = [[0f32; 3]; 3];
        for c in &mut corners {
            expect(&mut toks, "vertex")?;
            for x in c.iter_mut() {
                *x = number(&mut toks)?;
            }
        }
        expect(&mut toks, "endloop")?;
        expect(&mut toks, "endfacet")?;
        welder.triangle(corners);
    }
    Ok(welder.mesh)
}

fn parse_obj(bytes: &[u8]) -> Result<TriMesh> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::format(e.valid_up_to(), "OBJ is not valid UTF-8"))?;
    let base = text.as_ptr() as usize;
    let mut mesh = TriMesh::default();
    let mut faces: Vec<(usize, [i64; 3])> = Vec::new();
    for line in text.lines() {
        let off = line.as_ptr() as usize - base;
        let mut parts = line.split_ascii_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(off, "invalid vertex coordinate"))?;
                if coords.len() != 3 || coords.iter().any(|x| !x.is_finite()) {
                    return Err(Error::format(off, "vertex needs three finite coordinates"));
                }
                mesh.vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = parts
                    .map(|t| t.split('/').next().unwrap_or("").parse::<i64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(off, "invalid face index"))?;
                if idx.len() != 3 {
                    return Err(Error::format(off, format!("only triangular faces are supported, got {}", idx.len())));
                }
                faces.push((off, [idx[0], idx[1], idx[2]]));
            }
            _ => {}
        }
    }
    let n = mesh.vertices.len() as i64;
    for (off, f) in faces {
        let mut t = [0u32; 3];
        for (slot, &i) in t.iter_mut().zip(&f) {
            // OBJ indices are 1-based; negatives count back from the latest vertex.
            let resolved = if i > 0 { i - 1 } else { n + i };
            if i == 0 || resolved < 0 || resolved >= n {
                return Err(Error::format(off, format!("face index {i} out of range")));
            }
            *slot = resolved as u32;
        }
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            return Err(Error::format(off, "face repeats a vertex index"));
        }
        mesh.triangles.push(t);
    }
    Ok(mesh)
}

/// Triangulated open tube around a centerline, `segments` vertices per ring.
pub fn tube_mesh(points: &[Vec3], radii: &[f64], segments: usize) -> TriMesh {
    let mut mesh = TriMesh::default();
    if points.len() < 2 || segments < 3 {
        return mesh;
    }
    let tangent = |k: usize| {
        let a = points[k.saturating_sub(1)];
        let b = points[(k + 1).min(points.len() - 1)];
        (b - a).normalize()
    };
    let mut t_prev = tangent(0);
    let mut normal = crate::geom::any_perpendicular(&t_prev);
    for k in 0..points.len() {
        let t = tangent(k);
        normal = crate::geom::transport(&normal, &t_prev, &t);
        normal = (normal - t * t.dot(&normal)).normalize();
        let binormal = t.cross(&normal);
        for j in 0..segments {
            let a = std::f64::consts::TAU * j as f64 / segments as f64;
            mesh.vertices
                .push(points[k] + (normal * a.cos() + binormal * a.sin()) * radii[k]);
        }
        t_prev = t;
    }
    let ring = segments as u32;
    for k in 0..(points.len() as u32 - 1) {
        for j in 0..ring {
            let a = k * ring + j;
            let b = k * ring + (j + 1) % ring;
            let c = a + ring;
            let d = b + ring;
            mesh.triangles.push([a, b, d]);
            mesh.triangles.push([a, d, c]);
        }
    }
    mesh
}

/// Concatenates meshes, offsetting triangle indices.
pub fn merge(meshes: impl IntoIterator<Item = TriMesh>) -> TriMesh {
    let mut out = TriMesh::default();
    for m in meshes {
        let off = out.vertices.len() as u32;
        out.vertices.extend(m.vertices);
        out.triangles
            .extend(m.triangles.into_iter().map(|t| t.map(|i| i + off)));
    }
    out
}
