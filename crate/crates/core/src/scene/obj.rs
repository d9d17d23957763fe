//! Minimal Wavefront OBJ reader: `v`, `vn` and polygonal `f` records.

use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Triangle soup with per-corner normals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Each triangle: position indices and normal indices.
    pub triangles: Vec<([u32; 3], [u32; 3])>,
}

impl Mesh {
    /// Adds a triangle with a flat normal.
    pub fn push_flat(&mut self, a: Vec3, b: Vec3, c: Vec3) {
        let n = (b - a).cross(c - a).try_normalize().unwrap_or(Vec3::new(0.0, 1.0, 0.0));
        let base = self.positions.len() as u32;
        let nb = self.normals.len() as u32;
        self.positions.extend([a, b, c]);
        self.normals.push(n);
        self.triangles.push(([base, base + 1, base + 2], [nb; 3]));
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for p in &self.positions {
            s.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
        }
        for n in &self.normals {
            s.push_str(&format!("vn {} {} {}\n", n.x, n.y, n.z));
        }
        for (p, n) in &self.triangles {
            s.push_str(&format!(
                "f {}//{} {}//{} {}//{}\n",
                p[0] + 1,
                n[0] + 1,
                p[1] + 1,
                n[1] + 1,
                p[2] + 1,
                n[2] + 1
            ));
        }
        s
    }
}

fn parse_index(tok: &str, len: usize, line: usize) -> Result<u32> {
    let i: i64 = tok
        .parse()
        .map_err(|_| Error::format("OBJ", format!("line {line}: bad index {tok:?}")))?;
    let resolved = if i < 0 { len as i64 + i } else { i - 1 };
    if resolved < 0 || resolved >= len as i64 {
        return Err(Error::format("OBJ", format!("line {line}: index {i} out of range")));
    }
    Ok(resolved as u32)
}

fn parse_vec(rest: &mut std::str::SplitWhitespace<'_>, line: usize) -> Result<Vec3> {
    let mut v = [0.0; 3];
    for x in &mut v {
        *x = rest
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format("OBJ", format!("line {line}: expected three numbers")))?;
    }
    Ok(Vec3::from_array(v))
}

/// Faces are fan-triangulated. Corners without a usable `vn` make the whole
/// triangle fall back to its face normal.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    // Where each `vn` record lives in `mesh.normals` (None if degenerate).
    let mut vn_slot: Vec<Option<u32>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => mesh.positions.push(parse_vec(&mut toks, line)?),
            Some("vn") => {
                let n = parse_vec(&mut toks, line)?;
                vn_slot.push(n.try_normalize().map(|u| {
                    mesh.normals.push(u);
                    mesh.normals.len() as u32 - 1
                }));
            }
            Some("f") => {
                let mut corners = Vec::new();
                for t in toks {
                    let mut parts = t.split('/');
                    let p = parse_index(parts.next().unwrap_or(""), mesh.positions.len(), line)?;
                    let _vt = parts.next();
                    let n = match parts.next() {
                        Some(s) if !s.is_empty() => Some(parse_index(s, vn_slot.len(), line)?),
                        _ => None,
                    };
                    corners.push((p, n));
                }
                if corners.len() < 3 {
                    return Err(Error::format("OBJ", format!("line {line}: face with < 3 corners")));
                }
                for i in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[i], corners[i + 1]];
                    let pos = tri.map(|c| c.0);
                    let slots = tri.map(|c| c.1.and_then(|n| vn_slot[n as usize]));
                    let nidx = if let [Some(a), Some(b), Some(c)] = slots {
                        [a, b, c]
                    } else {
                        let [a, b, c] = pos.map(|i| mesh.positions[i as usize]);
                        let n = (b - a).cross(c - a).try_normalize().unwrap_or(Vec3::new(0.0, 1.0, 0.0));
                        mesh.normals.push(n);
                        [mesh.normals.len() as u32 - 1; 3]
                    };
                    mesh.triangles.push((pos, nidx));
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}
