//! Binary container shared by the grid and checkpoint formats, plus the
//! ASCII PLY point/mesh readers and writers.
//!
//! Container layout: 8-byte magic, u64 LE header length, UTF-8 JSON header,
//! then a little-endian binary payload whose layout the header describes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn encode_container<H: Serialize>(magic: &[u8; 8], header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header).map_err(|e| Error::format(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode_container<'a, H: DeserializeOwned>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<(H, &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::format(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format("header length exceeds file size"))?;
    let header = serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::format(e.to_string()))?;
    Ok((header, &bytes[end..]))
}

pub fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Reads `n` little-endian f64 values from the front of `bytes`, advancing it.
pub fn take_f64s(bytes: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    if bytes.len() < n * 8 {
        return Err(Error::format("payload truncated"));
    }
    let (head, tail) = bytes.split_at(n * 8);
    *bytes = tail;
    Ok(head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format(e.to_string()))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

/// Minimal ASCII PLY: header with one `vertex` element (and optionally a
/// `face` element), body as whitespace-separated values.
pub struct PlyData {
    pub vertex_props: Vec<String>,
    pub vertices: Vec<Vec<f64>>,
    pub faces: Vec<Vec<usize>>,
}

pub fn write_ply(data: &PlyData, int_props: &[&str]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", data.vertices.len());
    for p in &data.vertex_props {
        let ty = if int_props.contains(&p.as_str()) { "int" } else { "double" };
        let _ = writeln!(s, "property {ty} {p}");
    }
    if !data.faces.is_empty() {
        let _ = writeln!(s, "element face {}", data.faces.len());
        s.push_str("property list uchar int vertex_indices\n");
    }
    s.push_str("end_header\n");
    for v in &data.vertices {
        let mut first = true;
        for (value, prop) in v.iter().zip(&data.vertex_props) {
            if !first {
                s.push(' ');
            }
            first = false;
            if int_props.contains(&prop.as_str()) {
                let _ = write!(s, "{}", *value as i64);
            } else {
                let _ = write!(s, "{value:?}");
            }
        }
        s.push('\n');
    }
    for f in &data.faces {
        let _ = write!(s, "{}", f.len());
        for i in f {
            let _ = write!(s, " {i}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_ply(text: &str) -> Result<PlyData> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::format("missing ply magic"));
    }
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut props = Vec::new();
    let mut current = "";
    for line in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(Error::format("only ascii PLY is supported")),
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                current = "vertex";
                n_vertices = n.parse().map_err(|_| Error::format("bad vertex count"))?;
            }
            ["element", "face", n] => {
                current = "face";
                n_faces = n.parse().map_err(|_| Error::format("bad face count"))?;
            }
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(Error::format(format!("unexpected PLY header line `{line}`"))),
        }
    }
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let line = lines.next().ok_or_else(|| Error::format("PLY vertex list truncated"))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::format(format!("bad number `{t}`"))))
            .collect::<Result<_>>()?;
        if row.len() != props.len() {
            return Err(Error::format("PLY vertex row has wrong arity"));
        }
        vertices.push(row);
    }
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let line = lines.next().ok_or_else(|| Error::format("PLY face list truncated"))?;
        let row: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::format(format!("bad index `{t}`"))))
            .collect::<Result<_>>()?;
        let (&n, rest) = row.split_first().ok_or_else(|| Error::format("empty face row"))?;
        if rest.len() != n {
            return Err(Error::format("PLY face row has wrong arity"));
        }
        faces.push(rest.to_vec());
    }
    Ok(PlyData {
        vertex_props: props,
        vertices,
        faces,
    })
}
