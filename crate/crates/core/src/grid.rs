//! Regular lattices and voxel label grids.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{vec3, Aabb, Vec3};
use crate::io;

/// A regular lattice: `dims` samples per axis spaced `voxel_size` apart,
/// starting at `origin`.
///
/// Occupancy grids read it as `dims` cells whose lower corner is `origin`;
/// feature grids and extraction lattices read it as `dims` nodes with the
/// first node at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], voxel_size: f64, dims: [usize; 3]) -> Self {
        GridSpec {
            origin,
            voxel_size,
            dims,
        }
    }

    /// Cells of size `voxel_size` tiling `bounds` (rounded to the nearest count).
    pub fn cells_covering(bounds: &Aabb, voxel_size: f64) -> Self {
        let e = bounds.extent();
        let dims = [0, 1, 2].map(|a| ((e[a] / voxel_size).round() as usize).max(1));
        GridSpec::new(bounds.min, voxel_size, dims)
    }

    /// Nodes spaced `voxel_size` apart spanning `bounds` (at least 2 per axis).
    pub fn nodes_covering(bounds: &Aabb, voxel_size: f64) -> Self {
        let e = bounds.extent();
        let dims = [0, 1, 2].map(|a| ((e[a] / voxel_size).ceil() as usize + 1).max(2));
        GridSpec::new(bounds.min, voxel_size, dims)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::config("voxel_size must be positive"));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::config("grid dims must be at least 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.dims[1] + ijk[1]) * self.dims[2] + ijk[2]
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let k = index % self.dims[2];
        let j = (index / self.dims[2]) % self.dims[1];
        let i = index / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    pub fn node(&self, ijk: [usize; 3]) -> Vec3 {
        vec3(self.origin) + Vec3::new(ijk[0] as f64, ijk[1] as f64, ijk[2] as f64) * self.voxel_size
    }

    pub fn cell_center(&self, ijk: [usize; 3]) -> Vec3 {
        self.node(ijk) + Vec3::repeat(0.5 * self.voxel_size)
    }

    pub fn cell_box(&self, ijk: [usize; 3]) -> Aabb {
        let lo = self.node(ijk);
        let hi = lo + Vec3::repeat(self.voxel_size);
        Aabb::new([lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z])
    }

    /// Box covered when read as cells.
    pub fn cells_box(&self) -> Aabb {
        let lo = vec3(self.origin);
        let hi = lo + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.voxel_size;
        Aabb::new(self.origin, [hi.x, hi.y, hi.z])
    }

    /// Box covered when read as nodes.
    pub fn nodes_box(&self) -> Aabb {
        let hi = self.node([self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1]);
        Aabb::new(self.origin, [hi.x, hi.y, hi.z])
    }

    /// Cell containing `p`, if inside the cell box.
    pub fn cell_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let g = (p[a] - self.origin[a]) / self.voxel_size;
            if !(0.0..=self.dims[a] as f64).contains(&g) {
                return None;
            }
            out[a] = (g.floor() as usize).min(self.dims[a] - 1);
        }
        Some(out)
    }

    /// Centers of the `factor³` equal sub-cells of a cell.
    pub fn sub_cell_centers(&self, ijk: [usize; 3], factor: usize) -> Vec<Vec3> {
        let lo = self.node(ijk);
        let step = self.voxel_size / factor as f64;
        let mut out = Vec::with_capacity(factor * factor * factor);
        for a in 0..factor {
            for b in 0..factor {
                for c in 0..factor {
                    out.push(
                        lo + Vec3::new(
                            (a as f64 + 0.5) * step,
                            (b as f64 + 0.5) * step,
                            (c as f64 + 0.5) * step,
                        ),
                    );
                }
            }
        }
        out
    }
}

/// Per-voxel label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Free,
    Occupied(u8),
    Unobserved,
}

impl Label {
    pub const MAX_CLASSES: usize = 254;

    pub fn to_byte(self) -> u8 {
        match self {
            Label::Free => 0,
            Label::Unobserved => 255,
            Label::Occupied(c) => c + 1,
        }
    }

    pub fn from_byte(b: u8) -> Self {
        match b {
            0 => Label::Free,
            255 => Label::Unobserved,
            c => Label::Occupied(c - 1),
        }
    }

    pub fn is_observed(self) -> bool {
        self != Label::Unobserved
    }

    pub fn class(self) -> Option<usize> {
        match self {
            Label::Occupied(c) => Some(c as usize),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pub class_names: Vec<String>,
    pub labels: Vec<Label>,
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    spec: GridSpec,
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sdf_payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits_payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count_payload: Option<String>,
}

const F32LE: &str = "f32le";

/// Per-cell values appended after the labels in fused-scene files: SDF,
/// cell-major logits (as f32) and observation counts.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GridExtras {
    pub sdf: Vec<f64>,
    pub logits: Vec<f64>,
    pub counts: Vec<u32>,
}

pub(crate) const GRID_MAGIC: &[u8; 8] = b"WSDFGRID";

impl OccupancyGrid {
    pub fn new(spec: GridSpec, class_names: Vec<String>, labels: Vec<Label>) -> Result<Self> {
        let grid = OccupancyGrid {
            spec,
            class_names,
            labels,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn filled(spec: GridSpec, class_names: Vec<String>, label: Label) -> Self {
        OccupancyGrid {
            labels: vec![label; spec.len()],
            spec,
            class_names,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.labels.len() != self.spec.len() {
            return Err(Error::format("label count does not match grid dims"));
        }
        if self.class_names.len() > Label::MAX_CLASSES {
            return Err(Error::format("too many classes for the byte label encoding"));
        }
        if let Some(bad) = self
            .labels
            .iter()
            .filter_map(|l| l.class())
            .find(|&c| c >= self.class_names.len())
        {
            return Err(Error::format(format!("occupied class {bad} out of range")));
        }
        Ok(())
    }

    pub fn get(&self, ijk: [usize; 3]) -> Label {
        self.labels[self.spec.index(ijk)]
    }

    pub fn indices_where(&self, pred: impl Fn(Label) -> bool) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| pred(self.labels[i])).collect()
    }

    pub fn count(&self, pred: impl Fn(Label) -> bool) -> usize {
        self.labels.iter().filter(|&&l| pred(l)).count()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_bytes_with_extras(None)
    }

    pub(crate) fn to_bytes_with_extras(&self, extras: Option<&GridExtras>) -> Result<Vec<u8>> {
        let n = self.spec.len();
        let s = self.class_names.len();
        let header = GridHeader {
            spec: self.spec,
            class_names: self.class_names.clone(),
            sdf_payload: extras.map(|_| F32LE.to_string()),
            logits_payload: extras.map(|_| F32LE.to_string()),
            count_payload: extras.map(|_| "u32le".to_string()),
        };
        let mut payload: Vec<u8> = self.labels.iter().map(|l| l.to_byte()).collect();
        if let Some(x) = extras {
            if x.sdf.len() != n || x.logits.len() != n * s || x.counts.len() != n {
                return Err(Error::format("grid extras do not match grid dims"));
            }
            for v in x.sdf.iter().chain(&x.logits) {
                payload.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            for c in &x.counts {
                payload.extend_from_slice(&c.to_le_bytes());
            }
        }
        io::encode_container(GRID_MAGIC, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_bytes_with_extras(bytes)?.0)
    }

    pub(crate) fn from_bytes_with_extras(bytes: &[u8]) -> Result<(Self, Option<GridExtras>)> {
        let (header, payload): (GridHeader, _) = io::decode_container(GRID_MAGIC, bytes)?;
        header.spec.validate()?;
        let n = header.spec.len();
        let s = header.class_names.len();
        let with_extras = match (
            header.sdf_payload.as_deref(),
            header.logits_payload.as_deref(),
            header.count_payload.as_deref(),
        ) {
            (None, None, None) => false,
            (Some(F32LE), Some(F32LE), Some("u32le")) => true,
            _ => return Err(Error::format("unsupported grid payload layout")),
        };
        let expected = if with_extras { n + 4 * n * (s + 2) } else { n };
        if payload.len() != expected {
            return Err(Error::format("grid payload size mismatch"));
        }
        let labels = payload[..n].iter().map(|&b| Label::from_byte(b)).collect();
        let grid = OccupancyGrid::new(header.spec, header.class_names, labels)?;
        if !with_extras {
            return Ok((grid, None));
        }
        let words: Vec<[u8; 4]> = payload[n..].chunks_exact(4).map(|c| c.try_into().unwrap()).collect();
        let floats = |w: &[[u8; 4]]| w.iter().map(|b| f32::from_le_bytes(*b) as f64).collect::<Vec<_>>();
        let extras = GridExtras {
            sdf: floats(&words[..n]),
            logits: floats(&words[n..n + n * s]),
            counts: words[n + n * s..].iter().map(|b| u32::from_le_bytes(*b)).collect(),
        };
        Ok((grid, Some(extras)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?)
    }
}
