//! Marching cubes with a case table derived at startup.
//!
//! For each of the 256 corner sign patterns the table is built by walking
//! the cube faces: on every face the crossed edges are paired so that the
//! inside corners are cut off individually (this also settles ambiguous
//! faces, and since the rule depends on the face alone, neighbouring cells
//! agree). The face segments chain into closed loops, which are fanned into
//! triangles wound so their normals point along +∇φ.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::grid::GridSpec;

use super::mesh::Mesh;
use super::{classes_at, ImplicitField};

/// Corner `c` sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
fn corner_bit(c: usize, axis: usize) -> usize {
    (c >> axis) & 1
}

/// Edge `a·4 + u + 2v` runs along axis `a` with the two other coordinates
/// (in cyclic order after `a`) equal to `u` and `v`.
fn edge_between(p: usize, q: usize) -> usize {
    let a = (p ^ q).trailing_zeros() as usize;
    a * 4 + corner_bit(p, (a + 1) % 3) + 2 * corner_bit(p, (a + 2) % 3)
}

fn edge_corners(e: usize) -> (usize, usize) {
    let (a, u, v) = (e / 4, e % 2, (e / 2) % 2);
    let c0 = (u << ((a + 1) % 3)) | (v << ((a + 2) % 3));
    (c0, c0 | 1 << a)
}

/// Closed loops of crossed edges for one sign pattern (bit set = inside).
fn case_loops(config: usize) -> Vec<Vec<usize>> {
    let inside = |c: usize| config >> c & 1 == 1;
    let mut next = [usize::MAX; 12];
    for a in 0..3 {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        for side in 0..2 {
            // Counter-clockwise seen from outside the cube.
            let mut ring: Vec<usize> = [(0, 0), (1, 0), (1, 1), (0, 1)]
                .iter()
                .map(|&(qb, qc)| side << a | qb << b | qc << c)
                .collect();
            if side == 0 {
                ring.reverse();
            }
            let crossing = |i: usize| (ring[i], ring[(i + 1) % 4]);
            for i in 0..4 {
                let (p, q) = crossing(i);
                if !inside(p) && inside(q) {
                    // The inside run starting at q ends at the next in→out edge.
                    let mut j = (i + 1) % 4;
                    loop {
                        let (p2, q2) = crossing(j);
                        if inside(p2) && !inside(q2) {
                            next[edge_between(p, q)] = edge_between(p2, q2);
                            break;
                        }
                        j = (j + 1) % 4;
                    }
                }
            }
        }
    }
    let mut loops = Vec::new();
    let mut seen = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut ring = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            ring.push(e);
            e = next[e];
        }
        loops.push(ring);
    }
    loops
}

fn case_table() -> &'static [Vec<[usize; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[usize; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..256)
            .map(|config| {
                let mut tris = Vec::new();
                for ring in case_loops(config) {
                    for k in 1..ring.len() - 1 {
                        tris.push([ring[0], ring[k], ring[k + 1]]);
                    }
                }
                tris
            })
            .collect()
    })
}

/// Isosurface `φ = iso` of `field` sampled at the nodes of `spec`, with
/// vertices linearly interpolated along cell edges and labelled with the
/// field's class at the vertex.
pub fn extract_mesh<F: ImplicitField + ?Sized>(field: &F, spec: &GridSpec, iso: f64) -> Result<Mesh> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(Error::config("extraction lattice needs at least 2 nodes per axis"));
    }
    let nodes: Vec<Vec3> = (0..spec.len()).map(|i| spec.node(spec.coords(i))).collect();
    let phi = field.sdf_values(&nodes)?;
    if let Some(i) = phi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteOutput(crate::geometry::arr3(&nodes[i])));
    }
    let table = case_table();
    let mut vertex_of = vec![u32::MAX; spec.len() * 3];
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles = Vec::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner = |c: usize| [i + corner_bit(c, 0), j + corner_bit(c, 1), k + corner_bit(c, 2)];
                let mut config = 0;
                for c in 0..8 {
                    if phi[spec.index(corner(c))] < iso {
                        config |= 1 << c;
                    }
                }
                let tris = &table[config];
                if tris.is_empty() {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for tri in tris {
                    let mut t = [0usize; 3];
                    for (slot, &e) in t.iter_mut().zip(tri) {
                        if local[e] == u32::MAX {
                            let (c0, c1) = edge_corners(e);
                            let n0 = spec.index(corner(c0));
                            let key = n0 * 3 + e / 4;
                            if vertex_of[key] == u32::MAX {
                                let n1 = spec.index(corner(c1));
                                let (v0, v1) = (phi[n0], phi[n1]);
                                let s = ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0);
                                vertex_of[key] = vertices.len() as u32;
                                vertices.push(nodes[n0] + (nodes[n1] - nodes[n0]) * s);
                            }
                            local[e] = vertex_of[key];
                        }
                        *slot = local[e] as usize;
                    }
                    triangles.push(t);
                }
            }
        }
    }
    let mut mesh = Mesh {
        vertices,
        triangles,
        vertex_class: Vec::new(),
    };
    mesh.drop_degenerate();
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    mesh.vertex_class = classes_at(field, &mesh.vertices)?;
    Ok(mesh)
}
