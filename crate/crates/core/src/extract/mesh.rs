use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::io::{self, PlyData};

/// Triangles below this area are dropped when cleaning a mesh (m²).
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Triangle mesh with a semantic class per vertex.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_class: Vec<usize>,
}

impl Mesh {
    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Volume enclosed by a closed mesh, positive when normals face out.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Removes triangles with repeated indices or (near-)zero area, then
    /// vertices no triangle references.
    pub fn drop_degenerate(&mut self) {
        let keep: Vec<[usize; 3]> = (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                a != b && b != c && a != c && self.triangle_area(t) > MIN_TRIANGLE_AREA
            })
            .map(|t| self.triangles[t])
            .collect();
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut classes = Vec::new();
        for tri in &keep {
            for &i in tri {
                if remap[i] == usize::MAX {
                    remap[i] = vertices.len();
                    vertices.push(self.vertices[i]);
                    if let Some(&c) = self.vertex_class.get(i) {
                        classes.push(c);
                    }
                }
            }
        }
        self.triangles = keep.iter().map(|t| t.map(|i| remap[i])).collect();
        self.vertices = vertices;
        self.vertex_class = classes;
    }

    pub fn validate(&self) -> Result<()> {
        if !self.vertex_class.is_empty() && self.vertex_class.len() != self.vertices.len() {
            return Err(Error::format("vertex class count does not match vertex count"));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::format(format!("triangle {t} indexes past the vertex list")));
            }
            if self.triangle_area(t) <= MIN_TRIANGLE_AREA {
                return Err(Error::format(format!("triangle {t} is degenerate")));
            }
        }
        Ok(())
    }

    /// `n` points uniformly distributed over the surface area.
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec3>> {
        if self.triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        Ok((0..n)
            .map(|_| {
                let r = rng.random::<f64>() * total;
                let t = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
                let [a, b, c] = self.corners(t);
                let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
                if u + v > 1.0 {
                    (u, v) = (1.0 - u, 1.0 - v);
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect())
    }

    pub fn to_ply(&self) -> String {
        let classes = !self.vertex_class.is_empty();
        let mut props: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        if classes {
            props.push("class".into());
        }
        let vertices = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut row = vec![v.x, v.y, v.z];
                if classes {
                    row.push(self.vertex_class[i] as f64);
                }
                row
            })
            .collect();
        let faces = self.triangles.iter().map(|t| t.to_vec()).collect();
        io::write_ply(
            &PlyData {
                vertex_props: props,
                vertices,
                faces,
            },
            &["class"],
        )
    }

    pub fn from_ply(text: &str) -> Result<Self> {
        let data = io::parse_ply(text)?;
        let col = |name: &str| data.vertex_props.iter().position(|p| p == name);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(Error::format("mesh PLY needs x, y, z")),
        };
        let class = col("class");
        let mut mesh = Mesh::default();
        for row in &data.vertices {
            mesh.vertices.push(Vec3::new(row[x], row[y], row[z]));
            if let Some(c) = class {
                mesh.vertex_class.push(row[c] as usize);
            }
        }
        for f in &data.faces {
            let tri: [usize; 3] = f
                .as_slice()
                .try_into()
                .map_err(|_| Error::format("mesh faces must be triangles"))?;
            mesh.triangles.push(tri);
        }
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, self.to_ply().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::format("PLY is not UTF-8"))?;
        Mesh::from_ply(&text)
    }
}

/// Closest point to `p` on triangle `abc` (Ericson, Real-Time Collision
/// Detection §5.1.5).
pub fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Möller–Trumbore; the ray parameter of the hit, if any, in `(t_min, t_max)`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, [a, b, c]: &[Vec3; 3], t_min: f64, t_max: f64) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = dir.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(&pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = tv.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qv) * inv;
    (t > t_min && t < t_max).then_some(t)
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: range into `order`. Interior: children at `start` and `start + 1`.
    start: usize,
    count: usize,
}

/// Bounding-volume hierarchy over a mesh's triangles.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    tris: Vec<[Vec3; 3]>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn new(mesh: &Mesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.corners(t)).collect();
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: (0..tris.len()).collect(),
            tris,
        };
        if !bvh.tris.is_empty() {
            bvh.nodes.push(Node {
                bounds: Aabb::new([0.0; 3], [0.0; 3]),
                start: 0,
                count: 0,
            });
            bvh.build(0, 0, bvh.tris.len());
        }
        bvh
    }

    fn build(&mut self, node: usize, lo: usize, hi: usize) {
        let bounds = Aabb::from_points(self.order[lo..hi].iter().flat_map(|&t| self.tris[t].iter()));
        if hi - lo <= LEAF_SIZE {
            self.nodes[node] = Node { bounds, start: lo, count: hi - lo };
            return;
        }
        let centroid = |t: usize| self.tris[t].iter().sum::<Vec3>() / 3.0;
        let cb = Aabb::from_points(self.order[lo..hi].iter().map(|&t| centroid(t)).collect::<Vec<_>>().iter());
        let e = cb.extent();
        let axis = (0..3).fold(0, |b, a| if e[a] > e[b] { a } else { b });
        let mid = (lo + hi) / 2;
        let tris = &self.tris;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&p, &q| {
            let cp: f64 = tris[p].iter().map(|v| v[axis]).sum();
            let cq: f64 = tris[q].iter().map(|v| v[axis]).sum();
            cp.total_cmp(&cq)
        });
        let left = self.nodes.len();
        let placeholder = Node { bounds, start: 0, count: 0 };
        self.nodes.push(placeholder.clone());
        self.nodes.push(placeholder);
        self.nodes[node] = Node { bounds, start: left, count: 0 };
        self.build(left, lo, mid);
        self.build(left + 1, mid, hi);
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Distance from `p` to the nearest triangle (infinite for an empty mesh).
    pub fn distance(&self, p: &Vec3) -> f64 {
        if self.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds.distance_sq(p) >= best {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = &self.tris[t];
                    best = best.min((closest_on_triangle(p, a, b, c) - p).norm_squared());
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let (dl, dr) = (self.nodes[l].bounds.distance_sq(p), self.nodes[r].bounds.distance_sq(p));
                // Visit the nearer child first.
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best.sqrt()
    }

    /// Smallest ray parameter `t > 0` at which `origin + t·dir` hits a triangle.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            match node.bounds.ray_interval(origin, dir) {
                Some((t0, _)) if t0 < best => {}
                _ => continue,
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    if let Some(h) = ray_triangle(origin, dir, &self.tris[t], 0.0, best) {
                        best = h;
                    }
                }
            } else {
                stack.push(node.start);
                stack.push(node.start + 1);
            }
        }
        best.is_finite().then_some(best)
    }
}
