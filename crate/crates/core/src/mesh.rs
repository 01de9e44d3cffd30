//! Triangle meshes with per-face UVs and a paintable-face mask.

use std::fmt::Write as _;
use std::path::Path;

use crate::camera::{cross, normalize, sub, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub face_uvs: Vec<[[f64; 2]; 3]>,
    pub paintable: Vec<bool>,
    /// Appearance of non-paintable faces; ignored for paintable ones.
    pub base_colors: Vec<[f32; 3]>,
    /// Texture resolution the UV layout was designed for.
    pub texture_size: [usize; 2],
}

impl Mesh {
    pub fn validate(&self) -> Result<()> {
        let nf = self.faces.len();
        if nf == 0 {
            return Err(Error::InvalidMesh("no faces".into()));
        }
        if self.face_uvs.len() != nf || self.paintable.len() != nf || self.base_colors.len() != nf {
            return Err(Error::InvalidMesh("per-face arrays differ in length".into()));
        }
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= self.vertices.len()) {
                return Err(Error::InvalidMesh(format!("face {i} indexes a missing vertex")));
            }
        }
        for (i, uv) in self.face_uvs.iter().enumerate() {
            if uv.iter().flatten().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::InvalidMesh(format!("face {i} has a UV outside [0,1]")));
            }
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        if self.texture_size[0] == 0 || self.texture_size[1] == 0 {
            return Err(Error::InvalidMesh("zero texture size".into()));
        }
        Ok(())
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Outward unit normal by counter-clockwise winding.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        normalize(cross(sub(b, a), sub(c, a)))
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Centers the bounding box on the origin and scales the longest axis to 1.
    pub fn normalized(mut self) -> Self {
        let (lo, hi) = self.bounds();
        let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        for v in &mut self.vertices {
            for k in 0..3 {
                v[k] = (v[k] - center[k]) / extent;
            }
        }
        self
    }

    pub fn paintable_count(&self) -> usize {
        self.paintable.iter().filter(|&&p| p).count()
    }

    /// Wavefront OBJ text: `v`, `vt` and `f v/vt` records.
    pub fn to_obj(&self) -> String {
        let mut s = String::from("# camouflage target mesh\n");
        let _ = writeln!(s, "# texture {} {}", self.texture_size[0], self.texture_size[1]);
        for v in &self.vertices {
            let _ = writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
        }
        for uv in &self.face_uvs {
            for p in uv {
                let _ = writeln!(s, "vt {:?} {:?}", p[0], p[1]);
            }
        }
        for (i, f) in self.faces.iter().enumerate() {
            let t = 3 * i + 1;
            let _ = writeln!(s, "f {}/{} {}/{} {}/{}", f[0] + 1, t, f[1] + 1, t + 1, f[2] + 1, t + 2);
        }
        s
    }

    /// Sidecar listing paintable faces and base colors of the others.
    ///
    /// ```text
    /// paint 0 1 2 ...
    /// base <face> <r> <g> <b>
    /// ```
    pub fn to_sidecar(&self) -> String {
        let mut s = String::from("# paintable faces, then base colors of fixed faces\npaint");
        for (i, &p) in self.paintable.iter().enumerate() {
            if p {
                let _ = write!(s, " {i}");
            }
        }
        s.push('\n');
        for (i, &p) in self.paintable.iter().enumerate() {
            if !p {
                let c = self.base_colors[i];
                let _ = writeln!(s, "base {i} {:?} {:?} {:?}", c[0], c[1], c[2]);
            }
        }
        s
    }

    pub fn from_obj(obj: &str, sidecar: &str, origin: &Path) -> Result<Mesh> {
        let bad = |line: usize, msg: &str| Error::format(origin, format!("line {}: {msg}", line + 1));
        let mut vertices = Vec::new();
        let mut uvs: Vec<[f64; 2]> = Vec::new();
        let mut faces = Vec::new();
        let mut face_uvs = Vec::new();
        let mut texture_size = [0usize, 0usize];
        for (ln, line) in obj.lines().enumerate() {
            let mut it = line.split_whitespace();
            let num = |t: Option<&str>| -> Result<f64> {
                t.and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| bad(ln, "expected a number"))
            };
            match it.next() {
                Some("v") => vertices.push([num(it.next())?, num(it.next())?, num(it.next())?]),
                Some("vt") => uvs.push([num(it.next())?, num(it.next())?]),
                Some("f") => {
                    let mut vi = [0u32; 3];
                    let mut ti = [[0.0; 2]; 3];
                    let refs: Vec<&str> = it.collect();
                    if refs.len() != 3 {
                        return Err(bad(ln, "only triangles are supported"));
                    }
                    for (k, r) in refs.iter().enumerate() {
                        let mut parts = r.split('/');
                        let v: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| bad(ln, "bad vertex index"))?;
                        let t: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| bad(ln, "face lacks a UV index"))?;
                        if v == 0 || t == 0 || t > uvs.len() {
                            return Err(bad(ln, "index out of range"));
                        }
                        vi[k] = (v - 1) as u32;
                        ti[k] = uvs[t - 1];
                    }
                    faces.push(vi);
                    face_uvs.push(ti);
                }
                Some("#") => {
                    if it.next() == Some("texture") {
                        texture_size = [num(it.next())? as usize, num(it.next())? as usize];
                    }
                }
                _ => {}
            }
        }
        let nf = faces.len();
        let mut paintable = vec![false; nf];
        let mut base_colors = vec![PAINT_BASE; nf];
        for (ln, line) in sidecar.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("paint") => {
                    for t in it {
                        let f: usize = t.parse().map_err(|_| bad(ln, "bad face index"))?;
                        *paintable.get_mut(f).ok_or_else(|| bad(ln, "face index out of range"))? = true;
                    }
                }
                Some("base") => {
                    let vals: Vec<&str> = it.collect();
                    if vals.len() != 4 {
                        return Err(bad(ln, "expected `base <face> <r> <g> <b>`"));
                    }
                    let f: usize = vals[0].parse().map_err(|_| bad(ln, "bad face index"))?;
                    let mut c = [0f32; 3];
                    for k in 0..3 {
                        c[k] = vals[k + 1].parse().map_err(|_| bad(ln, "bad color"))?;
                    }
                    *base_colors.get_mut(f).ok_or_else(|| bad(ln, "face index out of range"))? = c;
                }
                _ => {}
            }
        }
        if texture_size == [0, 0] {
            texture_size = [64, 64];
        }
        let mesh = Mesh {
            vertices,
            faces,
            face_uvs,
            paintable,
            base_colors,
            texture_size,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn load(obj_path: &Path, sidecar_path: &Path) -> Result<Mesh> {
        let obj = std::fs::read_to_string(obj_path).map_err(|e| Error::io(obj_path, e))?;
        let side = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
        Mesh::from_obj(&obj, &side, obj_path)
    }
}

/// Paintable area per atlas cell, in texels.
pub const ATLAS_CELL: usize = 16;

enum Patch {
    Quad([Vec3; 4]),
    Tri([Vec3; 3]),
}

struct Part {
    patch: Patch,
    paintable: bool,
    color: [f32; 3],
}

/// Builds meshes from quads and triangles, laying every paintable patch out
/// in its own atlas cell so patches never share texels.
#[derive(Default)]
pub struct MeshBuilder {
    parts: Vec<Part>,
}

impl MeshBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Corners in counter-clockwise order seen from outside.
    pub fn quad(&mut self, corners: [Vec3; 4], paintable: bool, color: [f32; 3]) -> &mut Self {
        self.parts.push(Part {
            patch: Patch::Quad(corners),
            paintable,
            color,
        });
        self
    }

    pub fn tri(&mut self, corners: [Vec3; 3], paintable: bool, color: [f32; 3]) -> &mut Self {
        self.parts.push(Part {
            patch: Patch::Tri(corners),
            paintable,
            color,
        });
        self
    }

    /// Quad subdivided into `nu x nv` paintable cells.
    pub fn grid(&mut self, corners: [Vec3; 4], nu: usize, nv: usize, paintable: bool, color: [f32; 3]) -> &mut Self {
        let lerp = |a: Vec3, b: Vec3, t: f64| [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t];
        let at = |u: f64, v: f64| lerp(lerp(corners[0], corners[1], u), lerp(corners[3], corners[2], u), v);
        for j in 0..nv {
            for i in 0..nu {
                let (u0, u1) = (i as f64 / nu as f64, (i + 1) as f64 / nu as f64);
                let (v0, v1) = (j as f64 / nv as f64, (j + 1) as f64 / nv as f64);
                self.quad([at(u0, v0), at(u1, v0), at(u1, v1), at(u0, v1)], paintable, color);
            }
        }
        self
    }

    /// Axis-aligned box; `paint` selects faces in the order
    /// `[-x, +x, -y, +y, -z, +z]`, subdivided `n` times along each edge.
    /// Fixed faces are a single quad colored `fixed`.
    pub fn cuboid(&mut self, lo: Vec3, hi: Vec3, paint: [bool; 6], divisions: [usize; 3], fixed: [f32; 3]) -> &mut Self {
        let [x0, y0, z0] = lo;
        let [x1, y1, z1] = hi;
        let [dx, dy, dz] = divisions;
        let faces = [
            ([[x0, y0, z0], [x0, y0, z1], [x0, y1, z1], [x0, y1, z0]], dz, dy),
            ([[x1, y0, z1], [x1, y0, z0], [x1, y1, z0], [x1, y1, z1]], dz, dy),
            ([[x0, y0, z0], [x1, y0, z0], [x1, y0, z1], [x0, y0, z1]], dx, dz),
            ([[x0, y1, z1], [x1, y1, z1], [x1, y1, z0], [x0, y1, z0]], dx, dz),
            ([[x1, y0, z0], [x0, y0, z0], [x0, y1, z0], [x1, y1, z0]], dx, dy),
            ([[x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]], dx, dy),
        ];
        for ((corners, nu, nv), p) in faces.into_iter().zip(paint) {
            if p {
                self.grid(corners, nu, nv, true, fixed);
            } else {
                self.quad(corners, false, fixed);
            }
        }
        self
    }

    /// Closed cylinder along `axis` (0 = x, 1 = y, 2 = z).
    pub fn cylinder(&mut self, center: Vec3, axis: usize, radius: f64, length: f64, segments: usize, paintable: bool, color: [f32; 3]) -> &mut Self {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let point = |theta: f64, h: f64| {
            let mut p = center;
            p[a] += radius * theta.cos();
            p[b] += radius * theta.sin();
            p[axis] += h;
            p
        };
        let (h0, h1) = (-length / 2.0, length / 2.0);
        let mut cap0 = center;
        cap0[axis] += h0;
        let mut cap1 = center;
        cap1[axis] += h1;
        for s in 0..segments {
            let t0 = std::f64::consts::TAU * s as f64 / segments as f64;
            let t1 = std::f64::consts::TAU * (s + 1) as f64 / segments as f64;
            self.quad([point(t0, h0), point(t1, h0), point(t1, h1), point(t0, h1)], paintable, color);
            self.tri([cap1, point(t0, h1), point(t1, h1)], paintable, color);
            self.tri([cap0, point(t1, h0), point(t0, h0)], paintable, color);
        }
        self
    }

    pub fn finish(&self) -> Mesh {
        let cells = self.parts.iter().filter(|p| p.paintable).count().max(1);
        let per_side = (cells as f64).sqrt().ceil() as usize;
        let size = per_side * ATLAS_CELL;
        let mut mesh = Mesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            face_uvs: Vec::new(),
            paintable: Vec::new(),
            base_colors: Vec::new(),
            texture_size: [size, size],
        };
        let mut cell = 0usize;
        for part in &self.parts {
            // inner region spans texel centers 1 .. CELL-2 so bilinear taps
            // stay inside the cell
            let uv_rect = if part.paintable {
                let (cx, cy) = (cell % per_side, cell / per_side);
                cell += 1;
                let to_uv = |t: usize| (t as f64 + 0.5) / size as f64;
                Some((
                    to_uv(cx * ATLAS_CELL + 1),
                    to_uv(cy * ATLAS_CELL + 1),
                    to_uv(cx * ATLAS_CELL + ATLAS_CELL - 2),
                    to_uv(cy * ATLAS_CELL + ATLAS_CELL - 2),
                ))
            } else {
                None
            };
            let (u0, v0, u1, v1) = uv_rect.unwrap_or((0.0, 0.0, 0.0, 0.0));
            let base = mesh.vertices.len() as u32;
            let mut push = |tri: [u32; 3], uv: [[f64; 2]; 3]| {
                mesh.faces.push([base + tri[0], base + tri[1], base + tri[2]]);
                mesh.face_uvs.push(uv);
                mesh.paintable.push(part.paintable);
                mesh.base_colors.push(if part.paintable { PAINT_BASE } else { part.color });
            };
            match &part.patch {
                Patch::Quad(c) => {
                    // corners 0..3 map to (u0,v1) (u1,v1) (u1,v0) (u0,v0): texture rows grow downward
                    let uv = [[u0, v1], [u1, v1], [u1, v0], [u0, v0]];
                    push([0, 1, 2], [uv[0], uv[1], uv[2]]);
                    push([0, 2, 3], [uv[0], uv[2], uv[3]]);
                    mesh.vertices.extend_from_slice(c);
                }
                Patch::Tri(c) => {
                    push([0, 1, 2], [[u0, v1], [u1, v1], [(u0 + u1) / 2.0, v0]]);
                    mesh.vertices.extend_from_slice(c);
                }
            }
        }
        mesh
    }
}

/// Placeholder base color of paintable faces; the texture replaces it.
pub const PAINT_BASE: [f32; 3] = [0.5; 3];

const WHEEL: [f32; 3] = [0.08, 0.08, 0.09];
const GLASS: [f32; 3] = [0.18, 0.24, 0.32];
const UNDERBODY: [f32; 3] = [0.12, 0.12, 0.12];

/// Low-poly vehicle: paintable body and roof, fixed windows, underbody and
/// wheels. Length runs along x, the sides face ±z.
pub fn vehicle() -> Mesh {
    let mut b = MeshBuilder::new();
    let paint = [0.5f32; 3];
    // lower body: everything but the underbody is paintable
    b.cuboid([-0.5, 0.1, -0.2], [0.5, 0.32, 0.2], [true, true, false, true, true, true], [6, 2, 2], UNDERBODY);
    // cabin: sloped glass front and back, glass sides, paintable roof
    let (y0, y1) = (0.32, 0.5);
    let (fx0, fx1) = (-0.26, 0.2);
    let (tx0, tx1) = (-0.16, 0.1);
    let (z0, z1) = (-0.17, 0.17);
    b.grid([[tx0, y1, z1], [tx1, y1, z1], [tx1, y1, z0], [tx0, y1, z0]], 2, 2, true, paint);
    b.quad([[fx1, y0, z1], [fx1, y0, z0], [tx1, y1, z0], [tx1, y1, z1]], false, GLASS);
    b.quad([[fx0, y0, z0], [fx0, y0, z1], [tx0, y1, z1], [tx0, y1, z0]], false, GLASS);
    b.quad([[fx1, y0, z0], [fx0, y0, z0], [tx0, y1, z0], [tx1, y1, z0]], false, GLASS);
    b.quad([[fx0, y0, z1], [fx1, y0, z1], [tx1, y1, z1], [tx0, y1, z1]], false, GLASS);
    for (x, z) in [(-0.3, -0.2), (0.3, -0.2), (-0.3, 0.2), (0.3, 0.2)] {
        b.cylinder([x, 0.1, z], 2, 0.1, 0.07, 10, false, WHEEL);
    }
    b.finish().normalized()
}

/// Tall cylinder standing on y.
pub fn tall_cylinder() -> Mesh {
    let mut b = MeshBuilder::new();
    b.cylinder([0.0, 0.0, 0.0], 1, 0.17, 1.0, 12, true, [0.5; 3]);
    b.finish().normalized()
}

pub fn sphere() -> Mesh {
    let (rings, segments) = (7, 12);
    let mut b = MeshBuilder::new();
    let point = |r: usize, s: usize| {
        let phi = std::f64::consts::PI * r as f64 / rings as f64;
        let theta = std::f64::consts::TAU * s as f64 / segments as f64;
        [0.5 * phi.sin() * theta.cos(), 0.5 * phi.cos(), 0.5 * phi.sin() * theta.sin()]
    };
    for r in 0..rings {
        for s in 0..segments {
            let (a, bq, c, d) = (point(r, s), point(r, s + 1), point(r + 1, s + 1), point(r + 1, s));
            if r == 0 {
                b.tri([a, c, d], true, [0.5; 3]);
            } else if r == rings - 1 {
                b.tri([a, bq, d], true, [0.5; 3]);
            } else {
                b.quad([a, bq, c, d], true, [0.5; 3]);
            }
        }
    }
    b.finish().normalized()
}

pub fn cone() -> Mesh {
    let segments = 12;
    let mut b = MeshBuilder::new();
    let (radius, height) = (0.3, 0.8);
    let apex = [0.0, height / 2.0, 0.0];
    let base_c = [0.0, -height / 2.0, 0.0];
    let rim = |s: usize| {
        let t = std::f64::consts::TAU * s as f64 / segments as f64;
        [radius * t.cos(), -height / 2.0, radius * t.sin()]
    };
    for s in 0..segments {
        b.tri([apex, rim(s + 1), rim(s)], true, [0.5; 3]);
        b.tri([base_c, rim(s), rim(s + 1)], true, [0.5; 3]);
    }
    b.finish().normalized()
}
