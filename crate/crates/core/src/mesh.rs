//! Closed triangulated surfaces: loading, sphere generation and per-element geometry.
//!
//! Triangles are stored counterclockwise as seen from outside, so the cross
//! product of the edge vectors points away from the enclosed volume.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{BemError, Result};

pub type Vec3 = Vector3<f64>;

/// Relative area threshold below which a triangle counts as degenerate.
pub const DEGENERATE_AREA_REL: f64 = 1e-14;

/// Largest subdivision count accepted by [`generate_sphere_mesh`].
pub const MAX_SPHERE_SUBDIVISIONS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "off" => Some(Self::Off),
            "obj" => Some(Self::Obj),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Validates indices, repeated vertices and triangle areas.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(BemError::EmptyInput("mesh has no triangles"));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(BemError::InvalidMesh(format!(
                    "triangle {t} references vertex {bad}, mesh has {}",
                    vertices.len()
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(BemError::InvalidMesh(format!(
                    "triangle {t} repeats a vertex"
                )));
            }
        }
        let mesh = Self {
            vertices,
            triangles,
        };
        let diag2 = mesh.bounding_box_diagonal().powi(2);
        for t in 0..mesh.triangles.len() {
            if mesh.triangle_area(t) <= DEGENERATE_AREA_REL * diag2 {
                return Err(BemError::DegenerateTriangle(t));
            }
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Sum of signed tetrahedra volumes against the origin.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    /// A mesh is closed when every directed edge is matched by its reverse
    /// exactly once.
    pub fn is_closed(&self) -> bool {
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for &[a, b, c] in &self.triangles {
            for (i, j) in [(a, b), (b, c), (c, a)] {
                *edges.entry((i, j)).or_insert(0) += 1;
            }
        }
        edges
            .iter()
            .all(|(&(i, j), &n)| n == 1 && edges.get(&(j, i)) == Some(&1))
    }

    pub fn flip_orientation(&mut self) {
        for tri in &mut self.triangles {
            tri.swap(1, 2);
        }
    }

    /// Flips every triangle when the mesh is closed and inward oriented.
    pub fn orient_outward(&mut self) {
        if self.is_closed() && self.signed_volume() < 0.0 {
            self.flip_orientation();
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn to_off(&self) -> String {
        let mut s = String::new();
        writeln!(s, "OFF").unwrap();
        writeln!(s, "{} {} 0", self.vertices.len(), self.triangles.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{:e} {:e} {:e}", v.x, v.y, v.z).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        s
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            writeln!(s, "v {:e} {:e} {:e}", v.x, v.y, v.z).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
        }
        s
    }

    pub fn save(&self, path: &Path, format: MeshFormat) -> Result<()> {
        let text = match format {
            MeshFormat::Off => self.to_off(),
            MeshFormat::Obj => self.to_obj(),
        };
        fs::write(path, text)?;
        Ok(())
    }
}

/// Reads an OFF or OBJ file. Closed meshes come back outward oriented; open
/// meshes are accepted with a warning.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh> {
    if !path.exists() {
        return Err(BemError::MeshNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut mesh = match format {
        MeshFormat::Off => parse_off(&text)?,
        MeshFormat::Obj => parse_obj(&text)?,
    };
    if mesh.is_closed() {
        mesh.orient_outward();
    } else {
        log::warn!("{} is not a closed surface", path.display());
    }
    Ok(mesh)
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse().map_err(|_| BemError::Parse {
        line,
        message: format!("expected a number, found {tok:?}"),
    })
}

fn parse_index(tok: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| BemError::Parse {
        line,
        message: format!("expected a vertex index, found {tok:?}"),
    })
}

pub fn parse_off(text: &str) -> Result<TriMesh> {
    // Comments and blank lines are skipped; line numbers stay 1-based.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (line, header) = lines.next().ok_or(BemError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let counts_line = if header == "OFF" {
        lines.next()
    } else if let Some(rest) = header.strip_prefix("OFF") {
        Some((line, rest.trim()))
    } else {
        return Err(BemError::Parse {
            line,
            message: "missing OFF header".into(),
        });
    };
    let (line, counts) = counts_line.ok_or(BemError::Parse {
        line,
        message: "missing element counts".into(),
    })?;
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| parse_index(t, line))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(BemError::Parse {
            line,
            message: "expected vertex and face counts".into(),
        });
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, l) = lines.next().ok_or(BemError::Parse {
            line,
            message: "truncated vertex list".into(),
        })?;
        let xs: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| parse_f64(t, line))
            .collect::<Result<_>>()?;
        if xs.len() != 3 {
            return Err(BemError::Parse {
                line,
                message: "vertex needs three coordinates".into(),
            });
        }
        vertices.push(Vec3::new(xs[0], xs[1], xs[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, l) = lines.next().ok_or(BemError::Parse {
            line,
            message: "truncated face list".into(),
        })?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let n = parse_index(toks.first().copied().unwrap_or(""), line)?;
        if n != 3 {
            return Err(BemError::NonTriangularFace { line, vertices: n });
        }
        if toks.len() < 4 {
            return Err(BemError::Parse {
                line,
                message: "face lists fewer indices than declared".into(),
            });
        }
        triangles.push([
            parse_index(toks[1], line)?,
            parse_index(toks[2], line)?,
            parse_index(toks[3], line)?,
        ]);
    }
    TriMesh::new(vertices, triangles)
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        let mut toks = l.split_whitespace();
        match toks.next() {
            Some("v") => {
                let xs: Vec<f64> = toks
                    .take(3)
                    .map(|t| parse_f64(t, line))
                    .collect::<Result<_>>()?;
                if xs.len() != 3 {
                    return Err(BemError::Parse {
                        line,
                        message: "vertex needs three coordinates".into(),
                    });
                }
                vertices.push(Vec3::new(xs[0], xs[1], xs[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = toks.collect();
                if refs.len() != 3 {
                    return Err(BemError::NonTriangularFace {
                        line,
                        vertices: refs.len(),
                    });
                }
                let mut tri = [0usize; 3];
                for (slot, r) in tri.iter_mut().zip(&refs) {
                    // "v", "v/vt", "v//vn" and "v/vt/vn"; negative indices are relative.
                    let head = r.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|_| BemError::Parse {
                        line,
                        message: format!("bad face reference {r:?}"),
                    })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else {
                        vertices.len() as i64 + idx
                    };
                    if idx == 0 || resolved < 0 {
                        return Err(BemError::Parse {
                            line,
                            message: format!("face reference {idx} out of range"),
                        });
                    }
                    *slot = resolved as usize;
                }
                triangles.push(tri);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Octahedron refined `subdivisions` times by 4-way splitting, with every new
/// vertex projected onto the sphere. Yields `8 * 4^n` triangles.
pub fn generate_sphere_mesh(subdivisions: u32, radius: f64) -> Result<TriMesh> {
    if subdivisions > MAX_SPHERE_SUBDIVISIONS {
        return Err(BemError::InvalidArgument(format!(
            "sphere subdivisions {subdivisions} > {MAX_SPHERE_SUBDIVISIONS}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(BemError::InvalidArgument(format!("sphere radius {radius}")));
    }
    let mut vertices = vec![
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.0, 0.0, -1.0),
    ];
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                vertices.push((0.5 * (vertices[a] + vertices[b])).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for &[a, b, c] in &triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriMesh::new(vertices, triangles)
}

/// One flat triangular element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub vertices: [Vec3; 3],
    /// Collocation point.
    pub centroid: Vec3,
    /// Unit normal pointing out of the enclosed volume.
    pub normal: Vec3,
    pub area: f64,
    /// Longest edge.
    pub diameter: f64,
}

impl Element {
    pub fn from_vertices(vertices: [Vec3; 3]) -> Option<Self> {
        let [a, b, c] = vertices;
        let cross = (b - a).cross(&(c - a));
        let twice_area = cross.norm();
        if !(twice_area > 0.0) {
            return None;
        }
        Some(Self {
            vertices,
            centroid: (a + b + c) / 3.0,
            normal: cross / twice_area,
            area: 0.5 * twice_area,
            diameter: (b - a).norm().max((c - b).norm()).max((a - c).norm()),
        })
    }

    /// Euclidean distance from `x` to the closed triangle.
    pub fn distance_to(&self, x: &Vec3) -> f64 {
        closest_point_on_triangle(x, &self.vertices).metric_distance(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementGeometry {
    pub elements: Vec<Element>,
}

impl ElementGeometry {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn centroids(&self) -> Vec<Vec3> {
        self.elements.iter().map(|e| e.centroid).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.elements.iter().map(|e| e.area).sum()
    }

    /// Copy with every normal reversed. The boundary integral equation is
    /// written with normals pointing out of the acoustic domain, which is
    /// into the scatterer.
    pub fn reversed_normals(&self) -> Self {
        let elements = self
            .elements
            .iter()
            .map(|e| Element {
                normal: -e.normal,
                ..*e
            })
            .collect();
        Self { elements }
    }
}

pub fn compute_element_geometry(mesh: &TriMesh) -> Result<ElementGeometry> {
    let elements = (0..mesh.num_triangles())
        .map(|t| Element::from_vertices(mesh.triangle_vertices(t)).ok_or(BemError::DegenerateTriangle(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ElementGeometry { elements })
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
fn closest_point_on_triangle(p: &Vec3, [a, b, c]: &[Vec3; 3]) -> Vec3 {
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
