//! Mass properties of closed triangle meshes under constant density.
//!
//! Volume, center of mass and second moments are accumulated over the signed
//! tetrahedra spanned by the origin and each outward-oriented face.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Default density, kg/m^3.
pub const DEFAULT_DENSITY: f64 = 1000.0;

const MIN_VOLUME: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

/// Mass, center of mass and inertia about the center of mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

impl BodyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::Parameter(format!("mass must be positive, got {}", self.mass)));
        }
        let scale = self.inertia.abs().max().max(f64::MIN_POSITIVE);
        if (self.inertia - self.inertia.transpose()).abs().max() > 1e-9 * scale {
            return Err(Error::Parameter("inertia tensor not symmetric".into()));
        }
        let mut m = self.principal_moments();
        m.as_mut_slice().sort_by(f64::total_cmp);
        if m[0] <= 0.0 {
            return Err(Error::Parameter("inertia tensor not positive-definite".into()));
        }
        if m[0] + m[1] < m[2] * (1.0 - 1e-9) {
            return Err(Error::Parameter(
                "principal moments violate the triangle inequality".into(),
            ));
        }
        Ok(())
    }

    pub fn principal_moments(&self) -> Vector3<f64> {
        SymmetricEigen::new(self.inertia).eigenvalues
    }

    /// Same body after scaling its mass (and inertia) by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mass: self.mass * factor,
            com: self.com,
            inertia: self.inertia * factor,
        }
    }

    /// Solid box of the given extents centered at `com`.
    pub fn solid_box(mass: f64, extents: Vector3<f64>, com: Vector3<f64>) -> Self {
        let e2 = extents.component_mul(&extents);
        Self {
            mass,
            com,
            inertia: Matrix3::from_diagonal(&Vector3::new(
                e2.y + e2.z,
                e2.x + e2.z,
                e2.x + e2.y,
            )) * (mass / 12.0),
        }
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::Topology(format!(
                "face {f:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        Ok(Self { vertices, faces })
    }

    /// Axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        let v = |x: bool, y: bool, z: bool| {
            Vector3::new(
                if x { max.x } else { min.x },
                if y { max.y } else { min.y },
                if z { max.z } else { min.z },
            )
        };
        let vertices = vec![
            v(false, false, false),
            v(true, false, false),
            v(true, true, false),
            v(false, true, false),
            v(false, false, true),
            v(true, false, true),
            v(true, true, true),
            v(false, true, true),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [3, 6, 2],
            [3, 7, 6],
            [0, 4, 7],
            [0, 7, 3],
            [1, 2, 6],
            [1, 6, 5],
        ];
        Self { vertices, faces }
    }

    /// Subdivided icosahedron inscribed in a sphere.
    pub fn icosphere(center: Vector3<f64>, radius: f64, subdivisions: usize) -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vector3<f64>> = [
            (-1.0, phi, 0.0),
            (1.0, phi, 0.0),
            (-1.0, -phi, 0.0),
            (1.0, -phi, 0.0),
            (0.0, -1.0, phi),
            (0.0, 1.0, phi),
            (0.0, -1.0, -phi),
            (0.0, 1.0, -phi),
            (phi, 0.0, -1.0),
            (phi, 0.0, 1.0),
            (-phi, 0.0, -1.0),
            (-phi, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        for v in &mut vertices {
            *v = center + *v * radius;
        }
        Self { vertices, faces }
    }

    pub fn translated(&self, by: &Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + by).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn rotated(&self, rotation: &Matrix3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| rotation * v).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Same surface with every face reversed.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    /// Every directed edge must appear exactly once, paired with its reverse.
    pub fn check_watertight(&self) -> Result<()> {
        let mut edges: HashMap<(usize, usize), u32> = HashMap::with_capacity(self.faces.len() * 3);
        for &[a, b, c] in &self.faces {
            if a == b || b == c || a == c {
                return Err(Error::Topology(format!("degenerate face [{a}, {b}, {c}]")));
            }
            for e in [(a, b), (b, c), (c, a)] {
                *edges.entry(e).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &edges {
            if count != 1 {
                return Err(Error::Topology(format!(
                    "directed edge ({a}, {b}) used {count} times"
                )));
            }
            if edges.get(&(b, a)) != Some(&1) {
                return Err(Error::Topology(format!("edge ({a}, {b}) has no opposite")));
            }
        }
        if self.faces.is_empty() {
            return Err(Error::Topology("mesh has no faces".into()));
        }
        Ok(())
    }

    fn signed_volume_unchecked(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn parse_obj(reader: impl BufRead) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let mut tokens = line.split_whitespace();
            let bad = |what: &str| Error::Parse(format!("OBJ line {}: {what}", lineno + 1));
            match tokens.next() {
                Some("v") => {
                    let coords: Vec<f64> = tokens
                        .take(3)
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("bad vertex coordinate"))?;
                    if coords.len() != 3 {
                        return Err(bad("vertex needs three coordinates"));
                    }
                    vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = tokens
                        .map(|tok| {
                            // accept v, v/vt, v//vn forms
                            tok.split('/')
                                .next()
                                .and_then(|s| s.parse::<usize>().ok())
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                        })
                        .collect::<Option<_>>()
                        .ok_or_else(|| bad("bad face index"))?;
                    if idx.len() != 3 {
                        return Err(bad("only triangular faces are supported"));
                    }
                    faces.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    pub fn write_obj(&self, mut w: impl Write) -> Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for [a, b, c] in &self.faces {
            writeln!(w, "f {} {} {}", a + 1, b + 1, c + 1)?;
        }
        Ok(())
    }
}

/// Signed enclosed volume; negative for inward-oriented meshes.
pub fn mesh_volume(mesh: &TriangleMesh) -> Result<f64> {
    mesh.check_watertight()?;
    let v = mesh.signed_volume_unchecked();
    if v.abs() < MIN_VOLUME {
        return Err(Error::DegenerateMesh(v));
    }
    Ok(v)
}

/// Mass, center of mass and inertia (about the center of mass) of a solid mesh.
pub fn mesh_mass_properties(mesh: &TriangleMesh, density: f64) -> Result<BodyParams> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::Parameter(format!("density must be positive, got {density}")));
    }
    let volume = mesh_volume(mesh)?;
    if volume < 0.0 {
        return Err(Error::Topology("mesh is inward-oriented".into()));
    }
    let mut first = Vector3::zeros();
    let mut second = Matrix3::zeros();
    for &[a, b, c] in &mesh.faces {
        let (a, b, c) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
        let det = a.dot(&b.cross(&c));
        let s = a + b + c;
        first += s * (det / 24.0);
        second += (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose())
            * (det / 120.0);
    }
    let mass = density * volume;
    let com = first / volume;
    let second = second * density;
    let about_origin = Matrix3::identity() * second.trace() - second;
    let shift = (Matrix3::identity() * com.norm_squared() - com * com.transpose()) * mass;
    let inertia = about_origin - shift;
    Ok(BodyParams {
        mass,
        com,
        inertia: (inertia + inertia.transpose()) * 0.5,
    })
}

/// Per-vertex soft assignment of mesh vertices to kinematic parts.
#[derive(Clone, Debug, PartialEq)]
pub struct PartWeights {
    rows: Vec<Vec<f64>>,
}

impl PartWeights {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let parts = rows.first().map_or(0, Vec::len);
        if parts == 0 {
            return Err(shape_err("part weights need at least one part"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != parts {
                return Err(shape_err(format!(
                    "weight row {i} has {} parts, expected {parts}",
                    row.len()
                )));
            }
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::Parameter(format!("weight row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Parameter(format!("weight row {i} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn vertex_count(&self) -> usize {
        self.rows.len()
    }

    pub fn part_count(&self) -> usize {
        self.rows[0].len()
    }

    /// Reads one comma-separated row per vertex, no header.
    pub fn from_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }
}

/// Assign every vertex to its highest-weight part (lowest index on ties).
pub fn segment_parts(mesh: &TriangleMesh, weights: &PartWeights) -> Result<Vec<Vec<usize>>> {
    if weights.vertex_count() != mesh.vertices.len() {
        return Err(shape_err(format!(
            "{} weight rows for {} vertices",
            weights.vertex_count(),
            mesh.vertices.len()
        )));
    }
    let mut parts = vec![Vec::new(); weights.part_count()];
    for (v, row) in weights.rows().iter().enumerate() {
        let mut best = 0;
        for (k, &w) in row.iter().enumerate().skip(1) {
            if w > row[best] {
                best = k;
            }
        }
        parts[best].push(v);
    }
    Ok(parts)
}
