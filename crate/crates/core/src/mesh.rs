//! Triangle mesh ingestion: binary/ASCII STL parsing and per-face geometry.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Degenerate-face threshold as a fraction of the squared bounding-box diagonal.
const DEGENERATE_AREA_FRACTION: f64 = 1e-12;

const STL_HEADER_LEN: usize = 80;
const STL_RECORD_LEN: usize = 50;

/// Triangulated surface with per-face derived quantities.
///
/// Vertices are deduplicated by exact bit equality. Faces with area below
/// `1e-12 * diag^2` of the vertex bounding box are dropped at construction.
#[derive(Debug, Clone)]
pub struct TriangleSurface {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub face_area: Vec<f64>,
    pub face_normal: Vec<Vec3>,
    pub face_center: Vec<Vec3>,
    pub center_of_mass: Vec3,
}

/// Counts reported by the STL parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseReport {
    pub facets_read: usize,
    pub facets_dropped: usize,
    pub unique_vertices: usize,
}

impl TriangleSurface {
    /// Build a surface from raw vertices and faces: validates indices, drops
    /// degenerate faces, and fills every derived field.
    pub fn from_parts(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        for (fi, f) in faces.iter().enumerate() {
            for &vi in f {
                if vi as usize >= vertices.len() {
                    return Err(Error::FaceIndexOutOfRange {
                        face: fi,
                        vertex: vi as usize,
                        vertex_count: vertices.len(),
                    });
                }
            }
        }

        let threshold = degenerate_threshold(&vertices);
        let kept: Vec<[u32; 3]> = faces
            .into_iter()
            .filter(|f| triangle_area(&vertices, *f) >= threshold)
            .collect();

        let mut surface = TriangleSurface {
            vertices,
            faces: kept,
            face_area: Vec::new(),
            face_normal: Vec::new(),
            face_center: Vec::new(),
            center_of_mass: Vec3::ZERO,
        };
        face_properties(&mut surface)?;
        Ok(surface)
    }

    /// Surface with no geometry. Valid input for the encoder (which emits a
    /// zeroed point-cloud projection and an unsigned SDF fallback).
    pub fn empty() -> Self {
        TriangleSurface {
            vertices: Vec::new(),
            faces: Vec::new(),
            face_area: Vec::new(),
            face_normal: Vec::new(),
            face_center: Vec::new(),
            center_of_mass: Vec3::ZERO,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.face_area.iter().sum()
    }

    /// The three corner positions of face `f`.
    #[inline]
    pub fn triangle(&self, f: usize) -> (Vec3, Vec3, Vec3) {
        let [a, b, c] = self.faces[f];
        (self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize])
    }

    /// Component-wise min/max over all vertices.
    pub fn vertex_bounds(&self) -> Option<(Vec3, Vec3)> {
        vertex_bounds(&self.vertices)
    }
}

fn vertex_bounds(vertices: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *vertices.first()?;
    let mut lo = first;
    let mut hi = first;
    for &v in &vertices[1..] {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Some((lo, hi))
}

fn degenerate_threshold(vertices: &[Vec3]) -> f64 {
    match vertex_bounds(vertices) {
        Some((lo, hi)) => DEGENERATE_AREA_FRACTION * (hi - lo).norm_sq(),
        None => 0.0,
    }
}

fn triangle_area(vertices: &[Vec3], [a, b, c]: [u32; 3]) -> f64 {
    let v0 = vertices[a as usize];
    let v1 = vertices[b as usize];
    let v2 = vertices[c as usize];
    0.5 * (v1 - v0).cross(v2 - v0).norm()
}

/// Fill `face_area`, `face_normal`, `face_center`, and `center_of_mass`.
///
/// Area is half the winding cross product, the normal its normalization, the
/// center the vertex mean, and the center of mass the area-weighted mean of
/// face centers.
pub fn face_properties(surface: &mut TriangleSurface) -> Result<()> {
    let n = surface.faces.len();
    surface.face_area = Vec::with_capacity(n);
    surface.face_normal = Vec::with_capacity(n);
    surface.face_center = Vec::with_capacity(n);

    let mut weighted = Vec3::ZERO;
    let mut total = 0.0;
    for (fi, &[a, b, c]) in surface.faces.iter().enumerate() {
        let v0 = surface.vertices[a as usize];
        let v1 = surface.vertices[b as usize];
        let v2 = surface.vertices[c as usize];
        let cross = (v1 - v0).cross(v2 - v0);
        let norm = cross.norm();
        if norm <= 0.0 {
            return Err(Error::DegenerateFaceSurvived { face: fi });
        }
        let area = 0.5 * norm;
        let center = (v0 + v1 + v2) / 3.0;
        surface.face_area.push(area);
        surface.face_normal.push(cross / norm);
        surface.face_center.push(center);
        weighted += center * area;
        total += area;
    }
    surface.center_of_mass = if total > 0.0 { weighted / total } else { Vec3::ZERO };
    Ok(())
}

/// Parse binary or ASCII STL bytes into a surface.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleSurface> {
    parse_stl_with_report(bytes).map(|(s, _)| s)
}

/// Same as [`parse_stl`] but also returns the parser counts.
pub fn parse_stl_with_report(bytes: &[u8]) -> Result<(TriangleSurface, ParseReport)> {
    let facets = if is_binary_layout(bytes) {
        parse_binary_facets(bytes)?
    } else if bytes
        .iter()
        .skip_while(|b| b.is_ascii_whitespace())
        .take(5)
        .copied()
        .collect::<Vec<u8>>()
        == b"solid"
    {
        parse_ascii_facets(bytes)?
    } else {
        // Neither a consistent binary layout nor a "solid" prefix: report the
        // binary-layout failure since that carries the byte offset.
        parse_binary_facets(bytes)?
    };

    let facets_read = facets.len();
    let (vertices, faces) = weld_vertices(&facets);
    let surface = TriangleSurface::from_parts(vertices, faces)?;
    if surface.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let report = ParseReport {
        facets_read,
        facets_dropped: facets_read - surface.faces.len(),
        unique_vertices: surface.vertices.len(),
    };
    Ok((surface, report))
}

/// Emit the surface as binary STL (80-byte header, u32 count, 50-byte
/// little-endian facet records). Normals are written from the stored values.
pub fn write_stl_binary(surface: &TriangleSurface) -> Vec<u8> {
    let mut out = Vec::with_capacity(STL_HEADER_LEN + 4 + STL_RECORD_LEN * surface.faces.len());
    let mut header = [0u8; STL_HEADER_LEN];
    let tag = b"binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(surface.faces.len() as u32).to_le_bytes());
    for f in 0..surface.faces.len() {
        let (v0, v1, v2) = surface.triangle(f);
        write_f32_triplet(&mut out, surface.face_normal[f]);
        write_f32_triplet(&mut out, v0);
        write_f32_triplet(&mut out, v1);
        write_f32_triplet(&mut out, v2);
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

fn write_f32_triplet(out: &mut Vec<u8>, v: Vec3) {
    out.extend_from_slice(&(v.x as f32).to_le_bytes());
    out.extend_from_slice(&(v.y as f32).to_le_bytes());
    out.extend_from_slice(&(v.z as f32).to_le_bytes());
}

/// A binary STL is self-describing: header + count + exactly count records.
fn is_binary_layout(bytes: &[u8]) -> bool {
    if bytes.len() < STL_HEADER_LEN + 4 {
        return false;
    }
    let count = u32::from_le_bytes(bytes[STL_HEADER_LEN..STL_HEADER_LEN + 4].try_into().unwrap());
    bytes.len() == STL_HEADER_LEN + 4 + STL_RECORD_LEN * count as usize
}

fn parse_binary_facets(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>> {
    if bytes.len() < STL_HEADER_LEN + 4 {
        return Err(Error::StlTruncated { offset: bytes.len() });
    }
    let declared =
        u32::from_le_bytes(bytes[STL_HEADER_LEN..STL_HEADER_LEN + 4].try_into().unwrap()) as usize;
    let payload = &bytes[STL_HEADER_LEN + 4..];
    let actual = payload.len() / STL_RECORD_LEN;
    if payload.len() % STL_RECORD_LEN != 0 {
        return Err(Error::StlTruncated {
            offset: STL_HEADER_LEN + 4 + actual * STL_RECORD_LEN + payload.len() % STL_RECORD_LEN,
        });
    }
    if actual != declared {
        return Err(Error::StlCountMismatch { declared, actual });
    }
    let mut facets = Vec::with_capacity(declared);
    for rec in payload.chunks_exact(STL_RECORD_LEN) {
        // Skip the stored normal (bytes 0..12); it is recomputed from winding.
        let v = |off: usize| -> Vec3 {
            let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
            Vec3::new(f(off), f(off + 4), f(off + 8))
        };
        facets.push([v(12), v(24), v(36)]);
    }
    Ok(facets)
}

fn parse_ascii_facets(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::StlSyntax {
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })?;
    let mut facets = Vec::new();
    let mut pending: Vec<Vec3> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let mut words = line.split_whitespace();
        match words.next() {
            Some("vertex") => {
                let mut coord = |axis: &str| -> Result<f64> {
                    words
                        .next()
                        .ok_or_else(|| Error::StlSyntax {
                            line: lineno + 1,
                            message: format!("vertex missing {axis} coordinate"),
                        })?
                        .parse::<f64>()
                        .map_err(|e| Error::StlSyntax {
                            line: lineno + 1,
                            message: format!("bad {axis} coordinate: {e}"),
                        })
                };
                let x = coord("x")?;
                let y = coord("y")?;
                let z = coord("z")?;
                pending.push(Vec3::new(x, y, z));
            }
            Some("endfacet") => {
                if pending.len() != 3 {
                    return Err(Error::StlSyntax {
                        line: lineno + 1,
                        message: format!("facet has {} vertices, expected 3", pending.len()),
                    });
                }
                facets.push([pending[0], pending[1], pending[2]]);
                pending.clear();
            }
            _ => {} // solid / facet normal / outer loop / endloop / endsolid
        }
    }
    if !pending.is_empty() {
        return Err(Error::StlSyntax {
            line: text.lines().count(),
            message: "dangling vertices at end of file".into(),
        });
    }
    Ok(facets)
}

/// Deduplicate facet corners by exact bit equality of their coordinates.
fn weld_vertices(facets: &[[Vec3; 3]]) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let mut lookup: HashMap<[u64; 3], u32> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces = Vec::with_capacity(facets.len());
    for facet in facets {
        let mut idx = [0u32; 3];
        for (k, v) in facet.iter().enumerate() {
            let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
            idx[k] = *lookup.entry(key).or_insert_with(|| {
                vertices.push(*v);
                (vertices.len() - 1) as u32
            });
        }
        faces.push(idx);
    }
    (vertices, faces)
}
