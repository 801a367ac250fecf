//! Gaussian splat PLY files and OBJ/PLY triangle meshes.
//!
//! Splat files use the attribute names common to 3DGS tooling: `x y z`,
//! `f_dc_0..2`, `opacity`, `scale_0..2`, `rot_0..3`. Scales are stored as
//! logarithms, opacity as a logit and color as a degree-0 SH coefficient.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::{normalize_quat, Gaussian, GaussianSet, Vec3};
use crate::mesh::TriMesh;
use crate::ply::{Element, Encoding, PlyFile, Property, PropertyKind, ScalarType, Value};

/// Degree-0 spherical harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const OPACITY_EPS: f64 = 1e-7;

/// Splat attributes in file order.
pub const SPLAT_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    (p / (1.0 - p)).ln()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_gaussians_ply(path: &Path) -> Result<GaussianSet> {
    parse_gaussians_ply(&read_file(path)?)
}

pub fn parse_gaussians_ply(bytes: &[u8]) -> Result<GaussianSet> {
    let ply = PlyFile::parse(bytes)?;
    let vertex = ply
        .element("vertex")
        .ok_or_else(|| Error::format("missing element vertex"))?;
    let cols: Vec<Vec<f64>> = SPLAT_PROPERTIES
        .iter()
        .map(|name| vertex.scalar_column(name))
        .collect::<Result<_>>()?;
    let units = ply
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("units "))
        .map(|u| u.trim().to_string())
        .unwrap_or_else(|| "cm".to_string());
    let mut gaussians = Vec::with_capacity(vertex.rows.len());
    for i in 0..vertex.rows.len() {
        let raw: Vec<f64> = cols.iter().map(|c| c[i]).collect();
        if let Some(k) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                index: i,
                msg: format!("attribute {} is not finite", SPLAT_PROPERTIES[k]),
            });
        }
        let color = Vec3::new(raw[3], raw[4], raw[5]).map(|f| (0.5 + SH_C0 * f).clamp(0.0, 1.0));
        let rotation = normalize_quat([raw[10], raw[11], raw[12], raw[13]]).ok_or_else(|| Error::Validation {
            index: i,
            msg: "zero rotation quaternion".into(),
        })?;
        let g = Gaussian {
            center: Vec3::new(raw[0], raw[1], raw[2]),
            scale: Vec3::new(raw[7].exp(), raw[8].exp(), raw[9].exp()),
            rotation,
            opacity: sigmoid(raw[6]),
            color,
        };
        g.validate(i)?;
        gaussians.push(g);
    }
    Ok(GaussianSet { gaussians, units })
}

/// Encodes a set in the binary splat layout.
pub fn gaussians_to_ply(set: &GaussianSet) -> Result<PlyFile> {
    set.require_nonempty()?;
    set.validate()?;
    let rows = set
        .gaussians
        .iter()
        .map(|g| {
            let dc = g.color.map(|c| (c - 0.5) / SH_C0);
            [
                g.center.x,
                g.center.y,
                g.center.z,
                dc.x,
                dc.y,
                dc.z,
                logit(g.opacity),
                g.scale.x.ln(),
                g.scale.y.ln(),
                g.scale.z.ln(),
                g.rotation[0],
                g.rotation[1],
                g.rotation[2],
                g.rotation[3],
            ]
            .into_iter()
            .map(Value::Scalar)
            .collect()
        })
        .collect();
    Ok(PlyFile {
        encoding: Encoding::BinaryLittleEndian,
        comments: vec![format!("units {}", set.units)],
        elements: vec![Element {
            name: "vertex".into(),
            count: set.len(),
            properties: SPLAT_PROPERTIES
                .iter()
                .map(|n| Property {
                    name: n.to_string(),
                    kind: PropertyKind::Scalar(ScalarType::F32),
                })
                .collect(),
            rows,
        }],
    })
}

pub fn save_gaussians_ply(set: &GaussianSet, path: &Path) -> Result<()> {
    write_file(path, &gaussians_to_ply(set)?.to_bytes())
}

/// Loads a mesh by extension (`.obj` or `.ply`).
pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let bytes = read_file(path)?;
    match extension(path).as_str() {
        "obj" => parse_obj(std::str::from_utf8(&bytes).map_err(|_| Error::format("OBJ is not UTF-8"))?),
        "ply" => parse_mesh_ply(&bytes),
        other => Err(Error::format(format!("unsupported mesh extension `{other}`"))),
    }
}

/// Saves a mesh by extension (`.obj` or binary `.ply`).
pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    mesh.validate()?;
    let bytes = match extension(path).as_str() {
        "obj" => obj_string(mesh).into_bytes(),
        "ply" => mesh_to_ply(mesh).to_bytes(),
        other => return Err(Error::format(format!("unsupported mesh extension `{other}`"))),
    };
    write_file(path, &bytes)
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

/// Parses OBJ text; polygons are fan-triangulated, negative indices resolved.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let nums: Vec<f64> = tok
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad vertex line `{content}`"),
                    })?;
                if nums.len() != 3 && nums.len() != 6 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("vertex needs 3 or 6 numbers, got {}", nums.len()),
                    });
                }
                vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
                if nums.len() == 6 {
                    colors.push(Vec3::new(nums[3], nums[4], nums[5]));
                }
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| resolve_obj_index(t, vertices.len()))
                    .collect::<Option<_>>()
                    .ok_or_else(|| Error::Parse {
                        line,
                        msg: format!("malformed face `{content}`"),
                    })?;
                if idx.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("face needs at least 3 vertices, got {}", idx.len()),
                    });
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mesh = TriMesh::new(vertices, faces)?;
    if !colors.is_empty() {
        return mesh.with_colors(colors);
    }
    Ok(mesh)
}

fn resolve_obj_index(tok: &str, count: usize) -> Option<usize> {
    let first = tok.split('/').next()?;
    let i: i64 = first.parse().ok()?;
    if i > 0 {
        Some(i as usize - 1)
    } else if i < 0 && (-i) as usize <= count {
        Some((count as i64 + i) as usize)
    } else {
        None
    }
}

pub fn obj_string(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 20);
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[i].x, c[i].y, c[i].z),
            None => writeln!(s, "v {} {} {}", v.x, v.y, v.z),
        }
        .unwrap();
    }
    for f in &mesh.faces {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}

pub fn parse_mesh_ply(bytes: &[u8]) -> Result<TriMesh> {
    let ply = PlyFile::parse(bytes)?;
    let vertex = ply
        .element("vertex")
        .ok_or_else(|| Error::format("missing element vertex"))?;
    let (x, y, z) = (
        vertex.scalar_column("x")?,
        vertex.scalar_column("y")?,
        vertex.scalar_column("z")?,
    );
    let vertices = (0..x.len()).map(|i| Vec3::new(x[i], y[i], z[i])).collect();
    let mut faces = Vec::new();
    if let Some(face) = ply.element("face") {
        let idx = face
            .property_index("vertex_indices")
            .or_else(|| face.property_index("vertex_index"))
            .ok_or_else(|| Error::format("missing attribute vertex_indices"))?;
        for (fi, row) in face.rows.iter().enumerate() {
            let list = match &row[idx] {
                Value::List(l) if l.len() >= 3 => l,
                _ => {
                    return Err(Error::Validation {
                        index: fi,
                        msg: "face needs a list of at least 3 indices".into(),
                    })
                }
            };
            if list.iter().any(|&v| v < 0.0) {
                return Err(Error::Validation {
                    index: fi,
                    msg: "negative face index".into(),
                });
            }
            for k in 1..list.len() - 1 {
                faces.push([list[0] as usize, list[k] as usize, list[k + 1] as usize]);
            }
        }
    }
    let mesh = TriMesh::new(vertices, faces)?;
    let color_names = ["red", "green", "blue"];
    if color_names.iter().all(|n| vertex.property_index(n).is_some()) {
        let c: Vec<Vec<f64>> = color_names
            .iter()
            .map(|n| vertex.scalar_column(n))
            .collect::<Result<_>>()?;
        let colors = (0..c[0].len())
            .map(|i| Vec3::new(c[0][i], c[1][i], c[2][i]) / 255.0)
            .collect();
        return mesh.with_colors(colors);
    }
    Ok(mesh)
}

pub fn mesh_to_ply(mesh: &TriMesh) -> PlyFile {
    let mut props: Vec<Property> = ["x", "y", "z"]
        .iter()
        .map(|n| Property {
            name: n.to_string(),
            kind: PropertyKind::Scalar(ScalarType::F64),
        })
        .collect();
    if mesh.colors.is_some() {
        props.extend(["red", "green", "blue"].iter().map(|n| Property {
            name: n.to_string(),
            kind: PropertyKind::Scalar(ScalarType::U8),
        }));
    }
    let rows = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut r = vec![Value::Scalar(v.x), Value::Scalar(v.y), Value::Scalar(v.z)];
            if let Some(c) = &mesh.colors {
                r.extend(c[i].iter().map(|ch| Value::Scalar((ch.clamp(0.0, 1.0) * 255.0).round())));
            }
            r
        })
        .collect();
    PlyFile {
        encoding: Encoding::BinaryLittleEndian,
        comments: Vec::new(),
        elements: vec![
            Element {
                name: "vertex".into(),
                count: mesh.vertices.len(),
                properties: props,
                rows,
            },
            Element {
                name: "face".into(),
                count: mesh.faces.len(),
                properties: vec![Property {
                    name: "vertex_indices".into(),
                    kind: PropertyKind::List {
                        count: ScalarType::U8,
                        item: ScalarType::I32,
                    },
                }],
                rows: mesh
                    .faces
                    .iter()
                    .map(|f| vec![Value::List(f.iter().map(|&i| i as f64).collect())])
                    .collect(),
            },
        ],
    }
}
