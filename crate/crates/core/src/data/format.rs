//! Plain-text point cloud formats: whitespace separated XYZ and ASCII PLY.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    /// Picks the format from the file extension (`.xyz`, `.txt`, `.ply`).
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("ply") => Ok(CloudFormat::Ply),
            Some("xyz") | Some("txt") => Ok(CloudFormat::Xyz),
            _ => Err(invalid(format!(
                "cannot infer point cloud format from {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(CloudFormat::Xyz),
            "ply" => Ok(CloudFormat::Ply),
            other => Err(invalid(format!("unknown cloud format `{other}`"))),
        }
    }
}

pub fn read_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    parse_cloud(&text, format)
}

pub fn parse_cloud(text: &str, format: CloudFormat) -> Result<PointCloud> {
    let points = match format {
        CloudFormat::Xyz => parse_xyz(text)?,
        CloudFormat::Ply => parse_ply(text)?,
    };
    if points.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            message: "file contains no points".into(),
        });
    }
    PointCloud::new(points)
}

pub fn write_cloud(pc: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    write_points(pc.points(), path, format)
}

pub fn write_points(points: &[Point3], path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    fs::write(path, format_points(points, format)?)?;
    Ok(())
}

/// Renders points as text. Coordinates use 17 significant digits so reading
/// the file back reproduces every value exactly.
pub fn format_points(points: &[Point3], format: CloudFormat) -> Result<String> {
    if points.is_empty() {
        return Err(invalid("refusing to write an empty point cloud"));
    }
    let mut out = String::with_capacity(points.len() * 72 + 128);
    if format == CloudFormat::Ply {
        out.push_str("ply\nformat ascii 1.0\n");
        writeln!(out, "element vertex {}", points.len()).unwrap();
        out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    }
    for p in points {
        writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z).unwrap();
    }
    Ok(out)
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_coord(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_error(line, format!("invalid number `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_error(line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

fn parse_xyz(text: &str) -> Result<Vec<Point3>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_error(
                line,
                format!("expected 3 coordinates, found {}", toks.len()),
            ));
        }
        points.push(Point3::new(
            parse_coord(toks[0], line)?,
            parse_coord(toks[1], line)?,
            parse_coord(toks[2], line)?,
        ));
    }
    Ok(points)
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

fn parse_ply(text: &str) -> Result<Vec<Point3>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        Some((n, _)) => return Err(parse_error(n, "missing `ply` magic")),
        None => return Err(parse_error(1, "empty file")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(parse_error(n, format!("unsupported PLY format `{other}`")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_error(n, format!("invalid element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(n, "property before any element"))?;
                el.properties.push(String::from("<list>"));
            }
            ["property", _ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(n, "property before any element"))?;
                el.properties.push(name.to_string());
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(parse_error(n, format!("unrecognized header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(parse_error(1, "missing `format ascii 1.0` line"));
    }
    if !header_done {
        return Err(parse_error(text.lines().count(), "missing `end_header`"));
    }
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_error(1, "no `vertex` element"))?;
    let vertex = &elements[vertex_pos];
    let col = |axis: &str| {
        vertex
            .properties
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| parse_error(1, format!("vertex element lacks property `{axis}`")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let skip: usize = elements[..vertex_pos].iter().map(|e| e.count).sum();

    let mut body = lines.filter(|(_, l)| !l.is_empty()).skip(skip);
    let mut points = Vec::with_capacity(vertex.count);
    for k in 0..vertex.count {
        let (n, line) = body.next().ok_or_else(|| {
            parse_error(
                text.lines().count(),
                format!("expected {} vertices, found {k}", vertex.count),
            )
        })?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < vertex.properties.len() {
            return Err(parse_error(
                n,
                format!(
                    "expected {} vertex properties, found {}",
                    vertex.properties.len(),
                    toks.len()
                ),
            ));
        }
        points.push(Point3::new(
            parse_coord(toks[ix], n)?,
            parse_coord(toks[iy], n)?,
            parse_coord(toks[iz], n)?,
        ));
    }
    Ok(points)
}
