//! Point cloud readers (ASCII PLY, XYZ), result documents, prior-match files
//! and descriptor tables.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, TransformRecord};
use crate::masses::PriorMatchSet;
use crate::optimizer::AlignResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Xyz,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("ply") => Ok(Self::Ply),
            Some("xyz") | Some("txt") => Ok(Self::Xyz),
            _ => Err(Error::UnsupportedFormat(format!(
                "cannot tell the format of {} from its extension",
                path.display()
            ))),
        }
    }
}

/// Read a cloud with unit masses, choosing the format by extension.
pub fn load_cloud(path: &Path, id: usize) -> Result<PointCloud<3>> {
    load_cloud_as(path, CloudFormat::from_path(path)?, id)
}

pub fn load_cloud_as(path: &Path, format: CloudFormat, id: usize) -> Result<PointCloud<3>> {
    let text = fs::read(path)?;
    if format == CloudFormat::Ply && !text.is_ascii() {
        return Err(Error::UnsupportedFormat("only ASCII PLY is supported".into()));
    }
    let text = String::from_utf8(text).map_err(|e| Error::UnsupportedFormat(format!("not UTF-8 text: {e}")))?;
    match format {
        CloudFormat::Ply => parse_ply(&text, id),
        CloudFormat::Xyz => parse_xyz(&text, id),
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| parse_error(line, format!("`{token}` is not a number")))
}

/// Whitespace- or comma-separated `x y z` rows. Extra columns are ignored;
/// blank lines and `#` comments are skipped.
pub fn parse_xyz(text: &str, id: usize) -> Result<PointCloud<3>> {
    let mut points = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if fields.len() < 3 {
            return Err(parse_error(k + 1, format!("expected 3 coordinates, found {}", fields.len())));
        }
        points.push(Vector3::new(
            parse_number(fields[0], k + 1)?,
            parse_number(fields[1], k + 1)?,
            parse_number(fields[2], k + 1)?,
        ));
    }
    PointCloud::new(id, points)
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// ASCII PLY. The `vertex` element needs `x`, `y` and `z`; an `intensity`
/// property, when present, is rescaled to `[0, 1]` by min-max.
pub fn parse_ply(text: &str, id: usize) -> Result<PointCloud<3>> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_error(1, "missing `ply` magic line")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut ended = false;
    let mut last_line = 1;
    for (n, line) in lines.by_ref() {
        last_line = n;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(Error::UnsupportedFormat(format!("PLY format `{other}`, only ascii is supported")))
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_error(n, format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", .., name] => match elements.last_mut() {
                Some(e) => e.properties.push(name.to_string()),
                None => return Err(parse_error(n, "property before any element")),
            },
            ["end_header"] => {
                ended = true;
                break;
            }
            _ => return Err(parse_error(n, format!("unexpected header line `{line}`"))),
        }
    }
    if !ended {
        return Err(parse_error(last_line, "header is truncated: missing `end_header`"));
    }
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_error(last_line, "header is missing `element vertex`"))?;
    let column = |name: &str| elements[vertex].properties.iter().position(|p| p == name);
    let (x, y, z) = match (column("x"), column("y"), column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            let missing = ["x", "y", "z"].into_iter().find(|c| column(c).is_none()).unwrap();
            return Err(parse_error(last_line, format!("vertex element has no `{missing}` property")));
        }
    };
    let intensity = column("intensity");

    // skip the rows of elements stored before the vertices
    let skip: usize = elements[..vertex].iter().map(|e| e.count).sum();
    let mut body = lines.filter(|(_, l)| !l.is_empty()).skip(skip);
    let count = elements[vertex].count;
    let mut points = Vec::with_capacity(count);
    let mut raw_intensity = Vec::new();
    for k in 0..count {
        let (n, line) = body.next().ok_or_else(|| {
            parse_error(
                last_line + skip + k + 1,
                format!("file ends after {k} of {count} vertices"),
            )
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < elements[vertex].properties.len() {
            return Err(parse_error(
                n,
                format!(
                    "vertex row has {} values, header declares {}",
                    fields.len(),
                    elements[vertex].properties.len()
                ),
            ));
        }
        points.push(Vector3::new(
            parse_number(fields[x], n)?,
            parse_number(fields[y], n)?,
            parse_number(fields[z], n)?,
        ));
        if let Some(c) = intensity {
            raw_intensity.push(parse_number(fields[c], n)?);
        }
    }
    let cloud = PointCloud::new(id, points)?;
    if intensity.is_some() {
        cloud.with_intensities(rescale(&raw_intensity))
    } else {
        Ok(cloud)
    }
}

/// Min-max rescale to `[0, 1]`; a constant column maps to 0.
pub fn rescale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

/// Write an ASCII PLY with `x y z`.
pub fn write_ply<W: Write>(cloud: &PointCloud<3>, mut out: W) -> Result<()> {
    writeln!(out, "ply\nformat ascii 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z\nend_header")?;
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Structured result document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub clouds: Vec<TransformRecord>,
    pub gpe_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
}

impl<const D: usize> From<&AlignResult<D>> for ResultDocument {
    fn from(r: &AlignResult<D>) -> Self {
        Self {
            clouds: r.transforms.iter().map(TransformRecord::from).collect(),
            gpe_trace: r.gpe_trace.clone(),
            iterations: r.outer_iterations,
            converged: r.converged,
            wall_time_s: r.wall_time,
        }
    }
}

impl ResultDocument {
    pub fn transforms<const D: usize>(&self) -> Result<Vec<RigidTransform<D>>> {
        self.clouds.iter().map(RigidTransform::try_from).collect()
    }
}

pub fn save_result<const D: usize>(path: &Path, result: &AlignResult<D>) -> Result<()> {
    let doc = ResultDocument::from(result);
    let file = fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &doc)?;
    Ok(())
}

pub fn load_result(path: &Path) -> Result<ResultDocument> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Prior-match file: one `cloud_index point_index group_id weight` row per
/// member; rows sharing a group id form one match set. Groups come out in
/// order of first appearance.
pub fn parse_priors(text: &str) -> Result<Vec<PriorMatchSet>> {
    let mut groups: Vec<(Vec<(usize, usize)>, f64)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (k, raw) in text.lines().enumerate() {
        let n = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [cloud, point, group, weight] = fields.as_slice() else {
            return Err(parse_error(n, format!("expected 4 fields, found {}", fields.len())));
        };
        let index = |t: &str| t.parse::<usize>().map_err(|_| parse_error(n, format!("`{t}` is not an index")));
        let member = (index(cloud)?, index(point)?);
        let weight = parse_number(weight, n)?;
        let g = *slot.entry(group.to_string()).or_insert_with(|| {
            groups.push((Vec::new(), weight));
            groups.len() - 1
        });
        if groups[g].1 != weight {
            return Err(parse_error(
                n,
                format!("group `{group}` has weight {weight} here but {} earlier", groups[g].1),
            ));
        }
        groups[g].0.push(member);
    }
    groups
        .into_iter()
        .map(|(members, weight)| PriorMatchSet::new(members, weight))
        .collect()
}

pub fn load_priors(path: &Path) -> Result<Vec<PriorMatchSet>> {
    parse_priors(&fs::read_to_string(path)?)
}

/// `index,descriptor,mass` table.
pub fn write_descriptors<W: Write>(mut out: W, descriptors: &[f64], masses: &[f64]) -> Result<()> {
    writeln!(out, "index,descriptor,mass")?;
    for (i, (d, m)) in descriptors.iter().zip(masses).enumerate() {
        writeln!(out, "{i},{d},{m}")?;
    }
    Ok(())
}
