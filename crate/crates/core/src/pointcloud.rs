//! Point clouds and the two spatial queries the terrain fit relies on:
//! nearest point in the XY plane and all points inside an oriented ellipsoid.
//!
//! The index is a uniform bucket grid over XY. Both queries return exactly
//! what a linear scan over the cloud would return, with results in ascending
//! original index order.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// A point in meters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<Vector3<f64>> for Point3 {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// Whitespace separated `x y z` per line, `#` starts a comment.
    XyzText,
    /// ASCII PCD; `FIELDS` and `POINTS` header entries are honored.
    PcdAscii,
    /// Comma separated, optional header row naming `x`, `y`, `z`.
    Csv,
}

impl CloudFormat {
    /// Guess the format from a file extension, defaulting to xyz text.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("pcd") => CloudFormat::PcdAscii,
            Some("csv") => CloudFormat::Csv,
            _ => CloudFormat::XyzText,
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" | "xyz-text" | "txt" => Ok(CloudFormat::XyzText),
            "pcd" | "pcd-ascii" => Ok(CloudFormat::PcdAscii),
            "csv" => Ok(CloudFormat::Csv),
            other => Err(format!("unknown cloud format `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("cannot read point cloud: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("point cloud is empty")]
    EmptyCloud,
}

fn parse_err(line: usize, message: impl Into<String>) -> CloudError {
    CloudError::Parse {
        line,
        message: message.into(),
    }
}

/// Uniform XY bucket grid. Each bucket holds point indices in ascending order.
#[derive(Debug, Clone)]
struct BucketIndex {
    min: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    starts: Vec<usize>,
    entries: Vec<usize>,
}

impl BucketIndex {
    fn build(points: &[Point3]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            min[0] = min[0].min(p.x);
            min[1] = min[1].min(p.y);
            max[0] = max[0].max(p.x);
            max[1] = max[1].max(p.y);
        }
        let extent = [(max[0] - min[0]).max(1e-9), (max[1] - min[1]).max(1e-9)];
        // Aim for a handful of points per bucket.
        let target = 4.0;
        let mut cell = (extent[0] * extent[1] * target / points.len() as f64).sqrt();
        if !(cell.is_finite() && cell > 0.0) {
            cell = 1.0;
        }
        cell = cell.max(extent[0].max(extent[1]) / 4096.0);
        let dims = [
            ((extent[0] / cell).floor() as usize + 1).max(1),
            ((extent[1] / cell).floor() as usize + 1).max(1),
        ];

        let n_cells = dims[0] * dims[1];
        let mut counts = vec![0usize; n_cells + 1];
        let mut slots = Vec::with_capacity(points.len());
        let mut index = Self {
            min,
            cell,
            dims,
            starts: Vec::new(),
            entries: Vec::new(),
        };
        for p in points {
            let c = index.cell_of(p.x, p.y);
            let slot = c[1] * dims[0] + c[0];
            counts[slot + 1] += 1;
            slots.push(slot);
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut cursor = counts.clone();
        let mut entries = vec![0usize; points.len()];
        for (i, &slot) in slots.iter().enumerate() {
            entries[cursor[slot]] = i;
            cursor[slot] += 1;
        }
        index.starts = counts;
        index.entries = entries;
        index
    }

    /// Bucket coordinates of (x, y), clamped into the grid.
    fn cell_of(&self, x: f64, y: f64) -> [usize; 2] {
        let fx = ((x - self.min[0]) / self.cell).floor();
        let fy = ((y - self.min[1]) / self.cell).floor();
        [
            fx.clamp(0.0, (self.dims[0] - 1) as f64) as usize,
            fy.clamp(0.0, (self.dims[1] - 1) as f64) as usize,
        ]
    }

    fn bucket(&self, ix: usize, iy: usize) -> &[usize] {
        let slot = iy * self.dims[0] + ix;
        &self.entries[self.starts[slot]..self.starts[slot + 1]]
    }
}

/// An unordered set of 3D points with an XY bucket index.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<Point3>,
    index: BucketIndex,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self, CloudError> {
        if points.is_empty() {
            return Err(CloudError::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(parse_err(i + 1, "non-finite coordinate"));
        }
        let index = BucketIndex::build(&points);
        Ok(Self { points, index })
    }

    /// Load a cloud from disk. Exact duplicate points are dropped, keeping the
    /// first occurrence.
    pub fn load(path: impl AsRef<Path>, format: CloudFormat) -> Result<Self, CloudError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, format)
    }

    pub fn parse(text: &str, format: CloudFormat) -> Result<Self, CloudError> {
        let raw = match format {
            CloudFormat::XyzText => parse_xyz(text)?,
            CloudFormat::PcdAscii => parse_pcd(text)?,
            CloudFormat::Csv => parse_csv(text)?,
        };
        let mut seen = HashSet::with_capacity(raw.len());
        let points: Vec<Point3> = raw
            .into_iter()
            .filter(|p| seen.insert([p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]))
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// XY bounding box as `(min, max)`.
    pub fn xy_extent(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.points {
            lo[0] = lo[0].min(p.x);
            lo[1] = lo[1].min(p.y);
            hi[0] = hi[0].max(p.x);
            hi[1] = hi[1].max(p.y);
        }
        (lo, hi)
    }

    /// Index of the point nearest to `q` in XY. Ties go to the smaller index.
    pub fn nearest_xy(&self, q: [f64; 2]) -> usize {
        let idx = &self.index;
        let [cx, cy] = idx.cell_of(q[0], q[1]);
        let (cx, cy) = (cx as isize, cy as isize);
        let (nx, ny) = (idx.dims[0] as isize, idx.dims[1] as isize);
        let mut best = (f64::INFINITY, usize::MAX);
        let visit = |ix: isize, iy: isize, best: &mut (f64, usize)| {
            if ix < 0 || iy < 0 || ix >= nx || iy >= ny {
                return;
            }
            for &i in idx.bucket(ix as usize, iy as usize) {
                let p = &self.points[i];
                let d = (p.x - q[0]).powi(2) + (p.y - q[1]).powi(2);
                if d < best.0 || (d == best.0 && i < best.1) {
                    *best = (d, i);
                }
            }
        };
        let max_ring = nx.max(ny);
        for ring in 0..=max_ring {
            if ring == 0 {
                visit(cx, cy, &mut best);
            } else {
                for ix in (cx - ring)..=(cx + ring) {
                    visit(ix, cy - ring, &mut best);
                    visit(ix, cy + ring, &mut best);
                }
                for iy in (cy - ring + 1)..(cy + ring) {
                    visit(cx - ring, iy, &mut best);
                    visit(cx + ring, iy, &mut best);
                }
            }
            // Cells in ring k lie at least (k - 1) cells away from q.
            if best.1 != usize::MAX && best.0.sqrt() < ring as f64 * idx.cell {
                break;
            }
        }
        best.1
    }

    /// Height of the point nearest to `q` in XY.
    pub fn nearest_xy_z(&self, q: [f64; 2]) -> f64 {
        self.points[self.nearest_xy(q)].z
    }

    /// Indices of all points inside the ellipsoid centered at `center`, with
    /// principal axes given by the columns of `orientation` and semi-axis
    /// lengths `semi_axes`. Indices are ascending.
    pub fn ellipsoid_indices(
        &self,
        center: Vector3<f64>,
        orientation: &Matrix3<f64>,
        semi_axes: [f64; 3],
    ) -> Vec<usize> {
        let reach = semi_axes[0].max(semi_axes[1]).max(semi_axes[2]);
        let idx = &self.index;
        let lo = idx.cell_of(center.x - reach, center.y - reach);
        let hi = idx.cell_of(center.x + reach, center.y + reach);
        let rt = orientation.transpose();
        let inv = Vector3::new(1.0 / semi_axes[0], 1.0 / semi_axes[1], 1.0 / semi_axes[2]);
        let mut found = Vec::new();
        for iy in lo[1]..=hi[1] {
            for ix in lo[0]..=hi[0] {
                for &i in idx.bucket(ix, iy) {
                    if ellipsoid_contains(&self.points[i], &center, &rt, &inv) {
                        found.push(i);
                    }
                }
            }
        }
        found.sort_unstable();
        found
    }

    pub fn ellipsoid_points(
        &self,
        center: Vector3<f64>,
        orientation: &Matrix3<f64>,
        semi_axes: [f64; 3],
    ) -> Vec<Point3> {
        self.ellipsoid_indices(center, orientation, semi_axes)
            .into_iter()
            .map(|i| self.points[i])
            .collect()
    }
}

/// Membership test: `|diag(1/e) R^T (p - c)| <= 1`.
pub fn ellipsoid_contains(
    p: &Point3,
    center: &Vector3<f64>,
    orientation_t: &Matrix3<f64>,
    inv_axes: &Vector3<f64>,
) -> bool {
    let local = orientation_t * (p.to_vector() - center);
    local.component_mul(inv_axes).norm_squared() <= 1.0
}

fn parse_number(tok: &str, line: usize) -> Result<f64, CloudError> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("invalid number `{tok}`")))
}

fn parse_xyz(text: &str) -> Result<Vec<Point3>, CloudError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 values, found {}", toks.len()),
            ));
        }
        out.push(Point3::new(
            parse_number(toks[0], line)?,
            parse_number(toks[1], line)?,
            parse_number(toks[2], line)?,
        ));
    }
    Ok(out)
}

fn parse_pcd(text: &str) -> Result<Vec<Point3>, CloudError> {
    let mut columns: Option<[usize; 3]> = None;
    let mut n_fields = 0usize;
    let mut declared: Option<usize> = None;
    let mut lines = text.lines().enumerate();
    let mut data_started = false;

    for (n, raw) in lines.by_ref() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let key = toks.next().unwrap_or("").to_ascii_uppercase();
        let rest: Vec<&str> = toks.collect();
        match key.as_str() {
            "FIELDS" => {
                n_fields = rest.len();
                let find = |name: &str| rest.iter().position(|f| f.eq_ignore_ascii_case(name));
                match (find("x"), find("y"), find("z")) {
                    (Some(x), Some(y), Some(z)) => columns = Some([x, y, z]),
                    _ => return Err(parse_err(line, "FIELDS must include x, y and z")),
                }
            }
            "POINTS" => {
                let count = rest
                    .first()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line, "invalid POINTS entry"))?;
                declared = Some(count);
            }
            "DATA" => {
                match rest.first().map(|s| s.to_ascii_lowercase()) {
                    Some(kind) if kind == "ascii" => {}
                    _ => return Err(parse_err(line, "only DATA ascii is supported")),
                }
                data_started = true;
                break;
            }
            _ => {}
        }
    }
    if !data_started {
        return Err(parse_err(text.lines().count().max(1), "missing DATA line"));
    }
    let cols = columns.ok_or_else(|| parse_err(1, "missing FIELDS header"))?;

    let mut out = Vec::new();
    for (n, raw) in lines {
        let line = n + 1;
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        if declared.is_some_and(|d| out.len() >= d) {
            break;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.len() != n_fields {
            return Err(parse_err(
                line,
                format!("expected {n_fields} values, found {}", toks.len()),
            ));
        }
        let p = Point3::new(
            parse_number(toks[cols[0]], line)?,
            parse_number(toks[cols[1]], line)?,
            parse_number(toks[cols[2]], line)?,
        );
        // PCD writers use NaN for missing returns.
        if p.is_finite() {
            out.push(p);
        }
    }
    if let Some(d) = declared {
        if out.len() > d {
            out.truncate(d);
        }
    }
    Ok(out)
}

fn parse_csv(text: &str) -> Result<Vec<Point3>, CloudError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut cols = [0usize, 1, 2];
    let mut out = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(n + 1);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(n + 1);
        if n == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            let find = |name: &str| record.iter().position(|f| f.eq_ignore_ascii_case(name));
            match (find("x"), find("y"), find("z")) {
                (Some(x), Some(y), Some(z)) => {
                    cols = [x, y, z];
                    continue;
                }
                _ => return Err(parse_err(line, "header must name columns x, y and z")),
            }
        }
        let get = |c: usize| {
            record
                .get(c)
                .ok_or_else(|| parse_err(line, format!("missing column {}", c + 1)))
                .and_then(|s| parse_number(s, line))
        };
        out.push(Point3::new(get(cols[0])?, get(cols[1])?, get(cols[2])?));
    }
    Ok(out)
}
