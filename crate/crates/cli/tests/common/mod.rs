#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uneven_planner::terrain_map::{GridSpec, SE2State, TerrainGrid, TerrainSample};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_uneven-planner"));
    cmd.env_remove("UNEVEN_PLANNER_THREADS");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Plane `z = tan(slope)·x` sampled on a square lattice, as xyz text.
pub fn write_plane_cloud(path: &Path, slope_deg: f64, min: [f64; 2], max: [f64; 2], spacing: f64) {
    let m = slope_deg.to_radians().tan();
    let nx = ((max[0] - min[0]) / spacing).round() as usize;
    let ny = ((max[1] - min[1]) / spacing).round() as usize;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    for i in 0..=nx {
        for j in 0..=ny {
            let (x, y) = (min[0] + i as f64 * spacing, min[1] + j as f64 * spacing);
            writeln!(out, "{x} {y} {}", m * x).unwrap();
        }
    }
    out.flush().unwrap();
}

pub fn write_grid(path: &Path, min: [f64; 2], max: [f64; 2], f: impl Fn(SE2State) -> TerrainSample + Sync) {
    TerrainGrid::from_fn(GridSpec::covering(min, max, 0.1, 36), f)
        .unwrap()
        .write(path)
        .unwrap();
}

/// Flat ground with a σ = 0.2 block over x ∈ [3, 5], y ≤ 1.5.
pub fn detour_sample(s: SE2State) -> TerrainSample {
    let mut t = TerrainSample::flat(0.0);
    if (3.0..=5.0).contains(&s.x) && s.y <= 1.5 {
        t.sigma = 0.2;
    }
    t
}

/// Flat ground whose surface variation rises smoothly toward −y, staying traversable.
pub fn half_rough_sample(s: SE2State) -> TerrainSample {
    let mut t = TerrainSample::flat(0.0);
    t.sigma = 0.04 / (1.0 + (4.0 * s.y).exp());
    t
}

/// Numeric CSV with a header row, as named columns.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

pub fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_csv(path);
    let k = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k]).collect()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn tmp_file(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}
