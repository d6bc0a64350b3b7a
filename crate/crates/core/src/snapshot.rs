//! Text snapshots of nodal fields.
//!
//! Layout: one JSON header line
//!
//! ```text
//! {"format":"obstacle-lab-field","version":1,"params":{...},"nodes":N,"label":"..."}
//! ```
//!
//! followed by one line per lattice node in index order,
//! `index x_0 … x_{n−1} value`, floats in `{:.16e}` so that values round-trip.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{Grid, ProblemParams, ScalarField};

pub const FORMAT: &str = "obstacle-lab-field";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub version: u32,
    pub params: ProblemParams,
    pub nodes: usize,
    #[serde(default)]
    pub label: String,
}

pub fn write_snapshot(f: &ScalarField, label: &str, mut w: impl Write) -> Result<()> {
    let g = f.grid();
    let header = SnapshotHeader {
        format: FORMAT.into(),
        version: VERSION,
        params: *g.params(),
        nodes: g.len(),
        label: label.into(),
    };
    let line = serde_json::to_string(&header).map_err(|e| LabError::Snapshot { line: 1, msg: e.to_string() })?;
    writeln!(w, "{line}")?;
    let n = g.n();
    let mut buf = String::new();
    for (i, v) in f.values().iter().enumerate() {
        use std::fmt::Write as _;
        buf.clear();
        let _ = write!(buf, "{i}");
        for x in &g.node(i)[..n] {
            let _ = write!(buf, " {x:.16e}");
        }
        let _ = write!(buf, " {v:.16e}");
        writeln!(w, "{buf}")?;
    }
    Ok(())
}

pub fn save_snapshot(f: &ScalarField, label: &str, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_snapshot(f, label, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a snapshot; coordinates are checked against the rebuilt grid.
pub fn read_snapshot(r: impl BufRead) -> Result<(SnapshotHeader, ScalarField)> {
    let mut lines = r.lines();
    let err = |line: usize, msg: String| LabError::Snapshot { line, msg };
    let first = lines.next().ok_or_else(|| err(1, "empty file".into()))??;
    let header: SnapshotHeader = serde_json::from_str(&first).map_err(|e| err(1, e.to_string()))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(err(1, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let grid: Arc<Grid> = Grid::build_with_min_cells(header.params, 2).map_err(|e| err(1, e.to_string()))?;
    if grid.len() != header.nodes {
        return Err(err(1, format!("header declares {} nodes, the grid has {}", header.nodes, grid.len())));
    }
    let n = grid.n();
    let tol = 1e-12 * grid.params().r_dom;
    let mut values = Vec::with_capacity(grid.len());
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let idx: usize =
            parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| err(lineno, "missing node index".into()))?;
        if idx != values.len() {
            return Err(err(lineno, format!("expected node {}, found {idx}", values.len())));
        }
        if idx >= grid.len() {
            return Err(err(lineno, format!("node {idx} beyond the grid")));
        }
        let nums: Vec<f64> =
            parts.map(|t| t.parse::<f64>().map_err(|e| err(lineno, format!("{t:?}: {e}")))).collect::<Result<_>>()?;
        if nums.len() != n + 1 {
            return Err(err(lineno, format!("expected {} numbers after the index, found {}", n + 1, nums.len())));
        }
        let x = grid.node(idx);
        if (0..n).any(|d| (nums[d] - x[d]).abs() > tol) {
            return Err(err(lineno, format!("coordinates {:?} do not match node {idx}", &nums[..n])));
        }
        values.push(nums[n]);
    }
    if values.len() != grid.len() {
        return Err(err(values.len() + 2, format!("{} of {} nodes present", values.len(), grid.len())));
    }
    let field = ScalarField::from_values(&grid, values)?;
    Ok((header, field))
}

pub fn load_snapshot(path: &Path) -> Result<(SnapshotHeader, ScalarField)> {
    let file = std::fs::File::open(path)?;
    read_snapshot(std::io::BufReader::new(file))
}
