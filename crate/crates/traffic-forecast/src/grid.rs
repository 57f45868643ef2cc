//! Antenna-to-grid mapping.
//!
//! Convolutional models need matrix-form snapshots, but antennas sit at
//! irregular locations. This module lays a regular grid over the antenna
//! bounding box and assigns every antenna to a distinct cell by solving the
//! linear assignment problem that minimizes total Euclidean displacement.
//! Cells left without an antenna are masked: they carry zero traffic and
//! are excluded from every metric.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One antenna site in local planar coordinates (meters).
#[derive(Clone, Debug, PartialEq)]
pub struct AntennaSite {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// Mean Earth radius used by the local equirectangular projection.
const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Project lon/lat degrees to planar meters, equirectangular about the
/// centroid. City-scale extents make curvature negligible.
pub fn project_lonlat(points: &[(String, f64, f64)]) -> Result<Vec<AntennaSite>> {
    if points.is_empty() {
        return Err(Error::contract("no antennas to project"));
    }
    let lat0 = points.iter().map(|p| p.2).sum::<f64>() / points.len() as f64;
    let lon0 = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let cos_lat0 = lat0.to_radians().cos();
    Ok(points
        .iter()
        .map(|(id, lon, lat)| AntennaSite {
            id: id.clone(),
            x: EARTH_RADIUS_M * (lon - lon0).to_radians() * cos_lat0,
            y: EARTH_RADIUS_M * (lat - lat0).to_radians(),
        })
        .collect())
}

/// One antenna's placement in the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CellAssignment {
    pub antenna_id: String,
    pub row: usize,
    pub col: usize,
    pub displacement_m: f64,
}

/// Bijective antenna ↔ cell assignment for an `height × width` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AntennaGrid {
    pub height: usize,
    pub width: usize,
    pub origin: (f64, f64),
    pub spacing: (f64, f64),
    /// One entry per antenna, in the input antenna order.
    pub assignments: Vec<CellAssignment>,
}

impl AntennaGrid {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Per-cell flag: true where an antenna is assigned.
    pub fn occupancy_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.cells()];
        for a in &self.assignments {
            mask[a.row * self.width + a.col] = true;
        }
        mask
    }

    pub fn masked_cell_count(&self) -> usize {
        self.cells() - self.assignments.len()
    }

    pub fn total_displacement(&self) -> f64 {
        self.assignments.iter().map(|a| a.displacement_m).sum()
    }

    pub fn mean_displacement(&self) -> f64 {
        self.total_displacement() / self.assignments.len() as f64
    }

    /// Persist as the text-table format: header lines, then one
    /// `antenna_id,row,col,displacement_m` line per antenna.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# antenna-grid v1").unwrap();
        writeln!(out, "grid,{},{}", self.height, self.width).unwrap();
        writeln!(out, "origin,{},{}", self.origin.0, self.origin.1).unwrap();
        writeln!(out, "spacing,{},{}", self.spacing.0, self.spacing.1).unwrap();
        writeln!(out, "antenna_id,row,col,displacement_m").unwrap();
        for a in &self.assignments {
            writeln!(out, "{},{},{},{}", a.antenna_id, a.row, a.col, a.displacement_m).unwrap();
        }
        out
    }

    /// Parse the text-table format. Comment lines (`#`) after the version
    /// header are ignored, so writers may embed provenance notes.
    pub fn from_table(text: &str) -> Result<AntennaGrid> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(n, line)| *n == 0 || !line.starts_with('#'));
        let mut expect = |prefix: &str| -> Result<(usize, String)> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::Parse { line: 0, message: "truncated mapping table".into() })?;
            if !line.starts_with(prefix) {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected {prefix:?} line"),
                });
            }
            Ok((n, line.to_string()))
        };
        expect("# antenna-grid v1")?;
        let (gn, grid_line) = expect("grid,")?;
        let dims: Vec<&str> = grid_line.split(',').collect();
        let parse_usize = |s: &str, n: usize| {
            s.parse::<usize>().map_err(|_| Error::Parse { line: n + 1, message: format!("bad integer {s:?}") })
        };
        let parse_f64 = |s: &str, n: usize| {
            s.parse::<f64>().map_err(|_| Error::Parse { line: n + 1, message: format!("bad number {s:?}") })
        };
        if dims.len() != 3 {
            return Err(Error::Parse { line: gn + 1, message: "grid line needs 2 fields".into() });
        }
        let height = parse_usize(dims[1], gn)?;
        let width = parse_usize(dims[2], gn)?;
        let (on, origin_line) = expect("origin,")?;
        let o: Vec<&str> = origin_line.split(',').collect();
        let origin = (parse_f64(o[1], on)?, parse_f64(o[2], on)?);
        let (sn, spacing_line) = expect("spacing,")?;
        let s: Vec<&str> = spacing_line.split(',').collect();
        let spacing = (parse_f64(s[1], sn)?, parse_f64(s[2], sn)?);
        expect("antenna_id,row,col,displacement_m")?;
        let mut assignments = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Parse { line: n + 1, message: "expected 4 fields".into() });
            }
            assignments.push(CellAssignment {
                antenna_id: f[0].to_string(),
                row: parse_usize(f[1], n)?,
                col: parse_usize(f[2], n)?,
                displacement_m: parse_f64(f[3], n)?,
            });
        }
        Ok(AntennaGrid { height, width, origin, spacing, assignments })
    }
}

/// Cell-center coordinates for a grid spanning the antenna bounding box.
pub fn cell_centers(
    antennas: &[AntennaSite],
    height: usize,
    width: usize,
) -> Result<((f64, f64), (f64, f64), Vec<(f64, f64)>)> {
    if antennas.is_empty() {
        return Err(Error::contract("empty antenna list"));
    }
    let min_x = antennas.iter().map(|a| a.x).fold(f64::INFINITY, f64::min);
    let max_x = antennas.iter().map(|a| a.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = antennas.iter().map(|a| a.y).fold(f64::INFINITY, f64::min);
    let max_y = antennas.iter().map(|a| a.y).fold(f64::NEG_INFINITY, f64::max);
    let sx = if width > 1 { (max_x - min_x) / (width - 1) as f64 } else { 0.0 };
    let sy = if height > 1 { (max_y - min_y) / (height - 1) as f64 } else { 0.0 };
    let mut centers = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            centers.push((min_x + col as f64 * sx, min_y + row as f64 * sy));
        }
    }
    Ok(((min_x, min_y), (sx, sy), centers))
}

/// Square cost matrix of Euclidean antenna-to-cell distances. When there
/// are more cells than antennas the matrix is padded with dummy rows of
/// constant cost (max real cost + 1).
pub fn build_cost_matrix(antennas: &[AntennaSite], centers: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    if antennas.is_empty() {
        return Err(Error::contract("empty antenna list"));
    }
    if centers.len() < antennas.len() {
        return Err(Error::contract(format!(
            "grid has {} cells for {} antennas",
            centers.len(),
            antennas.len()
        )));
    }
    let n = centers.len();
    let mut max_cost: f64 = 0.0;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for a in antennas {
        let row: Vec<f64> = centers
            .iter()
            .map(|&(cx, cy)| ((a.x - cx).powi(2) + (a.y - cy).powi(2)).sqrt())
            .collect();
        max_cost = row.iter().fold(max_cost, |m, &v| m.max(v));
        rows.push(row);
    }
    let dummy = max_cost + 1.0;
    while rows.len() < n {
        rows.push(vec![dummy; n]);
    }
    Ok(rows)
}

/// Minimum-cost perfect matching on a square cost matrix, O(n³) shortest
/// augmenting paths with potentials. Ties during augmenting-path selection
/// break toward the lowest column index (strict `<` scan in ascending
/// column order), so the result is deterministic.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::contract("empty cost matrix"));
    }
    for row in cost {
        if row.len() != n {
            return Err(Error::contract("cost matrix must be square"));
        }
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::contract("costs must be finite and nonnegative"));
        }
    }
    // 1-indexed potentials formulation.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut way = vec![0_usize; n + 1];
    // p[j] = row matched to column j (0 = free)
    let mut p = vec![0_usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // Augment along the alternating path.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0_usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Exhaustive minimum over all permutations; the correctness oracle for
/// [`hungarian_assign`]. Refuses n > 8.
pub fn brute_force_assign(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::contract("empty cost matrix"));
    }
    if n > 8 {
        return Err(Error::contract("brute_force_assign refuses n > 8"));
    }
    for row in cost {
        if row.len() != n {
            return Err(Error::contract("cost matrix must be square"));
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = perm_cost(cost, &perm);
    // Heap's algorithm, iterative.
    let mut c = vec![0_usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let total = perm_cost(cost, &perm);
            if total < best_cost {
                best_cost = total;
                best = perm.clone();
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[usize]) -> f64 {
    perm_cost(cost, assignment)
}

fn perm_cost(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Full mapping workflow: grid over the bounding box, cost matrix,
/// optimal assignment, displacement bookkeeping.
pub fn map_antennas_to_grid(antennas: &[AntennaSite], height: usize, width: usize) -> Result<AntennaGrid> {
    if antennas.is_empty() {
        return Err(Error::contract("empty antenna list"));
    }
    if height * width < antennas.len() {
        return Err(Error::contract(format!(
            "grid {height}x{width} has {} cells for {} antennas",
            height * width,
            antennas.len()
        )));
    }
    let (origin, spacing, centers) = cell_centers(antennas, height, width)?;
    let cost = build_cost_matrix(antennas, &centers)?;
    let assignment = hungarian_assign(&cost)?;
    let assignments = antennas
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let j = assignment[i];
            CellAssignment {
                antenna_id: a.id.clone(),
                row: j / width,
                col: j % width,
                displacement_m: cost[i][j],
            }
        })
        .collect();
    Ok(AntennaGrid { height, width, origin, spacing, assignments })
}

/// Smallest `Hg × Wg` with `Hg·Wg ≥ n` whose aspect ratio is nearest the
/// antenna bounding box. Used when the caller does not fix grid dims.
pub fn choose_grid_dims(n: usize, bbox_aspect: f64) -> (usize, usize) {
    let mut best = (n, 1);
    let mut best_score = f64::INFINITY;
    for h in 1..=n {
        let w = n.div_ceil(h);
        let waste = (h * w - n) as f64;
        let aspect = h as f64 / w as f64;
        let score = waste * 1000.0 + (aspect.ln() - bbox_aspect.max(1e-9).ln()).abs();
        if score < best_score {
            best_score = score;
            best = (h, w);
        }
    }
    best
}
