//! Structured quadrilateral meshes, Gauss points and boundary conditions.
//!
//! Nodes are numbered row by row (x fastest): node `(i, j)` has index
//! `j * (nx + 1) + i`. Element `(i, j)` has index `j * nx + i` and its four
//! nodes are listed counter-clockwise from the lower-left corner. Every node
//! owns two dofs, `2n` (x) and `2n + 1` (y).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Parametric coordinate of the 2-point Gauss rule.
pub const GAUSS_COORD: f64 = 0.577_350_269_189_625_8;

/// Gauss points per element (2x2 rule).
pub const GAUSS_PER_ELEMENT: usize = 4;

/// Parametric positions of the four Gauss points, in the same
/// counter-clockwise order as the element nodes.
pub const GAUSS_PARAMETRIC: [(f64, f64); 4] = [
    (-GAUSS_COORD, -GAUSS_COORD),
    (GAUSS_COORD, -GAUSS_COORD),
    (GAUSS_COORD, GAUSS_COORD),
    (-GAUSS_COORD, GAUSS_COORD),
];

const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    X,
    Y,
}

impl Direction {
    pub fn offset(self) -> usize {
        match self {
            Direction::X => 0,
            Direction::Y => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::X => "x",
            Direction::Y => "y",
        }
    }
}

/// Uniform axis-aligned quad mesh over `[x0, x0 + width] x [y0, y0 + height]`
/// with an optional mask of inactive elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: f64,
    pub height: f64,
    pub x0: f64,
    pub y0: f64,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    active: Vec<bool>,
}

fn element_count_along(length: f64, per_unit: f64, axis: &str) -> Result<usize> {
    let raw = length * per_unit;
    let n = raw.round();
    if n < 1.0 || (raw - n).abs() > ALIGN_TOL * raw.max(1.0) {
        return invalid(format!(
            "{axis} extent {length} x {per_unit} elements per unit is not a positive integer"
        ));
    }
    Ok(n as usize)
}

/// Uniform grid with its lower-left corner at the origin. All elements active.
pub fn build_grid(width: f64, height: f64, elems_per_unit: usize) -> Result<Grid> {
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return invalid(format!(
            "grid dimensions must be positive, got {width} x {height}"
        ));
    }
    if elems_per_unit == 0 {
        return invalid("elems_per_unit must be at least 1");
    }
    let epu = elems_per_unit as f64;
    let nx = element_count_along(width, epu, "x")?;
    let ny = element_count_along(height, epu, "y")?;
    Ok(Grid {
        width,
        height,
        x0: 0.0,
        y0: 0.0,
        nx,
        ny,
        dx: width / nx as f64,
        dy: height / ny as f64,
        active: vec![true; nx * ny],
    })
}

impl Grid {
    pub fn with_origin(mut self, x0: f64, y0: f64) -> Self {
        self.x0 = x0;
        self.y0 = y0;
        self
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn dof_count(&self) -> usize {
        2 * self.node_count()
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn is_active(&self, element: usize) -> bool {
        self.active[element]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    /// Indices of the active elements in increasing order. Every assembly
    /// and integration loop goes through this iterator.
    pub fn active_elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(e, a)| a.then_some(e))
    }

    pub fn element_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn active_area(&self) -> f64 {
        self.active_count() as f64 * self.element_area()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let i = node % (self.nx + 1);
        let j = node / (self.nx + 1);
        (self.x0 + i as f64 * self.dx, self.y0 + j as f64 * self.dy)
    }

    pub fn dof(&self, node: usize, direction: Direction) -> usize {
        2 * node + direction.offset()
    }

    /// Counter-clockwise node indices of an element.
    pub fn element_nodes(&self, element: usize) -> [usize; 4] {
        let i = element % self.nx;
        let j = element / self.nx;
        [
            self.node_index(i, j),
            self.node_index(i + 1, j),
            self.node_index(i + 1, j + 1),
            self.node_index(i, j + 1),
        ]
    }

    pub fn element_dofs(&self, element: usize) -> [usize; 8] {
        let n = self.element_nodes(element);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn element_centroid(&self, element: usize) -> (f64, f64) {
        let i = element % self.nx;
        let j = element / self.nx;
        (
            self.x0 + (i as f64 + 0.5) * self.dx,
            self.y0 + (j as f64 + 0.5) * self.dy,
        )
    }

    /// Element containing a point, if the point lies inside the grid
    /// rectangle. Points on shared edges go to the upper/right element.
    pub fn element_at(&self, x: f64, y: f64) -> Option<usize> {
        let u = (x - self.x0) / self.dx;
        let v = (y - self.y0) / self.dy;
        if u < 0.0 || v < 0.0 || u > self.nx as f64 || v > self.ny as f64 {
            return None;
        }
        let i = (u.floor() as usize).min(self.nx - 1);
        let j = (v.floor() as usize).min(self.ny - 1);
        Some(j * self.nx + i)
    }

    /// True if the point lies in (or on the boundary of) an active element.
    pub fn contains_active(&self, x: f64, y: f64) -> bool {
        self.element_at(x, y).is_some_and(|e| self.active[e])
    }

    /// Node closest to a point; ties go to the lower node index.
    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for n in 0..self.node_count() {
            let (nx, ny) = self.node_coords(n);
            let d = (nx - x).powi(2) + (ny - y).powi(2);
            if d < best_d {
                best = n;
                best_d = d;
            }
        }
        best
    }

    /// Dofs that belong to at least one active element.
    pub fn supported_dofs(&self) -> Vec<bool> {
        let mut used = vec![false; self.dof_count()];
        for e in self.active_elements() {
            for d in self.element_dofs(e) {
                used[d] = true;
            }
        }
        used
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn max_element_size(&self) -> f64 {
        self.dx.max(self.dy)
    }
}

/// Deactivates every element whose centroid lies in
/// `[cut_xmin, x_max] x [cut_ymin, y_max]`. The cut corner must sit on
/// element boundaries.
pub fn apply_lshape_mask(grid: &Grid, cut_xmin: f64, cut_ymin: f64) -> Result<Grid> {
    let x_max = grid.x0 + grid.width;
    let y_max = grid.y0 + grid.height;
    if cut_xmin < grid.x0 || cut_xmin > x_max || cut_ymin < grid.y0 || cut_ymin > y_max {
        return invalid(format!(
            "cut corner ({cut_xmin}, {cut_ymin}) lies outside the grid"
        ));
    }
    for (value, origin, step, axis) in [
        (cut_xmin, grid.x0, grid.dx, "x"),
        (cut_ymin, grid.y0, grid.dy, "y"),
    ] {
        let cells = (value - origin) / step;
        if (cells - cells.round()).abs() > ALIGN_TOL * cells.abs().max(1.0) {
            return invalid(format!(
                "cut {axis} = {value} is not aligned to element boundaries (spacing {step})"
            ));
        }
    }
    let mut out = grid.clone();
    for e in 0..grid.element_count() {
        let (cx, cy) = grid.element_centroid(e);
        if cx >= cut_xmin && cx <= x_max && cy >= cut_ymin && cy <= y_max {
            out.active[e] = false;
        }
    }
    if out.active_count() == 0 {
        return invalid("cut removes every element");
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussPoint {
    pub x: f64,
    pub y: f64,
    /// Quadrature weight including the Jacobian (area units).
    pub weight: f64,
    pub element: usize,
}

/// Gauss points of all active elements; each element contributes
/// [`GAUSS_PER_ELEMENT`] consecutive points ordered like
/// [`GAUSS_PARAMETRIC`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussPointSet {
    pub points: Vec<GaussPoint>,
}

impl GaussPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }

    pub fn element_count(&self) -> usize {
        self.points.len() / GAUSS_PER_ELEMENT
    }

    /// Parent elements, one per block of four points.
    pub fn elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.points
            .chunks_exact(GAUSS_PER_ELEMENT)
            .map(|c| c[0].element)
    }
}

pub fn gauss_points(grid: &Grid) -> Result<GaussPointSet> {
    if grid.active_count() == 0 {
        return invalid("grid has no active element");
    }
    let weight = grid.element_area() / GAUSS_PER_ELEMENT as f64;
    let mut points = Vec::with_capacity(grid.active_count() * GAUSS_PER_ELEMENT);
    for e in grid.active_elements() {
        let (cx, cy) = grid.element_centroid(e);
        for (s, t) in GAUSS_PARAMETRIC {
            points.push(GaussPoint {
                x: cx + 0.5 * grid.dx * s,
                y: cy + 0.5 * grid.dy * t,
                weight,
                element: e,
            });
        }
    }
    Ok(GaussPointSet { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLoad {
    pub node: usize,
    pub direction: Direction,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    /// Sorted, deduplicated.
    pub fixed_dofs: Vec<usize>,
    pub loads: Vec<PointLoad>,
}

impl BoundarySpec {
    pub fn new(grid: &Grid, mut fixed_dofs: Vec<usize>, loads: Vec<PointLoad>) -> Result<Self> {
        fixed_dofs.sort_unstable();
        fixed_dofs.dedup();
        let n = grid.dof_count();
        if let Some(d) = fixed_dofs.iter().find(|d| **d >= n) {
            return invalid(format!("fixed dof {d} out of range (dof count {n})"));
        }
        if fixed_dofs.len() < 3 {
            return invalid("at least 3 dofs must be fixed to remove rigid-body modes");
        }
        if let Some(l) = loads.iter().find(|l| l.node >= grid.node_count()) {
            return invalid(format!("load node {} out of range", l.node));
        }
        Ok(Self { fixed_dofs, loads })
    }

    pub fn force_vector(&self, grid: &Grid) -> Vec<f64> {
        let mut f = vec![0.0; grid.dof_count()];
        for l in &self.loads {
            f[grid.dof(l.node, l.direction)] += l.magnitude;
        }
        f
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed_dofs.binary_search(&dof).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Cantilever,
    Lshape,
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cantilever" => Ok(Case::Cantilever),
            "lshape" | "l-shape" | "l_shape" => Ok(Case::Lshape),
            other => invalid(format!("unknown case '{other}'")),
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Cantilever => "cantilever",
            Case::Lshape => "lshape",
        })
    }
}

/// Which edge of the bounding rectangle to clamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

/// All dofs of the nodes on `edge` that touch an active element.
pub fn clamp_edge(grid: &Grid, edge: Edge) -> Vec<usize> {
    let supported = grid.supported_dofs();
    let nodes: Vec<usize> = match edge {
        Edge::Left => (0..=grid.ny).map(|j| grid.node_index(0, j)).collect(),
        Edge::Right => (0..=grid.ny).map(|j| grid.node_index(grid.nx, j)).collect(),
        Edge::Bottom => (0..=grid.nx).map(|i| grid.node_index(i, 0)).collect(),
        Edge::Top => (0..=grid.nx).map(|i| grid.node_index(i, grid.ny)).collect(),
    };
    nodes
        .into_iter()
        .flat_map(|n| [2 * n, 2 * n + 1])
        .filter(|d| supported[*d])
        .collect()
}

/// The two benchmark problems.
///
/// * cantilever: `[0,1] x [-1,1]`, left edge clamped, unit downward load at
///   the node nearest `(1, 0)`.
/// * lshape: unit square without the block `[0.4,1] x [0.4,1]`, top edge of
///   the vertical leg clamped, unit downward load at `(1, 0.4)`.
pub fn preset_case(case: Case, elems_per_unit: usize) -> Result<(Grid, BoundarySpec)> {
    match case {
        Case::Cantilever => {
            let grid = build_grid(1.0, 2.0, elems_per_unit)?.with_origin(0.0, -1.0);
            let fixed = clamp_edge(&grid, Edge::Left);
            let load = PointLoad {
                node: grid.nearest_node(1.0, 0.0),
                direction: Direction::Y,
                magnitude: -1.0,
            };
            let bc = BoundarySpec::new(&grid, fixed, vec![load])?;
            Ok((grid, bc))
        }
        Case::Lshape => {
            let full = build_grid(1.0, 1.0, elems_per_unit)?;
            let grid = apply_lshape_mask(&full, 0.4, 0.4)?;
            let fixed = clamp_edge(&grid, Edge::Top);
            let load = PointLoad {
                node: grid.nearest_node(1.0, 0.4),
                direction: Direction::Y,
                magnitude: -1.0,
            };
            let bc = BoundarySpec::new(&grid, fixed, vec![load])?;
            Ok((grid, bc))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cantilever_coarse_counts() {
        let g = build_grid(1.0, 2.0, 4).unwrap();
        assert_eq!(g.element_count(), 32);
        let g = build_grid(1.0, 2.0, 10).unwrap();
        assert_eq!(g.element_count(), 200);
        assert_eq!(g.node_count(), 231);
    }

    #[test]
    fn minimal_grid() {
        let g = build_grid(1.0, 1.0, 1).unwrap();
        assert_eq!(g.element_count(), 1);
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.dof_count(), 8);
        assert_eq!(g.element_nodes(0), [0, 1, 3, 2]);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(build_grid(0.0, 1.0, 4).is_err());
        assert!(build_grid(1.0, -2.0, 4).is_err());
        assert!(build_grid(1.0, 1.0, 0).is_err());
        assert!(build_grid(0.33, 1.0, 4).is_err());
    }

    #[test]
    fn dof_numbering_is_a_bijection() {
        let g = build_grid(1.0, 2.0, 3).unwrap();
        let mut seen = vec![false; g.dof_count()];
        for n in 0..g.node_count() {
            for d in [Direction::X, Direction::Y] {
                let k = g.dof(n, d);
                assert!(!seen[k]);
                seen[k] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn lshape_mask_counts() {
        let g = build_grid(1.0, 1.0, 10).unwrap();
        let l = apply_lshape_mask(&g, 0.4, 0.4).unwrap();
        assert_eq!(l.active_count(), 64);
        let same = apply_lshape_mask(&g, 1.0, 1.0).unwrap();
        assert_eq!(same, g);
        assert!(apply_lshape_mask(&g, 0.0, 0.0).is_err());
        assert!(apply_lshape_mask(&g, 0.45, 0.4).is_err());
    }

    #[test]
    fn gauss_weights() {
        let g = build_grid(0.25, 0.25, 4).unwrap();
        let gp = gauss_points(&g).unwrap();
        assert_eq!(gp.len(), 4);
        for p in &gp.points {
            assert_relative_eq!(p.weight, 0.015625, epsilon = 1e-15);
        }

        let (g, _) = preset_case(Case::Cantilever, 4).unwrap();
        let gp = gauss_points(&g).unwrap();
        assert_eq!(gp.len(), 128);
        assert_relative_eq!(gp.total_weight(), 2.0, max_relative = 1e-12);

        let (g, _) = preset_case(Case::Lshape, 10).unwrap();
        let gp = gauss_points(&g).unwrap();
        assert_eq!(gp.len(), 256);
        assert_relative_eq!(gp.total_weight(), 0.64, max_relative = 1e-12);
        assert!(gp.points.iter().all(|p| g.is_active(p.element)));
    }

    #[test]
    fn gauss_points_inside_their_element() {
        let (g, _) = preset_case(Case::Cantilever, 5).unwrap();
        let gp = gauss_points(&g).unwrap();
        for p in &gp.points {
            assert_eq!(g.element_at(p.x, p.y), Some(p.element));
        }
    }

    #[test]
    fn cantilever_boundary() {
        let (g, bc) = preset_case(Case::Cantilever, 4).unwrap();
        assert_eq!(bc.fixed_dofs.len(), 18);
        assert_eq!(bc.loads.len(), 1);
        let load = bc.loads[0];
        assert_eq!(load.direction, Direction::Y);
        assert_eq!(load.magnitude, -1.0);
        assert_eq!(g.node_coords(load.node), (1.0, 0.0));
    }

    #[test]
    fn cantilever_load_node_exists_for_every_density() {
        for n in 1..=15 {
            let (g, bc) = preset_case(Case::Cantilever, n).unwrap();
            let (x, y) = g.node_coords(bc.loads[0].node);
            assert_relative_eq!(x, 1.0, epsilon = 1e-12);
            assert!(y.abs() < 1e-12);
        }
    }

    #[test]
    fn lshape_boundary() {
        let (g, bc) = preset_case(Case::Lshape, 10).unwrap();
        // top edge of the vertical leg, x in [0, 0.4]
        assert_eq!(bc.fixed_dofs.len(), 10);
        for d in &bc.fixed_dofs {
            let (x, y) = g.node_coords(d / 2);
            assert_eq!(y, 1.0);
            assert!(x <= 0.4 + 1e-12);
        }
        let (x, y) = g.node_coords(bc.loads[0].node);
        assert_relative_eq!(x, 1.0);
        assert_relative_eq!(y, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn nearest_node_ties_go_low() {
        let g = build_grid(1.0, 1.0, 1).unwrap();
        assert_eq!(g.nearest_node(0.5, 0.5), 0);
    }

    #[test]
    fn boundary_requires_three_fixed_dofs() {
        let g = build_grid(1.0, 1.0, 1).unwrap();
        assert!(BoundarySpec::new(&g, vec![0, 1], vec![]).is_err());
        assert!(BoundarySpec::new(&g, vec![0, 1, 99], vec![]).is_err());
    }
}
