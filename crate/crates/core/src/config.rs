//! Run configuration read from TOML files.
//!
//! Every section rejects unknown keys, and [`RunConfig::validate`] reports
//! all violations at once.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density::{calibrated_beta, NodeKind};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_lshape_mask, build_grid, clamp_edge, preset_case, BoundarySpec, Case, Direction, Edge,
    Grid, PointLoad, GAUSS_PER_ELEMENT,
};
use crate::material::PipelineConfig;
use crate::optimize::OptimizerConfig;
use crate::recognize::{MergeTolerances, SuppressOptions};
use crate::simp::SimpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mna")]
    Mna,
    #[serde(rename = "simp")]
    Simp,
    #[serde(rename = "mna+recognize")]
    MnaRecognize,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mna => "mna",
            Method::Simp => "simp",
            Method::MnaRecognize => "mna+recognize",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseName {
    Cantilever,
    Lshape,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub x: f64,
    pub y: f64,
    pub direction: Direction,
    pub magnitude: f64,
}

/// A rectangle with clamped edges, point loads at the nearest mesh nodes
/// and an optional cut-out of its top-right corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomCase {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub y0: f64,
    pub clamp: Vec<Edge>,
    pub loads: Vec<LoadSpec>,
    /// Lower-left corner of the removed block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutout: Option<[f64; 2]>,
}

fn default_nu() -> f64 {
    0.3
}
fn default_gauss() -> usize {
    GAUSS_PER_ELEMENT
}
fn default_degree() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub name: CaseName,
    pub elems_per_unit: usize,
    pub v_frac: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Only 4 (2 x 2 Gauss) is supported.
    #[serde(default = "default_gauss")]
    pub gauss_per_element: usize,
    /// Only bilinear elements are supported.
    #[serde(default = "default_degree")]
    pub shape_degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutConfig {
    pub nodes: usize,
    pub kind: NodeKind,
    pub d_rho: f64,
    /// Calibrated from `d_rho` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Uniform random perturbation of initial positions, in element
    /// widths; drawn from the run seed.
    pub jitter: f64,
    /// Member table to start from instead of the regular arrangement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<PathBuf>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            nodes: 4,
            kind: NodeKind::DeformableMember,
            d_rho: 1.5,
            beta: None,
            jitter: 0.0,
            initial: None,
        }
    }
}

impl LayoutConfig {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or_else(|| calibrated_beta(self.d_rho))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognitionConfig {
    pub tol_theta_deg: f64,
    pub tol_l: f64,
    pub tol_d: f64,
    pub r_rho: f64,
    pub absolute_thickness: bool,
    pub min_dim: f64,
    pub overlap_threshold: f64,
    /// Compliance gate for suppression; the optimizer's `tol_c` if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_c: Option<f64>,
    /// Also recognize every this many iterations; 0 means only after
    /// convergence.
    pub every: usize,
    /// Optimize again from the recognized layout.
    pub restart: bool,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        let t = MergeTolerances::default();
        let s = SuppressOptions::default();
        Self {
            tol_theta_deg: t.tol_theta.to_degrees(),
            tol_l: t.tol_l,
            tol_d: t.tol_d,
            r_rho: t.r_rho,
            absolute_thickness: t.absolute_thickness,
            min_dim: s.min_dim,
            overlap_threshold: s.overlap_threshold,
            tol_c: None,
            every: 0,
            restart: true,
        }
    }
}

impl RecognitionConfig {
    pub fn tolerances(&self) -> MergeTolerances {
        MergeTolerances {
            tol_theta: self.tol_theta_deg.to_radians(),
            tol_l: self.tol_l,
            tol_d: self.tol_d,
            r_rho: self.r_rho,
            absolute_thickness: self.absolute_thickness,
        }
    }

    pub fn suppress_options(&self, optimizer_tol_c: f64) -> SuppressOptions {
        SuppressOptions {
            min_dim: self.min_dim,
            overlap_threshold: self.overlap_threshold,
            tol_c: self.tol_c.unwrap_or(optimizer_tol_c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Raster samples per unit length.
    pub raster_per_unit: usize,
    /// Layout snapshot period in iterations; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            raster_per_unit: 50,
            snapshot_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    pub case: CaseConfig,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub material: PipelineConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub recognition: RecognitionConfig,
    #[serde(default)]
    pub simp: SimpConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Bundled presets by name.
pub const PRESETS: [(&str, &str); 3] = [
    ("cantilever", include_str!("../presets/cantilever.toml")),
    ("lshape", include_str!("../presets/lshape.toml")),
    (
        "simp_cantilever",
        include_str!("../presets/simp_cantilever.toml"),
    ),
];

impl FromStr for RunConfig {
    type Err = Error;

    /// Parses and validates.
    fn from_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        config.validate()?;
        Ok(config)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    pub fn preset(name: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset '{name}'")))?
            .1
            .parse()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::InvalidState(format!("cannot serialize config: {e}")))
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let c = &self.case;
        if c.elems_per_unit == 0 {
            v.push("case.elems_per_unit must be at least 1".into());
        }
        if !(c.v_frac > 0.0 && c.v_frac <= 1.0) {
            v.push(format!("case.v_frac must lie in (0, 1], got {}", c.v_frac));
        }
        if !(c.nu > -1.0 && c.nu < 0.5) {
            v.push(format!("case.nu must lie in (-1, 0.5), got {}", c.nu));
        }
        if c.gauss_per_element != GAUSS_PER_ELEMENT {
            v.push(format!(
                "case.gauss_per_element must be {GAUSS_PER_ELEMENT}, got {}",
                c.gauss_per_element
            ));
        }
        if c.shape_degree != 1 {
            v.push(format!(
                "case.shape_degree must be 1, got {}",
                c.shape_degree
            ));
        }
        match (c.name, &c.custom) {
            (CaseName::Custom, None) => {
                v.push("case.custom is required when case.name = \"custom\"".into())
            }
            (CaseName::Custom, Some(custom)) => {
                if !(custom.width > 0.0 && custom.height > 0.0) {
                    v.push("case.custom width and height must be positive".into());
                }
                if custom.clamp.is_empty() {
                    v.push("case.custom.clamp needs at least one edge".into());
                }
                if custom.loads.is_empty() {
                    v.push("case.custom.loads needs at least one load".into());
                }
            }
            (_, Some(_)) => {
                v.push("case.custom is only allowed when case.name = \"custom\"".into())
            }
            _ => {}
        }

        let l = &self.layout;
        if l.nodes == 0 {
            v.push("layout.nodes must be at least 1".into());
        }
        if !(l.d_rho >= 1.0) {
            v.push(format!("layout.d_rho must be at least 1, got {}", l.d_rho));
        }
        if let Some(b) = l.beta {
            if !(b > 0.0) {
                v.push(format!("layout.beta must be positive, got {b}"));
            }
        }
        if !(l.jitter >= 0.0) {
            v.push(format!(
                "layout.jitter must be non-negative, got {}",
                l.jitter
            ));
        }

        v.extend(self.material.violations());
        v.extend(self.optimizer.violations());
        v.extend(self.recognition.tolerances().violations());
        let r = &self.recognition;
        if !(r.min_dim >= 0.0) {
            v.push(format!(
                "recognition.min_dim must be non-negative, got {}",
                r.min_dim
            ));
        }
        if !(r.overlap_threshold >= 0.0) {
            v.push(format!(
                "recognition.overlap_threshold must be non-negative, got {}",
                r.overlap_threshold
            ));
        }
        if let Some(t) = r.tol_c {
            if !(t > 0.0) {
                v.push(format!("recognition.tol_c must be positive, got {t}"));
            }
        }
        v.extend(self.simp.violations());
        if self.output.raster_per_unit == 0 {
            v.push("output.raster_per_unit must be at least 1".into());
        }

        // the lower dimension bounds must fit in the mass budget
        if v.is_empty()
            && self.method != Method::Simp
            && l.kind == NodeKind::DeformableMember
            && l.initial.is_none()
        {
            match self.geometry() {
                Ok((grid, _)) => {
                    let [mx, my] = self.optimizer.min_dims_for(&grid);
                    let floor = l.nodes as f64 * mx * my;
                    let budget = c.v_frac * grid.active_area();
                    if floor > budget {
                        v.push(format!(
                            "optimizer.min_dims [{mx}, {my}] need area {floor} for {} nodes, above the budget {budget}",
                            l.nodes
                        ));
                    }
                }
                Err(e) => v.push(format!("case: {e}")),
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn geometry(&self) -> Result<(Grid, BoundarySpec)> {
        let c = &self.case;
        match c.name {
            CaseName::Cantilever => preset_case(Case::Cantilever, c.elems_per_unit),
            CaseName::Lshape => preset_case(Case::Lshape, c.elems_per_unit),
            CaseName::Custom => {
                let custom = c
                    .custom
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("missing custom case".into()))?;
                let mut grid = build_grid(custom.width, custom.height, c.elems_per_unit)?
                    .with_origin(custom.x0, custom.y0);
                if let Some([x, y]) = custom.cutout {
                    grid = apply_lshape_mask(&grid, x, y)?;
                }
                let fixed = custom
                    .clamp
                    .iter()
                    .flat_map(|e| clamp_edge(&grid, *e))
                    .collect();
                let loads = custom
                    .loads
                    .iter()
                    .map(|l| PointLoad {
                        node: grid.nearest_node(l.x, l.y),
                        direction: l.direction,
                        magnitude: l.magnitude,
                    })
                    .collect();
                let bc = BoundarySpec::new(&grid, fixed, loads)?;
                Ok((grid, bc))
            }
        }
    }

    /// `v_frac * active_area * beta`.
    pub fn mass_budget(&self, grid: &Grid) -> f64 {
        self.case.v_frac * grid.active_area() * self.layout.beta()
    }
}
