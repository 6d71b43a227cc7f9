//! Plain-text formats: member tables, iteration histories and density
//! rasters.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::density::{raw_density, MassNode, MaterialLayout, NodeKind};
use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::material::{saturate, PipelineConfig};
use crate::optimize::IterationRecord;
use crate::simp::SimpRecord;

pub const MEMBER_HEADER: &str = "# x y theta Lx Ly kind";

/// One node per line, preceded by `beta` and `d_rho` comment lines.
pub fn write_layout(layout: &MaterialLayout) -> String {
    let mut out = String::new();
    writeln!(out, "{MEMBER_HEADER}").unwrap();
    writeln!(out, "# beta {}", layout.beta).unwrap();
    writeln!(out, "# d_rho {}", layout.d_rho).unwrap();
    for n in layout.nodes() {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            n.x, n.y, n.theta, n.lx, n.ly, n.kind
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutTable {
    pub nodes: Vec<MassNode>,
    pub beta: Option<f64>,
    pub d_rho: Option<f64>,
}

impl LayoutTable {
    /// Builds the layout, taking missing constants from the fallbacks.
    pub fn into_layout(self, beta: f64, d_rho: f64) -> Result<MaterialLayout> {
        MaterialLayout::new(
            self.nodes,
            self.beta.unwrap_or(beta),
            self.d_rho.unwrap_or(d_rho),
        )
    }
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("'{token}' is not a number"),
    })
}

pub fn read_layout(text: &str) -> Result<LayoutTable> {
    let mut table = LayoutTable {
        nodes: Vec::new(),
        beta: None,
        d_rho: None,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let mut parts = comment.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some("beta"), Some(v)) => table.beta = Some(parse_number(v, line)?),
                (Some("d_rho"), Some(v)) => table.d_rho = Some(parse_number(v, line)?),
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let v: Vec<f64> = fields[..5]
            .iter()
            .map(|t| parse_number(t, line))
            .collect::<Result<_>>()?;
        let kind: NodeKind = fields[5].parse().map_err(|e: Error| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let node = MassNode::new(v[0], v[1], v[2], v[3], v[4], kind);
        node.validate().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        table.nodes.push(node);
    }
    Ok(table)
}

pub fn history_table(records: &[IterationRecord]) -> String {
    let mut out =
        String::from("iteration,compliance,volume_fraction,constraint,step,nodes,penalization\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.compliance,
            r.volume_fraction,
            r.constraint,
            r.step,
            r.nodes,
            r.penalization
        )
        .unwrap();
    }
    out
}

pub fn simp_history_table(records: &[SimpRecord]) -> String {
    let mut out = String::from("iteration,compliance,volume_fraction,change\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.iteration, r.compliance, r.volume_fraction, r.change
        )
        .unwrap();
    }
    out
}

/// Values sampled at cell centers of a regular grid; `NaN` off the
/// material domain. Row 0 is the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub cols: usize,
    pub rows: usize,
    pub x0: f64,
    pub y0: f64,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl Raster {
    fn sample<F>(grid: &Grid, per_unit: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        if per_unit == 0 {
            return Err(Error::InvalidArgument(
                "raster resolution must be positive".into(),
            ));
        }
        let spacing = 1.0 / per_unit as f64;
        let cols = (grid.width * per_unit as f64).round() as usize;
        let rows = (grid.height * per_unit as f64).round() as usize;
        let values = (0..rows)
            .into_par_iter()
            .flat_map_iter(|r| {
                let y = grid.y0 + grid.height - (r as f64 + 0.5) * spacing;
                let f = &f;
                (0..cols).map(move |c| {
                    let x = grid.x0 + (c as f64 + 0.5) * spacing;
                    if grid.contains_active(x, y) {
                        f(x, y)
                    } else {
                        f64::NAN
                    }
                })
            })
            .collect();
        Ok(Self {
            cols,
            rows,
            x0: grid.x0,
            y0: grid.y0,
            spacing,
            values,
        })
    }

    /// Saturated (unfiltered, unpenalized) density of a layout.
    pub fn from_layout(
        layout: &MaterialLayout,
        grid: &Grid,
        config: &PipelineConfig,
        per_unit: usize,
    ) -> Result<Self> {
        let raster = Self::sample(grid, per_unit, |x, y| raw_density((x, y), layout))?;
        if !config.use_saturation {
            return Ok(raster);
        }
        let values = raster
            .values
            .iter()
            .map(|&v| {
                if v.is_nan() {
                    Ok(v)
                } else {
                    saturate(v, config).map(|s| s.0)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { values, ..raster })
    }

    /// Piecewise-constant field given per active element.
    pub fn from_elements(grid: &Grid, values: &[f64], per_unit: usize) -> Result<Self> {
        if values.len() != grid.active_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} element values, got {}",
                grid.active_count(),
                values.len()
            )));
        }
        let mut slot = vec![usize::MAX; grid.element_count()];
        for (i, e) in grid.active_elements().enumerate() {
            slot[e] = i;
        }
        Self::sample(grid, per_unit, |x, y| {
            grid.element_at(x, y).map_or(f64::NAN, |e| values[slot[e]])
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Character preview using every `step`-th sample; blank outside the
    /// domain.
    pub fn to_ascii(&self, step: usize) -> String {
        const SHADES: &[u8] = b".,:-=+*#%@";
        let step = step.max(1);
        let mut out = String::new();
        for r in (0..self.rows).step_by(step) {
            for c in (0..self.cols).step_by(step) {
                let v = self.get(r, c);
                let ch = if v.is_nan() {
                    ' '
                } else {
                    SHADES[(v.clamp(0.0, 1.0) * (SHADES.len() - 1) as f64).round() as usize] as char
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "# density raster, {} rows x {} cols, first row on top",
            self.rows, self.cols
        )
        .unwrap();
        writeln!(
            out,
            "# cell centers x = {} + (col + 0.5) * {s}, y = top - (row + 0.5) * {s}; nan outside the domain",
            self.x0,
            s = self.spacing
        )
        .unwrap();
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.get(r, c).to_string()).collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        out
    }
}
