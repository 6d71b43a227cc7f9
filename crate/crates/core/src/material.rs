//! From raw density to Young modulus: filter, saturation, floor and
//! power-law penalization, with derivatives carried through every stage.
//!
//! Stage order is raw -> filter -> saturate -> floor/penalize. The filter is
//! linear, so the node sensitivities are filtered with the same weights as
//! the density itself.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{node_contribution, MaterialLayout};
use crate::error::{invalid, Result};
use crate::geometry::GaussPointSet;

/// Exponent of the smooth saturation `rho / (1 + (rho/rho_max)^q)^(1/q)`.
pub const SMOOTH_CLAMP_EXPONENT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationMode {
    /// `a rho / (rho^b + a)` with `b = 1/(1 - rho_max) - 1`,
    /// `a = rho_max^b / (rho_max - 1)`.
    PaperLiteral,
    /// Monotone soft clamp with asymptote `rho_max`.
    SmoothClamp,
}

/// Lower bound that keeps void regions from making the stiffness singular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Floor {
    /// `E = e_min + (e0 - e_min) rho^p`.
    EMin(f64),
    /// `E = e0 (rho_min + (1 - rho_min) rho)^p`.
    RhoMin(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub rho_max: f64,
    pub use_saturation: bool,
    pub saturation_mode: SaturationMode,
    /// Gauss-point filter radius; 0 disables filtering.
    pub r_min: f64,
    pub e0: f64,
    pub floor: Floor,
    pub p: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rho_max: 1.2,
            use_saturation: true,
            saturation_mode: SaturationMode::SmoothClamp,
            r_min: 0.0,
            e0: 1.0,
            floor: Floor::EMin(1e-9),
            p: 3.0,
        }
    }
}

impl PipelineConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.rho_max > 1.0) {
            v.push(format!(
                "material.rho_max must exceed 1, got {}",
                self.rho_max
            ));
        }
        if !(self.r_min >= 0.0) {
            v.push(format!(
                "material.r_min must be non-negative, got {}",
                self.r_min
            ));
        }
        if !(self.e0 > 0.0) {
            v.push(format!("material.e0 must be positive, got {}", self.e0));
        }
        match self.floor {
            Floor::EMin(e_min) => {
                if !(e_min >= 0.0 && e_min < self.e0) {
                    v.push(format!(
                        "material.floor e_min must lie in [0, e0), got {e_min}"
                    ));
                }
            }
            Floor::RhoMin(rho_min) => {
                if !(0.0..1.0).contains(&rho_min) {
                    v.push(format!(
                        "material.floor rho_min must lie in [0, 1), got {rho_min}"
                    ));
                }
            }
        }
        if !(self.p >= 1.0) {
            v.push(format!("material.p must be at least 1, got {}", self.p));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::Config(v))
        }
    }

    /// Smallest modulus the pipeline can produce.
    pub fn modulus_floor(&self) -> f64 {
        match self.floor {
            Floor::EMin(e_min) => e_min,
            Floor::RhoMin(rho_min) => self.e0 * rho_min.powf(self.p),
        }
    }
}

/// Sparse symmetric cone-filter weights over a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix {
    pub r_min: f64,
    /// `rows[k]` lists `(l, H_kl)` for every `l` within `r_min` of `k`.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub row_sums: Vec<f64>,
}

impl FilterMatrix {
    pub fn is_identity(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn weight(&self, k: usize, l: usize) -> f64 {
        self.rows
            .get(k)
            .and_then(|r| r.iter().find(|(j, _)| *j == l))
            .map_or(0.0, |(_, h)| *h)
    }
}

pub fn filter_matrix(points: &GaussPointSet, r_min: f64) -> Result<FilterMatrix> {
    if !(r_min >= 0.0) {
        return invalid(format!("filter radius must be non-negative, got {r_min}"));
    }
    if r_min == 0.0 {
        return Ok(FilterMatrix {
            r_min,
            rows: Vec::new(),
            row_sums: Vec::new(),
        });
    }
    let p = &points.points;
    let rows: Vec<Vec<(usize, f64)>> = p
        .par_iter()
        .map(|a| {
            p.iter()
                .enumerate()
                .filter_map(|(l, b)| {
                    let d = (a.x - b.x).hypot(a.y - b.y);
                    (d < r_min).then_some((l, r_min - d))
                })
                .collect()
        })
        .collect();
    let row_sums = rows
        .iter()
        .map(|r| r.iter().map(|(_, h)| h).sum())
        .collect();
    Ok(FilterMatrix {
        r_min,
        rows,
        row_sums,
    })
}

/// Row-normalized weighted average; the identity when the filter is empty.
pub fn apply_filter(rho: &[f64], h: &FilterMatrix) -> Result<Vec<f64>> {
    if h.is_identity() {
        return Ok(rho.to_vec());
    }
    if rho.len() != h.rows.len() {
        return invalid(format!(
            "filter built over {} points applied to {} values",
            h.rows.len(),
            rho.len()
        ));
    }
    Ok(h.rows
        .iter()
        .zip(&h.row_sums)
        .map(|(row, s)| row.iter().map(|(l, w)| w * rho[*l]).sum::<f64>() / s)
        .collect())
}

/// Coefficients `(a, b)` of the printed asymptotic density.
pub fn asymptotic_coefficients(rho_max: f64) -> (f64, f64) {
    let b = 1.0 / (1.0 - rho_max) - 1.0;
    let a = rho_max.powf(b) / (rho_max - 1.0);
    (a, b)
}

/// Saturated density and its derivative with respect to the input.
pub fn saturate(rho: f64, config: &PipelineConfig) -> Result<(f64, f64)> {
    if !(rho >= 0.0) {
        return invalid(format!("density must be non-negative, got {rho}"));
    }
    if !config.use_saturation {
        return Ok((rho, 1.0));
    }
    Ok(match config.saturation_mode {
        SaturationMode::PaperLiteral => rational_saturation(rho, config.rho_max),
        SaturationMode::SmoothClamp => smooth_clamp(rho, config.rho_max),
    })
}

fn rational_saturation(rho: f64, rho_max: f64) -> (f64, f64) {
    let (a, b) = asymptotic_coefficients(rho_max);
    if b < 0.0 {
        // multiply through by rho^-b to stay finite near zero
        let q = -b;
        let rq = rho.powf(q);
        let den = 1.0 + a * rq;
        let value = a * rho * rq / den;
        let slope = (a * (1.0 + q) * rq + a * a * rq * rq) / (den * den);
        (value, slope)
    } else {
        let rb = rho.powf(b);
        let den = rb + a;
        (a * rho / den, (a * (1.0 - b) * rb + a * a) / (den * den))
    }
}

fn smooth_clamp(rho: f64, rho_max: f64) -> (f64, f64) {
    let q = SMOOTH_CLAMP_EXPONENT;
    let t = (rho / rho_max).powf(q);
    let g = (1.0 + t).powf(-1.0 / q);
    (rho * g, g / (1.0 + t))
}

/// Young modulus and `dE / d rho` for a post-saturation density.
pub fn young_modulus(rho: f64, config: &PipelineConfig) -> (f64, f64) {
    let p = config.p;
    match config.floor {
        Floor::RhoMin(rho_min) => {
            let r = rho_min + (1.0 - rho_min) * rho;
            (
                config.e0 * r.powf(p),
                config.e0 * p * r.powf(p - 1.0) * (1.0 - rho_min),
            )
        }
        Floor::EMin(e_min) => {
            let span = config.e0 - e_min;
            (e_min + span * rho.powf(p), span * p * rho.powf(p - 1.0))
        }
    }
}

/// Nonzero `dE/dmu` of one node at the Gauss points it influences, for all
/// five node variables in [`crate::density::Var`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSensitivity {
    pub node: usize,
    /// `(gauss point, dE/d[x, y, theta, lx, ly])`, sorted by point.
    pub entries: Vec<(usize, [f64; 5])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldEvaluation {
    /// Young modulus per Gauss point.
    pub modulus: Vec<f64>,
    /// Post-filter, post-saturation density per Gauss point.
    pub density: Vec<f64>,
    /// One entry per layout node.
    pub sensitivities: Vec<NodeSensitivity>,
    /// Integral of `density` over the active domain.
    pub effective_mass: f64,
    /// Revision of the layout this evaluation was computed from.
    pub revision: u64,
}

impl FieldEvaluation {
    /// `dE(x_k) / d var` of one node, zero where the table has no entry.
    pub fn d_modulus(&self, point: usize, node: usize, var: crate::density::Var) -> f64 {
        let entries = &self.sensitivities[node].entries;
        entries
            .binary_search_by_key(&point, |(k, _)| *k)
            .map_or(0.0, |i| entries[i].1[var.index()])
    }
}

/// `(gauss point, raw contribution, d/d[x, y, theta, lx, ly])` of one node.
type PointEntries = Vec<(usize, f64, [f64; 5])>;

/// Gauss points, configuration and the precomputed filter.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub points: GaussPointSet,
    pub config: PipelineConfig,
    filter: FilterMatrix,
}

impl Pipeline {
    pub fn new(points: GaussPointSet, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let filter = filter_matrix(&points, config.r_min)?;
        Ok(Self {
            points,
            config,
            filter,
        })
    }

    pub fn filter(&self) -> &FilterMatrix {
        &self.filter
    }

    /// Raw density and its node derivatives at every Gauss point.
    fn raw_field(&self, layout: &MaterialLayout) -> (Vec<f64>, Vec<PointEntries>) {
        let pts = &self.points.points;
        let per_node: Vec<PointEntries> = layout
            .nodes()
            .par_iter()
            .map(|node| {
                let (hx, hy) = layout.support_half_widths(node);
                let reach = hx.hypot(hy);
                pts.iter()
                    .enumerate()
                    .filter(|(_, p)| (p.x - node.x).abs() <= reach && (p.y - node.y).abs() <= reach)
                    .filter_map(|(k, p)| {
                        node_contribution((p.x, p.y), node, layout.beta, layout.d_rho)
                            .map(|c| (k, c.value, c.grad))
                    })
                    .collect()
            })
            .collect();
        let mut raw = vec![0.0; pts.len()];
        for entries in &per_node {
            for (k, v, _) in entries {
                raw[*k] += v;
            }
        }
        (raw, per_node)
    }

    pub fn evaluate(&self, layout: &MaterialLayout) -> Result<FieldEvaluation> {
        let n = self.points.len();
        let (raw, per_node) = self.raw_field(layout);
        let filtered = apply_filter(&raw, &self.filter)?;

        let mut density = Vec::with_capacity(n);
        let mut modulus = Vec::with_capacity(n);
        let mut chain = Vec::with_capacity(n);
        for &rho in &filtered {
            let (rho_a, d_sat) = saturate(rho.max(0.0), &self.config)?;
            let (e, d_e) = young_modulus(rho_a, &self.config);
            density.push(rho_a);
            modulus.push(e);
            chain.push(d_e * d_sat);
        }

        let filter = &self.filter;
        let sensitivities = per_node
            .into_par_iter()
            .enumerate()
            .map(|(node, entries)| {
                let entries = if filter.is_identity() {
                    entries
                        .into_iter()
                        .map(|(k, _, g)| (k, g.map(|d| d * chain[k])))
                        .collect()
                } else {
                    let mut acc = vec![[0.0; 5]; n];
                    let mut touched = vec![false; n];
                    for (l, _, g) in entries {
                        for &(k, h) in &filter.rows[l] {
                            let w = h / filter.row_sums[k];
                            touched[k] = true;
                            for i in 0..5 {
                                acc[k][i] += w * g[i];
                            }
                        }
                    }
                    (0..n)
                        .filter(|k| touched[*k])
                        .map(|k| (k, acc[k].map(|d| d * chain[k])))
                        .collect()
                };
                NodeSensitivity { node, entries }
            })
            .collect();

        let effective_mass = self
            .points
            .points
            .iter()
            .zip(&density)
            .map(|(p, r)| p.weight * r)
            .sum();

        Ok(FieldEvaluation {
            modulus,
            density,
            sensitivities,
            effective_mass,
            revision: layout.revision(),
        })
    }
}

/// One-shot evaluation; builds the filter on every call.
pub fn evaluate_field(
    layout: &MaterialLayout,
    points: &GaussPointSet,
    config: &PipelineConfig,
) -> Result<FieldEvaluation> {
    Pipeline::new(points.clone(), config.clone())?.evaluate(layout)
}
