//! Element-density baseline: power-law stiffness, sensitivity filter and
//! optimality-criteria updates on the same meshes as the node method.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{point_energies, FemModel};
use crate::geometry::GAUSS_PER_ELEMENT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimpConfig {
    pub p: f64,
    /// Filter radius in element widths.
    pub r_min: f64,
    pub iter_max: usize,
    /// Stop when no density moves by more than this.
    pub tol_x: f64,
    pub move_limit: f64,
    pub rho_floor: f64,
    pub e0: f64,
    pub e_min: f64,
}

impl Default for SimpConfig {
    fn default() -> Self {
        Self {
            p: 3.0,
            r_min: 1.5,
            iter_max: 1000,
            tol_x: 0.01,
            move_limit: 0.2,
            rho_floor: 1e-3,
            e0: 1.0,
            e_min: 1e-9,
        }
    }
}

impl SimpConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.p >= 1.0) {
            v.push(format!("simp.p must be at least 1, got {}", self.p));
        }
        if !(self.r_min >= 0.0) {
            v.push(format!(
                "simp.r_min must be non-negative, got {}",
                self.r_min
            ));
        }
        if self.iter_max == 0 {
            v.push("simp.iter_max must be at least 1".into());
        }
        if !(self.tol_x > 0.0) {
            v.push(format!("simp.tol_x must be positive, got {}", self.tol_x));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            v.push(format!(
                "simp.move_limit must lie in (0, 1], got {}",
                self.move_limit
            ));
        }
        if !(self.rho_floor > 0.0 && self.rho_floor < 1.0) {
            v.push(format!(
                "simp.rho_floor must lie in (0, 1), got {}",
                self.rho_floor
            ));
        }
        if !(self.e0 > 0.0 && self.e_min >= 0.0 && self.e_min < self.e0) {
            v.push(format!(
                "simp moduli need 0 <= e_min < e0, got e_min={} e0={}",
                self.e_min, self.e0
            ));
        }
        v
    }

    pub fn modulus(&self, rho: f64) -> f64 {
        self.e_min + (self.e0 - self.e_min) * rho.powf(self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpRecord {
    pub iteration: usize,
    pub compliance: f64,
    pub volume_fraction: f64,
    pub change: f64,
}

#[derive(Debug, Clone)]
pub struct SimpResult {
    /// One density per active element, in active-element order.
    pub density: Vec<f64>,
    /// Compliance of `density`.
    pub compliance: f64,
    pub history: Vec<SimpRecord>,
    pub converged: bool,
}

/// Cone weights between active element centroids.
fn filter_weights(model: &FemModel, radius: f64) -> Vec<Vec<(usize, f64)>> {
    let grid = &model.grid;
    let centers: Vec<(f64, f64)> = grid
        .active_elements()
        .map(|e| grid.element_centroid(e))
        .collect();
    centers
        .par_iter()
        .map(|&(x, y)| {
            centers
                .iter()
                .enumerate()
                .filter_map(|(j, &(u, v))| {
                    let w = radius - (x - u).hypot(y - v);
                    (w > 0.0).then_some((j, w))
                })
                .collect()
        })
        .collect()
}

fn filter_sensitivities(weights: &[Vec<(usize, f64)>], x: &[f64], dc: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .enumerate()
        .map(|(e, row)| {
            if row.is_empty() {
                return dc[e];
            }
            let num: f64 = row.iter().map(|&(f, w)| w * x[f] * dc[f]).sum();
            let den: f64 = row.iter().map(|&(_, w)| w).sum();
            num / (x[e].max(1e-3) * den)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Optimality-criteria update with the volume multiplier found by
/// bisection. The returned field never exceeds the target mean when the
/// move limit allows reaching it.
pub fn oc_update(x: &[f64], dc: &[f64], v_frac: f64, config: &SimpConfig) -> Vec<f64> {
    let update = |lambda: f64| -> Vec<f64> {
        x.iter()
            .zip(dc)
            .map(|(&xe, &d)| {
                let ratio = if lambda > 0.0 {
                    (-d / lambda).max(0.0).sqrt()
                } else {
                    f64::INFINITY
                };
                let candidate = if ratio.is_finite() {
                    xe * ratio
                } else {
                    f64::INFINITY
                };
                candidate
                    .min(xe + config.move_limit)
                    .min(1.0)
                    .max(xe - config.move_limit)
                    .max(config.rho_floor)
            })
            .collect()
    };
    let target = v_frac;
    let unconstrained = update(0.0);
    if mean(&unconstrained) <= target + 1e-9 {
        return unconstrained;
    }
    let (mut lo, mut hi) = (0.0f64, 1e9f64);
    let mut best = update(hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let candidate = update(mid);
        if mean(&candidate) > target {
            lo = mid;
        } else {
            hi = mid;
            best = candidate;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    best
}

fn solve(model: &FemModel, x: &[f64], config: &SimpConfig) -> Result<(f64, Vec<f64>)> {
    let modulus: Vec<f64> = x
        .iter()
        .flat_map(|&r| std::iter::repeat_n(config.modulus(r), GAUSS_PER_ELEMENT))
        .collect();
    let sol = model.solve_modulus(&modulus, 0)?;
    let energies = point_energies(&model.grid, &model.unit, &sol.u);
    let element_energy: Vec<f64> = energies
        .chunks_exact(GAUSS_PER_ELEMENT)
        .map(|c| c.iter().sum())
        .collect();
    Ok((sol.compliance, element_energy))
}

/// Compliance of an element-density field.
pub fn simp_compliance(model: &FemModel, density: &[f64], config: &SimpConfig) -> Result<f64> {
    if density.len() != model.grid.active_count() {
        return Err(Error::InvalidArgument(format!(
            "expected {} densities, got {}",
            model.grid.active_count(),
            density.len()
        )));
    }
    Ok(solve(model, density, config)?.0)
}

pub fn simp_run(model: &FemModel, v_frac: f64, config: &SimpConfig) -> Result<SimpResult> {
    let mut violations = config.violations();
    if !(v_frac > config.rho_floor && v_frac <= 1.0) {
        violations.push(format!("v_frac must lie in (rho_floor, 1], got {v_frac}"));
    }
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let n = model.grid.active_count();
    let weights = filter_weights(model, config.r_min * model.grid.dx.max(model.grid.dy));
    let mut x = vec![v_frac; n];
    let mut history = Vec::new();
    let mut converged = false;
    for it in 0..config.iter_max {
        let (c, energy) = solve(model, &x, config).map_err(|e| Error::Iteration {
            iteration: it,
            source: Box::new(e),
        })?;
        let dc: Vec<f64> = x
            .iter()
            .zip(&energy)
            .map(|(&r, &w)| -config.p * (config.e0 - config.e_min) * r.powf(config.p - 1.0) * w)
            .collect();
        let dc = filter_sensitivities(&weights, &x, &dc);
        let next = oc_update(&x, &dc, v_frac, config);
        let change = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        history.push(SimpRecord {
            iteration: it,
            compliance: c,
            volume_fraction: mean(&next),
            change,
        });
        x = next;
        if change < config.tol_x {
            converged = true;
            break;
        }
    }
    let compliance = simp_compliance(model, &x, config)?;
    Ok(SimpResult {
        density: x,
        compliance,
        history,
        converged,
    })
}
