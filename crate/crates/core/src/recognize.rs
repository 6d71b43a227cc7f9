//! Turning a converged layout into explicit structural members.
//!
//! Similar, overlapping members are merged pairwise (mass is conserved),
//! members that sit outside the material domain or have collapsed are
//! suppressed when their removal leaves the compliance unchanged, and the
//! result is exported as a list of beams.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::density::{normalize_angle, MassNode, MaterialLayout};
use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::optimize::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeTolerances {
    /// Radians.
    pub tol_theta: f64,
    pub tol_l: f64,
    pub tol_d: f64,
    pub r_rho: f64,
    /// Compare thicknesses in length units instead of relatively.
    pub absolute_thickness: bool,
}

impl Default for MergeTolerances {
    fn default() -> Self {
        Self {
            tol_theta: 5f64.to_radians(),
            tol_l: 0.25,
            tol_d: 0.1,
            r_rho: 0.37,
            absolute_thickness: false,
        }
    }
}

impl MergeTolerances {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.tol_theta > 0.0 && self.tol_theta < PI / 2.0) {
            v.push(format!(
                "recognition tol_theta must lie in (0, 90) degrees, got {}",
                self.tol_theta.to_degrees()
            ));
        }
        for (name, value) in [
            ("tol_l", self.tol_l),
            ("tol_d", self.tol_d),
            ("r_rho", self.r_rho),
        ] {
            if !(value > 0.0) {
                v.push(format!("recognition {name} must be positive, got {value}"));
            }
        }
        v
    }
}

/// Shortest distance between two axis angles, modulo pi.
fn axis_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

pub fn should_merge(a: &MassNode, b: &MassNode, tol: &MergeTolerances) -> bool {
    let (angle_a, long_a, thin_a) = a.member_axes();
    let (angle_b, long_b, thin_b) = b.member_axes();
    if axis_distance(angle_a, angle_b) > tol.tol_theta {
        return false;
    }
    let thickness_tol = if tol.absolute_thickness {
        tol.tol_l
    } else {
        tol.tol_l * thin_a.max(thin_b)
    };
    if (thin_a - thin_b).abs() > thickness_tol {
        return false;
    }
    let dist = (a.x - b.x).hypot(a.y - b.y);
    dist <= (1.0 + tol.tol_d) * tol.r_rho * 0.5 * (long_a + long_b)
}

/// Replaces two members by one of the same total mass. The center is the
/// mass-weighted mean, the axis the mass-weighted mean of the two axes
/// (averaged on doubled angles), the length spans the projected endpoints
/// and the thickness restores the mass.
pub fn merge(a: &MassNode, b: &MassNode, beta: f64) -> MassNode {
    let (ma, mb) = (a.mass(beta), b.mass(beta));
    let total = ma + mb;
    let (wa, wb) = (ma / total, mb / total);
    let cx = wa * a.x + wb * b.x;
    let cy = wa * a.y + wb * b.y;

    let (angle_a, long_a, _) = a.member_axes();
    let (angle_b, long_b, _) = b.member_axes();
    let s = wa * (2.0 * angle_a).sin() + wb * (2.0 * angle_b).sin();
    let c = wa * (2.0 * angle_a).cos() + wb * (2.0 * angle_b).cos();
    let angle = if s.hypot(c) > 1e-12 {
        normalize_angle(0.5 * s.atan2(c))
    } else {
        angle_a
    };

    let (ux, uy) = (angle.cos(), angle.sin());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (n, axis, long) in [(a, angle_a, long_a), (b, angle_b, long_b)] {
        for sign in [-0.5, 0.5] {
            let px = n.x + sign * long * axis.cos() - cx;
            let py = n.y + sign * long * axis.sin() - cy;
            let t = px * ux + py * uy;
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    let length = (hi - lo).max(f64::MIN_POSITIVE);
    MassNode {
        x: cx,
        y: cy,
        theta: angle,
        lx: length,
        ly: total / (beta * length),
        kind: a.kind.most_general(b.kind),
    }
}

/// A layout together with, for every node, the indices of the original
/// nodes it stands for.
#[derive(Debug, Clone)]
pub struct Tracked {
    pub layout: MaterialLayout,
    pub provenance: Vec<Vec<usize>>,
}

impl Tracked {
    pub fn new(layout: MaterialLayout) -> Self {
        let provenance = (0..layout.len()).map(|i| vec![i]).collect();
        Self { layout, provenance }
    }
}

/// Greedy merging to a fixed point: the closest mergeable pair (ties by
/// index) is merged until no pair qualifies.
pub fn merge_pass(layout: &MaterialLayout, tol: &MergeTolerances) -> MaterialLayout {
    merge_pass_tracked(Tracked::new(layout.clone()), tol).layout
}

pub fn merge_pass_tracked(mut state: Tracked, tol: &MergeTolerances) -> Tracked {
    let beta = state.layout.beta;
    loop {
        let nodes = state.layout.nodes();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if !should_merge(&nodes[i], &nodes[j], tol) {
                    continue;
                }
                let d = (nodes[i].x - nodes[j].x).hypot(nodes[i].y - nodes[j].y);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else {
            return state;
        };
        let merged = merge(&nodes[i], &nodes[j], beta);
        log::debug!(
            "merging nodes {:?} and {:?}",
            state.provenance[i],
            state.provenance[j]
        );
        let list = state.layout.nodes_mut();
        list[i] = merged;
        list.remove(j);
        let taken = state.provenance.remove(j);
        state.provenance[i].extend(taken);
        state.provenance[i].sort_unstable();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuppressOptions {
    /// Members thinner than this are removed outright.
    pub min_dim: f64,
    /// Fraction of one element area below which a member counts as
    /// outside the domain.
    pub overlap_threshold: f64,
    /// Largest relative compliance change a removal may cause.
    pub tol_c: f64,
}

impl Default for SuppressOptions {
    fn default() -> Self {
        Self {
            min_dim: 1e-3,
            overlap_threshold: 0.05,
            tol_c: 1e-6,
        }
    }
}

/// Area of the node's support that lies on active elements, sampled on a
/// regular sub-grid.
pub fn support_overlap(node: &MassNode, layout: &MaterialLayout, grid: &Grid) -> f64 {
    const SAMPLES: usize = 24;
    let (hx, hy) = layout.support_half_widths(node);
    let (s, c) = node.theta.sin_cos();
    let mut inside = 0usize;
    for a in 0..SAMPLES {
        let u = hx * (2.0 * (a as f64 + 0.5) / SAMPLES as f64 - 1.0);
        for b in 0..SAMPLES {
            let v = hy * (2.0 * (b as f64 + 0.5) / SAMPLES as f64 - 1.0);
            let x = node.x + c * u - s * v;
            let y = node.y + s * u + c * v;
            if grid.contains_active(x, y) {
                inside += 1;
            }
        }
    }
    4.0 * hx * hy * inside as f64 / (SAMPLES * SAMPLES) as f64
}

#[derive(Debug, Clone)]
pub struct Suppression {
    pub state: Tracked,
    /// Original indices of removed nodes, grouped per removed member.
    pub removed: Vec<Vec<usize>>,
}

/// Removes degenerate members, then every candidate member (outside the
/// domain, or listed in `extra`) whose removal changes the compliance by
/// less than `tol_c`. Candidates are tried in index order against the
/// current structure.
pub fn suppress_isolated(
    problem: &Problem,
    state: Tracked,
    options: &SuppressOptions,
    extra: &[usize],
) -> Result<Suppression> {
    let grid = problem.grid();
    let element_area = grid.element_area();
    let Tracked { layout, provenance } = state;
    let mut removed = Vec::new();

    let mut keep_nodes = Vec::with_capacity(layout.len());
    let mut keep_prov = Vec::with_capacity(layout.len());
    let mut candidates = Vec::new();
    for (i, (node, prov)) in layout.nodes().iter().zip(provenance).enumerate() {
        if node.lx.min(node.ly) < options.min_dim {
            log::info!("suppressing degenerate node {prov:?}");
            removed.push(prov);
            continue;
        }
        let outside =
            support_overlap(node, &layout, grid) < options.overlap_threshold * element_area;
        if outside || extra.contains(&i) {
            candidates.push(keep_nodes.len());
        }
        keep_nodes.push(*node);
        keep_prov.push(prov);
    }
    if keep_nodes.is_empty() {
        return Err(Error::EmptyStructure("every node was suppressed".into()));
    }
    let mut current = Tracked {
        layout: MaterialLayout::new(keep_nodes, layout.beta, layout.d_rho)?,
        provenance: keep_prov,
    };

    let mut reference = problem.compliance(&current.layout)?;
    // positions shift left as nodes are removed
    let mut shift = 0;
    for c in candidates {
        let idx = c - shift;
        if current.layout.len() == 1 {
            break;
        }
        let mut trial = current.layout.clone();
        trial.nodes_mut().remove(idx);
        let compliance = problem.compliance(&trial)?;
        if (compliance - reference).abs() < options.tol_c * reference.abs() {
            log::info!("suppressing isolated node {:?}", current.provenance[idx]);
            removed.push(current.provenance.remove(idx));
            current.layout = trial;
            reference = compliance;
            shift += 1;
        }
    }
    Ok(Suppression {
        state: current,
        removed,
    })
}

#[derive(Debug, Clone)]
pub struct Recognition {
    pub state: Tracked,
    pub merged: usize,
    pub removed: Vec<Vec<usize>>,
    pub compliance_before: f64,
    pub compliance_after: f64,
}

/// Merge pass followed by suppression.
pub fn recognize(
    problem: &Problem,
    state: Tracked,
    tol: &MergeTolerances,
    options: &SuppressOptions,
    flagged: &[usize],
) -> Result<Recognition> {
    let compliance_before = problem.compliance(&state.layout)?;
    let before = state.layout.len();
    // flagged indices refer to the unmerged layout
    let flagged_prov: Vec<Vec<usize>> = flagged
        .iter()
        .map(|&i| state.provenance[i].clone())
        .collect();
    let merged_state = merge_pass_tracked(state, tol);
    let merged = before - merged_state.layout.len();
    let extra: Vec<usize> = merged_state
        .provenance
        .iter()
        .enumerate()
        .filter(|(_, p)| flagged_prov.contains(p))
        .map(|(i, _)| i)
        .collect();
    let suppression = suppress_isolated(problem, merged_state, options, &extra)?;
    let compliance_after = problem.compliance(&suppression.state.layout)?;
    Ok(Recognition {
        state: suppression.state,
        merged,
        removed: suppression.removed,
        compliance_before,
        compliance_after,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamMember {
    pub x: f64,
    pub y: f64,
    /// Direction of the long axis in (-pi/2, pi/2].
    pub theta: f64,
    pub length: f64,
    pub thickness: f64,
    pub mass: f64,
    pub provenance: Vec<usize>,
    /// Part of the member lies outside the material domain.
    pub outside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamAssembly {
    pub members: Vec<BeamMember>,
    pub total_mass: f64,
}

fn member_corners(m: &BeamMember) -> [(f64, f64); 4] {
    let (s, c) = m.theta.sin_cos();
    let (a, b) = (0.5 * m.length, 0.5 * m.thickness);
    [(a, b), (-a, b), (-a, -b), (a, -b)].map(|(u, v)| (m.x + c * u - s * v, m.y + s * u + c * v))
}

pub fn export_beams(state: &Tracked, grid: Option<&Grid>) -> Result<BeamAssembly> {
    let layout = &state.layout;
    if layout.is_empty() {
        return Err(Error::EmptyStructure(
            "cannot export an empty layout".into(),
        ));
    }
    let members: Vec<BeamMember> = layout
        .nodes()
        .iter()
        .zip(&state.provenance)
        .map(|(n, prov)| {
            let (theta, length, thickness) = n.member_axes();
            let mut member = BeamMember {
                x: n.x,
                y: n.y,
                theta,
                length,
                thickness,
                mass: n.mass(layout.beta),
                provenance: prov.clone(),
                outside: false,
            };
            if let Some(g) = grid {
                member.outside = member_corners(&member)
                    .iter()
                    .any(|&(x, y)| !g.contains_active(x, y));
                if member.outside {
                    log::info!("member {prov:?} extends outside the domain");
                }
            }
            member
        })
        .collect();
    Ok(BeamAssembly {
        total_mass: layout.total_mass(),
        members,
    })
}

impl BeamAssembly {
    /// One member per line: `x y theta length thickness mass ids`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# x y theta length thickness mass ids\n");
        out.push_str(&format!("# total_mass {}\n", self.total_mass));
        for m in &self.members {
            let ids: Vec<String> = m.provenance.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!(
                "{} {} {} {} {} {} {}{}\n",
                m.x,
                m.y,
                m.theta,
                m.length,
                m.thickness,
                m.mass,
                ids.join(","),
                if m.outside { " # outside" } else { "" }
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidState(format!("json export failed: {e}")))
    }
}
