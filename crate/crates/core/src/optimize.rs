//! Mass-constrained steepest descent on the node variables.
//!
//! One iteration evaluates the density field, solves the static problem,
//! differentiates the compliance, takes a step of bounded length along the
//! negative gradient and projects the layout back onto the mass budget
//! `sum beta lx ly <= m_max`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::density::{MaterialLayout, NodeKind, Var};
use crate::error::{Error, Result};
use crate::fem::{compliance_gradient, FemModel, StaticSolution};
use crate::geometry::{gauss_points, BoundarySpec, Grid};
use crate::material::{FieldEvaluation, Pipeline, PipelineConfig};

/// Stepwise increase of the penalization exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Continuation {
    pub start: f64,
    pub step: f64,
    pub every: usize,
}

impl Default for Continuation {
    fn default() -> Self {
        Self {
            start: 1.0,
            step: 0.5,
            every: 50,
        }
    }
}

impl Continuation {
    /// Runs at the final exponent from the first iteration.
    pub fn off() -> Self {
        Self {
            start: 1.0,
            step: 0.0,
            every: 0,
        }
    }

    /// Exponent in force at `iteration`, capped at `target`.
    pub fn exponent(&self, iteration: usize, target: f64) -> f64 {
        if self.every == 0 || self.start >= target {
            return target;
        }
        let raised = self.start + self.step * (iteration / self.every) as f64;
        raised.min(target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub iter_max: usize,
    pub tol_c: f64,
    pub tol_x: f64,
    pub tol_m: f64,
    pub max_step_norm: f64,
    pub step_shrink: f64,
    /// Lower bounds on `(lx, ly)`; one element size when unset.
    pub min_dims: Option<[f64; 2]>,
    /// `every = 0` starts at the final exponent.
    pub continuation: Continuation,
    /// Iterations at the lower dimension bound before a node is flagged.
    pub pinned_iterations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iter_max: 1000,
            tol_c: 1e-6,
            tol_x: 1e-6,
            tol_m: 1e-6,
            max_step_norm: 0.4,
            step_shrink: 0.5,
            min_dims: None,
            continuation: Continuation::default(),
            pinned_iterations: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, value) in [
            ("tol_c", self.tol_c),
            ("tol_x", self.tol_x),
            ("tol_m", self.tol_m),
        ] {
            if !(value > 0.0) {
                v.push(format!("optimizer.{name} must be positive, got {value}"));
            }
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            v.push(format!(
                "optimizer.step_shrink must lie in (0, 1), got {}",
                self.step_shrink
            ));
        }
        if !(self.max_step_norm > 0.0) {
            v.push(format!(
                "optimizer.max_step_norm must be positive, got {}",
                self.max_step_norm
            ));
        }
        if self.iter_max == 0 {
            v.push("optimizer.iter_max must be at least 1".into());
        }
        if let Some([a, b]) = self.min_dims {
            if !(a > 0.0 && b > 0.0) {
                v.push(format!(
                    "optimizer.min_dims must be positive, got [{a}, {b}]"
                ));
            }
        }
        let c = &self.continuation;
        if c.every > 0 && !(c.start >= 1.0 && c.step > 0.0) {
            v.push("optimizer.continuation needs start >= 1 and step > 0".into());
        }
        v
    }

    pub fn min_dims_for(&self, grid: &Grid) -> [f64; 2] {
        self.min_dims.unwrap_or([grid.dx, grid.dy])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub compliance: f64,
    /// Effective volume fraction `effective_mass / (beta * active_area)`.
    pub volume_fraction: f64,
    /// Mass constraint value `m_max - sum beta lx ly`.
    pub constraint: f64,
    /// Norm of the step taken after this evaluation.
    pub step: f64,
    pub nodes: usize,
    pub penalization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIter,
    Error,
}

/// Everything needed to evaluate a layout.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: FemModel,
    pub pipeline: Pipeline,
    pub m_max: f64,
}

/// State of one evaluated layout.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub field: FieldEvaluation,
    pub solution: StaticSolution,
}

impl Problem {
    pub fn new(
        grid: Grid,
        boundary: BoundarySpec,
        nu: f64,
        pipeline: PipelineConfig,
        m_max: f64,
    ) -> Result<Self> {
        if !(m_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "m_max must be positive, got {m_max}"
            )));
        }
        let points = gauss_points(&grid)?;
        let pipeline = Pipeline::new(points, pipeline)?;
        let model = FemModel::new(grid, boundary, nu)?;
        Ok(Self {
            model,
            pipeline,
            m_max,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.model.grid
    }

    pub fn evaluate(&self, layout: &MaterialLayout) -> Result<Evaluation> {
        let field = self.pipeline.evaluate(layout)?;
        let solution = self.model.solve_field(&field)?;
        Ok(Evaluation { field, solution })
    }

    pub fn compliance(&self, layout: &MaterialLayout) -> Result<f64> {
        Ok(self.evaluate(layout)?.solution.compliance)
    }

    pub fn gradient(&self, eval: &Evaluation) -> Result<Vec<[f64; 5]>> {
        compliance_gradient(&self.model, &eval.solution, &eval.field)
    }

    pub fn volume_fraction(&self, field: &FieldEvaluation, beta: f64) -> f64 {
        field.effective_mass / (beta * self.grid().active_area())
    }
}

/// `g = m_max - sum beta lx ly` and `dg/dmu` (nonzero for `lx`, `ly` only).
pub fn mass_constraint(layout: &MaterialLayout, m_max: f64) -> (f64, Vec<[f64; 5]>) {
    let beta = layout.beta;
    let g = m_max - layout.total_mass();
    let grad = layout
        .nodes()
        .iter()
        .map(|n| {
            let mut d = [0.0; 5];
            d[Var::Lx.index()] = -beta * n.ly;
            d[Var::Ly.index()] = -beta * n.lx;
            d
        })
        .collect();
    (g, grad)
}

/// Scales the dimensions of deformable nodes by one common factor so the
/// total mass fits the budget. Dimensions stop at `min_dims`; a node with
/// one dimension at its bound keeps shrinking along the other.
pub fn project_mass(
    layout: &MaterialLayout,
    m_max: f64,
    min_dims: [f64; 2],
) -> Result<MaterialLayout> {
    if layout.total_mass() <= m_max {
        return Ok(layout.clone());
    }
    let beta = layout.beta;
    let [mx, my] = min_dims;
    let scaled = |s: f64| -> f64 {
        layout
            .nodes()
            .iter()
            .map(|n| match n.kind {
                NodeKind::DeformableMember => beta * (s * n.lx).max(mx) * (s * n.ly).max(my),
                _ => n.mass(beta),
            })
            .sum()
    };
    let floor = scaled(0.0);
    if floor > m_max {
        return Err(Error::Infeasible(format!(
            "mass {floor:.6e} exceeds budget {m_max:.6e} with dimensions at their lower bounds"
        )));
    }

    // the mass is continuous and nondecreasing in s
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if scaled(mid) <= m_max {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    // exact root of the quadratic that holds on the final clamp pattern
    let probe = 0.5 * (lo + hi);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for n in layout.nodes() {
        if n.kind != NodeKind::DeformableMember {
            c += n.mass(beta);
            continue;
        }
        match (probe * n.lx > mx, probe * n.ly > my) {
            (true, true) => a += beta * n.lx * n.ly,
            (true, false) => b += beta * n.lx * my,
            (false, true) => b += beta * mx * n.ly,
            (false, false) => c += beta * mx * my,
        }
    }
    let root = if a > 0.0 {
        (-b + (b * b + 4.0 * a * (m_max - c)).sqrt()) / (2.0 * a)
    } else if b > 0.0 {
        (m_max - c) / b
    } else {
        lo
    };
    let s = if root.is_finite() && root >= lo && root <= hi && scaled(root) <= m_max * (1.0 + 1e-12)
    {
        root
    } else {
        lo
    };

    let mut out = layout.clone();
    for n in out.nodes_mut().iter_mut() {
        if n.kind == NodeKind::DeformableMember {
            n.lx = (s * n.lx).max(mx);
            n.ly = (s * n.ly).max(my);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationWarning {
    pub node: usize,
    /// `min(d_rho lx / 2, d_rho ly / 2)`.
    pub support: f64,
    pub element_size: f64,
}

/// Nodes whose support half-width is smaller than the largest element
/// dimension. Warnings only; the run continues.
pub fn check_discretization(layout: &MaterialLayout, grid: &Grid) -> Vec<DiscretizationWarning> {
    let element_size = grid.max_element_size();
    layout
        .nodes()
        .iter()
        .enumerate()
        .filter_map(|(i, n)| {
            let (hx, hy) = layout.support_half_widths(n);
            let support = hx.min(hy);
            (support < element_size).then(|| {
                log::warn!(
                    "node {i}: support half-width {support:.4} is below the element size {element_size:.4}"
                );
                DiscretizationWarning { node: i, support, element_size }
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Descent {
    /// Lowest-compliance layout seen at the final penalization.
    pub layout: MaterialLayout,
    pub compliance: f64,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    /// Nodes that sat at `min_dims` for `pinned_iterations` iterations.
    pub pinned: Vec<usize>,
}

/// Optimizer interface; [`SteepestDescent`] is the shipped implementation.
pub trait Optimizer {
    fn optimize(&mut self, problem: &mut Problem, layout: MaterialLayout) -> Result<Descent>;
}

/// Fixed-length steepest descent with oscillation damping.
#[derive(Debug, Clone)]
pub struct SteepestDescent {
    pub config: OptimizerConfig,
}

impl Optimizer for SteepestDescent {
    fn optimize(&mut self, problem: &mut Problem, layout: MaterialLayout) -> Result<Descent> {
        descend(problem, layout, &self.config)
    }
}

/// Per-variable scales: lengths as is, angles so that a quarter turn
/// weighs like a move across the domain diagonal.
fn variable_scales(grid: &Grid) -> [f64; 5] {
    let theta = FRAC_PI_2 / grid.diagonal();
    [1.0, 1.0, theta, 1.0, 1.0]
}

fn at_lower_bound(layout: &MaterialLayout, node: usize, min_dims: [f64; 2]) -> bool {
    let n = &layout.nodes()[node];
    n.kind == NodeKind::DeformableMember
        && (n.lx <= min_dims[0] * (1.0 + 1e-12) || n.ly <= min_dims[1] * (1.0 + 1e-12))
}

fn variable_norm(layout: &MaterialLayout) -> f64 {
    layout
        .nodes()
        .iter()
        .flat_map(|n| n.kind.optimizable().iter().map(move |v| n.get(*v)))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn change_norm(a: &MaterialLayout, b: &MaterialLayout) -> f64 {
    a.nodes()
        .iter()
        .zip(b.nodes())
        .flat_map(|(n, m)| {
            n.kind
                .optimizable()
                .iter()
                .map(move |v| n.get(*v) - m.get(*v))
        })
        .map(|d| d * d)
        .sum::<f64>()
        .sqrt()
}

/// Descent direction in scaled variables, restricted to optimizable
/// variables. When the mass budget is active and the raw direction would
/// add mass, the component along the mass gradient is removed.
fn descent_direction(
    layout: &MaterialLayout,
    grad: &[[f64; 5]],
    m_max: f64,
    scales: &[f64; 5],
) -> Vec<[f64; 5]> {
    let mut dir: Vec<[f64; 5]> = layout
        .nodes()
        .iter()
        .zip(grad)
        .map(|(n, g)| {
            let mut d = [0.0; 5];
            for v in n.kind.optimizable() {
                let i = v.index();
                d[i] = -g[i] * scales[i];
            }
            d
        })
        .collect();

    let (g, mass_grad) = mass_constraint(layout, m_max);
    if g <= 1e-9 * m_max {
        // outward normal of the budget: gradient of the total mass
        let normal: Vec<[f64; 5]> = layout
            .nodes()
            .iter()
            .zip(&mass_grad)
            .map(|(n, mg)| {
                let mut d = [0.0; 5];
                if n.kind == NodeKind::DeformableMember {
                    for i in [Var::Lx.index(), Var::Ly.index()] {
                        d[i] = -mg[i] * scales[i];
                    }
                }
                d
            })
            .collect();
        let dot: f64 = dir
            .iter()
            .zip(&normal)
            .map(|(a, b)| (0..5).map(|i| a[i] * b[i]).sum::<f64>())
            .sum();
        let nn: f64 = normal
            .iter()
            .map(|b| b.iter().map(|v| v * v).sum::<f64>())
            .sum();
        if dot > 0.0 && nn > 0.0 {
            for (d, b) in dir.iter_mut().zip(&normal) {
                for i in 0..5 {
                    d[i] -= dot / nn * b[i];
                }
            }
        }
    }
    dir
}

/// Runs the descent from `layout`. The problem's penalization exponent is
/// driven by the continuation schedule and restored on return.
pub fn descend(
    problem: &mut Problem,
    layout: MaterialLayout,
    config: &OptimizerConfig,
) -> Result<Descent> {
    descend_with(problem, layout, config, |_, _| Ok(None))
}

/// [`descend`] with an observer called after every step with the record
/// and the layout that was evaluated. Returning a layout replaces the
/// current iterate (used for snapshots and in-loop recognition).
pub fn descend_with<F>(
    problem: &mut Problem,
    layout: MaterialLayout,
    config: &OptimizerConfig,
    mut observe: F,
) -> Result<Descent>
where
    F: FnMut(&IterationRecord, &MaterialLayout) -> Result<Option<MaterialLayout>>,
{
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let grid = problem.grid().clone();
    let min_dims = config.min_dims_for(&grid);
    let scales = variable_scales(&grid);
    let target_p = problem.pipeline.config.p;
    let beta = layout.beta;

    check_discretization(&layout, &grid);
    let mut x = clamp_dims(layout, min_dims);
    x = project_mass(&x, problem.m_max, min_dims)?;

    let mut eta = config.max_step_norm;
    let mut history = Vec::new();
    let mut prev_c: Option<f64> = None;
    let mut increases = 0;
    let mut last_change = f64::INFINITY;
    let mut pinned_for = vec![0usize; x.len()];
    let mut best: Option<(f64, MaterialLayout)> = None;
    let mut termination = Termination::MaxIter;

    let result = (|| -> Result<()> {
        for it in 0..config.iter_max {
            let p = config.continuation.exponent(it, target_p);
            if p != problem.pipeline.config.p {
                problem.pipeline.config.p = p;
                prev_c = None;
                increases = 0;
                eta = config.max_step_norm;
            }
            let final_p = p >= target_p;

            let eval = problem.evaluate(&x).map_err(|e| Error::Iteration {
                iteration: it,
                source: Box::new(e),
            })?;
            let c = eval.solution.compliance;
            let grad = problem.gradient(&eval)?;
            let (g, _) = mass_constraint(&x, problem.m_max);

            if final_p && best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                best = Some((c, x.clone()));
            }
            for (i, count) in pinned_for.iter_mut().enumerate() {
                *count = if at_lower_bound(&x, i, min_dims) {
                    *count + 1
                } else {
                    0
                };
            }

            let converged = match prev_c {
                Some(pc) if final_p => {
                    (c - pc).abs() / c.abs().max(f64::MIN_POSITIVE) < config.tol_c
                        && last_change < config.tol_x
                        && (-g).max(0.0) / problem.m_max < config.tol_m
                }
                _ => false,
            };
            let mut record = IterationRecord {
                iteration: it,
                compliance: c,
                volume_fraction: problem.volume_fraction(&eval.field, beta),
                constraint: g,
                step: 0.0,
                nodes: x.len(),
                penalization: p,
            };
            if converged {
                history.push(record);
                termination = Termination::Tolerance;
                return Ok(());
            }

            if let Some(pc) = prev_c {
                if c > pc {
                    increases += 1;
                    if increases >= 2 {
                        eta *= config.step_shrink;
                        increases = 0;
                    }
                }
            }
            prev_c = Some(c);

            let dir = descent_direction(&x, &grad, problem.m_max, &scales);
            let norm: f64 = dir
                .iter()
                .map(|d| d.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            let mut next = x.clone();
            if norm > 0.0 {
                let factor = eta / norm;
                for (n, d) in next.nodes_mut().iter_mut().zip(&dir) {
                    for v in n.kind.optimizable() {
                        let i = v.index();
                        n.set(*v, n.get(*v) + factor * d[i] * scales[i]);
                    }
                }
                next = clamp_dims(next, min_dims);
                next = project_mass(&next, problem.m_max, min_dims)?;
            }
            let change = change_norm(&x, &next);
            record.step = change;
            history.push(record);
            last_change = change / variable_norm(&x).max(f64::MIN_POSITIVE);
            match observe(&record, &x)? {
                Some(replacement) => {
                    x = replacement;
                    pinned_for = vec![0; x.len()];
                    prev_c = None;
                    increases = 0;
                    last_change = f64::INFINITY;
                    best = None;
                }
                None => x = next,
            }
        }
        Ok(())
    })();
    problem.pipeline.config.p = target_p;
    if let Err(e) = result {
        log::error!("descent stopped: {e}");
        return Err(e);
    }

    let pinned = pinned_for
        .iter()
        .enumerate()
        .filter(|(_, c)| **c >= config.pinned_iterations)
        .map(|(i, _)| i)
        .collect();
    let (compliance, layout) = match best {
        Some(b) => b,
        None => {
            let c = problem.compliance(&x)?;
            (c, x)
        }
    };
    Ok(Descent {
        layout,
        compliance,
        history,
        termination,
        pinned,
    })
}

fn clamp_dims(mut layout: MaterialLayout, min_dims: [f64; 2]) -> MaterialLayout {
    let needs = layout.nodes().iter().any(|n| {
        n.kind == NodeKind::DeformableMember && (n.lx < min_dims[0] || n.ly < min_dims[1])
    });
    if needs {
        for n in layout.nodes_mut().iter_mut() {
            if n.kind == NodeKind::DeformableMember {
                n.lx = n.lx.max(min_dims[0]);
                n.ly = n.ly.max(min_dims[1]);
            }
        }
    }
    layout
}
