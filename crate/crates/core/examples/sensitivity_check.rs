//! Analytic compliance gradient against central finite differences on a
//! small cantilever.
//!
//! cargo run --release --example sensitivity_check

use mna::density::{calibrated_beta, initialize_layout, NodeKind};
use mna::geometry::{preset_case, Case};
use mna::material::PipelineConfig;
use mna::optimize::Problem;

fn main() -> mna::Result<()> {
    let (grid, bc) = preset_case(Case::Cantilever, 4)?;
    let m_max = 0.33 * grid.active_area();
    let layout = initialize_layout(
        &grid,
        4,
        0.33,
        NodeKind::DeformableMember,
        1.5,
        calibrated_beta(1.5),
    )?;
    let cfg = PipelineConfig {
        r_min: 0.3,
        ..Default::default()
    };
    let problem = Problem::new(grid, bc, 0.3, cfg, m_max)?;

    let eval = problem.evaluate(&layout)?;
    let grad = problem.gradient(&eval)?;
    println!("compliance {:.6}", eval.solution.compliance);
    println!("node var         analytic           central diff       rel err");
    let mut worst = 0.0f64;
    for (i, node) in layout.nodes().iter().enumerate() {
        for &var in node.kind.optimizable() {
            let h = 1e-6 * node.get(var).abs().max(1.0);
            let shifted = |delta: f64| {
                let mut l = layout.clone();
                let v = l.nodes()[i].get(var) + delta;
                l.nodes_mut()[i].set(var, v);
                problem.compliance(&l)
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            let an = grad[i][var.index()];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-12);
            worst = worst.max(rel);
            println!("{i:4} {:6} {an:18.8e} {fd:18.8e} {rel:10.2e}", var.name());
        }
    }
    println!("worst relative error {worst:.2e}");
    assert!(worst < 1e-4, "gradient mismatch");
    Ok(())
}
