//! How members become a density field: kernel normalization, overlap
//! saturation and the stiffness each Gauss point sees.
//!
//! cargo run --release --example density_field

use mna::density::{calibrated_beta, node_weight, raw_density, MassNode, MaterialLayout, NodeKind};
use mna::geometry::{gauss_points, preset_case, Case};
use mna::io::Raster;
use mna::material::{saturate, Pipeline, PipelineConfig, SaturationMode};

fn main() -> mna::Result<()> {
    let d_rho = 1.5;
    let node = MassNode::new(0.0, 0.0, 0.4, 0.6, 0.2, NodeKind::DeformableMember);

    // midpoint rule over a box enclosing the rotated support
    let (n, half) = (400, 1.0);
    let h = 2.0 * half / n as f64;
    let mut integral = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = (-half + (i as f64 + 0.5) * h, -half + (j as f64 + 0.5) * h);
            integral += node_weight(p, &node, d_rho) * h * h;
        }
    }
    println!("kernel integral {integral:.8}");

    let beta = calibrated_beta(d_rho);
    let lone = MaterialLayout::new(vec![node], beta, d_rho)?;
    println!(
        "beta {beta:.6}: center density of an isolated member {:.6}",
        raw_density((0.0, 0.0), &lone)
    );

    let cfg = PipelineConfig::default();
    // the printed asymptotic formula has a negative exponent for rho_max > 1
    // and wipes out low densities; it is kept only for comparison
    let literal = PipelineConfig {
        saturation_mode: SaturationMode::PaperLiteral,
        ..cfg.clone()
    };
    println!("\n  raw   smooth_clamp  paper_literal");
    for raw in [0.2, 0.6, 1.0, 1.2, 1.6, 2.4] {
        println!(
            "{raw:5.2}  {:12.4}  {:13.4}",
            saturate(raw, &cfg)?.0,
            saturate(raw, &literal)?.0
        );
    }

    let (grid, _) = preset_case(Case::Cantilever, 10)?;
    let members = vec![
        MassNode::new(0.45, 0.45, -0.8, 1.1, 0.12, NodeKind::DeformableMember),
        MassNode::new(0.45, -0.45, 0.8, 1.1, 0.12, NodeKind::DeformableMember),
        MassNode::new(0.9, 0.0, 0.0, 0.25, 0.25, NodeKind::MassNode),
    ];
    let layout = MaterialLayout::new(members, beta, d_rho)?;
    let pipeline = Pipeline::new(gauss_points(&grid)?, cfg.clone())?;
    let field = pipeline.evaluate(&layout)?;
    let stiff = field.modulus.iter().filter(|&&e| e > 0.5).count();
    println!(
        "\n{} of {} Gauss points above half stiffness",
        stiff,
        field.modulus.len()
    );
    println!(
        "effective mass {:.4} of {:.4} placed",
        field.effective_mass,
        layout.total_mass()
    );
    println!(
        "\n{}",
        Raster::from_layout(&layout, &grid, &cfg, 20)?.to_ascii(1)
    );
    Ok(())
}
