//! Element-density baseline on the cantilever mesh.
//!
//! cargo run --release --example simp_baseline [-- ELEMS_PER_UNIT]

use mna::fem::FemModel;
use mna::geometry::{preset_case, Case};
use mna::io::Raster;
use mna::simp::{simp_run, SimpConfig};

fn main() -> mna::Result<()> {
    let epu = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(15);
    let (grid, bc) = preset_case(Case::Cantilever, epu)?;
    let model = FemModel::new(grid, bc, 0.3)?;
    let result = simp_run(&model, 0.33, &SimpConfig::default())?;

    for r in result.history.iter().step_by(10) {
        println!(
            "it {:4}  C {:10.4}  vf {:.4}  change {:.4}",
            r.iteration, r.compliance, r.volume_fraction, r.change
        );
    }
    println!(
        "converged: {}, compliance {:.4}",
        result.converged, result.compliance
    );

    let grey = result
        .density
        .iter()
        .filter(|&&x| x > 0.1 && x < 0.9)
        .count() as f64
        / result.density.len() as f64;
    println!("grey elements: {:.1}%", 100.0 * grey);
    println!(
        "\n{}",
        Raster::from_elements(&model.grid, &result.density, epu)?.to_ascii(1)
    );
    Ok(())
}
