//! Cantilever with four deformable members, the bundled preset.
//!
//! cargo run --release --example cantilever [-- OUT_DIR]

use mna::config::RunConfig;
use mna::io::Raster;
use mna::run::{execute, run_mna};

fn main() -> mna::Result<()> {
    let config = RunConfig::preset("cantilever")?;
    let outcome = run_mna(&config)?;

    for r in outcome.descent.history.iter().step_by(100) {
        println!(
            "it {:4}  p {:.1}  C {:12.4}  vf {:.3}  step {:.2e}",
            r.iteration, r.penalization, r.compliance, r.volume_fraction, r.step
        );
    }
    println!(
        "{:?} after {} iterations",
        outcome.descent.termination,
        outcome.descent.history.len()
    );
    println!(
        "best compliance {:.4}, effective volume fraction {:.3}",
        outcome.compliance,
        outcome.volume_fraction()?
    );

    println!("\nmembers (x y theta Lx Ly):");
    for n in outcome.result.layout.nodes() {
        println!(
            "  {:7.3} {:7.3} {:7.3} {:6.3} {:6.3}",
            n.x, n.y, n.theta, n.lx, n.ly
        );
    }

    let raster = Raster::from_layout(
        &outcome.result.layout,
        outcome.problem.grid(),
        &config.material,
        20,
    )?;
    println!("\n{}", raster.to_ascii(1));

    if let Some(dir) = std::env::args().nth(1) {
        let (summary, files) = execute(&config)?;
        files.write(dir.as_ref())?;
        println!(
            "wrote {} files to {dir} in {:.2}s",
            files.files.len(),
            summary.wall_time.as_secs_f64()
        );
    }
    Ok(())
}
