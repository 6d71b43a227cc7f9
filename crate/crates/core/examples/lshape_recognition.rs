//! L-shaped bracket with 40 members, then merging, suppression of isolated
//! nodes and a restart from the simplified assembly.
//!
//! cargo run --release --example lshape_recognition

use mna::config::RunConfig;
use mna::io::Raster;
use mna::run::run_mna;

fn main() -> mna::Result<()> {
    let config = RunConfig::preset("lshape")?;
    let outcome = run_mna(&config)?;
    let rec = outcome
        .recognition
        .as_ref()
        .expect("preset enables recognition");

    println!("converged compliance   {:.2}", outcome.descent.compliance);
    println!(
        "recognition            {} -> {} members ({} merges, {} suppressed)",
        outcome.initial.len(),
        rec.state.layout.len(),
        rec.merged,
        rec.removed.len()
    );
    println!(
        "compliance after       {:.2} (ratio {:.4})",
        rec.compliance_after,
        rec.compliance_after / rec.compliance_before
    );
    if let Some(again) = &outcome.restart {
        println!(
            "after restart          {:.2} in {} iterations",
            again.compliance,
            again.history.len()
        );
    }

    let beams = outcome.beams()?;
    println!("\n{}", beams.to_text());

    let raster = Raster::from_layout(
        &outcome.result.layout,
        outcome.problem.grid(),
        &config.material,
        30,
    )?;
    println!("{}", raster.to_ascii(1));
    Ok(())
}
