//! Node method against the element-density baseline on one mesh, then a
//! volume-fraction sweep.
//!
//! cargo run --release --example compare_methods

use mna::config::{Method, RunConfig};
use mna::run::compare;

fn main() -> mna::Result<()> {
    let mut mna_cfg = RunConfig::preset("cantilever")?;
    mna_cfg.case.elems_per_unit = 15;
    let mut simp_cfg = mna_cfg.clone();
    simp_cfg.method = Method::Simp;

    let (_, table) = compare(&[("mna".into(), mna_cfg.clone()), ("simp".into(), simp_cfg)])?;
    println!("{table}");

    let sweep: Vec<_> = [0.2, 0.4, 0.6]
        .iter()
        .map(|&vf| {
            let mut c = mna_cfg.clone();
            c.case.v_frac = vf;
            (format!("vf{vf}"), c)
        })
        .collect();
    let (summaries, table) = compare(&sweep)?;
    println!("{table}");
    let decreasing = summaries
        .windows(2)
        .all(|w| w[1].compliance < w[0].compliance);
    println!("compliance decreases with added material: {decreasing}");
    Ok(())
}
