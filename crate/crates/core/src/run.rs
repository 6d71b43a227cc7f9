//! End-to-end pipelines behind the command line: optimize, recognize,
//! compare, and write every artifact of a run.
//!
//! Artifacts are collected in memory and only written once the whole run
//! succeeded, into a staging directory that is then moved into place.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Method, RunConfig};
use crate::density::{initialize_layout, MaterialLayout};
use crate::error::{Error, Result};
use crate::fem::FemModel;
use crate::geometry::Grid;
use crate::io::{history_table, read_layout, simp_history_table, write_layout, Raster};
use crate::optimize::{
    descend, descend_with, Continuation, Descent, OptimizerConfig, Problem, Termination,
};
use crate::recognize::{export_beams, recognize, BeamAssembly, Recognition, Tracked};
use crate::simp::{simp_run, SimpResult};

/// Named text files produced by a run, relative to the output directory.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<(PathBuf, String)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<PathBuf>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(p, _)| p == Path::new(name))
            .map(|(_, c)| c.as_str())
    }

    /// Writes into `dir` via a sibling staging directory; nothing is left
    /// behind on failure.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let name = dir.file_name().ok_or_else(|| {
            Error::InvalidArgument(format!("output path {} has no file name", dir.display()))
        })?;
        let staging = parent.join(format!(
            ".{}.partial-{}",
            name.to_string_lossy(),
            std::process::id()
        ));
        let result = (|| -> Result<()> {
            if staging.exists() {
                fs::remove_dir_all(&staging)?;
            }
            for (path, contents) in &self.files {
                let target = staging.join(path);
                if let Some(p) = target.parent() {
                    fs::create_dir_all(p)?;
                }
                fs::write(target, contents)?;
            }
            if !dir.exists() {
                fs::rename(&staging, dir)?;
                return Ok(());
            }
            for (path, _) in &self.files {
                let target = dir.join(path);
                if let Some(p) = target.parent() {
                    fs::create_dir_all(p)?;
                }
                fs::rename(staging.join(path), target)?;
            }
            fs::remove_dir_all(&staging)?;
            Ok(())
        })();
        if result.is_err() && staging.exists() {
            let _ = fs::remove_dir_all(&staging);
        }
        result
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub method: Method,
    pub compliance_initial: f64,
    pub compliance: f64,
    pub volume_fraction: f64,
    pub iterations: usize,
    pub termination: String,
    pub nodes_initial: usize,
    pub nodes: usize,
    /// Compliance right before and right after merging and suppression.
    pub recognition: Option<(f64, f64)>,
    pub wall_time: Duration,
}

impl RunSummary {
    /// `key = value` lines; the wall time is kept out so the file is
    /// reproducible.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "method = \"{}\"", self.method).unwrap();
        writeln!(out, "compliance_initial = {}", self.compliance_initial).unwrap();
        writeln!(out, "compliance = {}", self.compliance).unwrap();
        writeln!(out, "volume_fraction = {}", self.volume_fraction).unwrap();
        writeln!(out, "iterations = {}", self.iterations).unwrap();
        writeln!(out, "termination = \"{}\"", self.termination).unwrap();
        writeln!(out, "nodes_initial = {}", self.nodes_initial).unwrap();
        writeln!(out, "nodes = {}", self.nodes).unwrap();
        if let Some((before, after)) = self.recognition {
            writeln!(out, "compliance_before_recognition = {before}").unwrap();
            writeln!(out, "compliance_after_recognition = {after}").unwrap();
        }
        out
    }
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Tolerance => "tolerance",
        Termination::MaxIter => "max_iter",
        Termination::Error => "error",
    }
}

/// Starting layout: a member table if configured, else the regular
/// arrangement, optionally jittered from the seed.
pub fn initial_layout(config: &RunConfig, grid: &Grid) -> Result<MaterialLayout> {
    let l = &config.layout;
    let mut layout = match &l.initial {
        Some(path) => read_layout(&fs::read_to_string(path)?)?.into_layout(l.beta(), l.d_rho)?,
        None => initialize_layout(grid, l.nodes, config.case.v_frac, l.kind, l.d_rho, l.beta())?,
    };
    if l.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (sx, sy) = (l.jitter * grid.dx, l.jitter * grid.dy);
        for n in layout.nodes_mut().iter_mut() {
            n.x += sx * rng.gen_range(-1.0..=1.0);
            n.y += sy * rng.gen_range(-1.0..=1.0);
        }
    }
    Ok(layout)
}

pub fn build_problem(config: &RunConfig) -> Result<Problem> {
    let (grid, bc) = config.geometry()?;
    let m_max = config.mass_budget(&grid);
    Problem::new(grid, bc, config.case.nu, config.material.clone(), m_max)
}

/// Everything a node-method run produced.
#[derive(Debug, Clone)]
pub struct MnaOutcome {
    pub problem: Problem,
    pub initial: MaterialLayout,
    pub descent: Descent,
    /// Layouts at every snapshot iteration.
    pub snapshots: Vec<(usize, MaterialLayout)>,
    pub recognition: Option<Recognition>,
    pub restart: Option<Descent>,
    /// Final layout with provenance back to the initial nodes.
    pub result: Tracked,
    pub compliance: f64,
}

pub fn run_mna(config: &RunConfig) -> Result<MnaOutcome> {
    config.validate()?;
    let mut problem = build_problem(config)?;
    let initial = initial_layout(config, problem.grid())?;
    let tolerances = config.recognition.tolerances();
    let suppress = config.recognition.suppress_options(config.optimizer.tol_c);
    let recognizing = config.method == Method::MnaRecognize;
    let every = if recognizing {
        config.recognition.every
    } else {
        0
    };
    let snapshot_every = config.output.snapshot_every;

    let probe = problem.clone();
    let mut tracked = Tracked::new(initial.clone());
    let mut snapshots = Vec::new();
    let descent = descend_with(
        &mut problem,
        initial.clone(),
        &config.optimizer,
        |record, layout| {
            let it = record.iteration;
            if snapshot_every > 0 && it % snapshot_every == 0 {
                snapshots.push((it, layout.clone()));
            }
            if every > 0 && it > 0 && it % every == 0 {
                let mut at_p = probe.clone();
                at_p.pipeline.config.p = record.penalization;
                let state = Tracked {
                    layout: layout.clone(),
                    provenance: tracked.provenance.clone(),
                };
                let rec = recognize(&at_p, state, &tolerances, &suppress, &[])?;
                if rec.state.layout.len() < layout.len() {
                    log::info!(
                        "iteration {it}: recognition reduced {} nodes to {}",
                        layout.len(),
                        rec.state.layout.len()
                    );
                    tracked = rec.state.clone();
                    return Ok(Some(rec.state.layout));
                }
            }
            Ok(None)
        },
    )?;
    let mut result = Tracked {
        layout: descent.layout.clone(),
        provenance: tracked.provenance,
    };
    let mut compliance = descent.compliance;

    let mut recognition = None;
    let mut restart = None;
    if recognizing {
        let rec = recognize(&problem, result, &tolerances, &suppress, &descent.pinned)?;
        log::info!(
            "recognition: {} merges, {} suppressed, {} members; compliance {} -> {}",
            rec.merged,
            rec.removed.len(),
            rec.state.layout.len(),
            rec.compliance_before,
            rec.compliance_after
        );
        result = rec.state.clone();
        compliance = rec.compliance_after;
        if config.recognition.restart {
            let cfg = OptimizerConfig {
                continuation: Continuation::off(),
                ..config.optimizer.clone()
            };
            let again = descend(&mut problem, result.layout.clone(), &cfg)?;
            result.layout = again.layout.clone();
            compliance = again.compliance;
            restart = Some(again);
        }
        recognition = Some(rec);
    }
    Ok(MnaOutcome {
        problem,
        initial,
        descent,
        snapshots,
        recognition,
        restart,
        result,
        compliance,
    })
}

impl MnaOutcome {
    pub fn volume_fraction(&self) -> Result<f64> {
        let field = self.problem.pipeline.evaluate(&self.result.layout)?;
        Ok(self
            .problem
            .volume_fraction(&field, self.result.layout.beta))
    }

    pub fn beams(&self) -> Result<BeamAssembly> {
        export_beams(&self.result, Some(self.problem.grid()))
    }

    pub fn summary(&self, method: Method, wall_time: Duration) -> Result<RunSummary> {
        let last = self.restart.as_ref().unwrap_or(&self.descent);
        let iterations =
            self.descent.history.len() + self.restart.as_ref().map_or(0, |d| d.history.len());
        Ok(RunSummary {
            method,
            compliance_initial: self
                .descent
                .history
                .first()
                .map_or(f64::NAN, |r| r.compliance),
            compliance: self.compliance,
            volume_fraction: self.volume_fraction()?,
            iterations,
            termination: termination_name(last.termination).into(),
            nodes_initial: self.initial.len(),
            nodes: self.result.layout.len(),
            recognition: self
                .recognition
                .as_ref()
                .map(|r| (r.compliance_before, r.compliance_after)),
            wall_time,
        })
    }

    pub fn artifacts(&self, config: &RunConfig, summary: &RunSummary) -> Result<Artifacts> {
        let mut a = Artifacts::default();
        a.add("manifest.toml", config.to_toml()?);
        a.add("summary.txt", summary.to_text());
        a.add(
            "timing.log",
            format!("wall_time_s = {}\n", summary.wall_time.as_secs_f64()),
        );
        a.add("history.csv", history_table(&self.descent.history));
        a.add("layout_initial.txt", write_layout(&self.initial));
        a.add("layout.txt", write_layout(&self.result.layout));
        for (it, layout) in &self.snapshots {
            a.add(
                format!("snapshots/layout_{it:06}.txt"),
                write_layout(layout),
            );
        }
        let raster = Raster::from_layout(
            &self.result.layout,
            self.problem.grid(),
            &self.problem.pipeline.config,
            config.output.raster_per_unit,
        )?;
        a.add("density.csv", raster.to_text());
        if self.recognition.is_some() {
            a.add("layout_converged.txt", write_layout(&self.descent.layout));
            let beams = self.beams()?;
            a.add("beams.txt", beams.to_text());
            a.add("beams.json", beams.to_json()?);
        }
        if let Some(r) = &self.restart {
            a.add("history_restart.csv", history_table(&r.history));
        }
        Ok(a)
    }
}

pub fn run_simp(config: &RunConfig) -> Result<(FemModel, SimpResult)> {
    config.validate()?;
    let (grid, bc) = config.geometry()?;
    let model = FemModel::new(grid, bc, config.case.nu)?;
    let result = simp_run(&model, config.case.v_frac, &config.simp)?;
    Ok((model, result))
}

fn simp_artifacts(
    config: &RunConfig,
    model: &FemModel,
    result: &SimpResult,
    summary: &RunSummary,
) -> Result<Artifacts> {
    let mut a = Artifacts::default();
    a.add("manifest.toml", config.to_toml()?);
    a.add("summary.txt", summary.to_text());
    a.add(
        "timing.log",
        format!("wall_time_s = {}\n", summary.wall_time.as_secs_f64()),
    );
    a.add("history.csv", simp_history_table(&result.history));
    let raster =
        Raster::from_elements(&model.grid, &result.density, config.output.raster_per_unit)?;
    a.add("density.csv", raster.to_text());
    Ok(a)
}

/// Runs the configured method and returns its summary and files.
pub fn execute(config: &RunConfig) -> Result<(RunSummary, Artifacts)> {
    let start = Instant::now();
    match config.method {
        Method::Simp => {
            let (model, result) = run_simp(config)?;
            let summary = RunSummary {
                method: config.method,
                compliance_initial: result.history.first().map_or(f64::NAN, |r| r.compliance),
                compliance: result.compliance,
                volume_fraction: result.density.iter().sum::<f64>() / result.density.len() as f64,
                iterations: result.history.len(),
                termination: if result.converged {
                    "tolerance"
                } else {
                    "max_iter"
                }
                .into(),
                nodes_initial: 0,
                nodes: 0,
                recognition: None,
                wall_time: start.elapsed(),
            };
            let files = simp_artifacts(config, &model, &result, &summary)?;
            Ok((summary, files))
        }
        Method::Mna | Method::MnaRecognize => {
            let outcome = run_mna(config)?;
            let summary = outcome.summary(config.method, start.elapsed())?;
            let files = outcome.artifacts(config, &summary)?;
            Ok((summary, files))
        }
    }
}

/// [`execute`] and write the files to `out`.
pub fn run(config: &RunConfig, out: &Path) -> Result<RunSummary> {
    let (summary, files) = execute(config)?;
    files.write(out)?;
    Ok(summary)
}

/// Runs every configuration on the same mesh and tabulates the results.
pub fn compare(configs: &[(String, RunConfig)]) -> Result<(Vec<RunSummary>, String)> {
    let Some((_, first)) = configs.first() else {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    };
    let reference = first.geometry()?;
    for (label, cfg) in &configs[1..] {
        if cfg.geometry()? != reference {
            return Err(Error::InvalidArgument(format!(
                "{label} does not share the mesh and load case of the first run"
            )));
        }
    }
    let mut summaries = Vec::new();
    let mut table = String::from("run,method,v_frac,compliance,volume_fraction,wall_time_s\n");
    for (label, cfg) in configs {
        let (s, _) = execute(cfg)?;
        writeln!(
            table,
            "{label},{},{},{},{},{:.3}",
            s.method,
            cfg.case.v_frac,
            s.compliance,
            s.volume_fraction,
            s.wall_time.as_secs_f64()
        )
        .unwrap();
        summaries.push(s);
    }
    Ok((summaries, table))
}

/// Merges and suppresses a saved layout under the configured case.
pub fn recognize_layout(config: &RunConfig, layout_text: &str) -> Result<(Recognition, Artifacts)> {
    config.validate()?;
    let problem = build_problem(config)?;
    let l = &config.layout;
    let layout = read_layout(layout_text)?.into_layout(l.beta(), l.d_rho)?;
    let rec = recognize(
        &problem,
        Tracked::new(layout),
        &config.recognition.tolerances(),
        &config.recognition.suppress_options(config.optimizer.tol_c),
        &[],
    )?;
    let beams = export_beams(&rec.state, Some(problem.grid()))?;
    let mut a = Artifacts::default();
    a.add("manifest.toml", config.to_toml()?);
    a.add("layout_recognized.txt", write_layout(&rec.state.layout));
    a.add("beams.txt", beams.to_text());
    a.add("beams.json", beams.to_json()?);
    a.add(
        "summary.txt",
        format!(
            "nodes_initial = {}\nmerged = {}\nsuppressed = {}\nnodes = {}\ncompliance_before = {}\ncompliance_after = {}\n",
            rec.state.provenance.iter().map(Vec::len).sum::<usize>() + rec.removed.iter().map(Vec::len).sum::<usize>(),
            rec.merged,
            rec.removed.len(),
            rec.state.layout.len(),
            rec.compliance_before,
            rec.compliance_after
        ),
    );
    Ok((rec, a))
}
