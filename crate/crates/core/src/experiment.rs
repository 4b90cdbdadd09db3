//! Running a [`RunConfig`]: time stepping, invariant suites and artifacts.
//!
//! A run directory holds
//!
//! - `diagnostics.csv`, one row per step (see [`crate::io::DIAG_COLUMNS`]);
//! - `summary.json`, the final state, drifts, decay fits and verdicts;
//! - `checkpoint_<step>.bin` at every snapshot if `output.checkpoints`;
//! - `final_field.csv` if `output.field_csv`.
//!
//! Nothing written depends on wall-clock time, so identical configurations
//! give identical bytes.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::coefficients::KernelSet;
use crate::config::{InitialCondition, RunConfig};
use crate::diagnostics::{fit_decay, DecayFit, DEFAULT_TRANSIENT};
use crate::equilibrium::{equilibrium_for, EquilibriumParams};
use crate::error::{Error, Result};
use crate::grid::{norm_sq, Field, MomentVector};
use crate::io::{read_checkpoint, write_checkpoint, write_diagnostics_csv, write_field_csv};
use crate::stepper::{DiagRecord, StepConfig, Stepper, Trajectory};

/// Per-step entropy increase tolerated by the entropy suite is
/// `1e-10 + ENTROPY_SLACK * τ h²`. Calibrated on the equilibrium run at
/// `N = 16`, the coarsest grid where `H` was seen to rise (by 3.5e-5 at
/// `τ h² = 0.5`).
pub const ENTROPY_SLACK: f64 = 1e-4;

/// Max-node drift from `M` per unit `h²` observed for the equilibrium run
/// (`ρ = 1, E = 3/2, ε = 1, L = 8`) at `N = 32` over `T = 1`. The
/// stationarity suite allows five times this, scaled by `max(1, T)`.
pub const STATIONARITY_CONSTANT: f64 = 6e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub suite: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.suite, self.detail)
    }
}

fn verdict(suite: &str, pass: bool, detail: String) -> Verdict {
    Verdict {
        suite: suite.into(),
        pass,
        detail,
    }
}

/// Drift of the invariants between the first and last record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Drift {
    pub mass: f64,
    pub momentum: f64,
    pub energy: f64,
}

impl Drift {
    pub fn between(a: &MomentVector, b: &MomentVector) -> Self {
        let dp = (0..3)
            .map(|d| (b.momentum[d] - a.momentum[d]).abs())
            .fold(0.0, f64::max);
        Drift {
            mass: (b.mass - a.mass).abs(),
            momentum: dp,
            energy: (b.energy - a.energy).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitEntry {
    pub series: String,
    pub fit: Option<DecayFit>,
    /// Why no fit was made, if none was.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub start_step: u64,
    pub steps: u64,
    pub tau: f64,
    pub t_start: f64,
    pub t_final: f64,
    pub reference: Option<EquilibriumParams>,
    pub initial: DiagRecord,
    #[serde(rename = "final")]
    pub last: DiagRecord,
    pub drift: Drift,
    pub max_overshoot: f64,
    pub max_entropy_increase: f64,
    /// Largest per-step defect of `‖f_k‖₁ + τδ₂‖f_k|v|^m‖₁ - ‖f_{k-1}‖₁`.
    pub mass_identity_defect: f64,
    pub fits: Vec<FitEntry>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub trajectory: Trajectory,
    pub summary: Summary,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.summary.verdicts.iter().all(|v| v.pass)
    }
}

/// Reference equilibrium for the diagnostics: fitted to the configured
/// initial state, so resumed runs use the same one.
fn reference_of(f_in: &Field) -> Option<EquilibriumParams> {
    equilibrium_for(f_in).ok().map(|fit| fit.params)
}

fn localized_mass(f: &Field, m_loc: f64) -> f64 {
    let grid = f.grid();
    grid.integrate(
        f.values()
            .iter()
            .enumerate()
            .map(|(idx, &x)| x * norm_sq(grid.node(idx)).sqrt().powf(m_loc)),
    )
}

/// Steps the configured problem, optionally from a checkpoint, calling
/// `on_snapshot` at the snapshot cadence and at the end.
pub fn simulate(
    cfg: &RunConfig,
    resume: Option<&Path>,
    mut on_snapshot: impl FnMut(&Stepper) -> Result<()>,
) -> Result<RunReport> {
    cfg.validate()?;
    let f_in = cfg.initial_field()?;
    let grid = *f_in.grid();
    let kernels = KernelSet::with_correction(&grid, cfg.grid.correction);
    let step_cfg = cfg.step_config()?;
    let total = cfg.steps()?;
    let reference = reference_of(&f_in);
    let mut stepper = match resume {
        None => Stepper::new(f_in.clone(), &kernels, step_cfg)?,
        Some(path) => {
            let ckpt = read_checkpoint(open(path)?)?;
            if ckpt.step > total {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint step {} is past the final step {total}",
                    ckpt.step
                )));
            }
            Stepper::restore(ckpt, &kernels, step_cfg, reference)?
        }
    };
    let start_step = stepper.step_index();
    let cadence = cfg.snapshot_every;

    let mut traj = Trajectory {
        records: vec![stepper.record(0, 0, 0.0)?],
        snapshots: vec![(stepper.time(), stepper.state().clone())],
        reference: stepper.reference().copied(),
        warnings: Vec::new(),
    };
    if traj.records[0].entropy >= 0.0 {
        traj.warnings.push(format!(
            "initial entropy H = {} is not negative; the global theory assumes H < 0",
            traj.records[0].entropy
        ));
    }
    if traj.reference.is_none() {
        traj.warnings.push(
            "no smooth equilibrium matches the initial moments; H_rel and wdist are NaN".into(),
        );
    }
    let mut defect: f64 = 0.0;
    let mut prev_mass = traj.records[0].moments.mass;
    for k in start_step + 1..=total {
        let out = stepper.advance()?;
        let rec = stepper.record(out.picard_iters, out.lin_iters, out.overshoot)?;
        if !rec.entropy.is_finite() || !rec.moments.mass.is_finite() {
            return Err(Error::NumericalAbort {
                step: k as usize,
                reason: "non-finite diagnostics".into(),
            });
        }
        let loss = step_cfg.tau * step_cfg.delta2 * localized_mass(stepper.state(), step_cfg.m_loc);
        defect = defect.max((rec.moments.mass + loss - prev_mass).abs());
        prev_mass = rec.moments.mass;
        traj.records.push(rec);
        if (cadence > 0 && k % cadence == 0) || k == total {
            traj.snapshots
                .push((stepper.time(), stepper.state().clone()));
            on_snapshot(&stepper)?;
        }
    }
    if start_step == total {
        on_snapshot(&stepper)?;
    }

    let summary = summarize(cfg, &step_cfg, &traj, start_step, defect)?;
    Ok(RunReport {
        trajectory: traj,
        summary,
    })
}

fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(with_path(path))
}

fn decay_fits(traj: &Trajectory) -> Vec<FitEntry> {
    let t_end = traj.records.last().map_or(0.0, |r| r.t);
    let window = [DEFAULT_TRANSIENT, t_end];
    let series: [(&str, fn(&DiagRecord) -> f64); 2] =
        [("wdist", |r| r.wdist), ("H_rel", |r| r.relative_entropy)];
    series
        .iter()
        .map(|(name, get)| {
            let pts: Vec<(f64, f64)> = traj.records.iter().map(|r| (r.t, get(r))).collect();
            match fit_decay(&pts, window) {
                Ok(fit) => FitEntry {
                    series: name.to_string(),
                    fit: Some(fit),
                    note: None,
                },
                Err(e) => FitEntry {
                    series: name.to_string(),
                    fit: None,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn summarize(
    cfg: &RunConfig,
    step_cfg: &StepConfig,
    traj: &Trajectory,
    start_step: u64,
    defect: f64,
) -> Result<Summary> {
    let first = traj.records[0];
    let last = *traj.records.last().expect("at least the initial record");
    let steps = traj.records.len() as u64 - 1;
    let h = cfg.velocity_grid()?.spacing();
    let max_overshoot = traj.records.iter().map(|r| r.overshoot).fold(0.0, f64::max);
    let max_increase = traj
        .records
        .windows(2)
        .map(|w| w[1].entropy - w[0].entropy)
        .fold(f64::NEG_INFINITY, f64::max);
    let drift = Drift::between(&first.moments, &last.moments);

    let mut verdicts = Vec::new();
    let mass_tol = 10.0 * step_cfg.lin_tol * steps.max(1) as f64 * first.moments.mass;
    if step_cfg.delta2 == 0.0 {
        verdicts.push(verdict(
            "conservation",
            drift.mass <= mass_tol,
            format!(
                "mass drift {:e} (limit {mass_tol:e}), momentum drift {:e}, energy drift {:e}",
                drift.mass, drift.momentum, drift.energy
            ),
        ));
    } else {
        let tol = 10.0 * step_cfg.lin_tol * first.moments.mass;
        verdicts.push(verdict(
            "mass identity",
            defect <= tol,
            format!("largest per-step defect {defect:e} (limit {tol:e})"),
        ));
    }
    let slack = 1e-10 + ENTROPY_SLACK * step_cfg.tau * h * h;
    let rise = if steps == 0 { 0.0 } else { max_increase };
    verdicts.push(verdict(
        "entropy",
        rise <= slack,
        format!("largest per-step change of H {rise:e} (limit {slack:e})"),
    ));
    let pauli = 10.0 * step_cfg.lin_tol;
    verdicts.push(verdict(
        "pauli bound",
        max_overshoot <= pauli,
        format!("largest pre-clamp overshoot {max_overshoot:e} (limit {pauli:e})"),
    ));
    if let InitialCondition::Equilibrium { .. } = cfg.initial {
        let m = cfg.initial_field()?;
        let f = &traj.snapshots.last().expect("final snapshot").1;
        let dev = f.max_abs_diff(&m)?;
        let tol = 5.0 * STATIONARITY_CONSTANT * h * h * last.t.max(1.0);
        verdicts.push(verdict(
            "stationarity",
            dev <= tol,
            format!("max-node distance from M {dev:e} (limit {tol:e})"),
        ));
    }

    Ok(Summary {
        start_step,
        steps,
        tau: step_cfg.tau,
        t_start: first.t,
        t_final: last.t,
        reference: traj.reference,
        initial: first,
        last,
        drift,
        max_overshoot,
        max_entropy_increase: rise,
        mass_identity_defect: defect,
        fits: decay_fits(traj),
        verdicts,
        warnings: traj.warnings.clone(),
    })
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let path = dir.join(name);
    let mut w = File::create(&path)
        .map(BufWriter::new)
        .map_err(with_path(&path))?;
    body(&mut w)?;
    w.flush().map_err(with_path(&path))
}

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_{step:08}.bin")
}

/// Runs `cfg` and writes its artifacts. Relative output directories are
/// taken relative to `base`.
pub fn execute(
    cfg: &RunConfig,
    base: &Path,
    resume: Option<&Path>,
) -> Result<(RunReport, PathBuf)> {
    cfg.validate()?;
    let dir = base.join(&cfg.output.dir);
    std::fs::create_dir_all(&dir).map_err(with_path(&dir))?;
    let checkpoints = cfg.output.checkpoints;
    let report = simulate(cfg, resume, |stepper| {
        if checkpoints {
            let ckpt = stepper.checkpoint();
            write_file(&dir, &checkpoint_name(ckpt.step), |w| {
                write_checkpoint(w, &ckpt)
            })?;
        }
        Ok(())
    })?;
    write_file(&dir, "diagnostics.csv", |w| {
        write_diagnostics_csv(w, &report.trajectory.records)
    })?;
    write_file(&dir, "summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report.summary)
            .map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })?;
    if let (true, Some(f)) = (cfg.output.field_csv, report.trajectory.last_state()) {
        write_file(&dir, "final_field.csv", |w| write_field_csv(w, f))?;
    }
    Ok((report, dir))
}
