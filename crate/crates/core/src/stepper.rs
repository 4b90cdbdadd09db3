//! Lagged-coefficient implicit Euler integrator.
//!
//! One step solves, for `f_k`,
//!
//! ```text
//! (f_k - f_{k-1})/τ = ∇·((A_{k-1} + δ₁ I) ∇f_k - Z ∇a_{k-1}) - δ₂ |v|^m f_k,
//! ```
//!
//! with `A_{k-1} = A[f_{k-1}(1 - εf_{k-1})]` and `Z` the blocked density of
//! the previous Picard iterate `z`. The diffusion is the lattice Laplacian
//! of [`crate::lattice`], so the matrix is a symmetric M-matrix and mass is
//! conserved exactly. The drift is carried along the same edges: on the
//! edge `x -> x + he` it moves `h w Z̄ e·(A + δ₁I)⁻¹∇a` evaluated at the
//! midpoint, with `Z̄` the [`blocked_mean`] of `z`. For an equilibrium,
//! `(A⁻¹∇a)·he` equals the increment of `ψ = ln(f/(1 - εf))` and diffusion
//! and drift cancel edge by edge. Because `Z̄` vanishes next to empty or
//! saturated nodes, the Picard fixed point stays in `[0, 1/ε]`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{CoefficientField, KernelSet};
use crate::entropy::{fermi_dirac_entropy, relative_entropy, GUARD_FLOOR};
use crate::equilibrium::{equilibrium_for, evaluate_equilibrium, EquilibriumParams};
use crate::error::{Error, Result};
use crate::grid::{moments, norm_sq, Field, MomentVector, VelocityGrid};
use crate::io::Checkpoint;
use crate::krylov::{pcg, CgOutcome};
use crate::lattice::{apply_laplacian, assemble_edges, laplacian_diagonal, Edge};

/// Scheme parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub tau: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub m_loc: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub lin_tol: f64,
    pub lin_max: usize,
}

impl StepConfig {
    /// Production defaults: `τ = h/2`, no regularization.
    pub fn for_grid(grid: &VelocityGrid) -> Self {
        Self {
            tau: 0.5 * grid.spacing(),
            delta1: 0.0,
            delta2: 0.0,
            m_loc: 0.5,
            picard_tol: 1e-11,
            picard_max: 50,
            lin_tol: 1e-12,
            lin_max: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |path: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    path,
                    format!("must be positive and finite, got {x}"),
                ))
            }
        };
        let nonneg = |path: &str, x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    path,
                    format!("must be nonnegative and finite, got {x}"),
                ))
            }
        };
        positive("stepper.tau", self.tau)?;
        nonneg("stepper.delta1", self.delta1)?;
        nonneg("stepper.delta2", self.delta2)?;
        if self.delta2 > 0.0 && !(self.m_loc > 0.0 && self.m_loc < 1.0) {
            return Err(Error::config(
                "stepper.m_loc",
                format!("must lie in (0, 1) when delta2 > 0, got {}", self.m_loc),
            ));
        }
        positive("stepper.picard_tol", self.picard_tol)?;
        positive("stepper.lin_tol", self.lin_tol)?;
        if self.picard_max == 0 {
            return Err(Error::config("stepper.picard_max", "must be at least 1"));
        }
        if self.lin_max == 0 {
            return Err(Error::config("stepper.lin_max", "must be at least 1"));
        }
        Ok(())
    }
}

/// The SPD operator `(1/τ + δ₂|v|^m) + L`, with `L` the lattice
/// Laplacian of `A + δ₁ I`.
struct StepOperator {
    edges: Vec<Edge>,
    reaction: Vec<f64>,
    inv_diag: Vec<f64>,
    spacing: f64,
}

impl StepOperator {
    fn new(grid: &VelocityGrid, coeffs: &CoefficientField, cfg: &StepConfig) -> Self {
        let edges = assemble_edges(grid, &coeffs.a_tensor, cfg.delta1, Some(&coeffs.grad_a));
        let reaction: Vec<f64> = grid
            .nodes()
            .map(|v| {
                let mut r = 1.0 / cfg.tau;
                if cfg.delta2 > 0.0 {
                    r += cfg.delta2 * norm_sq(v).sqrt().powf(cfg.m_loc);
                }
                r
            })
            .collect();
        let inv_diag = laplacian_diagonal(&edges, grid.len())
            .iter()
            .zip(&reaction)
            .map(|(d, r)| 1.0 / (d + r))
            .collect();
        Self {
            edges,
            reaction,
            inv_diag,
            spacing: grid.spacing(),
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        apply_laplacian(&self.edges, x, y);
        for i in 0..x.len() {
            y[i] += self.reaction[i] * x[i];
        }
    }

    /// `f_{k-1}/τ` plus the drift fluxes `h w Z̄ g` moved along each edge,
    /// with `Z̄` the [`blocked_mean`] of `z` at the two ends.
    fn right_hand_side(&self, f_prev: &Field, z: &Field, cfg: &StepConfig) -> Vec<f64> {
        let eps = f_prev.grid().eps();
        let zv = z.values();
        let mut b: Vec<f64> = f_prev.values().iter().map(|x| x / cfg.tau).collect();
        for e in &self.edges {
            let (from, to) = (e.from as usize, e.to as usize);
            let q = self.spacing * e.weight * e.drift * blocked_mean(zv[from], zv[to], eps);
            b[from] -= q;
            b[to] += q;
        }
        b
    }
}

/// Entropy production of the space-discrete scheme at `f` with frozen
/// coefficients `coeffs`: `-dH/dt = h³ Σ_e w Δψ (Δf - h g Z̄)` over the
/// lattice edges, `Δ` taken from `from` to `to`. Edges touching an empty or
/// saturated node carry no production.
pub fn scheme_dissipation(f: &Field, coeffs: &CoefficientField) -> Result<f64> {
    let grid = f.grid();
    if coeffs.a_tensor.comps[0].len() != grid.len() {
        return Err(Error::InvalidArgument(
            "coefficients belong to another grid".into(),
        ));
    }
    let eps = grid.eps();
    let edges = assemble_edges(grid, &coeffs.a_tensor, 0.0, Some(&coeffs.grad_a));
    let fv = f.values();
    let psi = |x: f64| x.ln() - (-eps * x).ln_1p();
    let open = |x: f64| x > 0.0 && x * (1.0 - eps * x) > 0.0;
    let h = grid.spacing();
    let mut total = 0.0;
    for e in &edges {
        let (x, y) = (fv[e.from as usize], fv[e.to as usize]);
        if !(open(x) && open(y)) {
            continue;
        }
        let dpsi = psi(y) - psi(x);
        total += e.weight * dpsi * ((y - x) - h * e.drift * blocked_mean(x, y, eps));
    }
    Ok(total * grid.cell_volume())
}

/// Edge value of `F = f(1 - εf)` that turns `F ∇ψ` into `∇f` exactly,
/// `ψ(f) = ln(f/(1 - εf))`:
///
/// ```text
/// Z̄(x, y) = (y - x) / (ψ(y) - ψ(x)),
/// ```
///
/// with both arguments first clamped to `[0, 1/ε]`. It is zero whenever
/// either end is empty or saturated, which is what makes the discrete
/// maximum principle hold, and it reduces to `F(x)` as `y -> x`.
pub fn blocked_mean(x: f64, y: f64, eps: f64) -> f64 {
    let upper = if eps > 0.0 { 1.0 / eps } else { f64::INFINITY };
    let (x, y) = (x.clamp(0.0, upper), y.clamp(0.0, upper));
    let blocked = |f: f64| f * (1.0 - eps * f);
    if blocked(x) <= 0.0 || blocked(y) <= 0.0 {
        return 0.0;
    }
    let psi = |f: f64| f.ln() - (-eps * f).ln_1p();
    let d = psi(y) - psi(x);
    if d.abs() < 1e-6 {
        // Symmetric expansion about the midpoint; the next term is O(d²).
        return blocked(0.5 * (x + y));
    }
    (y - x) / d
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolve {
    pub field: Field,
    pub outcome: CgOutcome,
}

/// Solves the frozen-coefficient problem for `f_k`, starting the Krylov
/// iteration from `z`.
pub fn linearized_solve(
    f_prev: &Field,
    z: &Field,
    coeffs: &CoefficientField,
    cfg: &StepConfig,
) -> Result<LinearSolve> {
    f_prev.grid().ensure_same(z.grid())?;
    let op = StepOperator::new(f_prev.grid(), coeffs, cfg);
    linear_solve_with(&op, f_prev, z, cfg)
}

fn linear_solve_with(
    op: &StepOperator,
    f_prev: &Field,
    z: &Field,
    cfg: &StepConfig,
) -> Result<LinearSolve> {
    let b = op.right_hand_side(f_prev, z, cfg);
    let mut x = z.values().to_vec();
    let outcome = pcg(
        |x, y| op.apply(x, y),
        &op.inv_diag,
        &b,
        &mut x,
        cfg.lin_tol,
        cfg.lin_max,
    )?;
    Ok(LinearSolve {
        field: Field::from_values(*f_prev.grid(), x)?,
        outcome,
    })
}

/// Result of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Clamped new state.
    pub field: Field,
    pub picard_iters: usize,
    pub lin_iters: usize,
    /// Largest excursion outside `[0, 1/ε]` before clamping.
    pub overshoot: f64,
}

/// One step: Picard iteration on the drift argument, then clamping.
pub fn picard_step(f_prev: &Field, kernels: &KernelSet, cfg: &StepConfig) -> Result<StepOutcome> {
    let coeffs = CoefficientField::from_distribution(f_prev, kernels)?;
    picard_step_with(f_prev, &coeffs, cfg)
}

/// [`picard_step`] with precomputed coefficients of `f_prev`.
pub fn picard_step_with(
    f_prev: &Field,
    coeffs: &CoefficientField,
    cfg: &StepConfig,
) -> Result<StepOutcome> {
    cfg.validate()?;
    let op = StepOperator::new(f_prev.grid(), coeffs, cfg);
    let mut z = f_prev.clone();
    let mut lin_iters = 0;
    let mut change = f64::INFINITY;
    // Z̄ is not Lipschitz where f vanishes, and the plain iteration can cycle
    // at a support front. Stalls halve the relaxation factor.
    let mut theta: f64 = 1.0;
    for it in 1..=cfg.picard_max {
        let solve = linear_solve_with(&op, f_prev, &z, cfg)?;
        lin_iters += solve.outcome.iterations;
        let mut next = solve.field;
        let previous = change;
        change = next.max_abs_diff(&z)?;
        if change <= cfg.picard_tol {
            let overshoot = band_excursion(&next);
            next.clamp_to_band();
            return Ok(StepOutcome {
                field: next,
                picard_iters: it,
                lin_iters,
                overshoot,
            });
        }
        if change > 0.9 * previous {
            theta = (0.5 * theta).max(1.0 / 64.0);
        }
        z = if theta == 1.0 {
            next
        } else {
            z.combine(1.0 - theta, &next, theta)?
        };
    }
    Err(Error::NonConvergence {
        what: "Picard iteration (reduce tau)",
        iterations: cfg.picard_max,
        residual: change,
    })
}

fn band_excursion(f: &Field) -> f64 {
    let upper = f.grid().pauli_bound();
    (-f.min()).max(f.max() - upper).max(0.0)
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagRecord {
    pub t: f64,
    pub moments: MomentVector,
    #[serde(rename = "H")]
    pub entropy: f64,
    /// Entropy production of the scheme, see [`scheme_dissipation`].
    #[serde(rename = "D")]
    pub dissipation: f64,
    #[serde(rename = "H_rel")]
    pub relative_entropy: f64,
    pub wdist: f64,
    pub min_f: f64,
    pub max_f: f64,
    pub picard_iters: usize,
    pub lin_iters: usize,
    pub overshoot: f64,
    pub guards_hit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<DiagRecord>,
    /// `(t, f)` at the snapshot cadence, always including the last state.
    pub snapshots: Vec<(f64, Field)>,
    /// Equilibrium with the moments of the initial state, if one exists.
    pub reference: Option<EquilibriumParams>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn last_state(&self) -> Option<&Field> {
        self.snapshots.last().map(|(_, f)| f)
    }
}

/// Time integrator holding the current state and its coefficients.
pub struct Stepper<'k> {
    kernels: &'k KernelSet,
    cfg: StepConfig,
    state: Field,
    step: u64,
    coeffs: CoefficientField,
    reference: Option<(EquilibriumParams, Field)>,
}

impl<'k> Stepper<'k> {
    /// Starts from `f_in`; the diagnostic reference equilibrium is fitted to
    /// the grid moments of `f_in`.
    pub fn new(f_in: Field, kernels: &'k KernelSet, cfg: StepConfig) -> Result<Self> {
        Self::resume(f_in, 0, kernels, cfg, None)
    }

    fn resume(
        state: Field,
        step: u64,
        kernels: &'k KernelSet,
        cfg: StepConfig,
        reference: Option<EquilibriumParams>,
    ) -> Result<Self> {
        cfg.validate()?;
        state.ensure_distribution()?;
        let reference = match reference {
            Some(p) => Some(p),
            None => equilibrium_for(&state).ok().map(|fit| fit.params),
        };
        let reference = match reference {
            Some(p) => {
                let m = evaluate_equilibrium(&p, state.grid())?;
                let upper = state.grid().pauli_bound();
                let interior = m.values().iter().all(|&x| x > 0.0 && x < upper);
                interior.then_some((p, m))
            }
            None => None,
        };
        let coeffs = CoefficientField::from_distribution(&state, kernels)?;
        Ok(Self {
            kernels,
            cfg,
            state,
            step,
            coeffs,
            reference,
        })
    }

    pub fn state(&self) -> &Field {
        &self.state
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.tau
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn reference(&self) -> Option<&EquilibriumParams> {
        self.reference.as_ref().map(|(p, _)| p)
    }

    /// Advances one step.
    pub fn advance(&mut self) -> Result<StepOutcome> {
        let abort = |step: u64, e: Error| Error::NumericalAbort {
            step: step as usize,
            reason: e.to_string(),
        };
        let next = self.step + 1;
        let out = picard_step_with(&self.state, &self.coeffs, &self.cfg).map_err(|e| match e {
            Error::NonFinite { .. } => abort(next, e),
            other => other,
        })?;
        self.coeffs = CoefficientField::from_distribution(&out.field, self.kernels)
            .map_err(|e| abort(next, e))?;
        self.state = out.field.clone();
        self.step = next;
        Ok(out)
    }

    /// Diagnostics of the current state.
    pub fn record(
        &self,
        picard_iters: usize,
        lin_iters: usize,
        overshoot: f64,
    ) -> Result<DiagRecord> {
        let f = &self.state;
        let guards_hit = f
            .blocked()
            .values()
            .iter()
            .filter(|&&x| x < GUARD_FLOOR)
            .count();
        let (h_rel, wdist) = match &self.reference {
            Some((_, m)) => (
                relative_entropy(f, m)?,
                crate::diagnostics::weighted_distance(f, m)?,
            ),
            None => (f64::NAN, f64::NAN),
        };
        Ok(DiagRecord {
            t: self.time(),
            moments: moments(f),
            entropy: fermi_dirac_entropy(f)?,
            dissipation: scheme_dissipation(f, &self.coeffs)?,
            relative_entropy: h_rel,
            wdist,
            min_f: f.min(),
            max_f: f.max(),
            picard_iters,
            lin_iters,
            overshoot,
            guards_hit,
        })
    }

    /// Takes `steps` steps, recording every step and keeping a snapshot
    /// every `cadence` steps (never, if zero) plus the final state. The
    /// current state is recorded first.
    pub fn run(&mut self, steps: u64, cadence: u64) -> Result<Trajectory> {
        let mut traj = Trajectory {
            records: vec![self.record(0, 0, 0.0)?],
            snapshots: vec![(self.time(), self.state.clone())],
            reference: self.reference().copied(),
            warnings: Vec::new(),
        };
        let h0 = traj.records[0].entropy;
        if h0 >= 0.0 {
            traj.warnings.push(format!(
                "initial entropy H = {h0} is not negative; the global theory assumes H < 0"
            ));
        }
        if self.reference.is_none() {
            traj.warnings.push(
                "no smooth equilibrium matches the initial moments; H_rel and wdist are NaN".into(),
            );
        }
        for k in 1..=steps {
            let out = self.advance()?;
            let rec = self.record(out.picard_iters, out.lin_iters, out.overshoot)?;
            traj.records.push(rec);
            if (cadence > 0 && k % cadence == 0) || k == steps {
                traj.snapshots.push((self.time(), self.state.clone()));
            }
        }
        Ok(traj)
    }

    /// Hash binding a checkpoint to the grid, kernels and scheme parameters.
    pub fn config_hash(&self) -> [u8; 32] {
        config_hash(self.state.grid(), self.kernels, &self.cfg)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config_hash(),
            step: self.step,
            time: self.time(),
            field: self.state.clone(),
        }
    }

    /// Rebuilds a stepper from a checkpoint written with the same
    /// configuration. The reference equilibrium is refitted from
    /// `reference` if given, otherwise from the checkpointed state.
    pub fn restore(
        checkpoint: Checkpoint,
        kernels: &'k KernelSet,
        cfg: StepConfig,
        reference: Option<EquilibriumParams>,
    ) -> Result<Self> {
        let expected = config_hash(checkpoint.field.grid(), kernels, &cfg);
        if expected != checkpoint.config_hash {
            return Err(Error::Format(
                "checkpoint was written with a different configuration".into(),
            ));
        }
        Self::resume(checkpoint.field, checkpoint.step, kernels, cfg, reference)
    }
}

fn config_hash(grid: &VelocityGrid, kernels: &KernelSet, cfg: &StepConfig) -> [u8; 32] {
    let payload = serde_json::json!({
        "L": grid.half_width(),
        "N": grid.n(),
        "eps": grid.eps(),
        "correction": kernels.correction(),
        "stepper": cfg,
    });
    Sha256::digest(payload.to_string().as_bytes()).into()
}

/// Runs from `f_in` to `t_final` (rounded to a whole number of steps).
pub fn run(
    f_in: &Field,
    t_final: f64,
    cfg: &StepConfig,
    kernels: &KernelSet,
    cadence: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "final time must be nonnegative, got {t_final}"
        )));
    }
    let steps = (t_final / cfg.tau).round() as u64;
    Stepper::new(f_in.clone(), kernels, *cfg)?.run(steps, cadence)
}
