//! The collision operator linearized about a Fermi-Dirac equilibrium `M`.
//!
//! With `m = M(1 - εM)` and `f = M + α m h`,
//!
//! ```text
//! -(1/m) T[f] = α L h + α² Γ₂[h, h] + α³ Γ₃[h, h, h],
//! L h = (1/m) ∇·(m A[m] ∇h - m Ā[m ∇h]),
//! ```
//!
//! where `Ā[w] = 1/(8π) ∫ Π(v-w)/|v-w| w(w) dw` is the matrix kernel acting on
//! vector fields. Every divergence-form term is discretized as
//! `½ Σ± div± (·)` over the one-sided difference families of
//! [`crate::stencil`], which keeps `L` symmetric and nonpositive in `L²(m)`
//! exactly.
//!
//! The full operator `T` is evaluated in the same representation: `∇M` and
//! `∇m` are taken exactly (`∇M = m ∇ψ`, `ψ = ln(M/(1 - εM))` is quadratic)
//! and differences act on `h` only. Since `Π(z) z = 0` holds offset by offset
//! in the kernel sums, the discrete `T[M]` vanishes and the expansion above
//! holds to round-off, with `Γ₂` and `Γ₃` the exact remainder terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{apply_tensor_kernel, compute_a_tensor, KernelSet};
use crate::equilibrium::{evaluate_equilibrium, EquilibriumParams};
use crate::error::{Error, Result};
use crate::grid::{japanese_bracket, Field, SymTensorField, VectorField, VelocityGrid};
use crate::krylov::dot;
use crate::stencil::{diffusion, diffusion_diagonal, gradient, gradient_adjoint, SIDES};

/// Tolerance on a negative Rayleigh numerator before it counts as a defect.
const NEGATIVE_NUMERATOR_TOL: f64 = 1e-10;

/// Everything that depends only on the equilibrium.
pub struct LinearizedContext<'k> {
    params: EquilibriumParams,
    kernels: &'k KernelSet,
    grid: VelocityGrid,
    eq: Vec<f64>,
    weight: Vec<f64>,
    /// `∇ψ = -2b (v - u)`.
    grad_psi: VectorField,
    /// `A[m]`.
    a_weight: SymTensorField,
    /// `Ā[∇M]`.
    abar_grad_eq: VectorField,
    /// `L²(m)`-orthonormal basis of `span{1, v₁, v₂, v₃, |v|²}`.
    null_basis: Vec<Vec<f64>>,
}

fn nodewise(a: &[f64], w: &VectorField) -> VectorField {
    VectorField {
        comps: std::array::from_fn(|d| a.iter().zip(&w.comps[d]).map(|(x, y)| x * y).collect()),
    }
}

fn add_scaled(acc: &mut VectorField, s: f64, w: &VectorField) {
    for d in 0..3 {
        for (a, b) in acc.comps[d].iter_mut().zip(&w.comps[d]) {
            *a += s * b;
        }
    }
}

fn tensor_times(t: &SymTensorField, w: &VectorField) -> VectorField {
    let mut out = VectorField::zeros(w.len());
    for idx in 0..w.len() {
        let y = t.apply(idx, w.at(idx));
        for d in 0..3 {
            out.comps[d][idx] = y[d];
        }
    }
    out
}

impl<'k> LinearizedContext<'k> {
    pub fn new(params: EquilibriumParams, kernels: &'k KernelSet) -> Result<Self> {
        let grid = *kernels.grid();
        if (grid.eps() - params.eps).abs() > 1e-14 * params.eps.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "equilibrium has eps = {}, grid has eps = {}",
                params.eps,
                grid.eps()
            )));
        }
        let eq = evaluate_equilibrium(&params, &grid)?.into_values();
        let eps = grid.eps();
        let weight: Vec<f64> = eq.iter().map(|&x| x * (1.0 - eps * x)).collect();
        if let Some(idx) = weight.iter().position(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "equilibrium weight M(1 - εM) vanishes at node {idx}; use a smaller box or a wider equilibrium"
            )));
        }
        let mut grad_psi = VectorField::zeros(grid.len());
        for (idx, v) in grid.nodes().enumerate() {
            for d in 0..3 {
                grad_psi.comps[d][idx] = -2.0 * params.b * (v[d] - params.u[d]);
            }
        }
        let a_weight = compute_a_tensor(&Field::from_values(grid, weight.clone())?, kernels)?;
        let abar_grad_eq = apply_tensor_kernel(&nodewise(&weight, &grad_psi), kernels)?;
        let mut ctx = Self {
            params,
            kernels,
            grid,
            eq,
            weight,
            grad_psi,
            a_weight,
            abar_grad_eq,
            null_basis: Vec::new(),
        };
        ctx.null_basis = ctx.orthonormal_invariants()?;
        Ok(ctx)
    }

    fn orthonormal_invariants(&self) -> Result<Vec<Vec<f64>>> {
        let raw: Vec<Vec<f64>> = (0..5)
            .map(|k| {
                self.grid
                    .nodes()
                    .map(|v| match k {
                        0 => 1.0,
                        1..=3 => v[k - 1],
                        _ => v[0] * v[0] + v[1] * v[1] + v[2] * v[2],
                    })
                    .collect()
            })
            .collect();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(5);
        for mut x in raw {
            let before = self.inner(&x, &x).sqrt();
            for q in &basis {
                let c = self.inner(&x, q);
                x.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
            let after = self.inner(&x, &x).sqrt();
            if !(after > 1e-10 * before) {
                return Err(Error::InvalidArgument(
                    "collision invariants are linearly dependent on this grid".into(),
                ));
            }
            x.iter_mut().for_each(|a| *a /= after);
            basis.push(x);
        }
        Ok(basis)
    }

    pub fn params(&self) -> &EquilibriumParams {
        &self.params
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    /// `M` at the nodes.
    pub fn equilibrium(&self) -> Field {
        Field::from_values(self.grid, self.eq.clone()).expect("sized by the grid")
    }

    /// `m = M(1 - εM)` at the nodes.
    pub fn weight(&self) -> Field {
        Field::from_values(self.grid, self.weight.clone()).expect("sized by the grid")
    }

    /// `(x, y)_{L²(m)}`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((a, b), w) in x.iter().zip(y).zip(&self.weight) {
            s += a * b * w;
        }
        s * self.grid.cell_volume()
    }

    fn check(&self, h: &Field) -> Result<()> {
        self.grid.ensure_same(h.grid())?;
        h.ensure_finite("perturbation")
    }

    /// `(1/m) ½ Σ± div±(flux±)` for fluxes built from `G± h`.
    fn reduce<F>(&self, h: &[f64], flux: F) -> Result<Vec<f64>>
    where
        F: Fn(&VectorField) -> Result<VectorField>,
    {
        let mut out = vec![0.0; h.len()];
        for side in SIDES {
            let q = flux(&gradient(h, &self.grid, side))?;
            let div = gradient_adjoint(&q, &self.grid, side);
            for (o, d) in out.iter_mut().zip(div) {
                *o -= 0.5 * d;
            }
        }
        for (o, w) in out.iter_mut().zip(&self.weight) {
            *o /= w;
        }
        Ok(out)
    }

    /// `∇(m h) = h ∇m + m G h`, with `∇m = (1 - 2εM) m ∇ψ` exact.
    fn grad_mh(&self, h: &[f64], g: &VectorField) -> VectorField {
        let eps = self.grid.eps();
        let mut out = nodewise(&self.weight, g);
        for idx in 0..h.len() {
            let s = h[idx] * (1.0 - 2.0 * eps * self.eq[idx]) * self.weight[idx];
            for d in 0..3 {
                out.comps[d][idx] += s * self.grad_psi.comps[d][idx];
            }
        }
        out
    }

    fn grad_eq(&self) -> VectorField {
        nodewise(&self.weight, &self.grad_psi)
    }

    /// `m (A[m] G h - Ā[m G h])` for one family.
    fn linear_flux(&self, g: &VectorField) -> Result<VectorField> {
        let mut q = tensor_times(&self.a_weight, g);
        let cross = apply_tensor_kernel(&nodewise(&self.weight, g), self.kernels)?;
        add_scaled(&mut q, -1.0, &cross);
        Ok(nodewise(&self.weight, &q))
    }

    /// `L h`.
    pub fn apply_l(&self, h: &Field) -> Result<Field> {
        self.check(h)?;
        let out = self.reduce(h.values(), |g| self.linear_flux(g))?;
        Field::from_values(self.grid, out)
    }

    /// `Γ₂[h, h]`.
    pub fn gamma2(&self, h: &Field) -> Result<Field> {
        self.check(h)?;
        let eps = self.grid.eps();
        let hv = h.values();
        let first: Vec<f64> = (0..hv.len())
            .map(|i| (1.0 - 2.0 * eps * self.eq[i]) * self.weight[i] * hv[i])
            .collect();
        let second: Vec<f64> = (0..hv.len())
            .map(|i| (self.weight[i] * hv[i]).powi(2))
            .collect();
        let a_first =
            compute_a_tensor(&Field::from_values(self.grid, first.clone())?, self.kernels)?;
        let a_second = compute_a_tensor(
            &Field::from_values(self.grid, second.clone())?,
            self.kernels,
        )?;
        let grad_eq = self.grad_eq();
        let a2_grad_eq = tensor_times(&a_second, &grad_eq);
        let out = self.reduce(hv, |g| {
            let gmh = self.grad_mh(hv, g);
            let mut q = tensor_times(&a_first, &gmh);
            add_scaled(&mut q, -eps, &a2_grad_eq);
            let cross = apply_tensor_kernel(&gmh, self.kernels)?;
            add_scaled(&mut q, -1.0, &nodewise(&first, &cross));
            add_scaled(&mut q, eps, &nodewise(&second, &self.abar_grad_eq));
            Ok(q)
        })?;
        Field::from_values(self.grid, out)
    }

    /// `Γ₃[h, h, h]`.
    pub fn gamma3(&self, h: &Field) -> Result<Field> {
        self.check(h)?;
        let eps = self.grid.eps();
        let hv = h.values();
        let second: Vec<f64> = (0..hv.len())
            .map(|i| (self.weight[i] * hv[i]).powi(2))
            .collect();
        let a_second = compute_a_tensor(
            &Field::from_values(self.grid, second.clone())?,
            self.kernels,
        )?;
        let out = self.reduce(hv, |g| {
            let gmh = self.grad_mh(hv, g);
            let mut q = tensor_times(&a_second, &gmh);
            q.comps.iter_mut().flatten().for_each(|x| *x *= -eps);
            let cross = apply_tensor_kernel(&gmh, self.kernels)?;
            add_scaled(&mut q, eps, &nodewise(&second, &cross));
            Ok(q)
        })?;
        Field::from_values(self.grid, out)
    }

    /// `-(1/m) T[f]` for `f = M + α m h`, with
    /// `T[f] = -∇·(A[F] ∇f - F Ā[∇f])`, `F = f(1 - εf)`.
    pub fn reduced_collision(&self, h: &Field, alpha: f64) -> Result<Field> {
        self.check(h)?;
        let eps = self.grid.eps();
        let upper = self.grid.pauli_bound();
        let hv = h.values();
        let mut f = Vec::with_capacity(hv.len());
        for (i, x) in hv.iter().enumerate() {
            let value = self.eq[i] + alpha * self.weight[i] * x;
            if !(value > 0.0 && value < upper) {
                return Err(Error::OutOfBand {
                    index: i,
                    value,
                    upper,
                });
            }
            f.push(value);
        }
        let blocked: Vec<f64> = f.iter().map(|&x| x * (1.0 - eps * x)).collect();
        let a_f = compute_a_tensor(
            &Field::from_values(self.grid, blocked.clone())?,
            self.kernels,
        )?;
        let grad_eq = self.grad_eq();
        let out = self.reduce(hv, |g| {
            let mut gf = self.grad_mh(hv, g);
            gf.comps.iter_mut().flatten().for_each(|x| *x *= alpha);
            add_scaled(&mut gf, 1.0, &grad_eq);
            let mut q = tensor_times(&a_f, &gf);
            let cross = apply_tensor_kernel(&gf, self.kernels)?;
            add_scaled(&mut q, -1.0, &nodewise(&blocked, &cross));
            Ok(q)
        })?;
        Field::from_values(self.grid, out)
    }

    /// Truncation residuals of the expansion at amplitude `alpha`.
    pub fn nonlinear_consistency(&self, h: &Field, alpha: f64) -> Result<ConsistencyReport> {
        let full = self.reduced_collision(h, alpha)?;
        let l = self.apply_l(h)?;
        let g2 = self.gamma2(h)?;
        let g3 = self.gamma3(h)?;
        let (mut r1, mut r2, mut r3, mut scale) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..self.grid.len() {
            let t = full.values()[i];
            let lin = alpha * l.values()[i];
            let quad = lin + alpha * alpha * g2.values()[i];
            let cubic = quad + alpha.powi(3) * g3.values()[i];
            r1 = r1.max((t - lin).abs());
            r2 = r2.max((t - quad).abs());
            r3 = r3.max((t - cubic).abs());
            scale = scale.max(t.abs());
        }
        Ok(ConsistencyReport {
            amplitude: alpha,
            linear: r1,
            quadratic: r2,
            full: r3,
            relative: if scale > 0.0 { r3 / scale } else { r3 },
        })
    }

    /// Removes the collision invariants in `L²(m)`.
    pub fn project_out_nullspace(&self, h: &Field) -> Result<Field> {
        self.check(h)?;
        let mut x = h.values().to_vec();
        self.project(&mut x);
        Field::from_values(self.grid, x)
    }

    fn project(&self, x: &mut [f64]) {
        for q in &self.null_basis {
            let c = self.inner(x, q);
            x.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
    }

    /// `(x, q)_{L²(m)}` for the orthonormal invariant directions.
    pub fn invariant_components(&self, h: &Field) -> Result<[f64; 5]> {
        self.check(h)?;
        Ok(std::array::from_fn(|k| {
            self.inner(h.values(), &self.null_basis[k])
        }))
    }

    /// `Λ_k h = -(1/m) ∇·(m A[m] ∇h) - m h + ξ ∫ m h ⟨v⟩^k`.
    pub fn apply_lambda(&self, h: &Field, k: f64, xi: f64) -> Result<Field> {
        self.check(h)?;
        let tail = self.tail_term(h.values(), k, xi);
        let mut out = self.reduce(h.values(), |g| {
            let mut q = nodewise(&self.weight, &tensor_times(&self.a_weight, g));
            q.comps.iter_mut().flatten().for_each(|x| *x = -*x);
            Ok(q)
        })?;
        for (i, o) in out.iter_mut().enumerate() {
            *o += -self.weight[i] * h.values()[i] + tail;
        }
        Field::from_values(self.grid, out)
    }

    /// `K_k h = -(1/m) ∇·(m Ā[m ∇h]) - m h + ξ ∫ m h ⟨v⟩^k`.
    pub fn apply_kappa(&self, h: &Field, k: f64, xi: f64) -> Result<Field> {
        self.check(h)?;
        let tail = self.tail_term(h.values(), k, xi);
        let mut out = self.reduce(h.values(), |g| {
            let cross = apply_tensor_kernel(&nodewise(&self.weight, g), self.kernels)?;
            let mut q = nodewise(&self.weight, &cross);
            q.comps.iter_mut().flatten().for_each(|x| *x = -*x);
            Ok(q)
        })?;
        for (i, o) in out.iter_mut().enumerate() {
            *o += -self.weight[i] * h.values()[i] + tail;
        }
        Field::from_values(self.grid, out)
    }

    fn tail_term(&self, h: &[f64], k: f64, xi: f64) -> f64 {
        let mut s = 0.0;
        for ((x, w), v) in h.iter().zip(&self.weight).zip(self.grid.nodes()) {
            s += x * w * japanese_bracket(v).powf(k);
        }
        xi * s * self.grid.cell_volume()
    }

    /// `-(L x)·m` nodewise: the symmetric form of `-L` in `L²(m)`, up to `h³`.
    fn stiffness(&self, x: &[f64]) -> Result<Vec<f64>> {
        let lx = self.reduce(x, |g| self.linear_flux(g))?;
        Ok(lx.iter().zip(&self.weight).map(|(a, w)| -a * w).collect())
    }

    /// Gram operator of `∫ m ∇h·A[m]∇h + ∫ h² m/⟨v⟩`, up to `h³`.
    fn gram(&self, x: &[f64], tensor: &SymTensorField, decay: &[f64]) -> Vec<f64> {
        let mut y = diffusion(x, &self.grid, Some(tensor), 0.0);
        for ((o, a), d) in y.iter_mut().zip(x).zip(decay) {
            *o += d * a;
        }
        y
    }

    /// `(-(L h, h)_{L²(m)}, ∫ m ∇h·A[m]∇h + ‖h‖²_{L²(m⟨v⟩⁻¹)})`.
    pub fn rayleigh_parts(&self, h: &Field) -> Result<(f64, f64)> {
        self.check(h)?;
        let (tensor, decay) = self.gram_parts();
        let x = h.values();
        let dv = self.grid.cell_volume();
        Ok((
            dot(x, &self.stiffness(x)?) * dv,
            dot(x, &self.gram(x, &tensor, &decay)) * dv,
        ))
    }

    fn gram_parts(&self) -> (SymTensorField, Vec<f64>) {
        let mut tensor = self.a_weight.clone();
        for c in tensor.comps.iter_mut() {
            c.iter_mut().zip(&self.weight).for_each(|(x, w)| *x *= w);
        }
        let decay = self
            .grid
            .nodes()
            .zip(&self.weight)
            .map(|(v, w)| w / japanese_bracket(v))
            .collect();
        (tensor, decay)
    }

    /// Minimizes the Rayleigh ratio of [`Self::rayleigh_parts`] over
    /// `N(L)^⊥` by a locally optimal block preconditioned conjugate gradient
    /// iteration, one run per seed. Every value returned is the ratio of an
    /// actual admissible `h`, so the minimum bounds the gap constant from
    /// above.
    pub fn estimate_gap(&self, iters: usize, seeds: u64) -> Result<GapEstimate> {
        if iters == 0 || seeds == 0 {
            return Err(Error::InvalidArgument(
                "gap estimate needs iters >= 1 and seeds >= 1".into(),
            ));
        }
        let (tensor, decay) = self.gram_parts();
        let diag: Vec<f64> = diffusion_diagonal(&self.grid, Some(&tensor), 0.0)
            .iter()
            .zip(&decay)
            .map(|(a, b)| a + b)
            .collect();
        let per_seed: Vec<f64> = (0..seeds)
            .into_par_iter()
            .map(|seed| self.descend(seed, iters, &tensor, &decay, &diag))
            .collect::<Result<_>>()?;
        let estimate = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(GapEstimate {
            estimate,
            seeds,
            iters,
            per_seed_values: per_seed,
        })
    }

    fn descend(
        &self,
        seed: u64,
        iters: usize,
        tensor: &SymTensorField,
        decay: &[f64],
        diag: &[f64],
    ) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..self.grid.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        self.project(&mut x);
        let mut kx = self.stiffness(&x)?;
        let mut bx = self.gram(&x, tensor, decay);
        let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
        let mut lambda = dot(&x, &kx) / dot(&x, &bx);
        for it in 0..iters {
            if lambda < -NEGATIVE_NUMERATOR_TOL {
                return Err(Error::NumericalAbort {
                    step: it,
                    reason: format!("negative Rayleigh ratio {lambda:e} for seed {seed}"),
                });
            }
            let mut w: Vec<f64> = (0..x.len())
                .map(|i| (kx[i] - lambda * bx[i]) / diag[i])
                .collect();
            self.project(&mut w);
            let kw = self.stiffness(&w)?;
            let bw = self.gram(&w, tensor, decay);
            let mut basis = vec![(x.clone(), kx.clone(), bx.clone()), (w, kw, bw)];
            if let Some(p) = prev.take() {
                basis.push(p);
            }
            let Some(step) = ritz_step(basis) else { break };
            lambda = step.value;
            x = step.x;
            kx = step.kx;
            bx = step.bx;
            prev = step.direction;
        }
        Ok(lambda)
    }
}

struct RitzStep {
    value: f64,
    x: Vec<f64>,
    kx: Vec<f64>,
    bx: Vec<f64>,
    direction: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

/// Rayleigh-Ritz on the span of `basis` (vectors with their `K` and `B`
/// images). Columns that are numerically dependent in the `B` norm are
/// dropped; `None` when only the current iterate survives.
fn ritz_step(basis: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>) -> Option<RitzStep> {
    let mut cols: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for (mut v, mut kv, mut bv) in basis {
        let before = dot(&v, &bv).max(0.0).sqrt();
        for (q, kq, bq) in &cols {
            let c = dot(&v, bq);
            for i in 0..v.len() {
                v[i] -= c * q[i];
                kv[i] -= c * kq[i];
                bv[i] -= c * bq[i];
            }
        }
        let norm = dot(&v, &bv).max(0.0).sqrt();
        if !(norm > 1e-8 * before) || norm == 0.0 {
            continue;
        }
        for i in 0..v.len() {
            v[i] /= norm;
            kv[i] /= norm;
            bv[i] /= norm;
        }
        cols.push((v, kv, bv));
    }
    if cols.len() < 2 {
        return None;
    }
    let n = cols.len();
    let k = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        0.5 * (dot(&cols[i].0, &cols[j].1) + dot(&cols[j].0, &cols[i].1))
    });
    let eig = k.symmetric_eigen();
    let (imin, value) =
        eig.eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
            );
    let y = eig.eigenvectors.column(imin);
    let len = cols[0].0.len();
    let combine = |which: usize, from: usize| -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (c, col) in cols.iter().enumerate().skip(from) {
            let v = match which {
                0 => &col.0,
                1 => &col.1,
                _ => &col.2,
            };
            for i in 0..len {
                out[i] += y[c] * v[i];
            }
        }
        out
    };
    let direction = Some((combine(0, 1), combine(1, 1), combine(2, 1)));
    Some(RitzStep {
        value,
        x: combine(0, 0),
        kx: combine(1, 0),
        bx: combine(2, 0),
        direction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub amplitude: f64,
    /// `max |-(1/m)T[f] - αLh|`.
    pub linear: f64,
    /// `max |-(1/m)T[f] - αLh - α²Γ₂|`.
    pub quadratic: f64,
    /// `max |-(1/m)T[f] - αLh - α²Γ₂ - α³Γ₃|`.
    pub full: f64,
    /// `full` relative to `max |(1/m)T[f]|`.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub estimate: f64,
    pub seeds: u64,
    pub iters: usize,
    pub per_seed_values: Vec<f64>,
}
