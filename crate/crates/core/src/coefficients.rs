//! Nonlocal Coulomb coefficients and their structural checks.
//!
//! With `Π(z) = Id - z⊗z/|z|^2` the coefficients are
//!
//! ```text
//! A[g](v)  = 1/(8π) ∫ Π(v-w)/|v-w| g(w) dw
//! a[f](v)  = 1/(4π) ∫ f(w)/|v-w| dw
//! ∇a[f](v) = -1/(4π) ∫ (v-w)/|v-w|^3 f(w) dw
//! ```
//!
//! so `tr A[g] = a[g]` and `∇·A[g] = ∇a[g]`. On the grid each integral is a
//! discrete linear convolution of the samples with the kernel sampled at the
//! node offsets, with a local correction at the singular offset (see
//! [`SingularCorrection`]). Convolutions are evaluated with zero-padded FFTs
//! on the `(2N)^3` box; the kernel transforms are precomputed once per grid.

use nalgebra::Matrix3;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::PaddedFft;
use crate::grid::{norm_sq, Field, SymTensorField, VectorField, VelocityGrid, SYM_PAIRS};
use crate::stencil::centered_derivative;

/// Average of `1/|z|` over the unit cube `[-1/2, 1/2]^3`, i.e.
/// `3 ln(2 + √3) - π/2`.
pub const CELL_AVERAGE_INV_DIST: f64 = 2.380_077_363_979_553_4;

/// Analytically continued lattice sum `Σ'_{n ∈ Z^3} 1/|n|` (Epstein zeta
/// of the simple cubic lattice at `s = 1`).
pub const LATTICE_ZETA: f64 = -2.837_297_479_480_619_5;

/// How the kernel singularity at `z = 0` enters the discrete convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularCorrection {
    /// The zero offset carries the cell average of the kernel. Second
    /// order in principle, but the leading error constants are large.
    CellAverage,
    /// Corrected punctured lattice rule: the zero offset of the even
    /// kernels carries `-ζ h^2` (scaled by the angular factor), and the
    /// odd kernel gets a centered-difference correction on the six nearest
    /// offsets. Exact through second order for smooth sources, so the
    /// quadrature error is `O(h^4)`.
    #[default]
    Lattice,
}

const GRAD_SLOT: usize = 6;
const SCALAR_SLOT: usize = 9;
const KERNEL_COUNT: usize = 10;

/// Projection `Π(z) = Id - z⊗z/|z|^2` onto the plane orthogonal to `z != 0`.
pub fn projection(z: [f64; 3]) -> [[f64; 3]; 3] {
    let r2 = norm_sq(z);
    let mut p = [[0.0; 3]; 3];
    for (a, row) in p.iter_mut().enumerate() {
        for (b, entry) in row.iter_mut().enumerate() {
            *entry = if a == b { 1.0 } else { 0.0 } - z[a] * z[b] / r2;
        }
    }
    p
}

/// Storage slot of tensor entry `(a, b)` in [`SYM_PAIRS`] order.
#[inline]
pub fn sym_slot(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    match (a, b) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (0, 2) => 4,
        _ => 5,
    }
}

/// Real-space kernel value at grid offset `z = h * n`, including the
/// quadrature weight and the normalization constant.
fn kernel_sample(
    grid: &VelocityGrid,
    correction: SingularCorrection,
    slot: usize,
    n: [i64; 3],
) -> f64 {
    let h = grid.spacing();
    let h3 = grid.cell_volume();
    let pi = std::f64::consts::PI;
    if n == [0, 0, 0] {
        let inv_dist = match correction {
            SingularCorrection::CellAverage => CELL_AVERAGE_INV_DIST,
            SingularCorrection::Lattice => -LATTICE_ZETA,
        } / h;
        return match slot {
            0..=2 => h3 / (8.0 * pi) * (2.0 / 3.0) * inv_dist,
            SCALAR_SLOT => h3 / (4.0 * pi) * inv_dist,
            _ => 0.0,
        };
    }
    let z = n.map(|c| c as f64 * h);
    let r2 = norm_sq(z);
    let r = r2.sqrt();
    match slot {
        0..=5 => {
            let (a, b) = SYM_PAIRS[slot];
            let delta = if a == b { 1.0 } else { 0.0 };
            h3 / (8.0 * pi) * (delta - z[a] * z[b] / r2) / r
        }
        GRAD_SLOT..=8 => {
            let axis = slot - GRAD_SLOT;
            let mut value = z[axis] / (r2 * r);
            if correction == SingularCorrection::Lattice && r2 == h * h && z[axis] != 0.0 {
                // Restores the missing `h^2 ζ/3 ∂f` term by a centered difference.
                value -= z[axis].signum() * LATTICE_ZETA / (6.0 * h * h);
            }
            -h3 / (4.0 * pi) * value
        }
        _ => h3 / (4.0 * pi) / r,
    }
}

/// Axes along which a kernel is odd.
fn odd_axes(slot: usize) -> [bool; 3] {
    match slot {
        3 => [true, true, false],
        4 => [true, false, true],
        5 => [false, true, true],
        GRAD_SLOT..=8 => {
            let mut o = [false; 3];
            o[slot - GRAD_SLOT] = true;
            o
        }
        _ => [false; 3],
    }
}

/// A kernel transform `K̂(q) = (-i)^{#odd} R(q)` with `R` real and of the
/// same per-axis parity as the kernel, so only the octant `q ∈ [0, N]^3`
/// of `R` is stored.
#[derive(Debug, Clone)]
struct SpectralKernel {
    octant: Vec<f64>,
    odd: [bool; 3],
    phase: Complex64,
}

/// Precomputed kernel transforms for one grid.
#[derive(Debug)]
pub struct KernelSet {
    grid: VelocityGrid,
    correction: SingularCorrection,
    fft: PaddedFft,
    kernels: Vec<SpectralKernel>,
}

#[derive(Clone, Copy)]
struct Term {
    spectrum: usize,
    kernel: usize,
    coef: Complex64,
}

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

impl KernelSet {
    pub fn new(grid: &VelocityGrid) -> Self {
        Self::with_correction(grid, SingularCorrection::default())
    }

    pub fn with_correction(grid: &VelocityGrid, correction: SingularCorrection) -> Self {
        let n = grid.n();
        let fft = PaddedFft::new(n);
        let p = fft.padded();
        let offset = |i: usize| -> Option<i64> {
            match i.cmp(&n) {
                std::cmp::Ordering::Less => Some(i as i64),
                // The ±N offsets never occur in a product of two N-point
                // signals; zeroing them keeps the parity exact.
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(i as i64 - p as i64),
            }
        };
        let o = n + 1;
        let kernels = (0..KERNEL_COUNT)
            .map(|slot| {
                let mut data = vec![Complex64::new(0.0, 0.0); fft.volume()];
                data.par_chunks_mut(p * p)
                    .enumerate()
                    .for_each(|(i, plane)| {
                        let Some(oi) = offset(i) else { return };
                        for j in 0..p {
                            let Some(oj) = offset(j) else { continue };
                            for k in 0..p {
                                let Some(ok) = offset(k) else { continue };
                                plane[j * p + k].re =
                                    kernel_sample(grid, correction, slot, [oi, oj, ok]);
                            }
                        }
                    });
                fft.forward_full(&mut data);
                let odd = odd_axes(slot);
                let n_odd = odd.iter().filter(|&&x| x).count();
                let mut octant = vec![0.0; o * o * o];
                for a in 0..o {
                    for b in 0..o {
                        for c in 0..o {
                            let v = data[(a * p + b) * p + c];
                            octant[(a * o + b) * o + c] = match n_odd {
                                0 => v.re,
                                1 => -v.im,
                                _ => -v.re,
                            };
                        }
                    }
                }
                let phase = match n_odd {
                    0 => ONE,
                    1 => -I,
                    _ => -ONE,
                };
                SpectralKernel { octant, odd, phase }
            })
            .collect();
        Self {
            grid: *grid,
            correction,
            fft,
            kernels,
        }
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn correction(&self) -> SingularCorrection {
        self.correction
    }

    /// Real-space weight of `slot` at offset `h * n`; slots are the six
    /// tensor entries in `SYM_PAIRS` order, the three gradient components,
    /// then the scalar kernel.
    pub fn weight(&self, slot: usize, n: [i64; 3]) -> f64 {
        kernel_sample(&self.grid, self.correction, slot, n)
    }

    fn check(&self, grid: &VelocityGrid) -> Result<()> {
        if grid.n() != self.grid.n() || grid.half_width() != self.grid.half_width() {
            return Err(Error::GridMismatch(format!(
                "kernels built for L={}, N={}; field has L={}, N={}",
                self.grid.half_width(),
                self.grid.n(),
                grid.half_width(),
                grid.n()
            )));
        }
        Ok(())
    }

    fn spectrum(&self, values: &[f64]) -> Vec<Complex64> {
        let mut s = self.fft.embed(values);
        self.fft.forward_corner(&mut s);
        s
    }

    /// Pointwise `Σ coef * K̂_kernel * S_spectrum` over the padded box.
    fn combine(&self, spectra: &[Vec<Complex64>], terms: &[Term]) -> Vec<Complex64> {
        let n = self.grid.n();
        let p = self.fft.padded();
        let o = n + 1;
        let fold: Vec<(usize, f64)> = (0..p)
            .map(|q| if q <= n { (q, 1.0) } else { (p - q, -1.0) })
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); self.fft.volume()];
        out.par_chunks_mut(p * p)
            .enumerate()
            .for_each(|(qi, plane)| {
                let (fi, si) = fold[qi];
                for qj in 0..p {
                    let (fj, sj) = fold[qj];
                    for qk in 0..p {
                        let (fk, sk) = fold[qk];
                        let idx = (qi * p + qj) * p + qk;
                        let oct = (fi * o + fj) * o + fk;
                        let mut acc = Complex64::new(0.0, 0.0);
                        for t in terms {
                            let kern = &self.kernels[t.kernel];
                            let mut r = kern.octant[oct];
                            if kern.odd[0] {
                                r *= si;
                            }
                            if kern.odd[1] {
                                r *= sj;
                            }
                            if kern.odd[2] {
                                r *= sk;
                            }
                            acc += t.coef * kern.phase * r * spectra[t.spectrum][idx];
                        }
                        plane[qj * p + qk] = acc;
                    }
                }
            });
        out
    }

    /// Evaluates up to two convolution outputs with one inverse transform.
    fn evaluate_pair(
        &self,
        spectra: &[Vec<Complex64>],
        first: &[Term],
        second: &[Term],
    ) -> (Vec<f64>, Vec<f64>) {
        let mut terms: Vec<Term> = first.to_vec();
        terms.extend(second.iter().map(|t| Term {
            coef: t.coef * I,
            ..*t
        }));
        self.fft.inverse_corner(self.combine(spectra, &terms))
    }
}

fn single(spectrum: usize, kernel: usize) -> Term {
    Term {
        spectrum,
        kernel,
        coef: ONE,
    }
}

/// Coefficients entering one step of the collision operator.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    /// Diffusion matrix `A[f(1 - εf)]`.
    pub a_tensor: SymTensorField,
    /// `∇a[f]`.
    pub grad_a: VectorField,
    /// `a[f]`.
    pub a: Vec<f64>,
}

impl CoefficientField {
    pub fn zeros(grid: &VelocityGrid) -> Self {
        Self {
            a_tensor: SymTensorField::zeros(grid.len()),
            grad_a: VectorField::zeros(grid.len()),
            a: vec![0.0; grid.len()],
        }
    }

    /// `A[f(1 - εf)]`, `a[f]` and `∇a[f]` for a distribution `f`.
    pub fn from_distribution(f: &Field, kernels: &KernelSet) -> Result<Self> {
        let a_tensor = compute_a_tensor(&f.blocked(), kernels)?;
        let (a, grad_a) = compute_potentials(f, kernels)?;
        Ok(Self {
            a_tensor,
            grad_a,
            a,
        })
    }
}

/// `A[g]` at every node.
pub fn compute_a_tensor(g: &Field, kernels: &KernelSet) -> Result<SymTensorField> {
    kernels.check(g.grid())?;
    g.ensure_finite("diffusion source")?;
    let spectra = vec![kernels.spectrum(g.values())];
    let mut out = SymTensorField::zeros(g.grid().len());
    for pair in [(0, 1), (2, 3), (4, 5)] {
        let (x, y) = kernels.evaluate_pair(&spectra, &[single(0, pair.0)], &[single(0, pair.1)]);
        out.comps[pair.0] = x;
        out.comps[pair.1] = y;
    }
    Ok(out)
}

/// `a[f]` and `∇a[f]` at every node.
pub fn compute_potentials(f: &Field, kernels: &KernelSet) -> Result<(Vec<f64>, VectorField)> {
    kernels.check(f.grid())?;
    f.ensure_finite("potential source")?;
    let spectra = vec![kernels.spectrum(f.values())];
    let (a, gx) =
        kernels.evaluate_pair(&spectra, &[single(0, SCALAR_SLOT)], &[single(0, GRAD_SLOT)]);
    let (gy, gz) = kernels.evaluate_pair(
        &spectra,
        &[single(0, GRAD_SLOT + 1)],
        &[single(0, GRAD_SLOT + 2)],
    );
    Ok((
        a,
        VectorField {
            comps: [gx, gy, gz],
        },
    ))
}

/// Matrix kernel applied to a vector field:
/// `1/(8π) ∫ Π(v-w)/|v-w| w(w) dw`.
pub fn apply_tensor_kernel(w: &VectorField, kernels: &KernelSet) -> Result<VectorField> {
    let len = kernels.grid.len();
    if w.len() != len {
        return Err(Error::GridMismatch(format!(
            "vector field has {} nodes, kernels expect {len}",
            w.len()
        )));
    }
    let spectra: Vec<Vec<Complex64>> = w.comps.iter().map(|c| kernels.spectrum(c)).collect();
    let row = |a: usize| -> Vec<Term> { (0..3).map(|b| single(b, sym_slot(a, b))).collect() };
    let (x, y) = kernels.evaluate_pair(&spectra, &row(0), &row(1));
    let (z, _) = kernels.evaluate_pair(&spectra, &row(2), &[]);
    Ok(VectorField { comps: [x, y, z] })
}

/// `A[g](v)` at an arbitrary point away from the nodes, by direct summation.
pub fn a_tensor_at(g: &Field, v: [f64; 3]) -> [[f64; 3]; 3] {
    let grid = g.grid();
    let scale = grid.cell_volume() / (8.0 * std::f64::consts::PI);
    let mut acc = [[0.0; 3]; 3];
    for (idx, &gw) in g.values().iter().enumerate() {
        if gw == 0.0 {
            continue;
        }
        let w = grid.node(idx);
        let z = [v[0] - w[0], v[1] - w[1], v[2] - w[2]];
        let r = norm_sq(z).sqrt();
        let p = projection(z);
        for a in 0..3 {
            for b in 0..3 {
                acc[a][b] += p[a][b] / r * gw;
            }
        }
    }
    acc.map(|row| row.map(|x| x * scale))
}

/// Smallest eigenvalue of a symmetric 3x3 matrix.
pub fn min_eigenvalue(m: [[f64; 3]; 3]) -> f64 {
    let mat = Matrix3::from_fn(|a, b| m[a][b]);
    mat.symmetric_eigenvalues().min()
}

/// Result of the uniform ellipticity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityFloor {
    /// `min_v λ_min(A[f(1-εf)](v)) (1 + |v|^3)`.
    pub value: f64,
    /// Node where the minimum is attained.
    pub argmin: [f64; 3],
    /// Set when `f(1-εf)` vanishes identically, so the bound says nothing.
    pub vacuous: bool,
}

pub fn ellipticity_floor(f: &Field, kernels: &KernelSet) -> Result<EllipticityFloor> {
    let blocked = f.blocked();
    let grid = *f.grid();
    if blocked.values().iter().all(|&x| x <= 0.0) {
        return Ok(EllipticityFloor {
            value: 0.0,
            argmin: [0.0; 3],
            vacuous: true,
        });
    }
    let a = compute_a_tensor(&blocked, kernels)?;
    let scaled: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let r = norm_sq(grid.node(idx)).sqrt();
            min_eigenvalue(a.at(idx)) * (1.0 + r * r * r)
        })
        .collect();
    let (best, value) =
        scaled
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, x)| if x < acc.1 { (i, x) } else { acc },
            );
    Ok(EllipticityFloor {
        value,
        argmin: grid.node(best),
        vacuous: false,
    })
}

/// Structural identities of the coefficients, measured nodewise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    /// `max |∇·A[f] - ∇a[f]|` with a centered-difference divergence.
    pub div_identity_err: f64,
    /// Discrete `L^2` norm of the same residual.
    pub div_identity_l2: f64,
    /// `max |tr A[f] - a[f]|`.
    pub trace_err: f64,
    /// Most negative eigenvalue of `A[f]` over the grid.
    pub min_eig: f64,
    /// Ellipticity floor of `A[f(1-εf)]`.
    pub floor: f64,
}

pub fn verify_structure(f: &Field, kernels: &KernelSet) -> Result<StructureReport> {
    let grid = *f.grid();
    let a = compute_a_tensor(f, kernels)?;
    let (pot, grad) = compute_potentials(f, kernels)?;
    let mut div = [
        vec![0.0; grid.len()],
        vec![0.0; grid.len()],
        vec![0.0; grid.len()],
    ];
    for (row, out) in div.iter_mut().enumerate() {
        for col in 0..3 {
            let d = centered_derivative(&a.comps[sym_slot(row, col)], &grid, col);
            for (o, x) in out.iter_mut().zip(d) {
                *o += x;
            }
        }
    }
    let mut div_err: f64 = 0.0;
    let mut div_sq = 0.0;
    for (d, g) in div.iter().zip(&grad.comps) {
        for (x, y) in d.iter().zip(g) {
            div_err = div_err.max((x - y).abs());
            div_sq += (x - y) * (x - y);
        }
    }
    let trace_err = (0..grid.len())
        .map(|i| (a.trace(i) - pot[i]).abs())
        .fold(0.0, f64::max);
    let min_eig = (0..grid.len())
        .into_par_iter()
        .map(|i| min_eigenvalue(a.at(i)))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let floor = ellipticity_floor(f, kernels)?.value;
    Ok(StructureReport {
        div_identity_err: div_err,
        div_identity_l2: (div_sq * grid.cell_volume()).sqrt(),
        trace_err,
        min_eig,
        floor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyRow {
    pub t: f64,
    pub perp: f64,
    pub par: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyProfile {
    pub ray: [f64; 3],
    pub rows: Vec<AnisotropyRow>,
    /// Log-log slope of the transverse eigenvalue over the outer half.
    pub slope_perp: Option<f64>,
    /// Log-log slope of the longitudinal eigenvalue over the outer half.
    pub slope_par: Option<f64>,
}

/// Two unit vectors completing `e` to an orthonormal frame.
fn orthonormal_complement(e: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let axis = (0..3)
        .min_by(|&a, &b| e[a].abs().total_cmp(&e[b].abs()))
        .unwrap_or(0);
    let mut seed = [0.0; 3];
    seed[axis] = 1.0;
    let d = seed[0] * e[0] + seed[1] * e[1] + seed[2] * e[2];
    let mut u = [seed[0] - d * e[0], seed[1] - d * e[1], seed[2] - d * e[2]];
    let nu = norm_sq(u).sqrt();
    u = u.map(|x| x / nu);
    let w = [
        e[1] * u[2] - e[2] * u[1],
        e[2] * u[0] - e[0] * u[2],
        e[0] * u[1] - e[1] * u[0],
    ];
    (u, w)
}

fn quad_form(m: &[[f64; 3]; 3], x: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += x[a] * m[a][b] * x[b];
        }
    }
    s
}

/// Least-squares slope of `ln y` against `ln x`; `None` if any `y <= 0`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Samples the eigenstructure of `A[g]` along `v = t * ray` for
/// log-spaced `t ∈ [t_min, t_max]` and fits decay slopes over the outer
/// half of the range.
pub fn anisotropy_profile(
    g: &Field,
    ray: [f64; 3],
    t_min: f64,
    t_max: f64,
    samples: usize,
) -> Result<AnisotropyProfile> {
    let grid = g.grid();
    let norm = norm_sq(ray).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidArgument(
            "ray must be a nonzero vector".into(),
        ));
    }
    let e = ray.map(|x| x / norm);
    let reach = t_max * e.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(t_min > 0.0 && t_max > t_min) || reach > grid.half_width() - grid.spacing() {
        return Err(Error::InvalidArgument(format!(
            "profile range [{t_min}, {t_max}] must be increasing and stay within L - h = {}",
            grid.half_width() - grid.spacing()
        )));
    }
    if samples < 4 {
        return Err(Error::InvalidArgument(
            "need at least 4 profile samples".into(),
        ));
    }
    let (u, w) = orthonormal_complement(e);
    let ratio = (t_max / t_min).ln() / (samples - 1) as f64;
    let rows: Vec<AnisotropyRow> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let t = t_min * (ratio * s as f64).exp();
            let m = a_tensor_at(g, e.map(|x| x * t));
            AnisotropyRow {
                t,
                perp: quad_form(&m, u).max(quad_form(&m, w)),
                par: quad_form(&m, e),
            }
        })
        .collect();
    let outer = &rows[samples / 2..];
    let perp: Vec<(f64, f64)> = outer.iter().map(|r| (r.t, r.perp)).collect();
    let par: Vec<(f64, f64)> = outer.iter().map(|r| (r.t, r.par)).collect();
    Ok(AnisotropyProfile {
        ray: e,
        slope_perp: log_log_slope(&perp),
        slope_par: log_log_slope(&par),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_annihilates_axis_and_has_trace_two() {
        let z = [0.3, -1.2, 0.7];
        let p = projection(z);
        for row in &p {
            let pz: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
            assert!(pz.abs() < 1e-15);
        }
        assert!((p[0][0] + p[1][1] + p[2][2] - 2.0).abs() < 1e-15);
        let e1 = projection([1.0, 0.0, 0.0]);
        assert_eq!([e1[0][0], e1[1][0], e1[2][0]], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn cell_average_closed_form() {
        let closed = 3.0 * (2.0 + 3f64.sqrt()).ln() - std::f64::consts::FRAC_PI_2;
        assert!((closed - CELL_AVERAGE_INV_DIST).abs() < 1e-15);
    }

    #[test]
    fn sampled_kernels_have_parity() {
        let grid = VelocityGrid::new(4.0, 8, 1.0).unwrap();
        let mut state = 12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) % 15) as i64 - 7
        };
        for _ in 0..100 {
            let n = [next(), next(), next()];
            let m = n.map(|x| -x);
            for slot in 0..KERNEL_COUNT {
                let c = SingularCorrection::Lattice;
                let (a, b) = (
                    kernel_sample(&grid, c, slot, n),
                    kernel_sample(&grid, c, slot, m),
                );
                if (GRAD_SLOT..SCALAR_SLOT).contains(&slot) {
                    assert_eq!(a, -b);
                } else {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn frame_is_orthonormal() {
        let e = [0.6, 0.0, 0.8];
        let (u, w) = orthonormal_complement(e);
        let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
        assert!(dot(e, u).abs() < 1e-15 && dot(e, w).abs() < 1e-15 && dot(u, w).abs() < 1e-15);
        assert!((dot(u, u) - 1.0).abs() < 1e-15 && (dot(w, w) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..10)
            .map(|i| (i as f64, 3.0 * (i as f64).powf(-2.5)))
            .collect();
        assert!((log_log_slope(&pts).unwrap() + 2.5).abs() < 1e-12);
        assert!(log_log_slope(&[(1.0, 0.0), (2.0, 1.0)]).is_none());
    }
}
