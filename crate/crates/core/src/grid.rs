//! Truncated velocity box, sampled fields and quadrature.
//!
//! The box `[-L, L]^3` is split into `N^3` cubic cells of side `h = 2L/N`
//! and every field is sampled at the cell centers. All integrals use the
//! midpoint rule with weight `h^3`. Reductions run sequentially in storage
//! order (`i` major, `k` minor) so their results do not depend on the
//! number of worker threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of nodes per axis.
pub const MIN_NODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    half_width: f64,
    n: usize,
    spacing: f64,
    eps: f64,
}

impl VelocityGrid {
    pub fn new(half_width: f64, n: usize, eps: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        if n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "nodes per axis must be even, got {n}"
            )));
        }
        if n < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_NODES} nodes per axis, got {n}"
            )));
        }
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::InvalidGrid(format!(
                "quantum parameter must be finite and nonnegative, got {eps}"
            )));
        }
        Ok(Self {
            half_width,
            n,
            spacing: 2.0 * half_width / n as f64,
            eps,
        })
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Nodes per axis.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Total number of nodes.
    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of every node.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing * self.spacing * self.spacing
    }

    /// Upper end of the Pauli band, `+inf` for the classical case.
    #[inline]
    pub fn pauli_bound(&self) -> f64 {
        if self.eps > 0.0 {
            1.0 / self.eps
        } else {
            f64::INFINITY
        }
    }

    /// Coordinate of the `i`-th cell center along any axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.n;
        (idx / (n * n), (idx / n) % n, idx % n)
    }

    #[inline]
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let (i, j, k) = self.unravel(idx);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    /// Node coordinates in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.len()).map(move |idx| self.node(idx))
    }

    /// Same box and resolution with a different quantum parameter.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(self.half_width, self.n, eps)
    }

    /// Midpoint-rule integral of per-node values, summed in storage order.
    pub fn integrate<I: IntoIterator<Item = f64>>(&self, values: I) -> f64 {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        acc * self.cell_volume()
    }

    pub(crate) fn same_as(&self, other: &VelocityGrid) -> bool {
        self.n == other.n
            && self.half_width.to_bits() == other.half_width.to_bits()
            && self.eps.to_bits() == other.eps.to_bits()
    }

    pub(crate) fn ensure_same(&self, other: &VelocityGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "(L={}, N={}, eps={}) vs (L={}, N={}, eps={})",
                self.half_width, self.n, self.eps, other.half_width, other.n, other.eps
            )))
        }
    }
}

/// `<v> = (1 + |v|^2)^{1/2}`.
#[inline]
pub fn japanese_bracket(v: [f64; 3]) -> f64 {
    (1.0 + norm_sq(v)).sqrt()
}

#[inline]
pub fn norm_sq(v: [f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

/// Scalar samples over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: VelocityGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: VelocityGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: VelocityGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn<F: Fn([f64; 3]) -> f64>(grid: VelocityGrid, f: F) -> Self {
        let values = grid.nodes().map(f).collect();
        Self { grid, values }
    }

    /// Wraps raw samples, rejecting wrong lengths and non-finite entries.
    pub fn from_values(grid: VelocityGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        let field = Self { grid, values };
        field.ensure_finite("field")?;
        Ok(field)
    }

    #[inline]
    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { what, index }),
            None => Ok(()),
        }
    }

    /// Checks `0 <= f <= 1/eps` at every node.
    pub fn ensure_distribution(&self) -> Result<()> {
        self.ensure_finite("distribution")?;
        let upper = self.grid.pauli_bound();
        for (index, &value) in self.values.iter().enumerate() {
            if value < 0.0 || value > upper {
                return Err(Error::OutOfBand {
                    index,
                    value,
                    upper,
                });
            }
        }
        Ok(())
    }

    /// Pointwise projection onto `[0, 1/eps]`; returns the largest change.
    pub fn clamp_to_band(&mut self) -> f64 {
        let upper = self.grid.pauli_bound();
        let mut largest: f64 = 0.0;
        for v in &mut self.values {
            let c = v.clamp(0.0, upper);
            largest = largest.max((c - *v).abs());
            *v = c;
        }
        largest
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `f (1 - eps f)`, the Pauli-blocked density that feeds the diffusion matrix.
    pub fn blocked(&self) -> Field {
        let eps = self.grid.eps;
        self.map(|f| f * (1.0 - eps * f))
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &Field, beta: f64) -> Result<Field> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest nodal difference to `other`.
    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(self.values.iter().copied())
    }
}

/// Cell averages of the indicator of the ball `|v - center| <= radius`.
///
/// Cells cut by the sphere are integrated on a `64 x 64` midpoint
/// sub-grid in the first two axes with the chord length in the third axis
/// taken exactly.
pub fn ball_fraction(grid: &VelocityGrid, center: [f64; 3], radius: f64) -> Field {
    const SUB: usize = 64;
    let h = grid.spacing();
    let r2 = radius * radius;
    Field::from_fn(*grid, |v| {
        let d: [f64; 3] = std::array::from_fn(|a| v[a] - center[a]);
        let near: f64 = d
            .iter()
            .map(|&x| (x.abs() - h / 2.0).max(0.0).powi(2))
            .sum();
        let far: f64 = d.iter().map(|&x| (x.abs() + h / 2.0).powi(2)).sum();
        if near >= r2 {
            return 0.0;
        }
        if far <= r2 {
            return 1.0;
        }
        let mut total = 0.0;
        for a in 0..SUB {
            let x = d[0] - h / 2.0 + (a as f64 + 0.5) * h / SUB as f64;
            for b in 0..SUB {
                let y = d[1] - h / 2.0 + (b as f64 + 0.5) * h / SUB as f64;
                let rem = r2 - x * x - y * y;
                if rem <= 0.0 {
                    continue;
                }
                let half = rem.sqrt();
                let lo = (d[2] - h / 2.0).max(-half);
                let hi = (d[2] + h / 2.0).min(half);
                total += (hi - lo).max(0.0);
            }
        }
        total / (SUB * SUB) as f64 / h
    })
}

/// Three scalar components over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub comps: [Vec<f64>; 3],
}

impl VectorField {
    pub fn zeros(len: usize) -> Self {
        Self {
            comps: [vec![0.0; len], vec![0.0; len], vec![0.0; len]],
        }
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 3] {
        [self.comps[0][idx], self.comps[1][idx], self.comps[2][idx]]
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps[0].is_empty()
    }
}

/// Storage order of the six independent entries of a symmetric 3x3 matrix.
pub const SYM_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Symmetric 3x3 matrix per node, stored as `xx, yy, zz, xy, xz, yz`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub comps: [Vec<f64>; 6],
}

impl SymTensorField {
    pub fn zeros(len: usize) -> Self {
        Self {
            comps: std::array::from_fn(|_| vec![0.0; len]),
        }
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [[f64; 3]; 3] {
        let c = &self.comps;
        let (xx, yy, zz, xy, xz, yz) = (
            c[0][idx], c[1][idx], c[2][idx], c[3][idx], c[4][idx], c[5][idx],
        );
        [[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]]
    }

    #[inline]
    pub fn apply(&self, idx: usize, x: [f64; 3]) -> [f64; 3] {
        let m = self.at(idx);
        [
            m[0][0] * x[0] + m[0][1] * x[1] + m[0][2] * x[2],
            m[1][0] * x[0] + m[1][1] * x[1] + m[1][2] * x[2],
            m[2][0] * x[0] + m[2][1] * x[1] + m[2][2] * x[2],
        ]
    }

    #[inline]
    pub fn trace(&self, idx: usize) -> f64 {
        self.comps[0][idx] + self.comps[1][idx] + self.comps[2][idx]
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps[0].is_empty()
    }
}

/// Mass, momentum and energy of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
}

impl MomentVector {
    pub fn centered_energy(&self) -> f64 {
        self.energy - norm_sq(self.momentum) / self.mass
    }

    pub fn scaled(&self, s: f64) -> MomentVector {
        MomentVector {
            mass: s * self.mass,
            momentum: self.momentum.map(|p| s * p),
            energy: s * self.energy,
        }
    }
}

pub fn moments(f: &Field) -> MomentVector {
    let grid = f.grid();
    let (mut mass, mut px, mut py, mut pz, mut energy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (idx, &value) in f.values().iter().enumerate() {
        let v = grid.node(idx);
        mass += value;
        px += v[0] * value;
        py += v[1] * value;
        pz += v[2] * value;
        energy += norm_sq(v) * value;
    }
    let w = grid.cell_volume();
    MomentVector {
        mass: mass * w,
        momentum: [px * w, py * w, pz * w],
        energy: energy * w,
    }
}

/// `(∫ |f|^p <v>^m dv)^{1/p}` by the midpoint rule.
pub fn weighted_norm(f: &Field, p: f64, m: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "norm exponent must be >= 1, got {p}"
        )));
    }
    f.ensure_finite("weighted_norm input")?;
    let grid = f.grid();
    let total = grid.integrate(f.values().iter().enumerate().map(|(idx, &value)| {
        let weight = if m == 0.0 {
            1.0
        } else {
            japanese_bracket(grid.node(idx)).powf(m)
        };
        let a = value.abs();
        let a = if p == 1.0 { a } else { a.powf(p) };
        a * weight
    }));
    Ok(if p == 1.0 { total } else { total.powf(1.0 / p) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spacing_and_layout() {
        let g = VelocityGrid::new(8.0, 32, 1.0).unwrap();
        assert_eq!(g.spacing(), 0.5);
        assert_eq!(g.spacing() * g.n() as f64, 2.0 * g.half_width());
        assert_eq!(g.index(1, 2, 3), (32 + 2) * 32 + 3);
        assert_eq!(g.unravel(g.index(4, 5, 6)), (4, 5, 6));
        let edge = g.half_width() - g.spacing() / 2.0;
        for v in g.nodes() {
            assert!(v.iter().all(|c| c.abs() <= edge));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(VelocityGrid::new(8.0, 33, 1.0).is_err());
        assert!(VelocityGrid::new(8.0, 6, 1.0).is_err());
        assert!(VelocityGrid::new(0.0, 32, 1.0).is_err());
        assert!(VelocityGrid::new(-1.0, 32, 1.0).is_err());
        assert!(VelocityGrid::new(8.0, 32, -0.1).is_err());
    }

    #[test]
    fn node_nearest_origin_is_half_cell_off() {
        let g = VelocityGrid::new(6.0, 48, 0.5).unwrap();
        let c = g.coord(g.n() / 2);
        assert_eq!(c, 0.125);
        assert_eq!(g.coord(g.n() / 2 - 1), -0.125);
    }

    #[test]
    fn zero_field_has_zero_moments() {
        let g = VelocityGrid::new(8.0, 8, 1.0).unwrap();
        let m = moments(&Field::zeros(g));
        assert_eq!(m.mass, 0.0);
        assert_eq!(m.momentum, [0.0; 3]);
        assert_eq!(m.energy, 0.0);
        assert_eq!(weighted_norm(&Field::zeros(g), 2.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_integrates_to_box_volume() {
        let g = VelocityGrid::new(8.0, 16, 1.0).unwrap();
        let one = Field::constant(g, 1.0);
        assert_relative_eq!(
            weighted_norm(&one, 1.0, 0.0).unwrap(),
            16.0f64.powi(3),
            max_relative = 1e-13
        );
    }

    #[test]
    fn gaussian_l2_norm() {
        let g = VelocityGrid::new(8.0, 64, 1.0).unwrap();
        let f = Field::from_fn(g, |v| (-norm_sq(v)).exp());
        let expected = (std::f64::consts::PI / 2.0).powf(0.75);
        assert!((weighted_norm(&f, 2.0, 0.0).unwrap() - expected).abs() < 1e-3);
    }

    #[test]
    fn rejects_sub_unit_exponent() {
        let g = VelocityGrid::new(8.0, 8, 1.0).unwrap();
        assert!(weighted_norm(&Field::zeros(g), 0.5, 0.0).is_err());
    }

    #[test]
    fn ball_mass_converges() {
        let exact = 4.0 * std::f64::consts::PI / 3.0;
        let err = |n: usize| {
            let g = VelocityGrid::new(8.0, n, 1.0).unwrap();
            (moments(&ball_fraction(&g, [0.0; 3], 1.0)).mass - exact).abs() / exact
        };
        assert!(err(64) < 0.02);
        for n in [32, 48, 64, 96] {
            assert!(err(n) < 1e-3, "N = {n}: {}", err(n));
        }
    }

    #[test]
    fn distribution_check_flags_out_of_band() {
        let g = VelocityGrid::new(8.0, 8, 1.0).unwrap();
        let mut f = Field::constant(g, 0.5);
        assert!(f.ensure_distribution().is_ok());
        f.values_mut()[3] = 1.5;
        assert!(matches!(
            f.ensure_distribution(),
            Err(Error::OutOfBand { index: 3, .. })
        ));
        assert_eq!(f.clamp_to_band(), 0.5);
        assert!(f.ensure_distribution().is_ok());
    }
}
