//! Monotone discretization of anisotropic diffusion by lattice edges.
//!
//! Every symmetric positive definite `D` in three dimensions splits as
//!
//! ```text
//! D = Σ_{i<j} ρ_ij e_ij e_ijᵀ,   ρ_ij = -b_iᵀ D b_j >= 0,   e_ij = b_k × b_l,
//! ```
//!
//! where `(b_0, .., b_3)` is a `D`-obtuse superbase of `Z³` found by
//! Selling's reduction. The quadratic form `∇f·D∇f` is then a nonnegative
//! combination of squared differences along integer offsets, and the
//! assembled operator is a weighted graph Laplacian: symmetric, an
//! M-matrix, and conservative.

use crate::grid::{SymTensorField, VectorField, VelocityGrid};

/// Bound on superbase updates; a well-conditioned matrix needs a handful.
const MAX_REDUCTIONS: usize = 512;

type IVec = [i64; 3];

#[inline]
fn quad(d: &[[f64; 3]; 3], x: IVec, y: IVec) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += x[a] as f64 * d[a][b] * y[b] as f64;
        }
    }
    s
}

#[inline]
fn cross(x: IVec, y: IVec) -> IVec {
    [
        x[1] * y[2] - x[2] * y[1],
        x[2] * y[0] - x[0] * y[2],
        x[0] * y[1] - x[1] * y[0],
    ]
}

/// `(ρ, e)` pairs of the Selling decomposition. Weights that come out
/// negative because `d` is only semidefinite to round-off are set to zero.
pub fn selling(d: &[[f64; 3]; 3]) -> [(f64, [i64; 3]); 6] {
    let mut b: [IVec; 4] = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, -1, -1]];
    let scale = (d[0][0] + d[1][1] + d[2][2]).abs();
    for _ in 0..MAX_REDUCTIONS {
        let mut worst = None;
        let mut largest = 1e-15 * scale;
        for i in 0..4 {
            for j in i + 1..4 {
                let p = quad(d, b[i], b[j]);
                if p > largest {
                    largest = p;
                    worst = Some((i, j));
                }
            }
        }
        let Some((i, j)) = worst else { break };
        for k in 0..4 {
            if k != i && k != j {
                for a in 0..3 {
                    b[k][a] += b[i][a];
                }
            }
        }
        b[i] = b[i].map(|x| -x);
    }
    let mut out = [(0.0, [0i64; 3]); 6];
    let mut n = 0;
    for i in 0..4 {
        for j in i + 1..4 {
            let others: Vec<usize> = (0..4).filter(|&k| k != i && k != j).collect();
            let e = cross(b[others[0]], b[others[1]]);
            out[n] = ((-quad(d, b[i], b[j])).max(0.0), e);
            n += 1;
        }
    }
    out
}

/// Inverse of a symmetric 3x3 matrix, or `None` if it is singular.
pub fn inverse(d: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let m = nalgebra::Matrix3::from_fn(|r, c| d[r][c]);
    m.try_inverse()
        .map(|inv| std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)])))
}

/// A directed lattice edge `from -> to` with conductance `weight` and the
/// drift component `drift ≈ (to - from)/h · D⁻¹∇a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: u32,
    pub to: u32,
    pub weight: f64,
    pub drift: f64,
}

/// Edges for the nodal tensors `D = tensor + shift Id`: node `x` carries
/// `ρ_i(x)/(2h²)` on both edges `x -> x ± h e_i`, so that the energy
/// `Σ_x Σ_i ρ_i(x) ¼ Σ± (f(x ± h e_i) - f(x))²/h²` approximates
/// `Σ_x ∇f·D∇f` to second order. Offsets that leave the box are dropped,
/// which is the zero-flux condition. With `drift` given, each edge also
/// carries `(to - from)/h · D⁻¹ drift` evaluated at the edge midpoint.
pub fn assemble_edges(
    grid: &VelocityGrid,
    tensor: &SymTensorField,
    shift: f64,
    drift: Option<&VectorField>,
) -> Vec<Edge> {
    use rayon::prelude::*;
    let n = grid.n() as i64;
    let inv_2h2 = 0.5 / (grid.spacing() * grid.spacing());
    let tensor_at = |idx: usize| {
        let mut d = tensor.at(idx);
        for (a, row) in d.iter_mut().enumerate() {
            row[a] += shift;
        }
        d
    };
    // `D⁻¹ drift` at every node; zero where `D` is singular.
    let pull: Option<Vec<[f64; 3]>> = drift.map(|g| {
        (0..grid.len())
            .into_par_iter()
            .map(|idx| match inverse(&tensor_at(idx)) {
                Some(inv) => {
                    let v = g.at(idx);
                    std::array::from_fn(|a| (0..3).map(|b| inv[a][b] * v[b]).sum())
                }
                None => [0.0; 3],
            })
            .collect()
    });
    let per_node: Vec<Vec<Edge>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = grid.unravel(idx);
            let c = [i as i64, j as i64, k as i64];
            let mut edges = Vec::with_capacity(12);
            for (rho, e) in selling(&tensor_at(idx)) {
                if rho == 0.0 {
                    continue;
                }
                for sign in [1i64, -1] {
                    let t = [c[0] + sign * e[0], c[1] + sign * e[1], c[2] + sign * e[2]];
                    if t.iter().any(|&x| x < 0 || x >= n) {
                        continue;
                    }
                    let to = grid.index(t[0] as usize, t[1] as usize, t[2] as usize);
                    // Midpoint value by averaging the two ends.
                    let g = pull.as_ref().map_or(0.0, |p| {
                        let (a, b) = (p[idx], p[to]);
                        0.5 * sign as f64 * (0..3).map(|d| e[d] as f64 * (a[d] + b[d])).sum::<f64>()
                    });
                    edges.push(Edge {
                        from: idx as u32,
                        to: to as u32,
                        weight: rho * inv_2h2,
                        drift: g,
                    });
                }
            }
            edges
        })
        .collect();
    per_node.into_iter().flatten().collect()
}

/// `y = L x` for the graph Laplacian of `edges`.
pub fn apply_laplacian(edges: &[Edge], x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for e in edges {
        let (a, b) = (e.from as usize, e.to as usize);
        let t = e.weight * (x[a] - x[b]);
        y[a] += t;
        y[b] -= t;
    }
}

/// Diagonal of the graph Laplacian.
pub fn laplacian_diagonal(edges: &[Edge], len: usize) -> Vec<f64> {
    let mut d = vec![0.0; len];
    for e in edges {
        d[e.from as usize] += e.weight;
        d[e.to as usize] += e.weight;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(parts: &[(f64, [i64; 3]); 6]) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (rho, e) in parts {
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] += rho * e[a] as f64 * e[b] as f64;
                }
            }
        }
        m
    }

    #[test]
    fn identity_uses_the_axes() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let parts = selling(&id);
        let used: Vec<_> = parts.iter().filter(|p| p.0 > 0.0).collect();
        assert_eq!(used.len(), 3);
        for (rho, e) in used {
            assert_eq!(*rho, 1.0);
            assert_eq!(e.iter().map(|x| x.abs()).sum::<i64>(), 1);
        }
    }

    #[test]
    fn anisotropic_tensor_is_reproduced() {
        // Strongly anisotropic along an off-lattice direction.
        let u = [0.48f64, -0.6, 0.64];
        let mut d = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                d[a][b] = 40.0 * u[a] * u[b] + if a == b { 0.3 } else { 0.0 };
            }
        }
        let parts = selling(&d);
        assert!(parts.iter().all(|p| p.0 >= 0.0));
        let m = reconstruct(&parts);
        for a in 0..3 {
            for b in 0..3 {
                assert!((m[a][b] - d[a][b]).abs() < 1e-10, "{m:?}");
            }
        }
    }
}
