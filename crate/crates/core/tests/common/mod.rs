use lfd_core::coefficients::{projection, LATTICE_ZETA};
use lfd_core::grid::{norm_sq, Field};
use std::f64::consts::PI;

/// Direct `O(N^6)` evaluation of the three convolutions.
pub struct BruteForce {
    pub a_tensor: Vec<[[f64; 3]; 3]>,
    pub a: Vec<f64>,
    pub grad_a: Vec<[f64; 3]>,
}

pub fn brute_force(g: &Field) -> BruteForce {
    let grid = g.grid();
    let h = grid.spacing();
    let h3 = h * h * h;
    let len = grid.len();
    let mut out = BruteForce {
        a_tensor: vec![[[0.0; 3]; 3]; len],
        a: vec![0.0; len],
        grad_a: vec![[0.0; 3]; len],
    };
    for x in 0..len {
        let v = grid.node(x);
        for y in 0..len {
            let w = grid.node(y);
            let gy = g.values()[y];
            if x == y {
                let inv = -LATTICE_ZETA / h;
                out.a[x] += h3 / (4.0 * PI) * inv * gy;
                for d in 0..3 {
                    out.a_tensor[x][d][d] += h3 / (8.0 * PI) * (2.0 / 3.0) * inv * gy;
                }
                continue;
            }
            let z = [v[0] - w[0], v[1] - w[1], v[2] - w[2]];
            let r = norm_sq(z).sqrt();
            let p = projection(z);
            out.a[x] += h3 / (4.0 * PI) * gy / r;
            for a in 0..3 {
                out.grad_a[x][a] -= h3 / (4.0 * PI) * z[a] / (r * r * r) * gy;
                // Centered-difference completion of the lattice rule on the
                // six nearest neighbours.
                if (r - h).abs() < 1e-12 * h && z[a].abs() > 0.5 * h {
                    out.grad_a[x][a] +=
                        h3 / (4.0 * PI) * z[a].signum() * LATTICE_ZETA / (6.0 * h * h) * gy;
                }
                for b in 0..3 {
                    out.a_tensor[x][a][b] += h3 / (8.0 * PI) * p[a][b] / r * gy;
                }
            }
        }
    }
    out
}

/// Largest nodewise difference between the spectral coefficients of `g` and
/// the direct sums.
pub fn oracle_error(g: &Field, kernels: &lfd_core::KernelSet) -> f64 {
    let grid = g.grid();
    let a = lfd_core::coefficients::compute_a_tensor(g, kernels).unwrap();
    let (pot, grad) = lfd_core::coefficients::compute_potentials(g, kernels).unwrap();
    let oracle = brute_force(g);
    let mut err: f64 = 0.0;
    for idx in 0..grid.len() {
        let m = a.at(idx);
        for r in 0..3 {
            for c in 0..3 {
                err = err.max((m[r][c] - oracle.a_tensor[idx][r][c]).abs());
            }
            err = err.max((grad.comps[r][idx] - oracle.grad_a[idx][r]).abs());
        }
        err = err.max((pot[idx] - oracle.a[idx]).abs());
    }
    err
}
