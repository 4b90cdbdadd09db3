//! Zero-padded 3-D FFTs on the `(2N)^3` convolution box.
//!
//! Data live in a single `P^3` complex buffer (`P = 2N`, `k` fastest). A
//! 3-D transform is three passes of 1-D transforms along the contiguous axis,
//! each followed by the axis rotation `(i, j, k) -> (k, i, j)`, so the buffer
//! is back in its original layout after the third pass. Lines known to be
//! zero on input, or never read on output, are skipped.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct PaddedFft {
    n: usize,
    p: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PaddedFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PaddedFft").field("n", &self.n).finish()
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

impl PaddedFft {
    pub fn new(n: usize) -> Self {
        let p = 2 * n;
        let mut planner = FftPlanner::new();
        Self {
            n,
            p,
            forward: planner.plan_fft_forward(p),
            inverse: planner.plan_fft_inverse(p),
        }
    }

    #[inline]
    pub fn padded(&self) -> usize {
        self.p
    }

    pub fn volume(&self) -> usize {
        self.p * self.p * self.p
    }

    /// Copies `N^3` real samples into the low corner of a zeroed padded box.
    pub fn embed(&self, values: &[f64]) -> Vec<Complex64> {
        let (n, p) = (self.n, self.p);
        debug_assert_eq!(values.len(), n * n * n);
        let mut out = vec![Complex64::new(0.0, 0.0); self.volume()];
        out.par_chunks_mut(p * p)
            .take(n)
            .enumerate()
            .for_each(|(i, plane)| {
                for j in 0..n {
                    let src = &values[(i * n + j) * n..(i * n + j + 1) * n];
                    for (dst, &v) in plane[j * p..j * p + n].iter_mut().zip(src) {
                        dst.re = v;
                    }
                }
            });
        out
    }

    /// Forward transform of data supported on the low `N^3` corner.
    pub fn forward_corner(&self, data: &mut Vec<Complex64>) {
        self.transform(data, Direction::Forward, true);
    }

    /// Forward transform of data filling the whole padded box.
    pub fn forward_full(&self, data: &mut Vec<Complex64>) {
        self.transform(data, Direction::Forward, false);
    }

    /// Inverse transform, returning the scaled real and imaginary parts on
    /// the low `N^3` corner. Entries outside the corner are left unspecified.
    pub fn inverse_corner(&self, mut data: Vec<Complex64>) -> (Vec<f64>, Vec<f64>) {
        self.transform(&mut data, Direction::Inverse, true);
        let (n, p) = (self.n, self.p);
        let scale = 1.0 / self.volume() as f64;
        let mut re = vec![0.0; n * n * n];
        let mut im = vec![0.0; n * n * n];
        re.par_chunks_mut(n * n)
            .zip(im.par_chunks_mut(n * n))
            .enumerate()
            .for_each(|(i, (rp, ip))| {
                for j in 0..n {
                    let src = &data[(i * p + j) * p..(i * p + j) * p + n];
                    for (k, c) in src.iter().enumerate() {
                        rp[j * n + k] = c.re * scale;
                        ip[j * n + k] = c.im * scale;
                    }
                }
            });
        (re, im)
    }

    fn transform(&self, data: &mut Vec<Complex64>, dir: Direction, corner: bool) {
        let (n, p) = (self.n, self.p);
        let plan = match dir {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        };
        let mut scratch = vec![Complex64::new(0.0, 0.0); data.len()];
        for pass in 0..3 {
            // Line index is `outer * P + inner` over the two non-contiguous axes
            // in the current layout.
            let active = |line: usize| -> bool {
                if !corner {
                    return true;
                }
                let (outer, inner) = (line / p, line % p);
                match (dir, pass) {
                    // Layout (i, j, k): only the corner carries data.
                    (Direction::Forward, 0) => outer < n && inner < n,
                    // Layout (k, i, j): rows with i >= N are still zero.
                    (Direction::Forward, 1) => inner < n,
                    (Direction::Forward, _) => true,
                    (Direction::Inverse, 0) => true,
                    // Layout (k, i, j): only k < N is read back.
                    (Direction::Inverse, 1) => outer < n,
                    // Layout (j, k, i): only j, k < N are read back.
                    (Direction::Inverse, _) => outer < n && inner < n,
                }
            };
            let scratch_len = plan.get_inplace_scratch_len();
            data.par_chunks_mut(p).enumerate().for_each_init(
                || vec![Complex64::new(0.0, 0.0); scratch_len],
                |buf, (line, chunk)| {
                    if active(line) {
                        plan.process_with_scratch(chunk, buf);
                    }
                },
            );
            rotate(data, &mut scratch, p);
            std::mem::swap(data, &mut scratch);
        }
    }
}

/// `dst[(c, a, b)] = src[(a, b, c)]`.
fn rotate(src: &[Complex64], dst: &mut [Complex64], p: usize) {
    dst.par_chunks_mut(p).enumerate().for_each(|(line, out)| {
        let (c, a) = (line / p, line % p);
        for (b, o) in out.iter_mut().enumerate() {
            *o = src[(a * p + b) * p + c];
        }
    });
}
