use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// `N x M` delay-Doppler grid; rows are Doppler, columns are delay.
pub type DdGrid = DMatrix<Complex64>;

/// Unnormalized 2D DFT over a fixed grid shape.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    fwd_r: Arc<dyn Fft<f64>>,
    fwd_c: Arc<dyn Fft<f64>>,
    inv_r: Arc<dyn Fft<f64>>,
    inv_c: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            // along a row there are `cols` samples
            fwd_r: planner.plan_fft_forward(cols),
            fwd_c: planner.plan_fft_forward(rows),
            inv_r: planner.plan_fft_inverse(cols),
            inv_c: planner.plan_fft_inverse(rows),
        }
    }

    fn run(&self, g: &mut DdGrid, along_rows: &dyn Fft<f64>, along_cols: &dyn Fft<f64>) {
        assert_eq!(g.shape(), (self.rows, self.cols), "grid shape mismatch");
        // nalgebra is column-major: each column is contiguous
        for col in g.as_mut_slice().chunks_exact_mut(self.rows) {
            along_cols.process(col);
        }
        let mut buf = vec![Complex64::default(); self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                buf[c] = g[(r, c)];
            }
            along_rows.process(&mut buf);
            for c in 0..self.cols {
                g[(r, c)] = buf[c];
            }
        }
    }

    pub fn forward(&self, g: &mut DdGrid) {
        self.run(g, &*self.fwd_r, &*self.fwd_c);
    }

    /// Inverse transform including the `1 / (rows cols)` factor.
    pub fn inverse(&self, g: &mut DdGrid) {
        self.run(g, &*self.inv_r, &*self.inv_c);
        let s = 1.0 / (self.rows * self.cols) as f64;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

/// `Y[k,l] = sum_{k',l'} H[k',l'] X[(k-k') mod N, (l-l') mod M]`.
pub fn circular_convolve(h: &DdGrid, x: &DdGrid, fft: &Fft2) -> DdGrid {
    let mut hf = h.clone();
    let mut xf = x.clone();
    fft.forward(&mut hf);
    fft.forward(&mut xf);
    let mut y = hf.component_mul(&xf);
    fft.inverse(&mut y);
    y
}
