use std::f64::consts::TAU;

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};

use super::{circular_convolve, DdGrid, Fft2, OtfsConfig, PathParams};
use crate::rng::rng_from_seed;

/// `(1/len) sum_{s<len} exp(sign j 2 pi s (i - shift) / len)` for every index `i`.
fn dirichlet_row(len: usize, shift: f64, sign: f64) -> Vec<Complex64> {
    (0..len)
        .map(|i| {
            let x = i as f64 - shift;
            (0..len)
                .map(|s| Complex64::from_polar(1.0, sign * TAU * s as f64 * x / len as f64))
                .sum::<Complex64>()
                / len as f64
        })
        .collect()
}

/// Delay-Doppler response of one path with fractional delay and Doppler.
///
/// The double sum factorizes into a delay kernel and a Doppler kernel, so the
/// grid is their outer product times the coupling phase
/// `exp(-j 2 pi k_nu l_tau / (M N))`.
pub fn dd_channel_taps(cfg: &OtfsConfig, path: &PathParams) -> DdGrid {
    let l_tau = path.delay_bins(cfg);
    let k_nu = path.doppler_bins(cfg);
    let delay = dirichlet_row(cfg.m, l_tau, 1.0);
    let doppler = dirichlet_row(cfg.n, k_nu, -1.0);
    let coupling = Complex64::from_polar(1.0, -TAU * k_nu * l_tau / (cfg.m * cfg.n) as f64);
    let scale = path.alpha * coupling;
    DdGrid::from_fn(cfg.n, cfg.m, |k, l| scale * doppler[k] * delay[l])
}

/// `H (*) X` plus circularly symmetric Gaussian noise of per-cell variance `noise_power`.
pub fn apply_channel(tx: &DdGrid, taps: &DdGrid, noise_power: f64, seed: u64) -> DdGrid {
    assert_eq!(tx.shape(), taps.shape(), "frame and taps differ in shape");
    let fft = Fft2::new(tx.nrows(), tx.ncols());
    let mut y = circular_convolve(taps, tx, &fft);
    if noise_power > 0.0 {
        let normal = Normal::new(0.0, (noise_power / 2.0).sqrt()).expect("finite noise power");
        let mut rng = rng_from_seed(seed);
        // column-major fill keeps the draw order independent of how the grid is printed
        for v in y.iter_mut() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    y
}
