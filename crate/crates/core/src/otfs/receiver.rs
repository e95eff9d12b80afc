use num_complex::Complex64;

use super::{circular_convolve, dd_channel_taps, qpsk_demap, ChannelEstimate, DdFrame, DdGrid, Fft2, OtfsConfig, PathParams};
use crate::error::{Error, Result};

/// Linear MMSE estimate of `x` from `y = h (*) x + z`, with `x` white of power
/// `signal_power` and `z` white of power `noise_power`.
///
/// Circular convolution is diagonal in the 2D DFT domain, so the MN x MN
/// system `(H^H H + s I)^{-1} H^H y` reduces to one division per frequency bin.
pub fn equalize(y: &DdGrid, h: &DdGrid, noise_power: f64, signal_power: f64) -> DdGrid {
    let fft = Fft2::new(y.nrows(), y.ncols());
    let mut hf = h.clone();
    let mut yf = y.clone();
    fft.forward(&mut hf);
    fft.forward(&mut yf);
    let reg = if signal_power > 0.0 { noise_power / signal_power } else { f64::INFINITY };
    let mut xf = DdGrid::from_fn(y.nrows(), y.ncols(), |r, c| {
        let denom = hf[(r, c)].norm_sqr() + reg;
        if denom > 0.0 && denom.is_finite() {
            hf[(r, c)].conj() * yf[(r, c)] / denom
        } else {
            Complex64::default()
        }
    });
    fft.inverse(&mut xf);
    xf
}

/// Bit error rate of the data cells after removing the pilot's estimated
/// contribution and equalizing with the estimated single-path channel.
pub fn demodulate_ber(received: &DdGrid, estimate: &ChannelEstimate, frame: &DdFrame) -> Result<f64> {
    if !estimate.detected {
        return Err(Error::Undetected);
    }
    let (n, m) = received.shape();
    if frame.grid.shape() != (n, m) {
        return Err(Error::Usage("received grid and frame differ in shape".into()));
    }
    if frame.data_power <= 0.0 {
        return Err(Error::Usage("frame carries no data".into()));
    }
    // bins are all the taps need; the physical spacing cancels out
    let geometry = OtfsConfig { m, n, ..OtfsConfig::default() };
    let path = PathParams::from_bins(estimate.alpha_hat, estimate.delay_bins, estimate.doppler_bins, &geometry);
    let h = dd_channel_taps(&geometry, &path);

    let mut pilot_grid = DdGrid::zeros(n, m);
    pilot_grid[(frame.layout.k_pilot, frame.layout.l_pilot)] = frame.pilot;
    let fft = Fft2::new(n, m);
    let residual = received - circular_convolve(&h, &pilot_grid, &fft);

    let x_hat = equalize(&residual, &h, estimate.noise_std.powi(2), frame.data_power);
    let cells = frame.layout.data_cells(n, m);
    let mut errors = 0usize;
    for (&cell, bits) in cells.iter().zip(frame.data_bits.chunks_exact(2)) {
        let (b0, b1) = qpsk_demap(x_hat[cell]);
        errors += usize::from(b0 != bits[0]) + usize::from(b1 != bits[1]);
    }
    Ok(errors as f64 / frame.data_bits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::otfs::{apply_channel, estimate_channel, modulate_frame, PilotLayout};
    use crate::rng::{derive_seed, rng_from_seed};
    use rand::Rng;

    fn random_bits(len: usize, seed: u64) -> Vec<u8> {
        let mut rng = rng_from_seed(seed);
        (0..len).map(|_| rng.random_range(0..2u8)).collect()
    }

    fn frame(cfg: &OtfsConfig, seed: u64) -> DdFrame {
        let layout = PilotLayout::centered(cfg);
        modulate_frame(cfg, &random_bits(2 * layout.data_cells(cfg.n, cfg.m).len(), seed), layout).unwrap()
    }

    fn perfect(cfg: &OtfsConfig, path: &PathParams) -> ChannelEstimate {
        ChannelEstimate {
            alpha_hat: path.alpha,
            tau_hat: path.tau_s,
            nu_hat: path.nu_hz,
            detected: true,
            delay_bins: path.delay_bins(cfg),
            doppler_bins: path.doppler_bins(cfg),
            noise_std: 0.0,
            peak: 1.0,
        }
    }

    #[test]
    fn equalizer_inverts_a_scaled_unitary_channel() {
        let cfg = OtfsConfig { m: 16, n: 8, ..Default::default() };
        let path = PathParams::from_bins(Complex64::from_polar(0.5, 1.0), 3.4, 0.7, &cfg);
        let h = dd_channel_taps(&cfg, &path);
        let mut rng = rng_from_seed(4);
        let x = DdGrid::from_fn(8, 16, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let y = apply_channel(&x, &h, 0.0, 0);
        // closed form: with no noise, x = H^{-1} y and H^{-1} = H^H / |alpha|^2
        let x_hat = equalize(&y, &h, 0.0, 1.0);
        assert!((&x_hat - &x).norm() < 1e-9);
    }

    #[test]
    fn perfect_estimate_without_noise_is_error_free() {
        for (l, db) in [(4.0, 0.0), (9.35, -10.0), (20.6, -20.0)] {
            let cfg = OtfsConfig { data_to_pilot_db: db, ..Default::default() };
            let f = frame(&cfg, 1);
            let path = PathParams::from_bins(Complex64::from_polar(0.02, -0.3), l, 0.0, &cfg);
            let y = apply_channel(&f.grid, &dd_channel_taps(&cfg, &path), 0.0, 0);
            assert_eq!(demodulate_ber(&y, &perfect(&cfg, &path), &f).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_gain_estimate_is_a_coin_flip() {
        let cfg = OtfsConfig::default();
        let mut errors = 0.0;
        let mut bits = 0.0;
        for t in 0..6 {
            let f = frame(&cfg, 100 + t);
            let path = PathParams::from_bins(Complex64::new(1.0, 0.0), 2.0, 0.0, &cfg);
            let y = apply_channel(&f.grid, &dd_channel_taps(&cfg, &path), 1e-2, t);
            let mut est = perfect(&cfg, &path);
            est.alpha_hat = Complex64::default();
            errors += demodulate_ber(&y, &est, &f).unwrap() * f.data_bits.len() as f64;
            bits += f.data_bits.len() as f64;
        }
        assert!(bits >= 1e4);
        assert!((errors / bits - 0.5).abs() < 0.02);
    }

    #[test]
    fn undetected_is_an_error() {
        let cfg = OtfsConfig::default();
        let f = frame(&cfg, 0);
        let mut est = perfect(&cfg, &PathParams::from_bins(Complex64::new(1.0, 0.0), 0.0, 0.0, &cfg));
        est.detected = false;
        assert!(matches!(demodulate_ber(&f.grid, &est, &f), Err(Error::Undetected)));
    }

    fn mean_ber(db: f64, frames: u64) -> f64 {
        let cfg = OtfsConfig { data_to_pilot_db: db, ..Default::default() };
        let layout = PilotLayout::centered(&cfg);
        let snr = 10f64.powf(cfg.pilot_snr_db / 10.0);
        (0..frames)
            .map(|t| {
                let f = frame(&cfg, derive_seed(5, 0, t));
                let alpha = Complex64::from_polar(0.01, t as f64);
                let path = PathParams::from_bins(alpha, 6.0, 0.0, &cfg);
                let y = apply_channel(&f.grid, &dd_channel_taps(&cfg, &path), alpha.norm_sqr() / snr, derive_seed(5, 1, t));
                let est = estimate_channel(&y, &layout, &cfg);
                if est.detected {
                    demodulate_ber(&y, &est, &f).unwrap()
                } else {
                    0.5
                }
            })
            .sum::<f64>()
            / frames as f64
    }

    #[test]
    fn moderate_data_power_beats_both_extremes() {
        let mid = mean_ber(-10.0, 100);
        assert!(mid < mean_ber(-20.0, 100), "mid {mid}");
        assert!(mid < mean_ber(0.0, 100), "mid {mid}");
    }
}
