use std::f64::consts::PI;

use num_complex::Complex64;

use super::{dd_channel_taps, DdGrid, OtfsConfig, PathParams, PilotLayout};

/// Single-path channel estimate from the embedded pilot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelEstimate {
    pub alpha_hat: Complex64,
    pub tau_hat: f64,
    pub nu_hat: f64,
    pub detected: bool,
    /// `l_tau` in bins.
    pub delay_bins: f64,
    /// `k_nu` in bins.
    pub doppler_bins: f64,
    /// RMS magnitude of the noise-only cells.
    pub noise_std: f64,
    pub peak: f64,
}

/// Distance in bins from the peak toward its larger neighbour, from the ratio
/// of two adjacent Dirichlet-kernel magnitudes. Exact for a noiseless path.
pub fn dirichlet_offset(peak: f64, neighbour: f64, len: usize) -> f64 {
    if peak <= 0.0 {
        return 0.0;
    }
    let r = (neighbour / peak).clamp(0.0, 1.0);
    if r < 1e-12 {
        return 0.0;
    }
    let u = PI / len as f64;
    (r * u.sin() / (1.0 + r * u.cos())).atan() / u
}

fn wrap(base: usize, off: isize, len: usize) -> usize {
    (base as isize + off).rem_euclid(len as isize) as usize
}

/// Embedded-pilot peak search along the full delay axis (and `doppler_search`
/// rows either side of the pilot row), with a 3-sigma detection threshold.
///
/// The noise level is measured on cells that were empty at the transmitter,
/// shifted along with the detected peak, so they hold noise plus leakage.
pub fn estimate_channel(received: &DdGrid, layout: &PilotLayout, cfg: &OtfsConfig) -> ChannelEstimate {
    let (n, m) = (cfg.n, cfg.m);
    assert_eq!(received.shape(), (n, m), "grid shape does not match the configuration");
    let span = cfg.doppler_search as isize;
    let mut best = (0isize, 0isize, -1.0f64);
    for dk in -span..=span {
        let k = wrap(layout.k_pilot, dk, n);
        for dl in 0..m as isize {
            let mag = received[(k, wrap(layout.l_pilot, dl, m))].norm();
            if mag > best.2 {
                best = (dk, dl, mag);
            }
        }
    }
    let (dk, dl, peak) = best;
    let kc = wrap(layout.k_pilot, dk, n);
    let lc = wrap(layout.l_pilot, dl, m);

    // Cells the transmitter left empty, re-centred on the peak. With data on,
    // only the guard interior qualifies: fractional delay smears data into the
    // guard's outer ring. The peak's own row and column carry its leakage.
    let (half_k, half_l) = if cfg.data_power() > 0.0 {
        (layout.g_k.saturating_sub(1) as isize, layout.g_l.saturating_sub(1) as isize)
    } else {
        (n as isize / 2, m as isize / 2)
    };
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut seen = vec![false; n * m];
    for a in -half_k..=half_k {
        for b in -half_l..=half_l {
            let (k, l) = (wrap(kc, a, n), wrap(lc, b, m));
            if k == kc || l == lc || std::mem::replace(&mut seen[k * m + l], true) {
                continue;
            }
            acc += received[(k, l)].norm_sqr();
            count += 1;
        }
    }
    let noise_std = if count > 0 { (acc / count as f64).sqrt() } else { 0.0 };
    let detected = peak > 3.0 * noise_std && peak > 0.0;

    let mut l_frac = 0.0;
    let mut k_frac = 0.0;
    if cfg.fractional {
        let left = received[(kc, wrap(lc, -1, m))].norm();
        let right = received[(kc, wrap(lc, 1, m))].norm();
        l_frac = if right >= left {
            dirichlet_offset(peak, right, m)
        } else {
            -dirichlet_offset(peak, left, m)
        };
        if cfg.doppler_search > 0 {
            let up = received[(wrap(kc, -1, n), lc)].norm();
            let down = received[(wrap(kc, 1, n), lc)].norm();
            k_frac = if down >= up {
                dirichlet_offset(peak, down, n)
            } else {
                -dirichlet_offset(peak, up, n)
            };
        }
    }
    // a path just below bin 0 cannot be told apart from one near the end of the
    // frame; ranges are non-negative, so clamp
    let delay_bins = (dl as f64 + l_frac).max(0.0);
    let doppler_bins = dk as f64 + k_frac;

    let unit = PathParams::from_bins(Complex64::new(1.0, 0.0), delay_bins, doppler_bins, cfg);
    let response = dd_channel_taps(cfg, &unit)[(wrap(0, dk, n), dl as usize)];
    let alpha_hat = if response.norm() > 0.0 {
        received[(kc, lc)] / (response * super::frame::PILOT)
    } else {
        Complex64::default()
    };

    ChannelEstimate {
        alpha_hat,
        tau_hat: delay_bins / (m as f64 * cfg.delta_f_hz),
        nu_hat: doppler_bins * cfg.delta_f_hz / n as f64,
        detected,
        delay_bins,
        doppler_bins,
        noise_std,
        peak,
    }
}
