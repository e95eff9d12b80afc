//! OTFS delay-Doppler link simulation used as a ranging front end.
//!
//! Grids are `N x M` matrices: row `k` is the Doppler index, column `l` the
//! delay index. A single embedded pilot sits at the grid centre inside a
//! rectangular zero guard; the rest of the frame carries Gray-mapped QPSK.

mod channel;
mod estimate;
mod frame;
mod grid;
mod link;
mod receiver;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use channel::{apply_channel, dd_channel_taps};
pub use estimate::{dirichlet_offset, estimate_channel, ChannelEstimate};
pub use frame::{modulate_frame, qpsk_demap, qpsk_map, DdFrame};
pub use grid::{circular_convolve, DdGrid, Fft2};
pub use link::{otfs_range_pair, simulate_link, LinkOutcome};
pub use receiver::{demodulate_ber, equalize};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OtfsConfig {
    /// Delay bins.
    pub m: usize,
    /// Doppler bins.
    pub n: usize,
    pub delta_f_hz: f64,
    pub carrier_hz: f64,
    /// Pilot power over noise power, measured at the receiver.
    pub pilot_snr_db: f64,
    /// Average data symbol power over pilot power; `-inf` disables data.
    pub data_to_pilot_db: f64,
    pub speed_of_light: f64,
    /// Guard half-width along Doppler.
    pub guard_doppler: usize,
    /// Guard half-width along delay.
    pub guard_delay: usize,
    /// Doppler offsets searched on each side of the pilot row. Zero assumes a static link.
    pub doppler_search: usize,
    /// Refine the integer peak with the two-bin Dirichlet ratio.
    pub fractional: bool,
    /// Radial velocity between the two agents, m/s.
    pub relative_velocity_mps: f64,
}

impl Default for OtfsConfig {
    fn default() -> Self {
        Self {
            m: 32,
            n: 32,
            delta_f_hz: 552.3e3,
            carrier_hz: 5.1e9,
            pilot_snr_db: 25.0,
            data_to_pilot_db: -10.0,
            speed_of_light: SPEED_OF_LIGHT,
            guard_doppler: 4,
            guard_delay: 4,
            doppler_search: 0,
            fractional: true,
            relative_velocity_mps: 0.0,
        }
    }
}

impl OtfsConfig {
    pub fn validate(&self) -> Result<()> {
        let pow2 = |v: usize| v >= 8 && v.is_power_of_two();
        if !pow2(self.m) {
            return Err(Error::config("otfs.m", "must be a power of two >= 8"));
        }
        if !pow2(self.n) {
            return Err(Error::config("otfs.n", "must be a power of two >= 8"));
        }
        if !(self.delta_f_hz.is_finite() && self.delta_f_hz > 0.0) {
            return Err(Error::config("otfs.delta_f_hz", "must be positive"));
        }
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return Err(Error::config("otfs.carrier_hz", "must be positive"));
        }
        if !self.pilot_snr_db.is_finite() {
            return Err(Error::config("otfs.pilot_snr_db", "must be finite"));
        }
        if self.data_to_pilot_db.is_nan() || self.data_to_pilot_db == f64::INFINITY {
            return Err(Error::config("otfs.data_to_pilot_db", "must be finite or -inf"));
        }
        if !(self.speed_of_light.is_finite() && self.speed_of_light > 0.0) {
            return Err(Error::config("otfs.speed_of_light", "must be positive"));
        }
        if 2 * self.guard_doppler + 1 > self.n {
            return Err(Error::config("otfs.guard_doppler", "guard does not fit the Doppler axis"));
        }
        if 2 * self.guard_delay + 1 > self.m {
            return Err(Error::config("otfs.guard_delay", "guard does not fit the delay axis"));
        }
        if self.doppler_search > self.guard_doppler {
            return Err(Error::config("otfs.doppler_search", "must not exceed guard_doppler"));
        }
        if !self.relative_velocity_mps.is_finite() {
            return Err(Error::config("otfs.relative_velocity_mps", "must be finite"));
        }
        Ok(())
    }

    /// Width of one delay bin in seconds.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / (self.m as f64 * self.delta_f_hz)
    }

    /// Longest range that does not alias: `c T` with `T = 1 / delta_f`.
    pub fn max_unambiguous_range(&self) -> f64 {
        self.speed_of_light / self.delta_f_hz
    }

    pub fn data_power(&self) -> f64 {
        10f64.powf(self.data_to_pilot_db / 10.0)
    }
}

/// Pilot position and guard half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PilotLayout {
    pub k_pilot: usize,
    pub l_pilot: usize,
    pub g_k: usize,
    pub g_l: usize,
}

/// Signed circular offset of `a` from `b` on an axis of length `len`, in `(-len/2, len/2]`.
fn circ_offset(a: usize, b: usize, len: usize) -> isize {
    let d = (a + len - b) % len;
    if d > len / 2 {
        d as isize - len as isize
    } else {
        d as isize
    }
}

impl PilotLayout {
    pub fn centered(cfg: &OtfsConfig) -> Self {
        Self {
            k_pilot: cfg.n / 2,
            l_pilot: cfg.m / 2,
            g_k: cfg.guard_doppler,
            g_l: cfg.guard_delay,
        }
    }

    pub fn validate(&self, cfg: &OtfsConfig) -> Result<()> {
        if self.k_pilot >= cfg.n || self.l_pilot >= cfg.m {
            return Err(Error::Usage("pilot outside the grid".into()));
        }
        if 2 * self.g_k + 1 > cfg.n || 2 * self.g_l + 1 > cfg.m {
            return Err(Error::Usage("guard region does not fit the grid".into()));
        }
        Ok(())
    }

    /// Whether `(k, l)` lies in the guard square (pilot included).
    pub fn is_guard(&self, k: usize, l: usize, n: usize, m: usize) -> bool {
        circ_offset(k, self.k_pilot, n).unsigned_abs() <= self.g_k
            && circ_offset(l, self.l_pilot, m).unsigned_abs() <= self.g_l
    }

    /// Data-bearing cells in row-major order.
    pub fn data_cells(&self, n: usize, m: usize) -> Vec<(usize, usize)> {
        (0..n)
            .flat_map(|k| (0..m).map(move |l| (k, l)))
            .filter(|&(k, l)| !self.is_guard(k, l, n, m))
            .collect()
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub alpha: Complex64,
    pub tau_s: f64,
    pub nu_hz: f64,
}

impl PathParams {
    /// `l_tau = tau M delta_f`, possibly fractional.
    pub fn delay_bins(&self, cfg: &OtfsConfig) -> f64 {
        self.tau_s * cfg.m as f64 * cfg.delta_f_hz
    }

    /// `k_nu = nu N / delta_f`, possibly fractional.
    pub fn doppler_bins(&self, cfg: &OtfsConfig) -> f64 {
        self.nu_hz * cfg.n as f64 / cfg.delta_f_hz
    }

    /// Path with the given bin positions.
    pub fn from_bins(alpha: Complex64, delay_bins: f64, doppler_bins: f64, cfg: &OtfsConfig) -> Self {
        Self {
            alpha,
            tau_s: delay_bins / (cfg.m as f64 * cfg.delta_f_hz),
            nu_hz: doppler_bins * cfg.delta_f_hz / cfg.n as f64,
        }
    }
}

/// `d = c tau`.
pub fn delay_to_range(tau_s: f64, cfg: &OtfsConfig) -> f64 {
    cfg.speed_of_light * tau_s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_cell_count() {
        let cfg = OtfsConfig::default();
        let layout = PilotLayout::centered(&cfg);
        assert_eq!(layout.data_cells(32, 32).len(), 1024 - 81);
        assert!(layout.is_guard(16, 16, 32, 32));
        assert!(layout.is_guard(12, 20, 32, 32));
        assert!(!layout.is_guard(11, 16, 32, 32));
    }

    #[test]
    fn guard_wraps_around_edges() {
        let cfg = OtfsConfig::default();
        let layout = PilotLayout { k_pilot: 0, l_pilot: 31, g_k: 4, g_l: 4 };
        layout.validate(&cfg).unwrap();
        assert!(layout.is_guard(30, 2, 32, 32));
        assert_eq!(layout.data_cells(32, 32).len(), 943);
    }

    #[test]
    fn range_conversions() {
        let cfg = OtfsConfig::default();
        assert_eq!(delay_to_range(0.0, &cfg), 0.0);
        assert!((delay_to_range(1e-6, &cfg) - 299.792458).abs() < 1e-9);
        let bin = cfg.delay_resolution();
        assert!((bin - 56.58e-9).abs() < 0.01e-9);
        assert!((delay_to_range(bin, &cfg) - 16.96).abs() < 0.01);
        assert!((cfg.max_unambiguous_range() - 542.8).abs() < 0.1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = OtfsConfig::default();
        cfg.validate().unwrap();
        cfg.data_to_pilot_db = f64::NEG_INFINITY;
        cfg.validate().unwrap();
        cfg.m = 24;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "otfs.m"));
    }
}
