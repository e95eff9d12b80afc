use num_complex::Complex64;
use rand::Rng;

use super::{
    apply_channel, dd_channel_taps, delay_to_range, demodulate_ber, estimate_channel, modulate_frame, ChannelEstimate,
    OtfsConfig, PathParams, PilotLayout,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::swarm::{true_range, Swarm};

/// Result of one simulated frame over a line-of-sight link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutcome {
    pub true_range_m: f64,
    /// `None` when the path was not detected or lies beyond the unambiguous range.
    pub range_m: Option<f64>,
    /// Data bit error rate; `None` when data is disabled or the link was never simulated.
    /// An undetected frame counts as guessed bits (0.5).
    pub ber: Option<f64>,
    pub estimate: Option<ChannelEstimate>,
}

/// Reference distance for the free-space gain `alpha = e^{j theta} d0 / d`.
const REFERENCE_DISTANCE_M: f64 = 1.0;

/// One frame over a single LoS path of length `distance_m`.
pub fn simulate_link(distance_m: f64, cfg: &OtfsConfig, seed: u64) -> Result<LinkOutcome> {
    cfg.validate()?;
    if !(distance_m.is_finite() && distance_m >= 0.0) {
        return Err(Error::Usage(format!("distance must be finite and >= 0, got {distance_m}")));
    }
    if distance_m >= cfg.max_unambiguous_range() {
        return Ok(LinkOutcome { true_range_m: distance_m, range_m: None, ber: None, estimate: None });
    }
    let mut rng = rng_from_seed(derive_seed(seed, 0, 0));
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let alpha = Complex64::from_polar(REFERENCE_DISTANCE_M / distance_m.max(1e-3), theta);
    let path = PathParams {
        alpha,
        tau_s: distance_m / cfg.speed_of_light,
        nu_hz: cfg.relative_velocity_mps * cfg.carrier_hz / cfg.speed_of_light,
    };

    let layout = PilotLayout::centered(cfg);
    let data_on = cfg.data_power() > 0.0;
    let bits: Vec<u8> = (0..2 * layout.data_cells(cfg.n, cfg.m).len())
        .map(|_| if data_on { rng.random_range(0..2u8) } else { 0 })
        .collect();
    let frame = modulate_frame(cfg, &bits, layout)?;
    // SNR is referenced to the received pilot, so it does not depend on distance
    let noise_power = alpha.norm_sqr() * frame.pilot.norm_sqr() / 10f64.powf(cfg.pilot_snr_db / 10.0);
    let taps = dd_channel_taps(cfg, &path);
    let received = apply_channel(&frame.grid, &taps, noise_power, derive_seed(seed, 1, 0));
    let estimate = estimate_channel(&received, &layout, cfg);

    let range_m = estimate.detected.then(|| delay_to_range(estimate.tau_hat, cfg));
    let ber = if !data_on {
        None
    } else if estimate.detected {
        Some(demodulate_ber(&received, &estimate, &frame)?)
    } else {
        Some(0.5)
    };
    Ok(LinkOutcome { true_range_m: distance_m, range_m, ber, estimate: Some(estimate) })
}

/// Ranges agents `i` and `j` with one OTFS frame. `None` is a missing link.
pub fn otfs_range_pair(swarm: &Swarm, i: usize, j: usize, cfg: &OtfsConfig, seed: u64) -> Result<Option<f64>> {
    if i == j || i >= swarm.len() || j >= swarm.len() {
        return Err(Error::Usage(format!("need two distinct agents below {}, got {i} and {j}", swarm.len())));
    }
    let d = true_range(swarm.position(i), swarm.position(j));
    Ok(simulate_link(d, cfg, seed)?.range_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swarm::{Position, Swarm};

    /// Agents 0 and 1 are `d` apart; the other two only pad the swarm to its minimum size.
    fn pair(d: f64) -> Swarm {
        let p = |x, y, z| Position::new(x, y, z);
        Swarm::new(vec![p(0.0, 0.0, 0.0), p(d, 0.0, 0.0), p(0.0, 900.0, 0.0), p(0.0, 0.0, 900.0)], [1000.0; 3]).unwrap()
    }

    #[test]
    fn hundred_metres_within_half_a_bin() {
        let cfg = OtfsConfig { data_to_pilot_db: f64::NEG_INFINITY, ..Default::default() };
        let s = pair(100.0);
        let half_bin = delay_to_range(cfg.delay_resolution(), &cfg) / 2.0;
        let ok = (0..200u64)
            .filter(|&t| matches!(otfs_range_pair(&s, 0, 1, &cfg, t).unwrap(), Some(r) if (r - 100.0).abs() <= half_bin))
            .count();
        assert!(ok >= 190, "{ok}/200");
    }

    #[test]
    fn beyond_unambiguous_range_is_missing() {
        let cfg = OtfsConfig::default();
        let s = pair(600.0);
        assert_eq!(otfs_range_pair(&s, 0, 1, &cfg, 0).unwrap(), None);
        assert!(otfs_range_pair(&s, 1, 1, &cfg, 0).is_err());
    }

    #[test]
    fn same_seed_same_outcome() {
        let cfg = OtfsConfig::default();
        assert_eq!(simulate_link(250.0, &cfg, 3).unwrap(), simulate_link(250.0, &cfg, 3).unwrap());
    }
}
