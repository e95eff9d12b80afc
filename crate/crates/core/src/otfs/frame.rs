use num_complex::Complex64;

use super::{DdGrid, OtfsConfig, PilotLayout};
use crate::error::{Error, Result};

/// Pilot symbol; the receiver assumes this value.
pub(crate) const PILOT: Complex64 = Complex64::new(1.0, 0.0);

/// Transmitted frame and the bits it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct DdFrame {
    pub grid: DdGrid,
    pub layout: PilotLayout,
    pub data_bits: Vec<u8>,
    pub pilot: Complex64,
    /// Average power of a data cell.
    pub data_power: f64,
}

/// Gray-mapped unit-power QPSK: bit 0 picks the sign of the real part, bit 1 the imaginary part.
pub fn qpsk_map(b0: u8, b1: u8) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(if b0 == 0 { s } else { -s }, if b1 == 0 { s } else { -s })
}

pub fn qpsk_demap(z: Complex64) -> (u8, u8) {
    (u8::from(z.re < 0.0), u8::from(z.im < 0.0))
}

/// Places a unit pilot, zero guard, and QPSK data on the grid.
pub fn modulate_frame(cfg: &OtfsConfig, bits: &[u8], layout: PilotLayout) -> Result<DdFrame> {
    cfg.validate()?;
    layout.validate(cfg)?;
    let cells = layout.data_cells(cfg.n, cfg.m);
    if bits.len() != 2 * cells.len() {
        return Err(Error::Usage(format!(
            "frame carries {} bits, got {}",
            2 * cells.len(),
            bits.len()
        )));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::Usage(format!("bit value {b} is not 0 or 1")));
    }
    let pilot = PILOT;
    let data_power = cfg.data_power();
    let amp = data_power.sqrt();
    let mut grid = DdGrid::zeros(cfg.n, cfg.m);
    grid[(layout.k_pilot, layout.l_pilot)] = pilot;
    for (&(k, l), pair) in cells.iter().zip(bits.chunks_exact(2)) {
        grid[(k, l)] = qpsk_map(pair[0], pair[1]) * amp;
    }
    Ok(DdFrame {
        grid,
        layout,
        data_bits: bits.to_vec(),
        pilot,
        data_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn bits(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.random_range(0..2u8)).collect()
    }

    #[test]
    fn layout_and_bit_budget() {
        let cfg = OtfsConfig::default();
        let layout = PilotLayout::centered(&cfg);
        assert!(modulate_frame(&cfg, &bits(1884, 0), layout).is_err());
        let f = modulate_frame(&cfg, &bits(1886, 0), layout).unwrap();
        assert_eq!(f.grid[(16, 16)], Complex64::new(1.0, 0.0));
        for k in 12..=20 {
            for l in 12..=20 {
                if (k, l) != (16, 16) {
                    assert_eq!(f.grid[(k, l)], Complex64::default());
                }
            }
        }
    }

    #[test]
    fn data_power_follows_ratio() {
        let layout = PilotLayout::centered(&OtfsConfig::default());
        for db in [0.0, -10.0, -20.0] {
            let cfg = OtfsConfig { data_to_pilot_db: db, ..Default::default() };
            let f = modulate_frame(&cfg, &bits(1886, 1), layout).unwrap();
            let cells = layout.data_cells(32, 32);
            let mean: f64 = cells.iter().map(|&c| f.grid[c].norm_sqr()).sum::<f64>() / cells.len() as f64;
            assert!((mean - 10f64.powf(db / 10.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn data_disabled_leaves_only_pilot() {
        let cfg = OtfsConfig { data_to_pilot_db: f64::NEG_INFINITY, ..Default::default() };
        let f = modulate_frame(&cfg, &bits(1886, 2), PilotLayout::centered(&cfg)).unwrap();
        let nonzero = f.grid.iter().filter(|v| v.norm() > 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn qpsk_round_trip_is_gray() {
        for b0 in 0..2u8 {
            for b1 in 0..2u8 {
                let z = qpsk_map(b0, b1);
                assert!((z.norm() - 1.0).abs() < 1e-15);
                assert_eq!(qpsk_demap(z), (b0, b1));
                // a quarter-turn flips exactly one bit
                let (r0, r1) = qpsk_demap(z * Complex64::i());
                assert_eq!((r0 ^ b0) + (r1 ^ b1), 1);
            }
        }
    }
}
