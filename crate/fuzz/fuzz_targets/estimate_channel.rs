//! Channel estimation on arbitrary received grids: must not panic and must
//! report finite values for finite input.

#![no_main]
use libfuzzer_sys::fuzz_target;
use num_complex::Complex64;
use swarmloc::otfs::{estimate_channel, DdGrid, OtfsConfig, PilotLayout};

fuzz_target!(|data: &[u8]| {
    let Some((&flags, rest)) = data.split_first() else { return };
    let cfg = OtfsConfig {
        m: 8,
        n: 8,
        guard_doppler: 2,
        guard_delay: 2,
        doppler_search: (flags & 3) as usize % 3,
        fractional: flags & 4 != 0,
        data_to_pilot_db: if flags & 8 != 0 { f64::NEG_INFINITY } else { -10.0 },
        ..Default::default()
    };
    let cells: Vec<Complex64> = rest
        .chunks_exact(2)
        .map(|c| Complex64::new(c[0] as i8 as f64 / 16.0, c[1] as i8 as f64 / 16.0))
        .chain(std::iter::repeat(Complex64::default()))
        .take(64)
        .collect();
    let grid = DdGrid::from_row_slice(8, 8, &cells);
    let est = estimate_channel(&grid, &PilotLayout::centered(&cfg), &cfg);
    assert!(est.delay_bins.is_finite() && est.doppler_bins.is_finite());
    assert!(est.alpha_hat.re.is_finite() && est.alpha_hat.im.is_finite());
    assert!(est.noise_std.is_finite() && est.peak.is_finite());
});
