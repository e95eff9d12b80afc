//! Ground-truth swarms and the (incomplete, noisy) global range matrix.

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Smallest swarm the pipeline accepts; one 3D cluster needs four members.
pub const MIN_SWARM_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Swarm {
    positions: Vec<Position>,
    bounds: [f64; 3],
}

impl Swarm {
    pub fn new(positions: Vec<Position>, bounds: [f64; 3]) -> Result<Self> {
        if positions.len() < MIN_SWARM_SIZE {
            return Err(Error::config(
                "swarm.size",
                format!("need at least {MIN_SWARM_SIZE} agents, got {}", positions.len()),
            ));
        }
        validate_bounds(bounds)?;
        for (i, p) in positions.iter().enumerate() {
            let c = [p.x, p.y, p.z];
            if c.iter().zip(bounds).any(|(&v, b)| !v.is_finite() || v < 0.0 || v > b) {
                return Err(Error::config(
                    format!("swarm.positions[{i}]"),
                    "position outside scene bounds",
                ));
            }
        }
        Ok(Self { positions, bounds })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> Position {
        self.positions[i]
    }

    pub fn bounds(&self) -> [f64; 3] {
        self.bounds
    }

    /// Noise-free, fully observed range matrix.
    pub fn true_ranges(&self) -> RangeMatrix {
        let n = self.len();
        let mut m = RangeMatrix::unobserved(n);
        for i in 0..n {
            for j in (i + 1)..n {
                m.set_pair(i, j, Some(true_range(self.positions[i], self.positions[j])));
            }
        }
        m
    }
}

fn validate_bounds(bounds: [f64; 3]) -> Result<()> {
    if bounds.iter().any(|b| !b.is_finite() || *b <= 0.0) {
        return Err(Error::config("swarm.bounds", "scene bounds must be positive and finite"));
    }
    Ok(())
}

/// Draws `size` agents i.i.d. uniform in `[0, bounds]`.
pub fn generate_swarm(size: usize, bounds: [f64; 3], seed: u64) -> Result<Swarm> {
    if size < MIN_SWARM_SIZE {
        return Err(Error::config(
            "swarm.size",
            format!("need at least {MIN_SWARM_SIZE} agents, got {size}"),
        ));
    }
    validate_bounds(bounds)?;
    let mut rng = rng_from_seed(seed);
    let positions = (0..size)
        .map(|_| {
            Position::new(
                rng.random_range(0.0..=bounds[0]),
                rng.random_range(0.0..=bounds[1]),
                rng.random_range(0.0..=bounds[2]),
            )
        })
        .collect();
    Swarm::new(positions, bounds)
}

pub fn true_range(a: Position, b: Position) -> f64 {
    (a.to_vector() - b.to_vector()).norm()
}

/// Observed pairwise ranges. `None` marks a link that was never measured.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeMatrix {
    n: usize,
    entries: Vec<Option<f64>>,
}

impl RangeMatrix {
    /// All off-diagonal entries missing, diagonal measured zero.
    pub fn unobserved(n: usize) -> Self {
        let mut entries = vec![None; n * n];
        for i in 0..n {
            entries[i * n + i] = Some(0.0);
        }
        Self { n, entries }
    }

    /// Builds from a row-major table, checking symmetry, zero diagonal and value range.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Usage("range matrix must be square".into()));
        }
        let entries: Vec<Option<f64>> = rows.into_iter().flatten().collect();
        let m = Self { n, entries };
        for i in 0..n {
            if m.get(i, i) != Some(0.0) {
                return Err(Error::Usage(format!("diagonal entry {i} must be measured zero")));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if let Some(d) = v {
                    if !d.is_finite() || d < 0.0 {
                        return Err(Error::Usage(format!("entry ({i},{j}) = {d} is not a valid range")));
                    }
                }
                if v != m.get(j, i) {
                    return Err(Error::Usage(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.n + j]
    }

    pub fn is_measured(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_some()
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_pair(&mut self, i: usize, j: usize, value: Option<f64>) {
        assert!(i != j, "diagonal entries are fixed at zero");
        self.entries[i * self.n + j] = value;
        self.entries[j * self.n + i] = value;
    }

    /// Number of measured unordered off-diagonal pairs.
    pub fn measured_pairs(&self) -> usize {
        (0..self.n)
            .flat_map(|i| ((i + 1)..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_measured(i, j))
            .count()
    }

    /// Measured off-diagonal values, upper triangle, row-major.
    pub fn measured_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if let Some(d) = self.get(i, j) {
                    out.push(d);
                }
            }
        }
        out
    }

    /// Measured neighbours of `i` (excluding itself), ascending index.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n).filter(move |&j| j != i).filter_map(move |j| self.get(i, j).map(|d| (j, d)))
    }

    /// Connected components of the measured-link graph, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < comp.len() {
                let u = comp[head];
                head += 1;
                for (v, _) in self.neighbors(u) {
                    if label[v] == usize::MAX {
                        label[v] = id;
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Sub-matrix over `members`, in the given order.
    pub fn restrict(&self, members: &[usize]) -> RangeMatrix {
        let m = members.len();
        let mut entries = Vec::with_capacity(m * m);
        for &a in members {
            for &b in members {
                entries.push(if a == b { Some(0.0) } else { self.get(a, b) });
            }
        }
        RangeMatrix { n: m, entries }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MaskMode {
    /// Keep a uniformly random subset of pairs of size `ceil(ratio * pairs)`.
    Random,
    /// Drop every pair whose true range exceeds `threshold_m`.
    RangeThreshold { threshold_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    pub retention_ratio: f64,
    pub mask_mode: MaskMode,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            retention_ratio: 1.0,
            mask_mode: MaskMode::Random,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl MeasurementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.retention_ratio) {
            return Err(Error::config(
                "measurement.retention_ratio",
                format!("{} is outside [0, 1]", self.retention_ratio),
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::config("measurement.noise_sigma", "must be finite and >= 0"));
        }
        if let MaskMode::RangeThreshold { threshold_m } = self.mask_mode {
            if threshold_m.is_nan() || threshold_m < 0.0 {
                return Err(Error::config("measurement.mask_mode.threshold_m", "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Pairs retained by the random mask: `ceil(ratio * total)`.
pub fn retained_pair_count(ratio: f64, total: usize) -> usize {
    let raw = ratio * total as f64;
    // absorb representation error so that e.g. 0.8 * 1225 keeps 980, not 981
    ((raw - 1e-9).ceil().max(0.0) as usize).min(total)
}

pub fn observe_ranges(swarm: &Swarm, cfg: &MeasurementConfig) -> Result<RangeMatrix> {
    cfg.validate()?;
    let n = swarm.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let mut keep = vec![false; pairs.len()];
    match cfg.mask_mode {
        MaskMode::Random => {
            let count = retained_pair_count(cfg.retention_ratio, pairs.len());
            // a full seeded shuffle, keeping a prefix: for one seed the masks of
            // increasing ratios are nested, which keeps ratio sweeps comparable
            let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x6d61_736b, 0));
            let order = sample(&mut rng, pairs.len(), pairs.len());
            for idx in order.iter().take(count) {
                keep[idx] = true;
            }
        }
        MaskMode::RangeThreshold { threshold_m } => {
            for (flag, &(i, j)) in keep.iter_mut().zip(&pairs) {
                *flag = true_range(swarm.position(i), swarm.position(j)) <= threshold_m;
            }
        }
    }

    let mut noise_rng = rng_from_seed(derive_seed(cfg.seed, 0x6e6f_6973, 0));
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    let mut out = RangeMatrix::unobserved(n);
    for (&(i, j), kept) in pairs.iter().zip(keep) {
        // one draw per pair whether kept or not, so a pair's noise does not depend on the mask
        let e = noise.as_ref().map_or(0.0, |dist| dist.sample(&mut noise_rng));
        if kept {
            let d = true_range(swarm.position(i), swarm.position(j));
            out.set_pair(i, j, Some((d + e).max(0.0)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn generate_default_scene() {
        let s = generate_swarm(50, [1000.0; 3], 1).unwrap();
        assert_eq!(s.len(), 50);
        for p in s.positions() {
            for c in [p.x, p.y, p.z] {
                assert!((0.0..=1000.0).contains(&c));
            }
        }
    }

    #[test]
    fn generate_minimum_and_deterministic() {
        let a = generate_swarm(4, [1.0; 3], 7).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, generate_swarm(4, [1.0; 3], 7).unwrap());
        assert!(matches!(generate_swarm(3, [1.0; 3], 7), Err(Error::Config { .. })));
        assert!(generate_swarm(10, [1.0, 0.0, 1.0], 7).is_err());
    }

    #[test]
    fn true_range_examples() {
        let o = Position::new(0.0, 0.0, 0.0);
        assert_eq!(true_range(o, o), 0.0);
        assert_eq!(true_range(o, Position::new(3.0, 4.0, 0.0)), 5.0);
        assert_eq!(true_range(Position::new(1.0, 2.0, 3.0), Position::new(4.0, 6.0, 3.0)), 5.0);
    }

    #[test]
    fn full_retention_is_exact() {
        let s = generate_swarm(50, [1000.0; 3], 3).unwrap();
        let m = observe_ranges(&s, &MeasurementConfig::default()).unwrap();
        assert_eq!(m.measured_pairs(), 1225);
        for i in 0..50 {
            for j in 0..50 {
                assert_eq!(m.get(i, j).unwrap(), true_range(s.position(i), s.position(j)));
            }
        }
    }

    #[test]
    fn retention_counts() {
        let s = generate_swarm(50, [1000.0; 3], 3).unwrap();
        let cfg = MeasurementConfig { retention_ratio: 0.8, ..Default::default() };
        assert_eq!(observe_ranges(&s, &cfg).unwrap().measured_pairs(), 980);
        let cfg = MeasurementConfig { retention_ratio: 0.0, ..Default::default() };
        let m = observe_ranges(&s, &cfg).unwrap();
        assert_eq!(m.measured_pairs(), 0);
        assert!((0..50).all(|i| m.get(i, i) == Some(0.0)));
    }

    #[test]
    fn masks_are_nested_across_ratios() {
        let s = generate_swarm(20, [100.0; 3], 5).unwrap();
        let at = |r| observe_ranges(&s, &MeasurementConfig { retention_ratio: r, noise_sigma: 1.0, seed: 8, ..Default::default() }).unwrap();
        let (lo, hi) = (at(0.4), at(0.7));
        for i in 0..20 {
            for j in 0..20 {
                if let Some(d) = lo.get(i, j) {
                    assert_eq!(hi.get(i, j), Some(d));
                }
            }
        }
    }

    #[test]
    fn threshold_mask_drops_long_links() {
        let s = generate_swarm(30, [1000.0; 3], 5).unwrap();
        let cfg = MeasurementConfig {
            mask_mode: MaskMode::RangeThreshold { threshold_m: 500.0 },
            ..Default::default()
        };
        let m = observe_ranges(&s, &cfg).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let d = true_range(s.position(i), s.position(j));
                assert_eq!(m.is_measured(i, j), d <= 500.0);
            }
        }
    }

    #[test]
    fn invalid_config_names_field() {
        let s = generate_swarm(10, [10.0; 3], 5).unwrap();
        let cfg = MeasurementConfig { retention_ratio: 1.5, ..Default::default() };
        match observe_ranges(&s, &cfg) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "measurement.retention_ratio"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn from_rows_rejects_asymmetry() {
        let rows = vec![vec![Some(0.0), Some(1.0)], vec![None, Some(0.0)]];
        assert!(RangeMatrix::from_rows(rows).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn observed_matrix_is_symmetric_with_exact_count(
            size in 4usize..=100,
            ratio_idx in 0usize..5,
            sigma in 0.0f64..5.0,
            seed in any::<u64>(),
        ) {
            let ratio = [0.0, 0.25, 0.5, 0.75, 1.0][ratio_idx];
            let s = generate_swarm(size, [100.0; 3], seed).unwrap();
            let cfg = MeasurementConfig { retention_ratio: ratio, noise_sigma: sigma, seed, ..Default::default() };
            let m = observe_ranges(&s, &cfg).unwrap();
            let total = size * (size - 1) / 2;
            prop_assert_eq!(m.measured_pairs(), (ratio * total as f64).ceil() as usize);
            for i in 0..size {
                prop_assert_eq!(m.get(i, i), Some(0.0));
                for j in 0..size {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    if let Some(d) = m.get(i, j) {
                        prop_assert!(d >= 0.0 && d.is_finite());
                    }
                }
            }
            prop_assert_eq!(&m, &observe_ranges(&s, &cfg).unwrap());
        }
    }
}
