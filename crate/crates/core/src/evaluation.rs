//! Ground-truth alignment, RMSE, and the Monte-Carlo sweeps that compare the
//! proposed pipeline against the MDS-MAP baselines.
//!
//! Every trial derives its swarm, mask, anchor and method seeds from
//! `(base_seed, trial)` only, so the same trial index sees the same swarm and
//! mask stream at every grid point and for every method (common random numbers).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{mds_map, mds_map_p};
use crate::error::{Error, Result};
use crate::merging::{fit_alignment, mirror, GlobalMap};
use crate::otfs::{delay_to_range, simulate_link, OtfsConfig};
use crate::pipeline::{proposed, proposed_fix, PipelineConfig};
use crate::rng::{derive_seed, rng_from_seed};
use crate::swarm::{generate_swarm, observe_ranges, true_range, MeasurementConfig, RangeMatrix, Swarm};

const STREAM_SWARM: u64 = 0x7377;
const STREAM_MASK: u64 = 0x6d6b;
const STREAM_ANCHOR: u64 = 0x616e;
const STREAM_METHOD: u64 = 0x6d65;
const STREAM_LINK: u64 = 0x6c6b;

/// Candidate quadruples drawn when picking the alignment anchors.
pub const ANCHOR_CANDIDATES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Rotation and translation (plus the reflection that ranges cannot see).
    #[default]
    Rigid,
    /// Adds a global scale; diagnostics only.
    Similarity,
}

fn tetra_volume(p: [Vector3<f64>; 4]) -> f64 {
    ((p[1] - p[0]).cross(&(p[2] - p[0])).dot(&(p[3] - p[0])) / 6.0).abs()
}

/// The most voluminous of [`ANCHOR_CANDIDATES`] random quadruples (first one on ties).
pub fn choose_anchors(truth: &Swarm, seed: u64) -> Result<[usize; 4]> {
    let n = truth.len();
    if n < 4 {
        return Err(Error::Usage(format!("need at least 4 agents for anchors, got {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut best = ([0, 1, 2, 3], -1.0);
    for _ in 0..ANCHOR_CANDIDATES {
        let idx = sample(&mut rng, n, 4).into_vec();
        let q = [idx[0], idx[1], idx[2], idx[3]];
        let vol = tetra_volume(q.map(|i| truth.position(i).to_vector()));
        if vol > best.1 {
            best = (q, vol);
        }
    }
    Ok(best.0)
}

/// Maps the whole estimate onto the truth through a fit on the anchors only.
///
/// Range-only maps carry no handedness, so the fit also tries the mirror image
/// of the estimate and keeps whichever lands closer on the anchors.
pub fn align_to_truth(est: &GlobalMap, truth: &Swarm, anchors: [usize; 4], mode: AlignMode) -> Result<Vec<Vector3<f64>>> {
    let n = truth.len();
    if est.coords.len() != n {
        return Err(Error::Usage(format!("estimate has {} agents, truth {n}", est.coords.len())));
    }
    let mut sorted = anchors;
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) || sorted[3] >= n {
        return Err(Error::Usage(format!("anchors must be 4 distinct agents below {n}, got {anchors:?}")));
    }
    let target: Vec<Vector3<f64>> = anchors.iter().map(|&a| truth.position(a).to_vector()).collect();
    let scale = target.iter().map(|p| (p - target[0]).norm()).fold(0.0, f64::max);
    let vol = tetra_volume([target[0], target[1], target[2], target[3]]);
    if scale == 0.0 || vol <= 1e-9 * scale.powi(3) {
        return Err(Error::DegenerateAlignment(format!("anchors {anchors:?} are coplanar")));
    }
    let source: Vec<Vector3<f64>> = anchors.iter().map(|&a| est.coords[a]).collect();
    let fit = fit_alignment(&source, &target)?;
    let oriented = |p: &Vector3<f64>| if fit.mirrored { mirror(p) } else { *p };

    let s = match mode {
        AlignMode::Rigid => 1.0,
        AlignMode::Similarity => {
            let src: Vec<Vector3<f64>> = source.iter().map(oriented).collect();
            let sc = src.iter().sum::<Vector3<f64>>() / 4.0;
            let tc = target.iter().sum::<Vector3<f64>>() / 4.0;
            let r = fit.transform.rotation;
            let num: f64 = src.iter().zip(&target).map(|(p, q)| (r * (p - sc)).dot(&(q - tc))).sum();
            let den: f64 = src.iter().map(|p| (p - sc).norm_squared()).sum();
            if den > 0.0 { num / den } else { 1.0 }
        }
    };
    if s == 1.0 {
        return Ok(est.coords.iter().map(|p| fit.apply(p)).collect());
    }
    // scale about the anchor centroid, then reuse the rotation
    let src: Vec<Vector3<f64>> = source.iter().map(oriented).collect();
    let sc = src.iter().sum::<Vector3<f64>>() / 4.0;
    let tc = target.iter().sum::<Vector3<f64>>() / 4.0;
    let r = fit.transform.rotation;
    Ok(est.coords.iter().map(|p| r * ((oriented(p) - sc) * s) + tc).collect())
}

/// `sqrt(mean |p_i - p̂_i|^2)`.
pub fn rmse(aligned: &[Vector3<f64>], truth: &Swarm) -> Result<f64> {
    if aligned.len() != truth.len() {
        return Err(Error::Usage(format!("{} estimates for {} agents", aligned.len(), truth.len())));
    }
    let sum: f64 = aligned
        .iter()
        .zip(truth.positions())
        .map(|(p, t)| (p - t.to_vector()).norm_squared())
        .sum();
    Ok((sum / truth.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Proposed,
    ProposedFix,
    MdsMap,
    MdsMapP,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Proposed, Method::ProposedFix, Method::MdsMap, Method::MdsMapP];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::ProposedFix => "proposed-fix",
            Method::MdsMap => "mds-map",
            Method::MdsMapP => "mds-map-p",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method `{s}` (expected one of proposed, proposed-fix, mds-map, mds-map-p)")))
    }
}

/// Knobs shared by every method run.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSettings {
    pub pipeline: PipelineConfig,
    /// Cluster count for proposed-fix.
    pub k_fixed: usize,
    /// Patch radius in hops for MDS-MAP(P).
    pub patch_hops: usize,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self { pipeline: PipelineConfig::default(), k_fixed: 6, patch_hops: 2 }
    }
}

pub fn run_method(method: Method, ranges: &RangeMatrix, settings: &MethodSettings, seed: u64) -> Result<GlobalMap> {
    match method {
        Method::Proposed => proposed(ranges, &settings.pipeline, seed),
        Method::ProposedFix => proposed_fix(ranges, settings.k_fixed, &settings.pipeline, seed),
        Method::MdsMap => mds_map(ranges),
        Method::MdsMapP => mds_map_p(ranges, settings.patch_hops),
    }
}

/// Row label of the ISAC sweep's per-frame ranging error.
pub const OTFS_RANGING: &str = "otfs-ranging";
pub const STATUS_OK: &str = "ok";

/// One (method, parameter, trial) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub param_name: String,
    pub param_value: f64,
    pub seed: u64,
    pub rmse_m: Option<f64>,
    pub ber: Option<f64>,
    pub runtime_s: Option<f64>,
    /// `ok` or the error tag of a failed run.
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Aggregate of the successful runs at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean_rmse: Option<f64>,
    pub std_rmse: Option<f64>,
    pub mean_ber: Option<f64>,
    pub ok: usize,
    pub failed: usize,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    (Some(mean), Some(var.sqrt()))
}

impl SweepResult {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Grid points in first-seen order.
    pub fn series(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|(m, p)| *m == r.method && *p == r.param_name) {
                out.push((r.method.clone(), r.param_name.clone()));
            }
        }
        out
    }

    /// Distinct parameter values of one series, ascending.
    pub fn param_values(&self, method: &str, param_name: &str) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.param_name == param_name)
            .map(|r| r.param_value)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn summary(&self, method: &str, param_name: &str, param_value: f64) -> Summary {
        let rows: Vec<&SweepRow> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.param_name == param_name && r.param_value == param_value)
            .collect();
        let rmses: Vec<f64> = rows.iter().filter_map(|r| r.rmse_m).collect();
        let bers: Vec<f64> = rows.iter().filter_map(|r| r.ber).collect();
        let (mean_rmse, std_rmse) = mean_std(&rmses);
        Summary {
            mean_rmse,
            std_rmse,
            mean_ber: mean_std(&bers).0,
            ok: rows.iter().filter(|r| r.status == STATUS_OK).count(),
            failed: rows.iter().filter(|r| r.status != STATUS_OK).count(),
        }
    }
}

/// What every localization sweep shares.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    pub settings: MethodSettings,
    pub swarm_size: usize,
    pub bounds: [f64; 3],
    pub measurement: MeasurementConfig,
    pub trials: usize,
    pub base_seed: u64,
    /// Wall-clock time per run; off by default because it breaks byte-identical output.
    pub record_runtime: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            settings: MethodSettings::default(),
            swarm_size: 50,
            bounds: [1000.0; 3],
            measurement: MeasurementConfig::default(),
            trials: 20,
            base_seed: 0,
            record_runtime: false,
        }
    }
}

/// Seeds of one trial, identical across grid points and methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeeds {
    pub swarm: u64,
    pub mask: u64,
    pub anchors: u64,
    pub method: u64,
}

impl TrialSeeds {
    pub fn new(base: u64, trial: usize) -> Self {
        let t = trial as u64;
        Self {
            swarm: derive_seed(base, STREAM_SWARM, t),
            mask: derive_seed(base, STREAM_MASK, t),
            anchors: derive_seed(base, STREAM_ANCHOR, t),
            method: derive_seed(base, STREAM_METHOD, t),
        }
    }
}

/// Runs one method on one range matrix and scores it.
fn score(method: Method, ranges: &RangeMatrix, truth: &Swarm, anchors: [usize; 4], spec: &SweepSpec, seed: u64) -> (Option<f64>, Option<f64>, String) {
    let start = Instant::now();
    let outcome = run_method(method, ranges, &spec.settings, seed)
        .and_then(|map| align_to_truth(&map, truth, anchors, AlignMode::Rigid))
        .and_then(|aligned| rmse(&aligned, truth));
    let runtime = spec.record_runtime.then(|| start.elapsed().as_secs_f64());
    match outcome {
        Ok(e) => (Some(e), runtime, STATUS_OK.to_string()),
        Err(e) => (None, runtime, e.tag().to_string()),
    }
}

fn trial_rows(spec: &SweepSpec, size: usize, ratio: f64, param_name: &str, param_value: f64, trial: usize) -> Vec<SweepRow> {
    let seeds = TrialSeeds::new(spec.base_seed, trial);
    let failed_all = |tag: &str| {
        spec.methods
            .iter()
            .map(|m| SweepRow {
                method: m.name().into(),
                param_name: param_name.into(),
                param_value,
                seed: seeds.swarm,
                rmse_m: None,
                ber: None,
                runtime_s: None,
                status: tag.into(),
            })
            .collect()
    };
    let setup = generate_swarm(size, spec.bounds, seeds.swarm).and_then(|truth| {
        let mcfg = MeasurementConfig { retention_ratio: ratio, seed: seeds.mask, ..spec.measurement };
        let ranges = observe_ranges(&truth, &mcfg)?;
        let anchors = choose_anchors(&truth, seeds.anchors)?;
        Ok((truth, ranges, anchors))
    });
    let (truth, ranges, anchors) = match setup {
        Ok(s) => s,
        Err(e) => return failed_all(e.tag()),
    };
    spec.methods
        .iter()
        .map(|&m| {
            let (rmse_m, runtime_s, status) = score(m, &ranges, &truth, anchors, spec, seeds.method);
            SweepRow {
                method: m.name().into(),
                param_name: param_name.into(),
                param_value,
                seed: seeds.swarm,
                rmse_m,
                ber: None,
                runtime_s,
                status,
            }
        })
        .collect()
}

/// Grid point: (swarm size, retention ratio, param name, param value).
type GridPoint = (usize, f64, String, f64);

fn run_grid(spec: &SweepSpec, grid: &[GridPoint]) -> SweepResult {
    let tasks: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..spec.trials).map(move |t| (g, t))).collect();
    // rayon's collect keeps task order, so the output never depends on scheduling
    let rows = tasks
        .par_iter()
        .flat_map_iter(|&(g, t)| {
            let (size, ratio, name, value) = &grid[g];
            trial_rows(spec, *size, *ratio, name, *value, t)
        })
        .collect();
    SweepResult { rows }
}

fn check_ratio(field: &str, r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::Config { field: field.into(), reason: format!("{r} is outside [0, 1]") })
    }
}

/// Localization error versus retention ratio at a fixed swarm size.
pub fn sweep_retention(spec: &SweepSpec, ratios: &[f64]) -> Result<SweepResult> {
    for r in ratios {
        check_ratio("sweep.retention_ratios", *r)?;
    }
    let grid: Vec<GridPoint> = ratios.iter().map(|&r| (spec.swarm_size, r, "retention".to_string(), r)).collect();
    Ok(run_grid(spec, &grid))
}

/// Localization error versus swarm size, one series per retention ratio
/// (`param_name` is `swarm_size@<ratio>`).
pub fn sweep_swarm_size(spec: &SweepSpec, sizes: &[usize], ratios: &[f64]) -> Result<SweepResult> {
    for r in ratios {
        check_ratio("sweep.size_ratios", *r)?;
    }
    let mut grid = Vec::new();
    for &r in ratios {
        for &s in sizes {
            grid.push((s, r, format!("swarm_size@{r}"), s as f64));
        }
    }
    Ok(run_grid(spec, &grid))
}

/// Swarm used by the ISAC sweep. Kept inside the OTFS unambiguous range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsacScene {
    pub swarm_size: usize,
    pub bounds: [f64; 3],
}

impl Default for IsacScene {
    fn default() -> Self {
        Self { swarm_size: 20, bounds: [300.0; 3] }
    }
}

/// Every pair of a swarm ranged by one OTFS frame each.
#[derive(Debug, Clone)]
pub struct OtfsSurvey {
    pub ranges: RangeMatrix,
    /// Mean BER over all simulated frames.
    pub mean_ber: Option<f64>,
    /// RMS error of the argmax delay over all simulated frames, detected or not.
    pub ranging_rmse: Option<f64>,
    pub frames: usize,
}

pub fn otfs_survey(truth: &Swarm, cfg: &OtfsConfig, seed: u64) -> Result<OtfsSurvey> {
    let n = truth.len();
    let mut ranges = RangeMatrix::unobserved(n);
    let (mut ber_sum, mut ber_n, mut se, mut se_n, mut frames) = (0.0, 0usize, 0.0, 0usize, 0usize);
    let mut pair = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = true_range(truth.position(i), truth.position(j));
            let out = simulate_link(d, cfg, derive_seed(seed, STREAM_LINK, pair))?;
            pair += 1;
            ranges.set_pair(i, j, out.range_m);
            if let Some(est) = out.estimate {
                frames += 1;
                se += (delay_to_range(est.tau_hat, cfg) - d).powi(2);
                se_n += 1;
            }
            if let Some(b) = out.ber {
                ber_sum += b;
                ber_n += 1;
            }
        }
    }
    Ok(OtfsSurvey {
        ranges,
        mean_ber: (ber_n > 0).then(|| ber_sum / ber_n as f64),
        ranging_rmse: (se_n > 0).then(|| (se / se_n as f64).sqrt()),
        frames,
    })
}

/// BER and error versus data-to-pilot power. Each trial yields one row for the
/// proposed localizer on OTFS-measured ranges and one [`OTFS_RANGING`] row.
pub fn sweep_isac(spec: &SweepSpec, scene: IsacScene, power_ratios_db: &[f64], otfs: &OtfsConfig) -> Result<SweepResult> {
    otfs.validate()?;
    let tasks: Vec<(usize, usize)> = (0..power_ratios_db.len()).flat_map(|g| (0..spec.trials).map(move |t| (g, t))).collect();
    let rows: Vec<Vec<SweepRow>> = tasks
        .par_iter()
        .map(|&(g, t)| {
            let db = power_ratios_db[g];
            let seeds = TrialSeeds::new(spec.base_seed, t);
            let cfg = OtfsConfig { data_to_pilot_db: db, ..otfs.clone() };
            let row = |method: &str, rmse_m, ber, runtime_s, status: &str| SweepRow {
                method: method.into(),
                param_name: "data_to_pilot_db".into(),
                param_value: db,
                seed: seeds.swarm,
                rmse_m,
                ber,
                runtime_s,
                status: status.into(),
            };
            let start = Instant::now();
            let setup = generate_swarm(scene.swarm_size, scene.bounds, seeds.swarm).and_then(|truth| {
                let survey = otfs_survey(&truth, &cfg, seeds.mask)?;
                let anchors = choose_anchors(&truth, seeds.anchors)?;
                Ok((truth, survey, anchors))
            });
            let (truth, survey, anchors) = match setup {
                Ok(s) => s,
                Err(e) => return vec![row(Method::Proposed.name(), None, None, None, e.tag()), row(OTFS_RANGING, None, None, None, e.tag())],
            };
            let ranging_time = spec.record_runtime.then(|| start.elapsed().as_secs_f64());
            let (rmse_m, runtime_s, status) = score(Method::Proposed, &survey.ranges, &truth, anchors, spec, seeds.method);
            vec![
                row(Method::Proposed.name(), rmse_m, survey.mean_ber, runtime_s, &status),
                row(OTFS_RANGING, survey.ranging_rmse, survey.mean_ber, ranging_time, STATUS_OK),
            ]
        })
        .collect();
    Ok(SweepResult { rows: rows.into_iter().flatten().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merging::RigidTransform;
    use crate::swarm::Position;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    fn rotated(s: &Swarm, axis: Vector3<f64>, angle: f64, shift: Vector3<f64>, flip: bool) -> GlobalMap {
        let tf = RigidTransform { rotation: *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix(), translation: shift };
        let coords = s
            .positions()
            .iter()
            .map(|p| {
                let v = tf.apply(&p.to_vector());
                if flip { Vector3::new(-v.x, v.y, v.z) } else { v }
            })
            .collect();
        GlobalMap { coords, merged: vec![0], frame: 0 }
    }

    #[test]
    fn rotated_truth_aligns_exactly() {
        let s = generate_swarm(30, [1000.0; 3], 5).unwrap();
        let anchors = choose_anchors(&s, 1).unwrap();
        for flip in [false, true] {
            let est = rotated(&s, Vector3::new(1.0, 2.0, -0.5), 2.1, Vector3::new(-40.0, 7.0, 900.0), flip);
            let aligned = align_to_truth(&est, &s, anchors, AlignMode::Rigid).unwrap();
            for (a, p) in aligned.iter().zip(s.positions()) {
                assert!((a - p.to_vector()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn similarity_mode_absorbs_scale() {
        let s = generate_swarm(12, [100.0; 3], 6).unwrap();
        let anchors = choose_anchors(&s, 2).unwrap();
        let mut est = rotated(&s, Vector3::z(), 0.3, Vector3::zeros(), false);
        for c in &mut est.coords {
            *c *= 1.7;
        }
        let rigid = rmse(&align_to_truth(&est, &s, anchors, AlignMode::Rigid).unwrap(), &s).unwrap();
        let sim = rmse(&align_to_truth(&est, &s, anchors, AlignMode::Similarity).unwrap(), &s).unwrap();
        assert!(rigid > 1.0);
        assert!(sim < 1e-9);
    }

    #[test]
    fn coplanar_anchors_are_rejected() {
        let p = |x, y| Position::new(x, y, 0.0);
        let s = Swarm::new(vec![p(0.0, 0.0), p(1.0, 0.0), p(0.0, 1.0), p(1.0, 1.0), Position::new(0.0, 0.0, 1.0)], [2.0; 3]).unwrap();
        let est = GlobalMap { coords: s.positions().iter().map(|p| p.to_vector()).collect(), merged: vec![0], frame: 0 };
        assert!(matches!(align_to_truth(&est, &s, [0, 1, 2, 3], AlignMode::Rigid), Err(Error::DegenerateAlignment(_))));
        assert!(align_to_truth(&est, &s, [0, 1, 2, 4], AlignMode::Rigid).is_ok());
        assert!(matches!(align_to_truth(&est, &s, [0, 1, 1, 4], AlignMode::Rigid), Err(Error::Usage(_))));
    }

    #[test]
    fn perturbation_residual_tracks_noise() {
        let s = generate_swarm(40, [1000.0; 3], 7).unwrap();
        let anchors = choose_anchors(&s, 3).unwrap();
        let mut est = rotated(&s, Vector3::x(), 1.0, Vector3::new(5.0, 5.0, 5.0), false);
        let mut rng = rng_from_seed(9);
        use rand_distr::{Distribution, Normal};
        let eps = Normal::new(0.0, 0.5).unwrap();
        for c in &mut est.coords {
            *c += Vector3::new(eps.sample(&mut rng), eps.sample(&mut rng), eps.sample(&mut rng));
        }
        let e = rmse(&align_to_truth(&est, &s, anchors, AlignMode::Rigid).unwrap(), &s).unwrap();
        // per-point sigma 0.5 in 3D is ~0.87 rms; a 4-point fit adds a few times that at most
        assert!(e > 0.5 && e < 5.0, "{e}");
    }

    #[test]
    fn rmse_small_cases() {
        let s = generate_swarm(10, [10.0; 3], 1).unwrap();
        let truth: Vec<Vector3<f64>> = s.positions().iter().map(|p| p.to_vector()).collect();
        assert_eq!(rmse(&truth, &s).unwrap(), 0.0);
        let shifted: Vec<Vector3<f64>> = truth.iter().map(|p| p + Vector3::x()).collect();
        assert!((rmse(&shifted, &s).unwrap() - 1.0).abs() < 1e-12);
        assert!(rmse(&truth[..3], &s).is_err());
    }

    #[test]
    fn anchors_are_distinct_and_deterministic() {
        let s = generate_swarm(50, [1000.0; 3], 8).unwrap();
        let a = choose_anchors(&s, 4).unwrap();
        assert_eq!(a, choose_anchors(&s, 4).unwrap());
        let mut b = a;
        b.sort_unstable();
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("mds".parse::<Method>().is_err());
    }

    fn small_spec(trials: usize) -> SweepSpec {
        SweepSpec { swarm_size: 16, trials, base_seed: 11, ..Default::default() }
    }

    #[test]
    fn full_retention_is_exact_for_every_method() {
        let res = sweep_retention(&small_spec(2), &[1.0]).unwrap();
        assert_eq!(res.rows.len(), 8);
        for r in &res.rows {
            assert_eq!(r.status, STATUS_OK, "{r:?}");
            assert!(r.rmse_m.unwrap() <= 1e-6 * 1000.0, "{r:?}");
        }
    }

    #[test]
    fn zero_trials_and_empty_grids() {
        assert!(sweep_retention(&small_spec(0), &[0.5, 1.0]).unwrap().is_empty());
        assert!(sweep_retention(&small_spec(3), &[]).unwrap().is_empty());
        assert!(sweep_isac(&small_spec(3), IsacScene::default(), &[], &OtfsConfig::default()).unwrap().is_empty());
        assert!(matches!(sweep_retention(&small_spec(1), &[1.5]), Err(Error::Config { .. })));
    }

    #[test]
    fn size_sweep_shape_and_order() {
        let spec = SweepSpec { methods: vec![Method::MdsMap, Method::Proposed], ..small_spec(3) };
        let res = sweep_swarm_size(&spec, &[12], &[0.9]).unwrap();
        assert_eq!(res.rows.len(), 6);
        let names: Vec<&str> = res.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["mds-map", "proposed", "mds-map", "proposed", "mds-map", "proposed"]);
        assert!(res.rows.iter().all(|r| r.param_name == "swarm_size@0.9" && r.param_value == 12.0));
    }

    #[test]
    fn sweeps_are_reproducible() {
        let spec = small_spec(3);
        assert_eq!(sweep_retention(&spec, &[0.7, 0.9]).unwrap(), sweep_retention(&spec, &[0.7, 0.9]).unwrap());
        let isac = SweepSpec { trials: 1, ..spec };
        let scene = IsacScene { swarm_size: 8, bounds: [300.0; 3] };
        let a = sweep_isac(&isac, scene, &[-10.0], &OtfsConfig::default()).unwrap();
        assert_eq!(a, sweep_isac(&isac, scene, &[-10.0], &OtfsConfig::default()).unwrap());
        assert_eq!(a.rows.len(), 2);
        assert!(a.rows.iter().all(|r| r.ber.is_some_and(|b| (0.0..=1.0).contains(&b))));
    }

    #[test]
    fn summary_excludes_failures() {
        let row = |rmse: Option<f64>, status: &str| SweepRow {
            method: "m".into(),
            param_name: "p".into(),
            param_value: 1.0,
            seed: 0,
            rmse_m: rmse,
            ber: None,
            runtime_s: None,
            status: status.into(),
        };
        let res = SweepResult { rows: vec![row(Some(1.0), "ok"), row(Some(3.0), "ok"), row(None, "disconnected")] };
        let s = res.summary("m", "p", 1.0);
        assert_eq!((s.mean_rmse, s.std_rmse, s.ok, s.failed), (Some(2.0), Some(1.0), 2, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rigid_motion_does_not_change_the_score(seed in any::<u64>(), angle in -3.1f64..3.1, ax in -1.0f64..1.0, ay in -1.0f64..1.0, flip: bool, t in -500.0f64..500.0) {
            let s = generate_swarm(15, [1000.0; 3], seed).unwrap();
            let anchors = choose_anchors(&s, seed).unwrap();
            // a fixed imperfect estimate, then the same one moved rigidly
            let mut base = rotated(&s, Vector3::z(), 0.0, Vector3::zeros(), false);
            let mut rng = rng_from_seed(seed ^ 1);
            use rand::Rng;
            for c in &mut base.coords {
                *c += Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            let base_swarm = Swarm::new(base.coords.iter().map(|v| Position::new(v.x.clamp(0.0, 1000.0), v.y.clamp(0.0, 1000.0), v.z.clamp(0.0, 1000.0))).collect(), [1000.0; 3]).unwrap();
            let reference = {
                let m = GlobalMap { coords: base_swarm.positions().iter().map(|p| p.to_vector()).collect(), merged: vec![0], frame: 0 };
                rmse(&align_to_truth(&m, &s, anchors, AlignMode::Rigid).unwrap(), &s).unwrap()
            };
            let moved = rotated(&base_swarm, Vector3::new(ax, ay, 1.0), angle, Vector3::new(t, -t, 0.5 * t), flip);
            let e = rmse(&align_to_truth(&moved, &s, anchors, AlignMode::Rigid).unwrap(), &s).unwrap();
            prop_assert!((e - reference).abs() < 1e-9);
        }

        #[test]
        fn rmse_matches_scalar_loop(seed in any::<u64>(), n in 4usize..30) {
            let s = generate_swarm(n, [100.0; 3], seed).unwrap();
            let mut rng = rng_from_seed(seed);
            use rand::Rng;
            let est: Vec<Vector3<f64>> = s.positions().iter().map(|p| p.to_vector() + Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
            let mut acc = 0.0;
            for (i, e) in est.iter().enumerate() {
                let p = s.position(i);
                acc += (e[0] - p.x).powi(2);
                acc += (e[1] - p.y).powi(2);
                acc += (e[2] - p.z).powi(2);
            }
            let want = (acc / n as f64).sqrt();
            prop_assert!((rmse(&est, &s).unwrap() - want).abs() <= 1e-12 * want.max(1.0));
            // consistent relabeling changes nothing
            let perm: Vec<usize> = (0..n).rev().collect();
            let s2 = Swarm::new(perm.iter().map(|&i| s.position(i)).collect(), [100.0; 3]).unwrap();
            let est2: Vec<Vector3<f64>> = perm.iter().map(|&i| est[i]).collect();
            prop_assert!((rmse(&est2, &s2).unwrap() - rmse(&est, &s).unwrap()).abs() < 1e-12);
        }
    }
}
