//! Monte Carlo ensembles of tracer paths.
//!
//! Each path owns a fresh field realization and its own labelled streams
//! (see [`crate::rng`]). Paths are grouped into fixed chunks by index; chunk
//! accumulators are built in parallel and folded in ascending chunk order,
//! so the result does not depend on the number of workers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::integrators::{step_full, SchemeConfig, SchemeKind};
use crate::rng::SeedPolicy;
use crate::spectral_field::{SpectralFlow, validate_spectrum};
use crate::summation::CompensatedSum;

/// Paths per reduction chunk. Fixed so the fold order never depends on the
/// thread count.
pub const CHUNK_PATHS: usize = 64;

/// Largest tolerated fraction of failed paths.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub modes: usize,
    pub cutoff_k: f64,
    pub alpha: f64,
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub scheme: SchemeConfig,
    pub seed: u64,
    /// Steps between recorded moments.
    pub stride: usize,
    pub drift_correct: bool,
}

impl Default for ExperimentConfig {
    /// The 2D reference roster: M = 1000, K = 10, α = 0.75, θ = 10, σ = 0.1.
    fn default() -> Self {
        Self {
            dim: 2,
            modes: 1000,
            cutoff_k: 10.0,
            alpha: 0.75,
            theta: 10.0,
            sigma: 0.1,
            dt: 0.01,
            horizon: 22.0,
            paths: 10_000,
            scheme: SchemeConfig::default(),
            seed: 1,
            stride: 20,
            drift_correct: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::config("dim", format!("must be 2 or 3, got {}", self.dim)));
        }
        validate_spectrum(self.modes, self.cutoff_k, self.alpha)?;
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(Error::config("theta", "mixing rate must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("sigma", "molecular diffusivity must be non-negative"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("dt", "time step must be positive"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::config("horizon", "horizon must be positive"));
        }
        let ratio = self.horizon / self.dt;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config(
                "horizon",
                format!("horizon / dt must be a positive integer, got {ratio}"),
            ));
        }
        if self.paths < 2 {
            return Err(Error::config("paths", "need at least two paths for a standard error"));
        }
        if self.stride < 1 {
            return Err(Error::config("stride", "record stride must be at least 1"));
        }
        self.scheme.validate(self.dim)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Step indices (1-based counts of completed steps) at which moments are
    /// recorded: every `stride` steps, plus the final step.
    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.steps();
        let mut out: Vec<usize> = (1..=n / self.stride).map(|k| k * self.stride).collect();
        if out.last() != Some(&n) {
            out.push(n);
        }
        out
    }

    pub fn spectral_flow(&self) -> Result<SpectralFlow> {
        SpectralFlow::new(self.modes, self.cutoff_k, self.alpha, self.theta)
    }

    pub fn seed_policy(&self) -> SeedPolicy {
        SeedPolicy::new(self.seed)
    }
}

/// Moment sums at one record time.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMoments {
    pub count: usize,
    pub sum_x: Vec<CompensatedSum>,
    /// Upper triangle of `Σ X ⊗ X`, row-major (`11, 12, .., 1d, 22, ..`).
    pub sum_xx: Vec<CompensatedSum>,
    pub sum_x3: Vec<CompensatedSum>,
    pub sum_x4: Vec<CompensatedSum>,
    /// Σ over paths of the cumulative deterministic increment `Σ_n B_Δt(X_n)`.
    pub sum_b: Vec<CompensatedSum>,
}

impl RecordMoments {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            sum_x: vec![CompensatedSum::new(); dim],
            sum_xx: vec![CompensatedSum::new(); dim * (dim + 1) / 2],
            sum_x3: vec![CompensatedSum::new(); dim],
            sum_x4: vec![CompensatedSum::new(); dim],
            sum_b: vec![CompensatedSum::new(); dim],
        }
    }

    fn add(&mut self, x: &[f64], b: &[f64]) {
        let d = x.len();
        self.count += 1;
        let mut idx = 0;
        for i in 0..d {
            let xi2 = x[i] * x[i];
            self.sum_x[i].add(x[i]);
            self.sum_x3[i].add(xi2 * x[i]);
            self.sum_x4[i].add(xi2 * xi2);
            self.sum_b[i].add(b[i]);
            for j in i..d {
                self.sum_xx[idx].add(x[i] * x[j]);
                idx += 1;
            }
        }
    }

    fn merge(&mut self, other: &RecordMoments) {
        self.count += other.count;
        for (a, b) in [
            (&mut self.sum_x, &other.sum_x),
            (&mut self.sum_xx, &other.sum_xx),
            (&mut self.sum_x3, &other.sum_x3),
            (&mut self.sum_x4, &other.sum_x4),
            (&mut self.sum_b, &other.sum_b),
        ] {
            for (s, o) in a.iter_mut().zip(b) {
                s.merge(o);
            }
        }
    }
}

/// Upper-triangle index of `(i, j)` in a `dim × dim` symmetric matrix.
pub fn upper_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    dim: usize,
    dt: f64,
    record_steps: Vec<usize>,
    records: Vec<RecordMoments>,
    failed: usize,
    /// `solver_histogram[k]` counts steps whose implicit solve used `k`
    /// field evaluations.
    solver_histogram: Vec<u64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize, dt: f64, record_steps: Vec<usize>) -> Self {
        let records = record_steps.iter().map(|_| RecordMoments::new(dim)).collect();
        Self {
            dim,
            dt,
            record_steps,
            records,
            failed: 0,
            solver_histogram: Vec::new(),
        }
    }

    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Self::new(cfg.dim, cfg.dt, cfg.record_steps())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn record_steps(&self) -> &[usize] {
        &self.record_steps
    }

    pub fn times(&self) -> Vec<f64> {
        self.record_steps.iter().map(|&n| n as f64 * self.dt).collect()
    }

    pub fn records(&self) -> &[RecordMoments] {
        &self.records
    }

    pub fn failed(&self) -> usize {
        self.failed
    }

    /// Successful paths (identical at every record time).
    pub fn count(&self) -> usize {
        self.records.first().map_or(0, |r| r.count)
    }

    pub fn solver_histogram(&self) -> &[u64] {
        &self.solver_histogram
    }

    /// Fraction of implicit solves that needed at most `evaluations` field
    /// evaluations; `None` when no implicit solve was recorded.
    pub fn solver_fraction_within(&self, evaluations: usize) -> Option<f64> {
        let total: u64 = self.solver_histogram.iter().sum();
        if total == 0 {
            return None;
        }
        let within: u64 = self.solver_histogram.iter().take(evaluations + 1).sum();
        Some(within as f64 / total as f64)
    }

    pub fn add_path<const D: usize>(&mut self, path: &PathTrajectory<D>) {
        assert_eq!(D, self.dim);
        assert_eq!(path.positions.len(), self.records.len());
        for ((rec, x), b) in self.records.iter_mut().zip(&path.positions).zip(&path.increments) {
            rec.add(x, b);
        }
        self.add_solver_counts(&path.solver_histogram);
    }

    pub fn add_failed(&mut self) {
        self.failed += 1;
    }

    fn add_solver_counts(&mut self, hist: &[u64]) {
        if self.solver_histogram.len() < hist.len() {
            self.solver_histogram.resize(hist.len(), 0);
        }
        for (a, b) in self.solver_histogram.iter_mut().zip(hist) {
            *a += b;
        }
    }

    /// Field-wise sum of two accumulators over the same record grid.
    pub fn merge(&self, other: &MomentAccumulator) -> Result<MomentAccumulator> {
        let mut out = self.clone();
        out.merge_in_place(other)?;
        Ok(out)
    }

    pub fn merge_in_place(&mut self, other: &MomentAccumulator) -> Result<()> {
        if self.dim != other.dim || self.dt != other.dt || self.record_steps != other.record_steps {
            return Err(Error::config(
                "record grid",
                "cannot merge accumulators with different dimensions or record times",
            ));
        }
        for (a, b) in self.records.iter_mut().zip(&other.records) {
            a.merge(b);
        }
        self.failed += other.failed;
        self.add_solver_counts(&other.solver_histogram);
        Ok(())
    }

    /// Mean position at record `k`.
    pub fn mean(&self, k: usize) -> Vec<f64> {
        let r = &self.records[k];
        r.sum_x.iter().map(|s| s.value() / r.count as f64).collect()
    }

    /// Averaged `E[X ⊗ X]` at record `k`, as a full symmetric matrix.
    pub fn second_moment(&self, k: usize) -> Vec<Vec<f64>> {
        let r = &self.records[k];
        let d = self.dim;
        let mut m = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = r.sum_xx[upper_index(d, i, j)].value() / r.count as f64;
            }
        }
        m
    }
}

/// Recorded states of one tracer path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrajectory<const D: usize> {
    pub record_steps: Vec<usize>,
    pub positions: Vec<[f64; D]>,
    /// Cumulative deterministic increments `Σ_{n<N} B_Δt(X_n)` at each
    /// record.
    pub increments: Vec<[f64; D]>,
    pub solver_histogram: Vec<u64>,
}

/// Simulates path `p` from `X(0) = 0`: per step, deterministic sub-step at
/// `t_n`, Brownian kick, then the field advance to `t_{n+1}`.
pub fn run_path<const D: usize, F: Flow<D>>(
    cfg: &ExperimentConfig,
    flow: &F,
    path: u64,
    noise_substeps: u32,
) -> Result<PathTrajectory<D>> {
    let policy = cfg.seed_policy();
    let mut streams = policy.path_streams(path);
    let mut field = flow.realize(cfg.dt, &mut streams.modes, &mut streams.ou_init);
    let record_steps = cfg.record_steps();
    let mut positions = Vec::with_capacity(record_steps.len());
    let mut increments = Vec::with_capacity(record_steps.len());
    let mut histogram = Vec::new();
    let implicit = cfg.scheme.kind == SchemeKind::Midpoint2d;
    let mut x = [0.0; D];
    let mut b_sum = [0.0; D];
    let mut next_record = 0;
    let steps = cfg.steps();
    for n in 0..steps {
        let rec = step_full(
            &field,
            &x,
            cfg.dt,
            cfg.sigma,
            &cfg.scheme,
            noise_substeps,
            &mut streams.kick,
        )?;
        if implicit {
            if histogram.len() <= rec.iterations {
                histogram.resize(rec.iterations + 1, 0);
            }
            histogram[rec.iterations] += 1;
        }
        for i in 0..D {
            b_sum[i] += rec.increment[i];
        }
        x = rec.after;
        if n + 1 < steps {
            flow.advance(&mut field, noise_substeps, &mut streams.ou_noise);
        }
        if record_steps.get(next_record) == Some(&(n + 1)) {
            positions.push(x);
            increments.push(b_sum);
            next_record += 1;
        }
    }
    Ok(PathTrajectory {
        record_steps,
        positions,
        increments,
        solver_histogram: histogram,
    })
}

/// Runs `cfg.paths` paths of `flow` and accumulates their moments.
///
/// Fails with [`Error::EnsembleAbort`] if more than 1% of paths fail.
pub fn run_ensemble_with<const D: usize, F: Flow<D>>(
    cfg: &ExperimentConfig,
    flow: &F,
    noise_substeps: u32,
) -> Result<MomentAccumulator> {
    cfg.validate()?;
    if cfg.dim != D {
        return Err(Error::config("dim", format!("configured dim {} but flow has dim {D}", cfg.dim)));
    }
    let chunks = cfg.paths.div_ceil(CHUNK_PATHS);
    let partials: Vec<MomentAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = MomentAccumulator::for_config(cfg);
            let start = c * CHUNK_PATHS;
            let end = (start + CHUNK_PATHS).min(cfg.paths);
            for p in start..end {
                match run_path::<D, F>(cfg, flow, p as u64, noise_substeps) {
                    Ok(path) => acc.add_path(&path),
                    Err(Error::NonConvergence { .. }) => acc.add_failed(),
                    Err(e) => panic!("unexpected path error: {e}"),
                }
            }
            acc
        })
        .collect();
    let mut total = MomentAccumulator::for_config(cfg);
    for part in &partials {
        total.merge_in_place(part)?;
    }
    if total.failed as f64 > MAX_FAILED_FRACTION * cfg.paths as f64 {
        return Err(Error::EnsembleAbort {
            failed: total.failed,
            total: cfg.paths,
        });
    }
    Ok(total)
}

/// Ensemble over the configured randomization-method flow.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<MomentAccumulator> {
    run_ensemble_substeps(cfg, 1)
}

pub fn run_ensemble_substeps(cfg: &ExperimentConfig, noise_substeps: u32) -> Result<MomentAccumulator> {
    cfg.validate()?;
    let flow = cfg.spectral_flow()?;
    match cfg.dim {
        2 => run_ensemble_with::<2, _>(cfg, &flow, noise_substeps),
        3 => run_ensemble_with::<3, _>(cfg, &flow, noise_substeps),
        d => Err(Error::config("dim", format!("must be 2 or 3, got {d}"))),
    }
}

/// Mean one-step deterministic increment `B̄_Δt` estimated from the
/// cumulative increments at the final record: `ΣB / (count · steps)`.
pub fn estimate_mean_drift(acc: &MomentAccumulator) -> Result<Vec<f64>> {
    let (Some(rec), Some(&steps)) = (acc.records.last(), acc.record_steps.last()) else {
        return Err(Error::Estimation("accumulator has no records".into()));
    };
    if rec.count == 0 {
        return Err(Error::Estimation("no successful paths".into()));
    }
    let denom = rec.count as f64 * steps as f64;
    Ok(rec.sum_b.iter().map(|s| s.value() / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{ConstantFlow, ZeroFlow};

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            modes: 20,
            dt: 0.05,
            horizon: 1.0,
            paths: 150,
            stride: 4,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn record_grid_includes_final_step() {
        let mut cfg = small_cfg();
        assert_eq!(cfg.record_steps(), vec![4, 8, 12, 16, 20]);
        cfg.stride = 7;
        assert_eq!(cfg.record_steps(), vec![7, 14, 20]);
    }

    #[test]
    fn config_validation() {
        assert!(small_cfg().validate().is_ok());
        let bad = ExperimentConfig { horizon: 1.03, ..small_cfg() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { alpha: 1.0, ..small_cfg() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { dim: 3, ..small_cfg() };
        assert!(bad.validate().is_err(), "midpoint2d in 3D");
        let ok = ExperimentConfig {
            dim: 3,
            scheme: SchemeConfig::new(SchemeKind::ModeSplit),
            ..small_cfg()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn zero_flow_without_noise_stays_at_origin() {
        let cfg = ExperimentConfig { sigma: 0.0, ..small_cfg() };
        let path = run_path::<2, _>(&cfg, &ZeroFlow, 0, 1).unwrap();
        assert!(path.positions.iter().all(|x| *x == [0.0, 0.0]));
    }

    #[test]
    fn paths_are_deterministic() {
        let cfg = small_cfg();
        let flow = cfg.spectral_flow().unwrap();
        let a = run_path::<2, _>(&cfg, &flow, 17, 1).unwrap();
        let b = run_path::<2, _>(&cfg, &flow, 17, 1).unwrap();
        assert_eq!(a, b);
        let c = run_path::<2, _>(&cfg, &flow, 18, 1).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn single_path_moments_equal_outer_products() {
        let cfg = small_cfg();
        let flow = cfg.spectral_flow().unwrap();
        let path = run_path::<2, _>(&cfg, &flow, 0, 1).unwrap();
        let mut acc = MomentAccumulator::for_config(&cfg);
        acc.add_path(&path);
        for (k, x) in path.positions.iter().enumerate() {
            let m = acc.second_moment(k);
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(m[i][j], x[i] * x[j]);
                }
            }
        }
    }

    #[test]
    fn merge_identity_and_serial_equivalence() {
        let cfg = ExperimentConfig { paths: 3, ..small_cfg() };
        let flow = cfg.spectral_flow().unwrap();
        let paths: Vec<_> = (0..3).map(|p| run_path::<2, _>(&cfg, &flow, p, 1).unwrap()).collect();
        let empty = MomentAccumulator::for_config(&cfg);
        let singles: Vec<MomentAccumulator> = paths
            .iter()
            .map(|p| {
                let mut a = MomentAccumulator::for_config(&cfg);
                a.add_path(p);
                a
            })
            .collect();
        assert_eq!(singles[0].merge(&empty).unwrap(), singles[0]);

        let mut serial = MomentAccumulator::for_config(&cfg);
        for p in &paths {
            serial.add_path(p);
        }
        let folded = singles[0].merge(&singles[1]).unwrap().merge(&singles[2]).unwrap();
        for (a, b) in folded.records().iter().zip(serial.records()) {
            assert_eq!(a.count, b.count);
            for (x, y) in a.sum_xx.iter().zip(&b.sum_xx) {
                assert_eq!(x.value(), y.value());
            }
        }
        let left = singles[0].merge(&singles[1].merge(&singles[2]).unwrap()).unwrap();
        let right = singles[0].merge(&singles[1]).unwrap().merge(&singles[2]).unwrap();
        for (a, b) in left.records().iter().zip(right.records()) {
            for (x, y) in a.sum_xx.iter().zip(&b.sum_xx) {
                assert!((x.value() - y.value()).abs() <= 1e-15 * x.value().abs().max(1.0));
            }
        }
    }

    #[test]
    fn merge_rejects_grid_mismatch() {
        let a = MomentAccumulator::for_config(&small_cfg());
        let b = MomentAccumulator::for_config(&ExperimentConfig { stride: 5, ..small_cfg() });
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let cfg = ExperimentConfig { paths: 200, ..small_cfg() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_ensemble(&cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn drift_estimate_for_zero_and_constant_fields() {
        let cfg = ExperimentConfig { paths: 10, ..small_cfg() };
        let zero = run_ensemble_with::<2, _>(&cfg, &ZeroFlow, 1).unwrap();
        assert_eq!(estimate_mean_drift(&zero).unwrap(), vec![0.0, 0.0]);
        let c = ConstantFlow([0.3, -0.7]);
        let acc = run_ensemble_with::<2, _>(&cfg, &c, 1).unwrap();
        let est = estimate_mean_drift(&acc).unwrap();
        assert!((est[0] - 0.3 * cfg.dt).abs() < 1e-15);
        assert!((est[1] + 0.7 * cfg.dt).abs() < 1e-15);
    }

    #[test]
    fn upper_index_layout() {
        assert_eq!(upper_index(2, 0, 0), 0);
        assert_eq!(upper_index(2, 0, 1), 1);
        assert_eq!(upper_index(2, 1, 1), 2);
        assert_eq!(upper_index(3, 1, 2), 4);
        assert_eq!(upper_index(3, 2, 1), 4);
        assert_eq!(upper_index(3, 2, 2), 5);
    }
}
