//! Post-processing and experiment drivers built on the ensemble runner.

use rayon::prelude::*;

use crate::ensemble::{
    estimate_mean_drift, run_ensemble_with, run_path, upper_index, ExperimentConfig, MomentAccumulator,
    CHUNK_PATHS,
};
use crate::error::{Error, Result};
use crate::flow::{Flow, Velocity};
use crate::integrators::{step_deterministic, step_full, SchemeConfig};
use crate::rng::{SeedPolicy, StreamLabel};
use crate::summation::CompensatedSum;

/// Which position enters the second moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// `E[X ⊗ X] / 2t`.
    Raw,
    /// `E[X̄ ⊗ X̄] / 2t` with `X̄_n = X_n - n B̄_Δt`.
    DriftCorrected,
}

impl Estimator {
    pub fn from_flag(drift_correct: bool) -> Self {
        if drift_correct {
            Estimator::DriftCorrected
        } else {
            Estimator::Raw
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Raw => "raw",
            Estimator::DriftCorrected => "drift-corrected",
        }
    }
}

/// Time series of the effective-diffusivity estimate `D̂^E(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusivityCurve {
    pub dim: usize,
    pub times: Vec<f64>,
    pub counts: Vec<usize>,
    /// Row-major `dim × dim` matrix per record.
    pub entries: Vec<Vec<f64>>,
    /// Monte Carlo standard error of each diagonal entry per record.
    pub stderr: Vec<Vec<f64>>,
    pub estimator: Estimator,
}

impl DiffusivityCurve {
    pub fn entry(&self, k: usize, i: usize, j: usize) -> f64 {
        self.entries[k][i * self.dim + j]
    }

    pub fn last_d11(&self) -> (f64, f64) {
        let k = self.times.len() - 1;
        (self.entry(k, 0, 0), self.stderr[k][0])
    }
}

/// Turns moment sums into `D̂^E(t_k) = E[X ⊗ X] / (2 t_k)`.
///
/// The standard error of a diagonal entry is `sd(X_i²) / (2 t_k √count)`,
/// taken from the held power sums.
pub fn effective_diffusivity(acc: &MomentAccumulator, estimator: Estimator) -> Result<DiffusivityCurve> {
    let d = acc.dim();
    let drift = match estimator {
        Estimator::Raw => vec![0.0; d],
        Estimator::DriftCorrected => estimate_mean_drift(acc)?,
    };
    let times = acc.times();
    let mut entries = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    let mut counts = Vec::with_capacity(times.len());
    for (k, rec) in acc.records().iter().enumerate() {
        let n = rec.count;
        if n < 2 {
            return Err(Error::Estimation(format!(
                "need at least two successful paths, record {k} has {n}"
            )));
        }
        let nf = n as f64;
        let t = times[k];
        let shift: Vec<f64> = drift.iter().map(|b| b * acc.record_steps()[k] as f64).collect();
        let mean: Vec<f64> = rec.sum_x.iter().map(|s| s.value() / nf).collect();
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let sxx = rec.sum_xx[upper_index(d, i, j)].value() / nf;
                let second = sxx - shift[i] * mean[j] - shift[j] * mean[i] + shift[i] * shift[j];
                m[i * d + j] = second / (2.0 * t);
            }
        }
        let mut se = vec![0.0; d];
        for i in 0..d {
            let c = shift[i];
            let s1 = rec.sum_x[i].value();
            let s2 = rec.sum_xx[upper_index(d, i, i)].value();
            let s3 = rec.sum_x3[i].value();
            let s4 = rec.sum_x4[i].value();
            let sum_y2 = s2 - 2.0 * c * s1 + nf * c * c;
            let sum_y4 = s4 - 4.0 * c * s3 + 6.0 * c * c * s2 - 4.0 * c * c * c * s1 + nf * c.powi(4);
            let mean_y2 = sum_y2 / nf;
            let var_y2 = ((sum_y4 - nf * mean_y2 * mean_y2) / (nf - 1.0)).max(0.0);
            se[i] = (var_y2 / nf).sqrt() / (2.0 * t);
        }
        entries.push(m);
        stderr.push(se);
        counts.push(n);
    }
    Ok(DiffusivityCurve {
        dim: d,
        times,
        counts,
        entries,
        stderr,
        estimator,
    })
}

/// Least-squares line through `(x, y)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

/// Ordinary least squares `y ≈ intercept + slope x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Estimation("line fit needs at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Estimation("abscissae must not all coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    Ok(SlopeFit {
        x: x.to_vec(),
        y: y.to_vec(),
        slope,
        intercept,
        residual_rms: (rss / n).sqrt(),
    })
}

/// Least squares on `(ln x, ln y)`.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Estimation("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

/// One time step of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub d11: f64,
    pub abs_error: f64,
    /// Standard error of `abs_error` from the paired per-path differences.
    pub stderr: f64,
    pub included_in_fit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub scheme: SchemeConfig,
    pub reference_scheme: SchemeConfig,
    pub reference_dt: f64,
    pub reference_d11: f64,
    pub reference_stderr: f64,
    pub horizon: f64,
    pub paths: usize,
    pub rows: Vec<ConvergenceRow>,
    pub fit: Option<SlopeFit>,
    pub warnings: Vec<String>,
}

/// Marks rows whose error is below two standard errors as noise-dominated
/// and fits `ln |error|` against `ln Δt` over the rest.
pub fn fit_convergence_rows(rows: &mut [ConvergenceRow], warnings: &mut Vec<String>) -> Option<SlopeFit> {
    for row in rows.iter_mut() {
        row.included_in_fit = row.abs_error > 0.0 && row.abs_error >= 2.0 * row.stderr;
        if !row.included_in_fit {
            warnings.push(format!(
                "dt = {}: error {:.3e} below 2 SE = {:.3e}; MC-noise-dominated, excluded from fit",
                row.dt,
                row.abs_error,
                2.0 * row.stderr
            ));
        }
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.included_in_fit)
        .map(|r| (r.dt, r.abs_error))
        .unzip();
    match fit_loglog_slope(&x, &y) {
        Ok(fit) => Some(fit),
        Err(_) => {
            warnings.push("fewer than two usable points; slope not fitted".into());
            None
        }
    }
}

/// Parameters of a paired convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSpec {
    pub dts: Vec<f64>,
    /// Defaults to `min(dts) / 4`.
    pub reference_dt: Option<f64>,
    /// Scheme of the reference run; defaults to the first studied scheme.
    pub reference_scheme: Option<SchemeConfig>,
    /// Schemes to study; defaults to the base configuration's scheme.
    pub schemes: Vec<SchemeConfig>,
}

fn integer_ratio(a: f64, b: f64) -> Option<u32> {
    let r = a / b;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * r.max(1.0) && n >= 1.0 && n <= u32::MAX as f64).then_some(n as u32)
}

/// Errors of `D̂^E_11(T)` against a finer reference run, path by path.
///
/// Every run of path `p` uses the same labelled streams, and coarse steps
/// consume the fine-step noise in sums of `Δt / Δt_ref` increments, so
/// the coarse and reference runs see the same Brownian and OU paths. The
/// error standard error comes from the per-path differences
/// `X_{1}(T; Δt)² - X_{1}(T; Δt_ref)²`.
pub fn convergence_study<const D: usize, F: Flow<D>>(
    base: &ExperimentConfig,
    flow: &F,
    spec: &ConvergenceSpec,
) -> Result<Vec<ConvergenceReport>> {
    if spec.dts.len() < 3 {
        return Err(Error::config("dt_list", "convergence study needs at least three time steps"));
    }
    let min_dt = spec.dts.iter().copied().fold(f64::INFINITY, f64::min);
    let dt_ref = spec.reference_dt.unwrap_or(min_dt / 4.0);
    if !(dt_ref > 0.0) || dt_ref > min_dt / 4.0 * (1.0 + 1e-12) {
        return Err(Error::config("reference_dt", "reference step must satisfy 0 < dt_ref <= min(dt)/4"));
    }
    let schemes = if spec.schemes.is_empty() {
        vec![base.scheme]
    } else {
        spec.schemes.clone()
    };
    let ref_scheme = spec.reference_scheme.unwrap_or(schemes[0]);
    let mut substeps = Vec::with_capacity(spec.dts.len());
    for &dt in &spec.dts {
        let r = integer_ratio(dt, dt_ref).ok_or_else(|| {
            Error::config("dt_list", format!("dt = {dt} is not an integer multiple of dt_ref = {dt_ref}"))
        })?;
        substeps.push(r);
    }
    let ref_cfg = ExperimentConfig {
        dt: dt_ref,
        scheme: ref_scheme,
        ..base.clone()
    };
    ref_cfg.validate()?;
    let mut run_cfgs = Vec::new();
    for scheme in &schemes {
        for &dt in &spec.dts {
            let cfg = ExperimentConfig {
                dt,
                scheme: *scheme,
                ..base.clone()
            };
            cfg.validate()?;
            run_cfgs.push(cfg);
        }
    }
    let runs = run_cfgs.len();

    #[derive(Clone)]
    struct Partial {
        count: usize,
        failed: usize,
        ref_sq: CompensatedSum,
        ref_sq2: CompensatedSum,
        sq: Vec<CompensatedSum>,
        diff: Vec<CompensatedSum>,
        diff2: Vec<CompensatedSum>,
    }
    let empty = Partial {
        count: 0,
        failed: 0,
        ref_sq: CompensatedSum::new(),
        ref_sq2: CompensatedSum::new(),
        sq: vec![CompensatedSum::new(); runs],
        diff: vec![CompensatedSum::new(); runs],
        diff2: vec![CompensatedSum::new(); runs],
    };
    let last_x1 = |cfg: &ExperimentConfig, p: u64, r: u32| -> Result<f64> {
        let path = run_path::<D, F>(cfg, flow, p, r)?;
        Ok(path.positions.last().expect("at least one record")[0])
    };
    let chunks = base.paths.div_ceil(CHUNK_PATHS);
    let partials: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = empty.clone();
            let start = c * CHUNK_PATHS;
            let end = (start + CHUNK_PATHS).min(base.paths);
            'paths: for p in start..end {
                let p = p as u64;
                let Ok(x_ref) = last_x1(&ref_cfg, p, 1) else {
                    acc.failed += 1;
                    continue;
                };
                let mut values = Vec::with_capacity(runs);
                for (i, cfg) in run_cfgs.iter().enumerate() {
                    match last_x1(cfg, p, substeps[i % substeps.len()]) {
                        Ok(x) => values.push(x * x),
                        Err(_) => {
                            acc.failed += 1;
                            continue 'paths;
                        }
                    }
                }
                let r2 = x_ref * x_ref;
                acc.count += 1;
                acc.ref_sq.add(r2);
                acc.ref_sq2.add(r2 * r2);
                for (i, v) in values.into_iter().enumerate() {
                    acc.sq[i].add(v);
                    acc.diff[i].add(v - r2);
                    acc.diff2[i].add((v - r2) * (v - r2));
                }
            }
            acc
        })
        .collect();
    let mut total = empty;
    for part in &partials {
        total.count += part.count;
        total.failed += part.failed;
        total.ref_sq.merge(&part.ref_sq);
        total.ref_sq2.merge(&part.ref_sq2);
        for i in 0..runs {
            total.sq[i].merge(&part.sq[i]);
            total.diff[i].merge(&part.diff[i]);
            total.diff2[i].merge(&part.diff2[i]);
        }
    }
    if total.failed as f64 > crate::ensemble::MAX_FAILED_FRACTION * base.paths as f64 {
        return Err(Error::EnsembleAbort {
            failed: total.failed,
            total: base.paths,
        });
    }
    if total.count < 2 {
        return Err(Error::Estimation("convergence study needs at least two successful paths".into()));
    }
    let n = total.count as f64;
    let two_t = 2.0 * base.horizon;
    let sd = |s: &CompensatedSum, s2: &CompensatedSum| {
        let mean = s.value() / n;
        ((s2.value() - n * mean * mean) / (n - 1.0)).max(0.0).sqrt()
    };
    let reference_d11 = total.ref_sq.value() / n / two_t;
    let reference_stderr = sd(&total.ref_sq, &total.ref_sq2) / n.sqrt() / two_t;

    let mut reports = Vec::with_capacity(schemes.len());
    for (s, scheme) in schemes.iter().enumerate() {
        let mut rows = Vec::with_capacity(spec.dts.len());
        for (j, &dt) in spec.dts.iter().enumerate() {
            let i = s * spec.dts.len() + j;
            let d11 = total.sq[i].value() / n / two_t;
            let abs_error = (total.diff[i].value() / n / two_t).abs();
            let stderr = sd(&total.diff[i], &total.diff2[i]) / n.sqrt() / two_t;
            rows.push(ConvergenceRow {
                dt,
                d11,
                abs_error,
                stderr,
                included_in_fit: false,
            });
        }
        let mut warnings = Vec::new();
        if total.failed > 0 {
            warnings.push(format!("{} paths failed and were excluded", total.failed));
        }
        let fit = fit_convergence_rows(&mut rows, &mut warnings);
        reports.push(ConvergenceReport {
            scheme: *scheme,
            reference_scheme: ref_scheme,
            reference_dt: dt_ref,
            reference_d11,
            reference_stderr,
            horizon: base.horizon,
            paths: total.count,
            rows,
            fit,
            warnings,
        });
    }
    Ok(reports)
}

/// Variance decay of the environment seen by the tracer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// Across-state sample variance of the inner-path mean of `b_1`.
    pub variance: Vec<f64>,
    /// Estimation floor `1 / n_paths`.
    pub floor: f64,
    /// Exponential decay rate of the variance (squared-norm interpretation).
    pub variance_rate: Option<f64>,
    /// Half the variance rate (norm interpretation).
    pub amplitude_rate: Option<f64>,
    /// Steps used by the rate fit.
    pub fit_steps: Vec<usize>,
    pub failed_paths: usize,
}

/// For each of `n_states` fixed initial fields (modes and OU values), runs
/// `n_paths` tracers from the origin with independent OU continuations and
/// Brownian paths, averages `b_1(t_n, X_n)` over the inner paths, and takes
/// the sample variance of those averages across states.
///
/// The decay rate is fitted to `ln variance` against `t` from `n = 1` up to
/// (excluding) the first step whose variance drops below `10 / n_paths`.
pub fn decay_diagnostic<const D: usize, F: Flow<D>>(
    cfg: &ExperimentConfig,
    flow: &F,
    n_states: usize,
    n_paths: usize,
    horizon_steps: usize,
) -> Result<DecayCurve> {
    if n_states < 2 || n_paths < 2 {
        return Err(Error::config("decay", "need at least two states and two inner paths"));
    }
    if horizon_steps < 1 {
        return Err(Error::config("horizon_steps", "need at least one step"));
    }
    let policy = SeedPolicy::new(cfg.seed);
    let per_state: Vec<(Vec<f64>, usize)> = (0..n_states)
        .into_par_iter()
        .map(|i| {
            let mut modes = policy.stream(StreamLabel::Modes, i as u64);
            let mut init = policy.stream(StreamLabel::OuInit, i as u64);
            let base = flow.realize(cfg.dt, &mut modes, &mut init);
            let mut sums = vec![CompensatedSum::new(); horizon_steps + 1];
            let mut ok = 0usize;
            let mut failed = 0usize;
            let mut values = vec![0.0; horizon_steps + 1];
            for p in 0..n_paths {
                let index = (i * n_paths + p) as u64;
                let mut noise = policy.stream(StreamLabel::OuNoise, index);
                let mut kick = policy.stream(StreamLabel::Kick, index);
                let mut field = base.clone();
                let mut x = [0.0; D];
                let mut good = true;
                for n in 0..=horizon_steps {
                    values[n] = field.velocity(&x)[0];
                    if n == horizon_steps {
                        break;
                    }
                    match step_full(&field, &x, cfg.dt, cfg.sigma, &cfg.scheme, 1, &mut kick) {
                        Ok(rec) => x = rec.after,
                        Err(_) => {
                            good = false;
                            break;
                        }
                    }
                    flow.advance(&mut field, 1, &mut noise);
                }
                if good {
                    ok += 1;
                    for (s, v) in sums.iter_mut().zip(&values) {
                        s.add(*v);
                    }
                } else {
                    failed += 1;
                }
            }
            let means = sums.iter().map(|s| s.value() / ok.max(1) as f64).collect();
            (means, failed)
        })
        .collect();
    let failed_paths: usize = per_state.iter().map(|(_, f)| f).sum();
    if failed_paths as f64 > crate::ensemble::MAX_FAILED_FRACTION * (n_states * n_paths) as f64 {
        return Err(Error::EnsembleAbort {
            failed: failed_paths,
            total: n_states * n_paths,
        });
    }
    let ns = n_states as f64;
    let mut variance = Vec::with_capacity(horizon_steps + 1);
    for n in 0..=horizon_steps {
        let mean: f64 = per_state.iter().map(|(m, _)| m[n]).sum::<f64>() / ns;
        let var: f64 = per_state.iter().map(|(m, _)| (m[n] - mean).powi(2)).sum::<f64>() / (ns - 1.0);
        variance.push(var);
    }
    let floor = 1.0 / n_paths as f64;
    let mut fit_steps = Vec::new();
    for (n, v) in variance.iter().enumerate().skip(1) {
        if *v < 10.0 * floor || !(*v > 0.0) {
            break;
        }
        fit_steps.push(n);
    }
    let variance_rate = if fit_steps.len() >= 2 {
        let t: Vec<f64> = fit_steps.iter().map(|&n| n as f64 * cfg.dt).collect();
        let lv: Vec<f64> = fit_steps.iter().map(|&n| variance[n].ln()).collect();
        fit_line(&t, &lv).ok().map(|f| -f.slope).filter(|r| r.is_finite())
    } else {
        None
    };
    let steps: Vec<usize> = (0..=horizon_steps).collect();
    Ok(DecayCurve {
        times: steps.iter().map(|&n| n as f64 * cfg.dt).collect(),
        steps,
        variance,
        floor,
        variance_rate,
        amplitude_rate: variance_rate.map(|r| r / 2.0),
        fit_steps,
        failed_paths,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub sigma: f64,
    pub kappa: f64,
    pub d11: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTable {
    pub rows: Vec<ResidualRow>,
    /// Mean of the two smallest-κ estimates.
    pub plateau: f64,
    /// `|D(κ_min) - D(κ_second)| / plateau`.
    pub plateau_gap: f64,
}

/// One ensemble per molecular diffusivity (paired seeds), reporting
/// `D̂^E_11(T)` against `κ = σ²/2`.
pub fn residual_sweep<const D: usize, F: Flow<D>>(
    base: &ExperimentConfig,
    flow: &F,
    sigmas: &[f64],
) -> Result<ResidualTable> {
    if sigmas.len() < 2 {
        return Err(Error::config("sigmas", "need at least two values"));
    }
    if sigmas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::config("sigmas", "values must be strictly descending"));
    }
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let cfg = ExperimentConfig { sigma, ..base.clone() };
        let acc = run_ensemble_with::<D, F>(&cfg, flow, 1)?;
        let curve = effective_diffusivity(&acc, Estimator::from_flag(cfg.drift_correct))?;
        let (d11, stderr) = curve.last_d11();
        rows.push(ResidualRow {
            sigma,
            kappa: 0.5 * sigma * sigma,
            d11,
            stderr,
        });
    }
    let a = rows[rows.len() - 1].d11;
    let b = rows[rows.len() - 2].d11;
    let plateau = 0.5 * (a + b);
    let plateau_gap = if plateau != 0.0 { (a - b).abs() / plateau.abs() } else { 0.0 };
    Ok(ResidualTable {
        rows,
        plateau,
        plateau_gap,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftEstimate {
    pub dt: f64,
    pub samples: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl DriftEstimate {
    pub fn norm(&self) -> f64 {
        self.mean.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Mean one-step deterministic increment `B̄_Δt = E[Φ_Δt(x) - x]` from
/// independent single steps at the origin of fresh stationary fields.
///
/// Uses `Δt b(x)` as a control variate: its mean is zero for a mean-zero
/// flow, so `E[B_Δt(x) - Δt b(x)] = B̄_Δt` while the per-sample spread drops
/// from `O(Δt)` to `O(Δt²)`. Only valid for mean-zero flows.
pub fn estimate_increment_drift<const D: usize, F: Flow<D>>(
    cfg: &ExperimentConfig,
    flow: &F,
    samples: usize,
) -> Result<DriftEstimate> {
    if samples < 2 {
        return Err(Error::config("samples", "need at least two samples"));
    }
    let policy = SeedPolicy::new(cfg.seed);
    let chunks = samples.div_ceil(CHUNK_PATHS);
    let partials: Vec<(Vec<CompensatedSum>, Vec<CompensatedSum>, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s1 = vec![CompensatedSum::new(); D];
            let mut s2 = vec![CompensatedSum::new(); D];
            let mut failed = 0;
            for s in c * CHUNK_PATHS..((c + 1) * CHUNK_PATHS).min(samples) {
                let mut modes = policy.stream(StreamLabel::Modes, s as u64);
                let mut init = policy.stream(StreamLabel::OuInit, s as u64);
                let field = flow.realize(cfg.dt, &mut modes, &mut init);
                let x = [0.0; D];
                match step_deterministic(&field, &x, cfg.dt, &cfg.scheme) {
                    Ok(rec) => {
                        let b = field.velocity(&x);
                        for i in 0..D {
                            let v = rec.increment[i] - cfg.dt * b[i];
                            s1[i].add(v);
                            s2[i].add(v * v);
                        }
                    }
                    Err(_) => failed += 1,
                }
            }
            (s1, s2, failed)
        })
        .collect();
    let mut s1 = vec![CompensatedSum::new(); D];
    let mut s2 = vec![CompensatedSum::new(); D];
    let mut failed = 0;
    for (a, b, f) in &partials {
        for i in 0..D {
            s1[i].merge(&a[i]);
            s2[i].merge(&b[i]);
        }
        failed += f;
    }
    let n = (samples - failed) as f64;
    if n < 2.0 {
        return Err(Error::Estimation("too few successful samples".into()));
    }
    let mean: Vec<f64> = s1.iter().map(|s| s.value() / n).collect();
    let stderr = (0..D)
        .map(|i| {
            let var = ((s2[i].value() - n * mean[i] * mean[i]) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(DriftEstimate {
        dt: cfg.dt,
        samples: samples - failed,
        mean,
        stderr,
    })
}
