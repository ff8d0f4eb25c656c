//! Statistical and structural checks of the synthesized velocity fields.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ensemble::ExperimentConfig;
use crate::error::Result;
use crate::flow::Velocity;
use crate::linalg::{dot, norm};
use crate::rng::{SeedPolicy, Stream, StreamLabel};
use crate::spectral_field::{check_divergence, sample_modes, sample_radius, VelocityField};

/// 1% critical value of the chi-square distribution with 35 degrees of
/// freedom (36 bins).
pub const CHI2_35_CRIT_1PCT: f64 = 57.342;

/// Asymptotic 1% Kolmogorov-Smirnov coefficient: `D_crit = 1.63 / √n`.
pub const KS_COEFF_1PCT: f64 = 1.63;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<16} value = {:.3e}  threshold = {:.3e}  {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldReport {
    pub checks: Vec<CheckResult>,
}

impl FieldReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn uniform_points<const D: usize>(count: usize, rng: &mut Stream) -> Vec<[f64; D]> {
    (0..count)
        .map(|_| {
            let mut x = [0.0; D];
            for v in x.iter_mut() {
                *v = std::f64::consts::TAU * rng.random::<f64>();
            }
            x
        })
        .collect()
}

/// Relative FD divergence at 100 uniform points of `[0, 2π]^d`, `h = 1e-5`.
pub fn divergence_check<const D: usize, V: Velocity<D> + ?Sized>(field: &V, rng: &mut Stream) -> CheckResult {
    let points = uniform_points::<D>(100, rng);
    let value = check_divergence(field, &points, 1e-5);
    CheckResult {
        name: "divergence",
        value,
        threshold: 1e-6,
        pass: value <= 1e-6,
        detail: "max |div b| / |b| over 100 points, h = 1e-5".into(),
    }
}

/// Max of `|k_m · b_m(x)| / (|k_m| |b_m(x)|)` over modes and random points.
pub fn transversality_check<const D: usize>(field: &VelocityField<D>, points: usize, rng: &mut Stream) -> CheckResult {
    let mut worst = 0.0f64;
    for x in uniform_points::<D>(points, rng) {
        for (m, k) in field.modes().wavevectors().iter().enumerate() {
            let b = field.mode_velocity(m, &x);
            let denom = norm(k) * norm(&b);
            if denom > 0.0 {
                worst = worst.max(dot(k, &b).abs() / denom);
            }
        }
    }
    CheckResult {
        name: "transversality",
        value: worst,
        threshold: 1e-12,
        pass: worst <= 1e-12,
        detail: format!("max |k.b_m| / (|k||b_m|) over {points} points"),
    }
}

/// Kolmogorov-Smirnov distance between the sample and a continuous CDF.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// KS test of radii against `(r/K)^{2-2α}`.
pub fn spectrum_check(cutoff: f64, alpha: f64, samples: usize, rng: &mut Stream) -> CheckResult {
    let mut radii: Vec<f64> = (0..samples).map(|_| sample_radius(cutoff, alpha, rng)).collect();
    let p = 2.0 - 2.0 * alpha;
    let value = ks_distance(&mut radii, |r| (r / cutoff).clamp(0.0, 1.0).powf(p));
    let threshold = KS_COEFF_1PCT / (samples as f64).sqrt();
    CheckResult {
        name: "spectrum",
        value,
        threshold,
        pass: value < threshold,
        detail: format!("KS distance vs (r/K)^{p} over {samples} radii"),
    }
}

/// Chi-square statistic of wavevector azimuths on 36 equal bins.
pub fn isotropy_check<const D: usize>(cutoff: f64, alpha: f64, samples: usize, rng: &mut Stream) -> Result<CheckResult> {
    let set = sample_modes::<D>(samples, cutoff, alpha, rng)?;
    let mut bins = [0usize; 36];
    for k in set.wavevectors() {
        let phi = k[1].atan2(k[0]).rem_euclid(std::f64::consts::TAU);
        let b = ((phi / std::f64::consts::TAU) * 36.0) as usize;
        bins[b.min(35)] += 1;
    }
    let expected = samples as f64 / 36.0;
    let value: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    Ok(CheckResult {
        name: "isotropy",
        value,
        threshold: CHI2_35_CRIT_1PCT,
        pass: value <= CHI2_35_CRIT_1PCT,
        detail: format!("chi-square of k azimuths, 36 bins, {samples} modes"),
    })
}

/// Sample autocovariance of stationary OU chains at lags `0..=max_lag`.
///
/// Each chain starts from N(0, 1) and runs `window + max_lag` steps; lag
/// products are averaged over the `window` start times and all chains. The
/// mean is known to be zero and is not subtracted.
pub fn ou_autocovariance(
    theta: f64,
    dt: f64,
    chains: usize,
    window: usize,
    max_lag: usize,
    rng: &mut Stream,
) -> Vec<f64> {
    let decay = (-theta * dt).exp();
    let noise = (-(-2.0 * theta * dt).exp_m1()).max(0.0).sqrt();
    let len = window + max_lag;
    let mut path = vec![0.0; len];
    let mut sums = vec![0.0; max_lag + 1];
    for _ in 0..chains {
        path[0] = rng.sample(StandardNormal);
        for n in 1..len {
            let z: f64 = rng.sample(StandardNormal);
            path[n] = decay * path[n - 1] + noise * z;
        }
        for (lag, s) in sums.iter_mut().enumerate() {
            for start in 0..window {
                *s += path[start] * path[start + lag];
            }
        }
    }
    let denom = (chains * window) as f64;
    sums.iter().map(|s| s / denom).collect()
}

/// Lag autocovariances within `3 / √chains` of `exp(-θ ℓ Δt)`.
pub fn ou_covariance_check(theta: f64, dt: f64, chains: usize, rng: &mut Stream) -> CheckResult {
    let acov = ou_autocovariance(theta, dt, chains, 16, 5, rng);
    let value = acov
        .iter()
        .enumerate()
        .map(|(lag, c)| (c - (-theta * lag as f64 * dt).exp()).abs())
        .fold(0.0, f64::max);
    let threshold = 3.0 / (chains as f64).sqrt();
    CheckResult {
        name: "ou_covariance",
        value,
        threshold,
        pass: value <= threshold,
        detail: format!("max lag-0..5 deviation from exp(-theta l dt), {chains} chains"),
    }
}

fn field_checks<const D: usize>(cfg: &ExperimentConfig) -> Result<FieldReport> {
    let policy = SeedPolicy::new(cfg.seed);
    let mut streams = policy.path_streams(0);
    let flow = cfg.spectral_flow()?;
    let field: VelocityField<D> = flow.sample_field(cfg.dt, &mut streams.modes, &mut streams.ou_init)?;
    let aux = |n| policy.stream(StreamLabel::Aux(n), 0);
    let samples = 10_000;
    Ok(FieldReport {
        checks: vec![
            divergence_check(&field, &mut aux(1)),
            transversality_check(&field, 100, &mut aux(2)),
            spectrum_check(cfg.cutoff_k, cfg.alpha, samples.max(cfg.modes), &mut aux(3)),
            ou_covariance_check(cfg.theta, cfg.dt, samples, &mut aux(4)),
            isotropy_check::<D>(cfg.cutoff_k, cfg.alpha, samples, &mut aux(5))?,
        ],
    })
}

/// Runs all field checks for the configured flow.
pub fn run_fieldcheck(cfg: &ExperimentConfig) -> Result<FieldReport> {
    cfg.validate()?;
    match cfg.dim {
        2 => field_checks::<2>(cfg),
        _ => field_checks::<3>(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{SchemeConfig, SchemeKind};

    #[test]
    fn default_config_passes() {
        let report = run_fieldcheck(&ExperimentConfig::default()).unwrap();
        for c in &report.checks {
            assert!(c.pass, "{c}");
        }
    }

    #[test]
    fn three_d_config_passes() {
        let cfg = ExperimentConfig {
            dim: 3,
            modes: 100,
            scheme: SchemeConfig::new(SchemeKind::ModeSplit),
            ..ExperimentConfig::default()
        };
        assert!(run_fieldcheck(&cfg).unwrap().all_pass());
    }

    #[test]
    fn uniform_law_when_alpha_is_half() {
        let mut rng = SeedPolicy::new(3).stream(StreamLabel::Aux(9), 0);
        let c = spectrum_check(10.0, 0.5, 20_000, &mut rng);
        assert!(c.pass, "{c}");
        // a wrong law is rejected
        let mut radii: Vec<f64> = (0..20_000).map(|_| sample_radius(10.0, 0.5, &mut rng)).collect();
        assert!(ks_distance(&mut radii, |r| (r / 10.0).sqrt()) > 0.1);
    }

    #[test]
    fn non_transverse_field_fails_divergence() {
        struct Compressive;
        impl Velocity<2> for Compressive {
            fn velocity(&self, x: &[f64; 2]) -> [f64; 2] {
                // amplitude parallel to k = (1, 0)
                [x[0].cos() + 2.0, 0.0]
            }
            fn velocity_jacobian(&self, x: &[f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
                (self.velocity(x), [[-x[0].sin(), 0.0], [0.0, 0.0]])
            }
        }
        let mut rng = SeedPolicy::new(3).stream(StreamLabel::Aux(9), 1);
        assert!(!divergence_check(&Compressive, &mut rng).pass);
    }
}
