//! Stationary, mean-zero, divergence-free random velocity fields built by
//! the randomization method:
//!
//! ```text
//! b(t, x) = M^{-1/2} Σ_m [ u_m(t) cos(k_m·x) + v_m(t) sin(k_m·x) ]
//! ```
//!
//! In 2D the amplitudes are `u_m = ξ_m ŝ_m`, `v_m = η_m ŝ_m` with
//! `ŝ_m = k_m^⊥/|k_m^⊥|`, `k^⊥ = (-k_2, k_1)`. In 3D they are
//! `u_m = ξ_m × k̂_m`, `v_m = η_m × k̂_m` (right-handed cross product).
//! Every amplitude is orthogonal to its wavevector, so each mode and hence
//! the sum is exactly divergence-free. The ξ/η components are independent
//! stationary OU processes with covariance `exp(-θ|t_1 - t_2|)`, sampled
//! exactly on the time grid.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flow::{Flow, Velocity};
use crate::linalg::{cross, dot, norm};
use crate::rng::Stream;

/// OU scalars per amplitude vector: 1 in 2D, 3 in 3D.
pub const fn ou_components(dim: usize) -> usize {
    if dim == 2 {
        1
    } else {
        dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModeSet<const D: usize> {
    wavevectors: Vec<[f64; D]>,
    /// 2D: unit `k^⊥`; 3D: unit `k`.
    frames: Vec<[f64; D]>,
}

impl<const D: usize> SpectralModeSet<D> {
    /// Builds a mode set from explicit wavevectors (frames derived).
    pub fn from_wavevectors(wavevectors: Vec<[f64; D]>) -> Result<Self> {
        check_dimension(D)?;
        if wavevectors.is_empty() {
            return Err(Error::config("modes", "mode count must be at least 1"));
        }
        let mut frames = Vec::with_capacity(wavevectors.len());
        for k in &wavevectors {
            let r = norm(k);
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::config("modes", "wavevectors must be finite and nonzero"));
            }
            frames.push(frame_of(k));
        }
        Ok(Self {
            wavevectors,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.wavevectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavevectors.is_empty()
    }

    pub fn wavevectors(&self) -> &[[f64; D]] {
        &self.wavevectors
    }

    pub fn frames(&self) -> &[[f64; D]] {
        &self.frames
    }
}

fn check_dimension(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::config("dim", format!("dimension must be 2 or 3, got {dim}")))
    }
}

fn frame_of<const D: usize>(k: &[f64; D]) -> [f64; D] {
    let mut f = [0.0; D];
    if D == 2 {
        f[0] = -k[1];
        f[1] = k[0];
    } else {
        f = *k;
    }
    let r = norm(&f);
    for v in f.iter_mut() {
        *v /= r;
    }
    f
}

/// Checks the radial-law parameters shared by sampling and configuration.
pub fn validate_spectrum(count: usize, cutoff: f64, alpha: f64) -> Result<()> {
    if count < 1 {
        return Err(Error::config("modes", "mode count must be at least 1"));
    }
    if !(cutoff > 0.0) || !cutoff.is_finite() {
        return Err(Error::config("cutoff_k", format!("cutoff must be positive and finite, got {cutoff}")));
    }
    if !(alpha < 1.0) || !alpha.is_finite() {
        return Err(Error::config(
            "alpha",
            format!("spectral exponent must satisfy alpha < 1 for an integrable spectrum, got {alpha}"),
        ));
    }
    Ok(())
}

/// Radius with density `ρ(r) ∝ r^{1-2α}` on `(0, K]`, by inverse CDF
/// `r = K U^{1/(2-2α)}`.
pub fn sample_radius(cutoff: f64, alpha: f64, rng: &mut Stream) -> f64 {
    let exponent = 1.0 / (2.0 - 2.0 * alpha);
    loop {
        // 1 - U lies in (0, 1].
        let u = 1.0 - rng.random::<f64>();
        let r = cutoff * u.powf(exponent);
        if r > 0.0 {
            return r;
        }
    }
}

fn sample_direction<const D: usize>(rng: &mut Stream) -> [f64; D] {
    let mut dir = [0.0; D];
    if D == 2 {
        let phi = std::f64::consts::TAU * rng.random::<f64>();
        dir[0] = phi.cos();
        dir[1] = phi.sin();
    } else {
        loop {
            for v in dir.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let r = norm(&dir);
            if r > 1e-300 {
                for v in dir.iter_mut() {
                    *v /= r;
                }
                break;
            }
        }
    }
    dir
}

/// Draws `count` isotropic wavevectors with radial law `ρ(r) ∝ r^{1-2α}`,
/// `0 < r ≤ K`.
pub fn sample_modes<const D: usize>(
    count: usize,
    cutoff: f64,
    alpha: f64,
    rng: &mut Stream,
) -> Result<SpectralModeSet<D>> {
    check_dimension(D)?;
    validate_spectrum(count, cutoff, alpha)?;
    let mut wavevectors = Vec::with_capacity(count);
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let dir: [f64; D] = sample_direction(rng);
        let r = sample_radius(cutoff, alpha, rng);
        let mut k = dir;
        for v in k.iter_mut() {
            *v *= r;
        }
        frames.push(frame_of(&k));
        wavevectors.push(k);
    }
    Ok(SpectralModeSet {
        wavevectors,
        frames,
    })
}

/// Per-mode OU amplitudes ξ_m, η_m on the grid `t_n = n Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuAmplitudeState {
    xi: Vec<f64>,
    eta: Vec<f64>,
    components: usize,
    theta: f64,
    dt: f64,
    step: u64,
}

impl OuAmplitudeState {
    /// State from explicit values; `xi` and `eta` hold `components` scalars
    /// per mode.
    pub fn from_values(xi: Vec<f64>, eta: Vec<f64>, components: usize, theta: f64, dt: f64) -> Self {
        assert_eq!(xi.len(), eta.len());
        assert_eq!(xi.len() % components, 0);
        Self {
            xi,
            eta,
            components,
            theta,
            dt,
            step: 0,
        }
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of stored scalars (ξ and η together).
    pub fn scalar_count(&self) -> usize {
        self.xi.len() + self.eta.len()
    }

    /// One macro step of the exact OU recursion
    /// `ξ ← e^{-θΔt} ξ + sqrt(1 - e^{-2θΔt}) ζ`.
    pub fn advance(&mut self, rng: &mut Stream) {
        self.advance_substeps(1, rng);
    }

    /// One macro step taken as `substeps` exact sub-recursions of size
    /// `Δt / substeps`. The law is identical to a single step; the draw
    /// sequence matches a run whose macro step is `Δt / substeps`.
    pub fn advance_substeps(&mut self, substeps: u32, rng: &mut Stream) {
        let substeps = substeps.max(1);
        let h = self.dt / substeps as f64;
        let decay = (-self.theta * h).exp();
        let noise = (-(-2.0 * self.theta * h).exp_m1()).max(0.0).sqrt();
        for _ in 0..substeps {
            for v in self.xi.iter_mut().chain(self.eta.iter_mut()) {
                let z: f64 = rng.sample(StandardNormal);
                *v = decay * *v + noise * z;
            }
        }
        self.step += 1;
    }
}

/// Fresh stationary OU state: every scalar i.i.d. N(0, 1), step index 0.
pub fn init_ou<const D: usize>(
    modes: &SpectralModeSet<D>,
    theta: f64,
    dt: f64,
    rng: &mut Stream,
) -> OuAmplitudeState {
    let c = ou_components(D);
    let n = modes.len() * c;
    let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let eta: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    OuAmplitudeState::from_values(xi, eta, c, theta, dt)
}

/// Advances a copy of `state` by one step.
pub fn advance_ou(state: &OuAmplitudeState, rng: &mut Stream) -> OuAmplitudeState {
    let mut next = state.clone();
    next.advance(rng);
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField<const D: usize> {
    modes: SpectralModeSet<D>,
    ou: OuAmplitudeState,
    scale: f64,
}

impl<const D: usize> VelocityField<D> {
    pub fn new(modes: SpectralModeSet<D>, ou: OuAmplitudeState) -> Result<Self> {
        check_dimension(D)?;
        if ou.components != ou_components(D) || ou.xi.len() != modes.len() * ou.components {
            return Err(Error::config("modes", "OU state does not match the mode set"));
        }
        let scale = 1.0 / (modes.len() as f64).sqrt();
        Ok(Self { modes, ou, scale })
    }

    pub fn modes(&self) -> &SpectralModeSet<D> {
        &self.modes
    }

    pub fn ou(&self) -> &OuAmplitudeState {
        &self.ou
    }

    pub fn ou_mut(&mut self) -> &mut OuAmplitudeState {
        &mut self.ou
    }

    /// `A_m (ξ_m c + η_m s)` without the `1/√M` factor.
    #[inline]
    fn amplitude(&self, m: usize, c: f64, s: f64) -> [f64; D] {
        let frame = &self.modes.frames[m];
        if D == 2 {
            let a = self.ou.xi[m] * c + self.ou.eta[m] * s;
            let mut out = [0.0; D];
            for i in 0..D {
                out[i] = a * frame[i];
            }
            out
        } else {
            let base = m * D;
            let mut a = [0.0; D];
            for i in 0..D {
                a[i] = self.ou.xi[base + i] * c + self.ou.eta[base + i] * s;
            }
            cross(&a, frame)
        }
    }

    /// Exact finite sum, Θ(M).
    pub fn eval_velocity(&self, x: &[f64; D]) -> [f64; D] {
        let mut b = [0.0; D];
        for m in 0..self.modes.len() {
            let (s, c) = dot(&self.modes.wavevectors[m], x).sin_cos();
            let a = self.amplitude(m, c, s);
            for i in 0..D {
                b[i] += a[i];
            }
        }
        for v in b.iter_mut() {
            *v *= self.scale;
        }
        b
    }
}

impl<const D: usize> Velocity<D> for VelocityField<D> {
    fn velocity(&self, x: &[f64; D]) -> [f64; D] {
        self.eval_velocity(x)
    }

    fn velocity_jacobian(&self, x: &[f64; D]) -> ([f64; D], [[f64; D]; D]) {
        let mut b = [0.0; D];
        let mut jac = [[0.0; D]; D];
        for m in 0..self.modes.len() {
            let k = &self.modes.wavevectors[m];
            let (s, c) = dot(k, x).sin_cos();
            let a = self.amplitude(m, c, s);
            // d/dφ of (ξ c + η s) is (-ξ s + η c).
            let w = self.amplitude(m, -s, c);
            for i in 0..D {
                b[i] += a[i];
                for j in 0..D {
                    jac[i][j] += w[i] * k[j];
                }
            }
        }
        for i in 0..D {
            b[i] *= self.scale;
            for j in 0..D {
                jac[i][j] *= self.scale;
            }
        }
        (b, jac)
    }

    fn mode_count(&self) -> usize {
        self.modes.len()
    }

    fn mode_velocity(&self, m: usize, x: &[f64; D]) -> [f64; D] {
        let (s, c) = dot(&self.modes.wavevectors[m], x).sin_cos();
        let mut a = self.amplitude(m, c, s);
        for v in a.iter_mut() {
            *v *= self.scale;
        }
        a
    }
}

/// Randomization-method flow law with power-law spectrum and OU
/// decorrelation at rate θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralFlow {
    pub modes: usize,
    pub cutoff: f64,
    pub alpha: f64,
    pub theta: f64,
}

impl SpectralFlow {
    pub fn new(modes: usize, cutoff: f64, alpha: f64, theta: f64) -> Result<Self> {
        validate_spectrum(modes, cutoff, alpha)?;
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::config("theta", "mixing rate must be finite and non-negative"));
        }
        Ok(Self {
            modes,
            cutoff,
            alpha,
            theta,
        })
    }

    pub fn sample_field<const D: usize>(
        &self,
        dt: f64,
        modes_rng: &mut Stream,
        ou_rng: &mut Stream,
    ) -> Result<VelocityField<D>> {
        let set = sample_modes::<D>(self.modes, self.cutoff, self.alpha, modes_rng)?;
        let ou = init_ou(&set, self.theta, dt, ou_rng);
        VelocityField::new(set, ou)
    }
}

impl<const D: usize> Flow<D> for SpectralFlow {
    type Field = VelocityField<D>;

    fn realize(&self, dt: f64, modes: &mut Stream, ou_init: &mut Stream) -> Self::Field {
        self.sample_field(dt, modes, ou_init)
            .expect("spectral flow parameters validated at construction")
    }

    fn advance(&self, field: &mut Self::Field, substeps: u32, ou_noise: &mut Stream) {
        field.ou.advance_substeps(substeps, ou_noise);
    }
}

/// Max over `points` of the central-difference divergence relative to the
/// local speed, `|Σ_i (b_i(x+h e_i) - b_i(x-h e_i)) / 2h| / (|b(x)| + 1e-30)`.
pub fn check_divergence<const D: usize, V: Velocity<D> + ?Sized>(
    field: &V,
    points: &[[f64; D]],
    h: f64,
) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut worst = 0.0f64;
    for x in points {
        let mut div = 0.0;
        for i in 0..D {
            let mut xp = *x;
            let mut xm = *x;
            xp[i] += h;
            xm[i] -= h;
            div += (field.velocity(&xp)[i] - field.velocity(&xm)[i]) / (2.0 * h);
        }
        let speed = norm(&field.velocity(x));
        worst = worst.max(div.abs() / (speed + 1e-30));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedPolicy, StreamLabel};

    fn rng(i: u64) -> Stream {
        SeedPolicy::new(2024).stream(StreamLabel::Aux(1), i)
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut r = rng(0);
        assert!(sample_modes::<2>(10, 10.0, 1.0, &mut r).is_err());
        assert!(sample_modes::<2>(10, 10.0, 1.5, &mut r).is_err());
        assert!(sample_modes::<2>(10, 0.0, 0.5, &mut r).is_err());
        assert!(sample_modes::<2>(0, 10.0, 0.5, &mut r).is_err());
        assert!(sample_modes::<4>(10, 10.0, 0.5, &mut r).is_err());
    }

    #[test]
    fn frames_are_unit_and_transverse_in_2d() {
        let set = sample_modes::<2>(5000, 10.0, 0.75, &mut rng(1)).unwrap();
        for (k, s) in set.wavevectors().iter().zip(set.frames()) {
            let r = norm(k);
            assert!(r > 0.0 && r <= 10.0);
            assert!((norm(s) - 1.0).abs() < 1e-12);
            assert!(dot(s, k).abs() < 1e-12);
        }
    }

    #[test]
    fn frames_are_unit_and_parallel_in_3d() {
        let set = sample_modes::<3>(2000, 10.0, 0.75, &mut rng(2)).unwrap();
        for (k, f) in set.wavevectors().iter().zip(set.frames()) {
            assert!(norm(k) <= 10.0);
            assert!((norm(f) - 1.0).abs() < 1e-12);
            let c = cross(k, f);
            assert!(norm(&c) < 1e-12 * norm(k).max(1.0));
        }
    }

    #[test]
    fn uniform_radius_when_alpha_is_half() {
        // density ∝ r^0: r/K is uniform
        let mut r = rng(3);
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_radius(4.0, 0.5, &mut r) / 4.0;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12.0 / n as f64).sqrt());
    }

    #[test]
    fn ou_state_shapes() {
        let s2 = sample_modes::<2>(7, 10.0, 0.75, &mut rng(4)).unwrap();
        assert_eq!(init_ou(&s2, 1.0, 0.1, &mut rng(5)).scalar_count(), 14);
        let s3 = sample_modes::<3>(7, 10.0, 0.75, &mut rng(4)).unwrap();
        let ou = init_ou(&s3, 1.0, 0.1, &mut rng(5));
        assert_eq!(ou.scalar_count(), 42);
        assert_eq!(ou.step(), 0);
    }

    #[test]
    fn frozen_ou_when_theta_is_zero() {
        let s = sample_modes::<2>(20, 10.0, 0.75, &mut rng(6)).unwrap();
        let ou = init_ou(&s, 0.0, 0.1, &mut rng(7));
        let next = advance_ou(&ou, &mut rng(8));
        assert_eq!(next.xi(), ou.xi());
        assert_eq!(next.eta(), ou.eta());
        assert_eq!(next.step(), 1);
    }

    #[test]
    fn fully_decorrelated_when_theta_dt_is_large() {
        let s = sample_modes::<2>(1, 10.0, 0.75, &mut rng(9)).unwrap();
        let ou = OuAmplitudeState::from_values(vec![1e6], vec![-1e6], 1, 400.0, 0.05);
        let next = advance_ou(&ou, &mut rng(10));
        // e^{-20} * 1e6 ≈ 2e-3; the rest is a fresh N(0,1) draw
        assert!((next.xi()[0] - 1e6 * (-20.0f64).exp()).abs() < 6.0);
        let _ = s;
    }

    #[test]
    fn single_mode_2d_hand_value() {
        let set = SpectralModeSet::from_wavevectors(vec![[1.0, 0.0]]).unwrap();
        let ou = OuAmplitudeState::from_values(vec![1.0], vec![0.0], 1, 1.0, 0.1);
        let field = VelocityField::new(set, ou).unwrap();
        for x in [[0.0, 0.0], [0.7, -2.0], [3.0, 1.0]] {
            let b = field.eval_velocity(&x);
            assert!(b[0].abs() < 1e-15);
            assert!((b[1] - x[0].cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn single_mode_3d_hand_value() {
        // (1,0,0) × (0,0,1) = (0,-1,0)
        let set = SpectralModeSet::from_wavevectors(vec![[0.0, 0.0, 2.0]]).unwrap();
        let ou = OuAmplitudeState::from_values(vec![1.0, 0.0, 0.0], vec![0.0; 3], 3, 1.0, 0.1);
        let field = VelocityField::new(set, ou).unwrap();
        for x in [[0.0, 0.0, 0.0], [0.3, 0.1, 0.9], [1.0, 2.0, -1.3]] {
            let b = field.eval_velocity(&x);
            assert!(b[0].abs() < 1e-15 && b[2].abs() < 1e-15);
            assert!((b[1] + (2.0 * x[2]).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let flow = SpectralFlow::new(50, 10.0, 0.75, 1.0).unwrap();
        let field: VelocityField<3> = flow.sample_field(0.01, &mut rng(11), &mut rng(12)).unwrap();
        let x = [0.3, -0.2, 1.1];
        let (b, jac) = field.velocity_jacobian(&x);
        assert_eq!(b, field.eval_velocity(&x));
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let bp = field.eval_velocity(&xp);
            let bm = field.eval_velocity(&xm);
            for i in 0..3 {
                let fd = (bp[i] - bm[i]) / (2.0 * h);
                assert!((fd - jac[i][j]).abs() < 1e-6, "J[{i}][{j}]");
            }
        }
        let trace: f64 = (0..3).map(|i| jac[i][i]).sum();
        assert!(trace.abs() < 1e-12);
    }

    #[test]
    fn divergence_check_detects_identity_field() {
        struct Identity;
        impl Velocity<2> for Identity {
            fn velocity(&self, x: &[f64; 2]) -> [f64; 2] {
                *x
            }
            fn velocity_jacobian(&self, x: &[f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
                (*x, [[1.0, 0.0], [0.0, 1.0]])
            }
        }
        let x = [3.0, 4.0];
        let v = check_divergence(&Identity, &[x], 1e-5);
        assert!((v - 2.0 / 5.0).abs() < 1e-8);
        let c = check_divergence(&crate::flow::ConstantFlow([1.0, -2.0]), &[x], 1e-5);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn identical_seeds_identical_fields() {
        let flow = SpectralFlow::new(30, 10.0, 0.75, 2.0).unwrap();
        let mut a: VelocityField<2> = flow.sample_field(0.05, &mut rng(13), &mut rng(14)).unwrap();
        let mut b: VelocityField<2> = flow.sample_field(0.05, &mut rng(13), &mut rng(14)).unwrap();
        assert_eq!(a, b);
        let (mut na, mut nb) = (rng(15), rng(15));
        for _ in 0..10 {
            a.ou_mut().advance(&mut na);
            b.ou_mut().advance(&mut nb);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn substep_advance_matches_fine_steps() {
        let set = sample_modes::<2>(5, 10.0, 0.75, &mut rng(16)).unwrap();
        let coarse0 = init_ou(&set, 3.0, 0.08, &mut rng(17));
        let mut fine = OuAmplitudeState::from_values(
            coarse0.xi().to_vec(),
            coarse0.eta().to_vec(),
            1,
            3.0,
            0.02,
        );
        let mut coarse = coarse0.clone();
        let (mut rc, mut rf) = (rng(18), rng(18));
        coarse.advance_substeps(4, &mut rc);
        for _ in 0..4 {
            fine.advance(&mut rf);
        }
        for (a, b) in coarse.xi().iter().zip(fine.xi()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
