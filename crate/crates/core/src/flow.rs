//! Velocity-field abstractions shared by the integrators and the ensemble
//! runner, plus a few closed-form flows used as baselines and controls.

use crate::rng::Stream;

/// A frozen velocity field `x -> b(t_n, x)`.
pub trait Velocity<const D: usize> {
    fn velocity(&self, x: &[f64; D]) -> [f64; D];

    /// Velocity together with its spatial Jacobian `J[i][j] = d b_i / d x_j`.
    fn velocity_jacobian(&self, x: &[f64; D]) -> ([f64; D], [[f64; D]; D]);

    /// Number of additive components the field splits into. Each component
    /// must be transverse to its own gradient direction for the mode-split
    /// scheme to be an exact shear; the default treats the whole field as
    /// one component.
    fn mode_count(&self) -> usize {
        1
    }

    fn mode_velocity(&self, _m: usize, x: &[f64; D]) -> [f64; D] {
        self.velocity(x)
    }
}

/// The law of a random time-dependent field: how to draw a realization at
/// `t = 0` and how to move it forward one macro step.
pub trait Flow<const D: usize>: Sync {
    type Field: Velocity<D> + Clone + Send;

    fn realize(&self, dt: f64, modes: &mut Stream, ou_init: &mut Stream) -> Self::Field;

    /// Advances the field by one macro step. `substeps` splits the step into
    /// that many equal noise increments so runs at different step sizes can
    /// share the same underlying noise.
    fn advance(&self, field: &mut Self::Field, substeps: u32, ou_noise: &mut Stream);
}

/// `b ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFlow;

impl<const D: usize> Velocity<D> for ZeroFlow {
    fn velocity(&self, _x: &[f64; D]) -> [f64; D] {
        [0.0; D]
    }

    fn velocity_jacobian(&self, _x: &[f64; D]) -> ([f64; D], [[f64; D]; D]) {
        ([0.0; D], [[0.0; D]; D])
    }
}

impl<const D: usize> Flow<D> for ZeroFlow {
    type Field = ZeroFlow;

    fn realize(&self, _dt: f64, _modes: &mut Stream, _ou_init: &mut Stream) -> Self::Field {
        ZeroFlow
    }

    fn advance(&self, _field: &mut Self::Field, _substeps: u32, _ou_noise: &mut Stream) {}
}

/// `b ≡ c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFlow<const D: usize>(pub [f64; D]);

impl<const D: usize> Velocity<D> for ConstantFlow<D> {
    fn velocity(&self, _x: &[f64; D]) -> [f64; D] {
        self.0
    }

    fn velocity_jacobian(&self, _x: &[f64; D]) -> ([f64; D], [[f64; D]; D]) {
        (self.0, [[0.0; D]; D])
    }
}

impl<const D: usize> Flow<D> for ConstantFlow<D> {
    type Field = ConstantFlow<D>;

    fn realize(&self, _dt: f64, _modes: &mut Stream, _ou_init: &mut Stream) -> Self::Field {
        *self
    }

    fn advance(&self, _field: &mut Self::Field, _substeps: u32, _ou_noise: &mut Stream) {}
}

/// Frozen shear `b(x) = (cos x_2, 0)`: ballistic along x_1 from the origin.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShearFlow;

impl Velocity<2> for ShearFlow {
    fn velocity(&self, x: &[f64; 2]) -> [f64; 2] {
        [x[1].cos(), 0.0]
    }

    fn velocity_jacobian(&self, x: &[f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        ([x[1].cos(), 0.0], [[0.0, -x[1].sin()], [0.0, 0.0]])
    }
}

impl Flow<2> for ShearFlow {
    type Field = ShearFlow;

    fn realize(&self, _dt: f64, _modes: &mut Stream, _ou_init: &mut Stream) -> Self::Field {
        ShearFlow
    }

    fn advance(&self, _field: &mut Self::Field, _substeps: u32, _ou_noise: &mut Stream) {}
}
