//! Discrete-time system models, the tracking controller and the closed-loop
//! error dynamics used by forward reachability.

mod bicycle;
mod error;
mod quadrotor;

pub use bicycle::{bicycle_step, Bicycle, PdTracker, TrackingErrorDynamics};
pub use error::{error_jacobian, error_step, finite_difference_jacobian, ErrorDynamics, LinearErrorDynamics};
pub use quadrotor::{
    flip_reference, quadrotor_step, PlanarQuadrotor, QuadrotorErrorDynamics, QuadrotorReference,
    QuadrotorTracker,
};

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DynamicsError {
    #[error("epoch {t} outside the reference horizon {horizon}")]
    EpochOutOfRange { t: usize, horizon: usize },
}

/// Discrete model `x+ = f(x, u)` that is invariant under translation of the
/// first `CYCLIC` state coordinates.
pub trait SystemModel<const N: usize, const M: usize> {
    const CYCLIC: usize;

    fn dt(&self) -> f64;
    fn input_lower(&self) -> SVector<f64, M>;
    fn input_upper(&self) -> SVector<f64, M>;
    fn step(&self, x: &SVector<f64, N>, u: &SVector<f64, M>) -> SVector<f64, N>;
    fn state_jacobian(&self, x: &SVector<f64, N>, u: &SVector<f64, M>) -> SMatrix<f64, N, N>;
    fn input_jacobian(&self, x: &SVector<f64, N>, u: &SVector<f64, M>) -> SMatrix<f64, N, M>;

    fn saturate(&self, u: &SVector<f64, M>) -> SVector<f64, M> {
        let lo = self.input_lower();
        let hi = self.input_upper();
        SVector::from_fn(|i, _| u[i].clamp(lo[i], hi[i]))
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
    }
}
