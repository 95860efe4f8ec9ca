use nalgebra::{SMatrix, SVector};

use super::DynamicsError;

/// Time-varying closed-loop error map `e(t + 1) = h(t; e(t)) + w(t)` on the
/// epochs `0..horizon()`.
pub trait ErrorDynamics<const N: usize> {
    fn horizon(&self) -> usize;

    /// Noiseless `h(t; e)`.
    fn step(&self, t: usize, e: &SVector<f64, N>) -> SVector<f64, N>;

    /// `dh(t; .)/de`; central differences unless overridden.
    fn jacobian(&self, t: usize, e: &SVector<f64, N>) -> SMatrix<f64, N, N> {
        finite_difference_jacobian(self, t, e, 1e-5)
    }
}

pub fn finite_difference_jacobian<const N: usize, D: ErrorDynamics<N> + ?Sized>(
    ed: &D,
    t: usize,
    e: &SVector<f64, N>,
    h: f64,
) -> SMatrix<f64, N, N> {
    let mut j = SMatrix::<f64, N, N>::zeros();
    for k in 0..N {
        let mut ep = *e;
        let mut em = *e;
        ep[k] += h;
        em[k] -= h;
        let col = (ed.step(t, &ep) - ed.step(t, &em)) / (2.0 * h);
        j.set_column(k, &col);
    }
    j
}

/// Range-checked `h(t; e) + w`.
pub fn error_step<const N: usize, D: ErrorDynamics<N> + ?Sized>(
    ed: &D,
    t: usize,
    e: &SVector<f64, N>,
    w: &SVector<f64, N>,
) -> Result<SVector<f64, N>, DynamicsError> {
    check_epoch(ed.horizon(), t)?;
    Ok(ed.step(t, e) + w)
}

pub fn error_jacobian<const N: usize, D: ErrorDynamics<N> + ?Sized>(
    ed: &D,
    t: usize,
    e: &SVector<f64, N>,
) -> Result<SMatrix<f64, N, N>, DynamicsError> {
    check_epoch(ed.horizon(), t)?;
    Ok(ed.jacobian(t, e))
}

fn check_epoch(horizon: usize, t: usize) -> Result<(), DynamicsError> {
    if t >= horizon {
        Err(DynamicsError::EpochOutOfRange { t, horizon })
    } else {
        Ok(())
    }
}

/// Linear time-varying closed loop `h(t; e) = A_t e`; a single matrix gives
/// the time-invariant case.
#[derive(Debug, Clone)]
pub struct LinearErrorDynamics<const N: usize> {
    pub matrices: Vec<SMatrix<f64, N, N>>,
    pub horizon: usize,
}

impl<const N: usize> LinearErrorDynamics<N> {
    pub fn time_invariant(a: SMatrix<f64, N, N>, horizon: usize) -> Self {
        Self {
            matrices: vec![a],
            horizon,
        }
    }

    fn at(&self, t: usize) -> &SMatrix<f64, N, N> {
        &self.matrices[t.min(self.matrices.len() - 1)]
    }
}

impl<const N: usize> ErrorDynamics<N> for LinearErrorDynamics<N> {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn step(&self, t: usize, e: &SVector<f64, N>) -> SVector<f64, N> {
        self.at(t) * e
    }

    fn jacobian(&self, t: usize, _e: &SVector<f64, N>) -> SMatrix<f64, N, N> {
        *self.at(t)
    }
}
