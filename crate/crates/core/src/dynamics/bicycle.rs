use nalgebra::{Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{wrap_angle, ErrorDynamics, SystemModel};
use crate::trajectory::{CarInput, CarState, Trajectory};

/// Kinematic bicycle `x = (p_x, p_y, theta)`, `u = (v, kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bicycle {
    pub dt: f64,
    pub input_lower: [f64; 2],
    pub input_upper: [f64; 2],
}

impl Default for Bicycle {
    fn default() -> Self {
        Self {
            dt: 0.01,
            input_lower: [0.0, -1.1],
            input_upper: [1.0, 1.1],
        }
    }
}

/// One Euler step of the bicycle kinematics with additive disturbance.
pub fn bicycle_step(x: &CarState, u: &CarInput, w: &[f64; 3], dt: f64) -> CarState {
    let (s, c) = x[2].sin_cos();
    [
        x[0] + u[0] * c * dt + w[0],
        x[1] + u[0] * s * dt + w[1],
        x[2] + u[0] * u[1] * dt + w[2],
    ]
}

impl SystemModel<3, 2> for Bicycle {
    const CYCLIC: usize = 2;

    fn dt(&self) -> f64 {
        self.dt
    }

    fn input_lower(&self) -> Vector2<f64> {
        Vector2::from(self.input_lower)
    }

    fn input_upper(&self) -> Vector2<f64> {
        Vector2::from(self.input_upper)
    }

    fn step(&self, x: &Vector3<f64>, u: &Vector2<f64>) -> Vector3<f64> {
        Vector3::from(bicycle_step(&(*x).into(), &(*u).into(), &[0.0; 3], self.dt))
    }

    fn state_jacobian(&self, x: &Vector3<f64>, u: &Vector2<f64>) -> Matrix3<f64> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        Matrix3::new(1.0, 0.0, -u[0] * s * dt, 0.0, 1.0, u[0] * c * dt, 0.0, 0.0, 1.0)
    }

    fn input_jacobian(&self, x: &Vector3<f64>, u: &Vector2<f64>) -> Matrix3x2<f64> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        Matrix3x2::new(c * dt, 0.0, s * dt, 0.0, u[1] * dt, u[0] * dt)
    }
}

/// Saturated PD tracking law on the path-frame errors
/// `(forward, leftward, heading)`.
///
/// The derivative term uses the rate of those errors predicted by the
/// kinematics when the car drives at the reference speed, which keeps the
/// law a memoryless function of `(x, x_r, u_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdTracker {
    pub kp: [[f64; 3]; 2],
    pub kd: [[f64; 3]; 2],
    pub input_lower: [f64; 2],
    pub input_upper: [f64; 2],
}

impl Default for PdTracker {
    fn default() -> Self {
        Self {
            kp: [[1.2, 0.0, 0.0], [0.0, 6.5, 0.4]],
            kd: [[0.15, 0.0, 0.0], [0.0, 3.0, 0.0]],
            input_lower: [0.0, -1.1],
            input_upper: [1.0, 1.1],
        }
    }
}

/// Controller output with the information needed for its Jacobian.
#[derive(Debug, Clone, Copy)]
pub struct TrackOutput {
    pub u: CarInput,
    pub saturated: [bool; 2],
    /// `d u_raw / d x` before saturation.
    pub raw_jacobian: Matrix2x3<f64>,
}

impl PdTracker {
    pub fn track(&self, x: &CarState, x_r: &CarState, u_r: &CarInput) -> CarInput {
        self.track_detailed(x, x_r, u_r).u
    }

    pub fn track_detailed(&self, x: &CarState, x_r: &CarState, u_r: &CarInput) -> TrackOutput {
        let (s, c) = x_r[2].sin_cos();
        let ex = x[0] - x_r[0];
        let ey = x[1] - x_r[1];
        let dth = wrap_angle(x[2] - x_r[2]);
        let df = c * ex + s * ey;
        let dl = -s * ex + c * ey;
        let v_r = u_r[0];
        let omega_r = u_r[0] * u_r[1];
        let (sth, cth) = dth.sin_cos();
        let rate = [omega_r * dl + v_r * (cth - 1.0), -omega_r * df + v_r * sth, 0.0];
        let feat = [df, dl, dth];

        let kp = Matrix2x3::from_row_slice(&[
            self.kp[0][0], self.kp[0][1], self.kp[0][2], self.kp[1][0], self.kp[1][1], self.kp[1][2],
        ]);
        let kd = Matrix2x3::from_row_slice(&[
            self.kd[0][0], self.kd[0][1], self.kd[0][2], self.kd[1][0], self.kd[1][1], self.kd[1][2],
        ]);
        let raw = Vector2::from(*u_r) - kp * Vector3::from(feat) - kd * Vector3::from(rate);

        let mut u = [0.0; 2];
        let mut saturated = [false; 2];
        for i in 0..2 {
            u[i] = raw[i].clamp(self.input_lower[i], self.input_upper[i]);
            saturated[i] = raw[i] < self.input_lower[i] || raw[i] > self.input_upper[i];
        }

        let dfeat = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
        let drate = Matrix3::new(
            -omega_r * s,
            omega_r * c,
            -v_r * sth,
            -omega_r * c,
            -omega_r * s,
            v_r * cth,
            0.0,
            0.0,
            0.0,
        );
        let raw_jacobian = -(kp * dfeat + kd * drate);
        TrackOutput {
            u,
            saturated,
            raw_jacobian,
        }
    }
}

/// Closed-loop error dynamics of the bicycle tracking a reference:
/// `h(t; e) = f(x_r(t) + e, k(x_r(t) + e, x_r(t), u_r(t))) - x_r(t + 1)`.
#[derive(Debug, Clone, Copy)]
pub struct TrackingErrorDynamics<'a> {
    pub model: &'a Bicycle,
    pub controller: &'a PdTracker,
    pub reference: &'a Trajectory,
}

impl<'a> TrackingErrorDynamics<'a> {
    pub fn new(model: &'a Bicycle, controller: &'a PdTracker, reference: &'a Trajectory) -> Self {
        Self {
            model,
            controller,
            reference,
        }
    }

    fn state_at(&self, t: usize, e: &Vector3<f64>) -> CarState {
        let r = &self.reference.states[t];
        [r[0] + e[0], r[1] + e[1], r[2] + e[2]]
    }
}

impl ErrorDynamics<3> for TrackingErrorDynamics<'_> {
    fn horizon(&self) -> usize {
        self.reference.horizon()
    }

    fn step(&self, t: usize, e: &Vector3<f64>) -> Vector3<f64> {
        let x = self.state_at(t, e);
        let u = self.controller.track(&x, &self.reference.states[t], &self.reference.inputs[t]);
        let next = bicycle_step(&x, &u, &[0.0; 3], self.model.dt);
        let r = &self.reference.states[t + 1];
        Vector3::new(next[0] - r[0], next[1] - r[1], next[2] - r[2])
    }

    fn jacobian(&self, t: usize, e: &Vector3<f64>) -> Matrix3<f64> {
        let x = self.state_at(t, e);
        let out = self
            .controller
            .track_detailed(&x, &self.reference.states[t], &self.reference.inputs[t]);
        let mut du = out.raw_jacobian;
        for i in 0..2 {
            if out.saturated[i] {
                du.row_mut(i).fill(0.0);
            }
        }
        let xv = Vector3::from(x);
        let uv = Vector2::from(out.u);
        self.model.state_jacobian(&xv, &uv) + self.model.input_jacobian(&xv, &uv) * du
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::finite_difference_jacobian;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn straight_step() {
        let x = bicycle_step(&[0.0, 0.0, 0.0], &[1.0, 0.0], &[0.0; 3], 0.01);
        assert_eq!(x, [0.01, 0.0, 0.0]);
    }

    #[test]
    fn heading_aligned_step() {
        let x = bicycle_step(&[0.0, 0.0, FRAC_PI_2], &[0.5, 0.0], &[0.0; 3], 0.01);
        assert!(x[0].abs() < 1e-15);
        assert!((x[1] - 0.005).abs() < 1e-15);
        assert_eq!(x[2], FRAC_PI_2);
    }

    #[test]
    fn substep_oracle() {
        let mut coarse = [0.0, 0.0, 0.0];
        let mut fine = [0.0, 0.0, 0.0];
        let u = [0.5, 1.1];
        for _ in 0..100 {
            coarse = bicycle_step(&coarse, &u, &[0.0; 3], 0.01);
            for _ in 0..10 {
                fine = bicycle_step(&fine, &u, &[0.0; 3], 0.001);
            }
        }
        let err = ((coarse[0] - fine[0]).powi(2) + (coarse[1] - fine[1]).powi(2)).sqrt();
        assert!(err < 1e-2, "{err}");
    }

    #[test]
    fn zero_error_passes_reference_input() {
        let c = PdTracker::default();
        let x = [1.0, 2.0, 0.3];
        assert_eq!(c.track(&x, &x, &[0.5, 0.2]), [0.5, 0.2]);
        assert_eq!(c.track(&x, &x, &[3.0, -5.0]), [1.0, -1.1]);
    }

    #[test]
    fn lateral_offset_reduces_curvature() {
        let c = PdTracker::default();
        let u = c.track(&[0.0, 0.1, 0.0], &[0.0, 0.0, 0.0], &[0.5, 0.0]);
        assert!((u[1] - (0.0 - 6.5 * 0.1)).abs() < 1e-12, "{u:?}");
        assert!((u[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn huge_gain_hits_bounds() {
        let c = PdTracker {
            kp: [[1e6, 0.0, 0.0], [0.0, 1e6, 1e6]],
            ..PdTracker::default()
        };
        let u = c.track(&[0.3, 0.2, 0.1], &[0.0, 0.0, 0.0], &[0.5, 0.0]);
        assert_eq!(u, [0.0, -1.1]);
        let u = c.track(&[-0.3, -0.2, -0.1], &[0.0, 0.0, 0.0], &[0.5, 0.0]);
        assert_eq!(u, [1.0, 1.1]);
    }

    fn arc(n: usize, kappa: f64) -> Trajectory {
        let mut states = vec![[0.0, 0.0, 0.0]];
        for _ in 0..n {
            let s = bicycle_step(states.last().unwrap(), &[0.5, kappa], &[0.0; 3], 0.01);
            states.push(s);
        }
        Trajectory::new(states, vec![[0.5, kappa]; n], 0.01)
    }

    #[test]
    fn zero_error_fixed_point() {
        let model = Bicycle::default();
        let ctrl = PdTracker::default();
        let r = arc(50, 0.7);
        let ed = TrackingErrorDynamics::new(&model, &ctrl, &r);
        for t in 0..50 {
            let e = ed.step(t, &Vector3::zeros());
            assert!(e.norm() < 1e-9);
        }
    }

    #[test]
    fn zero_gain_jacobian_is_open_loop() {
        let model = Bicycle::default();
        let ctrl = PdTracker {
            kp: [[0.0; 3]; 2],
            kd: [[0.0; 3]; 2],
            ..PdTracker::default()
        };
        let r = arc(10, 0.3);
        let ed = TrackingErrorDynamics::new(&model, &ctrl, &r);
        let j = ed.jacobian(4, &Vector3::zeros());
        let x = Vector3::from(r.states[4]);
        let expect = model.state_jacobian(&x, &Vector2::new(0.5, 0.3));
        assert!((j - expect).amax() < 1e-12);
    }

    #[test]
    fn analytic_matches_finite_difference() {
        let model = Bicycle::default();
        let ctrl = PdTracker::default();
        let r = arc(20, -0.5);
        let ed = TrackingErrorDynamics::new(&model, &ctrl, &r);
        let e = Vector3::new(0.03, -0.02, 0.05);
        let a = ed.jacobian(7, &e);
        let fd = finite_difference_jacobian(&ed, 7, &e, 1e-5);
        assert!((a - fd).amax() < 1e-4, "{a} {fd}");
    }
}
