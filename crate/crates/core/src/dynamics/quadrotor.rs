use nalgebra::{Matrix6, SMatrix, Vector2, Vector6};

use super::{ErrorDynamics, SystemModel};

/// Planar quadrotor with state `(x, y, theta, vx, vy, omega)` and input
/// `(thrust, torque)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarQuadrotor {
    pub mass: f64,
    pub inertia: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_thrust: f64,
    pub max_torque: f64,
}

impl Default for PlanarQuadrotor {
    fn default() -> Self {
        Self {
            mass: 0.5,
            inertia: 0.01,
            gravity: 9.81,
            dt: 0.01,
            max_thrust: 20.0,
            max_torque: 2.0,
        }
    }
}

/// Euler step of the planar quadrotor with additive disturbance.
pub fn quadrotor_step(q: &PlanarQuadrotor, x: &[f64; 6], u: &[f64; 2], w: &[f64; 6], dt: f64) -> [f64; 6] {
    let (s, c) = x[2].sin_cos();
    let ax = -(u[0] / q.mass) * s;
    let ay = (u[0] / q.mass) * c - q.gravity;
    let alpha = u[1] / q.inertia;
    [
        x[0] + x[3] * dt + w[0],
        x[1] + x[4] * dt + w[1],
        x[2] + x[5] * dt + w[2],
        x[3] + ax * dt + w[3],
        x[4] + ay * dt + w[4],
        x[5] + alpha * dt + w[5],
    ]
}

impl SystemModel<6, 2> for PlanarQuadrotor {
    const CYCLIC: usize = 2;

    fn dt(&self) -> f64 {
        self.dt
    }

    fn input_lower(&self) -> Vector2<f64> {
        Vector2::new(0.0, -self.max_torque)
    }

    fn input_upper(&self) -> Vector2<f64> {
        Vector2::new(self.max_thrust, self.max_torque)
    }

    fn step(&self, x: &Vector6<f64>, u: &Vector2<f64>) -> Vector6<f64> {
        let xs: [f64; 6] = (*x).into();
        Vector6::from(quadrotor_step(self, &xs, &[u[0], u[1]], &[0.0; 6], self.dt))
    }

    fn state_jacobian(&self, x: &Vector6<f64>, u: &Vector2<f64>) -> Matrix6<f64> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        let mut j = Matrix6::identity();
        j[(0, 3)] = dt;
        j[(1, 4)] = dt;
        j[(2, 5)] = dt;
        j[(3, 2)] = -(u[0] / self.mass) * c * dt;
        j[(4, 2)] = -(u[0] / self.mass) * s * dt;
        j
    }

    fn input_jacobian(&self, x: &Vector6<f64>, _u: &Vector2<f64>) -> SMatrix<f64, 6, 2> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        let mut j = SMatrix::<f64, 6, 2>::zeros();
        j[(3, 0)] = -s / self.mass * dt;
        j[(4, 0)] = c / self.mass * dt;
        j[(5, 1)] = dt / self.inertia;
        j
    }
}

/// Reference rollout for the quadrotor.
#[derive(Debug, Clone)]
pub struct QuadrotorReference {
    pub states: Vec<[f64; 6]>,
    pub inputs: Vec<[f64; 2]>,
}

/// Open-loop flip: climb, spin through a full turn with a torque doublet,
/// then recover, starting from hover at 1 m. Returns the noiseless rollout.
pub fn flip_reference(q: &PlanarQuadrotor) -> QuadrotorReference {
    let hover = q.mass * q.gravity;
    let spin_steps = (0.25 / q.dt).round() as usize;
    let spin_time = spin_steps as f64 * q.dt;
    let torque = 2.0 * std::f64::consts::PI * q.inertia / (spin_time * spin_time);
    let mut inputs = Vec::new();
    inputs.extend(std::iter::repeat([1.6 * hover, 0.0]).take((0.4 / q.dt) as usize));
    inputs.extend(std::iter::repeat([0.6 * hover, torque]).take(spin_steps));
    inputs.extend(std::iter::repeat([0.6 * hover, -torque]).take(spin_steps));
    inputs.extend(std::iter::repeat([1.4 * hover, 0.0]).take((0.4 / q.dt) as usize));
    let mut states = vec![[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]];
    for u in &inputs {
        let next = quadrotor_step(q, states.last().unwrap(), u, &[0.0; 6], q.dt);
        states.push(next);
    }
    QuadrotorReference { states, inputs }
}

/// Linear feedback on the body-frame errors around the reference.
#[derive(Debug, Clone, Copy)]
pub struct QuadrotorTracker {
    pub k_pos: f64,
    pub k_vel: f64,
    pub k_ang: f64,
    pub k_rate: f64,
}

impl Default for QuadrotorTracker {
    fn default() -> Self {
        Self {
            k_pos: 4.0,
            k_vel: 3.0,
            k_ang: 60.0,
            k_rate: 12.0,
        }
    }
}

pub struct QuadrotorErrorDynamics<'a> {
    pub model: &'a PlanarQuadrotor,
    pub tracker: &'a QuadrotorTracker,
    pub reference: &'a QuadrotorReference,
}

impl QuadrotorErrorDynamics<'_> {
    fn control(&self, t: usize, x: &[f64; 6]) -> [f64; 2] {
        let r = &self.reference.states[t];
        let ur = &self.reference.inputs[t];
        let (s, c) = r[2].sin_cos();
        // thrust acts along the body axis (-sin, cos)
        let e_axis = -s * (x[0] - r[0]) + c * (x[1] - r[1]);
        let v_axis = -s * (x[3] - r[3]) + c * (x[4] - r[4]);
        let f = ur[0] - self.model.mass * (self.tracker.k_pos * e_axis + self.tracker.k_vel * v_axis);
        let tau = ur[1]
            - self.model.inertia * (self.tracker.k_ang * (x[2] - r[2]) + self.tracker.k_rate * (x[5] - r[5]));
        let lo = self.model.input_lower();
        let hi = self.model.input_upper();
        [f.clamp(lo[0], hi[0]), tau.clamp(lo[1], hi[1])]
    }
}

impl ErrorDynamics<6> for QuadrotorErrorDynamics<'_> {
    fn horizon(&self) -> usize {
        self.reference.inputs.len()
    }

    fn step(&self, t: usize, e: &Vector6<f64>) -> Vector6<f64> {
        let r = &self.reference.states[t];
        let x: [f64; 6] = std::array::from_fn(|i| r[i] + e[i]);
        let u = self.control(t, &x);
        let next = quadrotor_step(self.model, &x, &u, &[0.0; 6], self.model.dt);
        let rn = &self.reference.states[t + 1];
        Vector6::from_fn(|i, _| next[i] - rn[i])
    }
}
