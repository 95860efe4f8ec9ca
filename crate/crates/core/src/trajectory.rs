use serde::{Deserialize, Serialize};

/// Planar car state `(p_x, p_y, theta)`.
pub type CarState = [f64; 3];
/// Planar car input `(v, kappa)`.
pub type CarInput = [f64; 2];

/// Time-indexed reference: `states[0..=T]`, `inputs[0..T]`, fixed step `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<CarState>,
    pub inputs: Vec<CarInput>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<CarState>, inputs: Vec<CarInput>, dt: f64) -> Self {
        assert_eq!(states.len(), inputs.len() + 1, "need one more state than inputs");
        Self { states, inputs, dt }
    }

    /// Number of steps `T`.
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn start(&self) -> &CarState {
        &self.states[0]
    }

    pub fn end(&self) -> &CarState {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn duration(&self) -> f64 {
        self.horizon() as f64 * self.dt
    }

    /// Arc length of the cyclic projection.
    pub fn length(&self) -> f64 {
        self.states
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }

    pub fn positions(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.states.iter().map(|s| [s[0], s[1]])
    }

    /// Shift the cyclic coordinates; headings are untouched.
    pub fn translated(&self, dp: [f64; 2]) -> Self {
        Self {
            states: self.states.iter().map(|s| [s[0] + dp[0], s[1] + dp[1], s[2]]).collect(),
            inputs: self.inputs.clone(),
            dt: self.dt,
        }
    }

    /// Add `2 pi k` to every heading so that the start heading lies on the
    /// same branch as `heading`.
    pub fn unwrapped_near(&self, heading: f64) -> Self {
        let shift = crate::dynamics::wrap_angle(self.states[0][2] - heading) + heading - self.states[0][2];
        Self {
            states: self.states.iter().map(|s| [s[0], s[1], s[2] + shift]).collect(),
            inputs: self.inputs.clone(),
            dt: self.dt,
        }
    }

    /// Concatenate `other` after `self`; `other` starts one step after the
    /// last state of `self` (the last state of `self` is replaced by the
    /// first state of `other`, which may be a reference jump).
    pub fn concat(&self, other: &Trajectory) -> Self {
        let mut states = self.states[..self.states.len() - 1].to_vec();
        states.extend_from_slice(&other.states);
        let mut inputs = self.inputs.clone();
        inputs.extend_from_slice(&other.inputs);
        Self {
            states,
            inputs,
            dt: self.dt,
        }
    }

    /// Sub-trajectory over epochs `from..=to`.
    pub fn slice(&self, from: usize, to: usize) -> Self {
        Self {
            states: self.states[from..=to].to_vec(),
            inputs: self.inputs[from..to].to_vec(),
            dt: self.dt,
        }
    }
}
