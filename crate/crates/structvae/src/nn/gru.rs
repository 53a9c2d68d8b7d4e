//! GRU cell with a capped-CELU candidate nonlinearity.
//!
//! ```text
//! z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! c_t = celu_capped(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h)
//! h_t = z_t ⊙ h_{t-1} + (1 - z_t) ⊙ c_t
//! ```
//!
//! The update gate starts with zero weights and unit bias so the cell is
//! not too forgetful at initialization; the reset and candidate blocks use
//! in-degree-scaled weights and zero bias.

use rand::Rng;

use crate::diff::{InitSpec, NodeId, ParamId, ParameterStore, Tape};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub state_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        input_dim: usize,
        state_dim: usize,
        rng: &mut R,
    ) -> Result<GruCell> {
        let w = |store: &mut ParameterStore, name: &str, spec, rng: &mut R| {
            store.register(&format!("{prefix}.{name}"), spec, &[state_dim, input_dim], rng)
        };
        let u = |store: &mut ParameterStore, name: &str, spec, rng: &mut R| {
            store.register(&format!("{prefix}.{name}"), spec, &[state_dim, state_dim], rng)
        };
        let b = |store: &mut ParameterStore, name: &str, spec, rng: &mut R| {
            store.register(&format!("{prefix}.{name}"), spec, &[state_dim], rng)
        };
        Ok(GruCell {
            w_z: w(store, "w_z", InitSpec::Zeros, rng)?,
            u_z: u(store, "u_z", InitSpec::Zeros, rng)?,
            b_z: b(store, "b_z", InitSpec::Ones, rng)?,
            w_r: w(store, "w_r", InitSpec::VarianceScaled, rng)?,
            u_r: u(store, "u_r", InitSpec::VarianceScaled, rng)?,
            b_r: b(store, "b_r", InitSpec::Zeros, rng)?,
            w_h: w(store, "w_h", InitSpec::VarianceScaled, rng)?,
            u_h: u(store, "u_h", InitSpec::VarianceScaled, rng)?,
            b_h: b(store, "b_h", InitSpec::Zeros, rng)?,
            input_dim,
            state_dim,
        })
    }

    /// One recurrent step.
    pub fn step(&self, tape: &mut Tape, x: NodeId, h_prev: NodeId) -> Result<NodeId> {
        let (w_z, u_z, b_z) = (tape.param(self.w_z), tape.param(self.u_z), tape.param(self.b_z));
        let (w_r, u_r, b_r) = (tape.param(self.w_r), tape.param(self.u_r), tape.param(self.b_r));
        let (w_h, u_h, b_h) = (tape.param(self.w_h), tape.param(self.u_h), tape.param(self.b_h));

        let z_pre = tape.recur_lin(w_z, x, u_z, h_prev, b_z)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = tape.recur_lin(w_r, x, u_r, h_prev, b_r)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h_prev)?;
        let c_pre = tape.recur_lin(w_h, x, u_h, rh, b_h)?;
        let c = tape.celu_capped(c_pre)?;
        tape.lerp(z, h_prev, c)
    }

    pub fn param_ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }
}

/// Free-function form of [`GruCell::step`].
pub fn gru_step(cell: &GruCell, tape: &mut Tape, x: NodeId, h_prev: NodeId) -> Result<NodeId> {
    cell.step(tape, x, h_prev)
}
