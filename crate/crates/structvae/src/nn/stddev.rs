//! Standard-deviation network: maps the mean latent vector to the
//! posterior's diagonal standard deviation.
//!
//! Three fully-connected hidden layers with the capped-CELU activation,
//! topped by a sigmoid layer initialized with zero weights and bias -5 so
//! every component starts near sigmoid(-5) ≈ 0.0067 and stays in (0, 1).

use rand::Rng;

use crate::diff::{InitSpec, NodeId, ParamId, ParameterStore, Tape};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct StdDevNetwork {
    pub hidden: Vec<(ParamId, ParamId)>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub dim: usize,
}

impl StdDevNetwork {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<StdDevNetwork> {
        let mut hidden = Vec::with_capacity(3);
        for i in 0..3 {
            let w = store.register(
                &format!("{prefix}.h{i}.w"),
                InitSpec::VarianceScaled,
                &[dim, dim],
                rng,
            )?;
            let b = store.register(&format!("{prefix}.h{i}.b"), InitSpec::Zeros, &[dim], rng)?;
            hidden.push((w, b));
        }
        let out_w = store.register(&format!("{prefix}.out.w"), InitSpec::Zeros, &[dim, dim], rng)?;
        let out_b = store.register(
            &format!("{prefix}.out.b"),
            InitSpec::Constant(-5.0),
            &[dim],
            rng,
        )?;
        Ok(StdDevNetwork {
            hidden,
            out_w,
            out_b,
            dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, mu: NodeId) -> Result<NodeId> {
        let mut h = mu;
        for &(w, b) in &self.hidden {
            let w = tape.param(w);
            let b = tape.param(b);
            let pre = tape.linear(w, h, b)?;
            h = tape.celu_capped(pre)?;
        }
        let w = tape.param(self.out_w);
        let b = tape.param(self.out_b);
        let pre = tape.linear(w, h, b)?;
        tape.sigmoid(pre)
    }
}
