//! Tuple modules: the bidirectional-RNN tree node and the pass-through
//! baseline.
//!
//! The tuple encoder runs one GRU cell per element per direction over the
//! child embeddings (cells are distinct, the 128-dim initial state is
//! shared by both directions) and merges the two final states through a
//! fully-connected layer. The decoder initializes its state from the
//! latent vector, emits each child embedding from the current state
//! through a per-element head, and feeds either the ground-truth child
//! embedding or its own output back into the per-element GRU cell.

use rand::Rng;

use super::gru::GruCell;
use crate::diff::{InitSpec, NodeId, ParamId, ParameterStore, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct TupleModule {
    pub init_state: ParamId,
    pub enc_fwd: Vec<GruCell>,
    pub enc_bwd: Vec<GruCell>,
    pub merge_w: ParamId,
    pub merge_b: ParamId,
    pub dec_init_w: ParamId,
    pub dec_init_b: ParamId,
    pub dec_cells: Vec<GruCell>,
    /// Per-element `[latent, state]` head emitting the child embedding.
    pub heads: Vec<(ParamId, ParamId)>,
    pub arity: usize,
    pub state_dim: usize,
    pub latent_dim: usize,
}

impl TupleModule {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        arity: usize,
        latent_dim: usize,
        state_dim: usize,
        rng: &mut R,
    ) -> Result<TupleModule> {
        let init_state =
            store.register(&format!("{prefix}.init_state"), InitSpec::Zeros, &[state_dim], rng)?;
        let mut enc_fwd = Vec::with_capacity(arity);
        let mut enc_bwd = Vec::with_capacity(arity);
        for i in 0..arity {
            enc_fwd.push(GruCell::new(
                store,
                &format!("{prefix}.enc_fwd.{i}"),
                latent_dim,
                state_dim,
                rng,
            )?);
            enc_bwd.push(GruCell::new(
                store,
                &format!("{prefix}.enc_bwd.{i}"),
                latent_dim,
                state_dim,
                rng,
            )?);
        }
        let merge_w = store.register(
            &format!("{prefix}.merge.w"),
            InitSpec::VarianceScaled,
            &[latent_dim, 2 * state_dim],
            rng,
        )?;
        let merge_b =
            store.register(&format!("{prefix}.merge.b"), InitSpec::Zeros, &[latent_dim], rng)?;
        let dec_init_w = store.register(
            &format!("{prefix}.dec_init.w"),
            InitSpec::VarianceScaled,
            &[state_dim, latent_dim],
            rng,
        )?;
        let dec_init_b =
            store.register(&format!("{prefix}.dec_init.b"), InitSpec::Zeros, &[state_dim], rng)?;
        let mut dec_cells = Vec::with_capacity(arity);
        let mut heads = Vec::with_capacity(arity);
        for i in 0..arity {
            dec_cells.push(GruCell::new(
                store,
                &format!("{prefix}.dec.{i}"),
                latent_dim,
                state_dim,
                rng,
            )?);
            let head_w = store.register(
                &format!("{prefix}.head.{i}.w"),
                InitSpec::VarianceScaled,
                &[latent_dim, state_dim],
                rng,
            )?;
            let head_b = store.register(
                &format!("{prefix}.head.{i}.b"),
                InitSpec::Zeros,
                &[latent_dim],
                rng,
            )?;
            heads.push((head_w, head_b));
        }
        Ok(TupleModule {
            init_state,
            enc_fwd,
            enc_bwd,
            merge_w,
            merge_b,
            dec_init_w,
            dec_init_b,
            dec_cells,
            heads,
            arity,
            state_dim,
            latent_dim,
        })
    }

    /// Bidirectional encode of child embeddings to the tuple embedding.
    pub fn encode(&self, tape: &mut Tape, children: &[NodeId]) -> Result<NodeId> {
        if children.len() != self.arity {
            return Err(Error::ShapeMismatch {
                op: "tuple_encode",
                expected: format!("{} child embeddings", self.arity),
                got: format!("{}", children.len()),
            });
        }
        let init = tape.param(self.init_state);
        let mut fwd = init;
        for (cell, &child) in self.enc_fwd.iter().zip(children) {
            fwd = cell.step(tape, child, fwd)?;
        }
        let mut bwd = init;
        for (cell, &child) in self.enc_bwd.iter().zip(children).rev() {
            bwd = cell.step(tape, child, bwd)?;
        }
        let cat = tape.concat(fwd, bwd)?;
        let w = tape.param(self.merge_w);
        let b = tape.param(self.merge_b);
        let pre = tape.linear(w, cat, b)?;
        tape.celu_capped(pre)
    }

    /// Autoregressive decode: emits one generated child embedding per
    /// element.
    ///
    /// With `ground_truth` present, the recurrent input for the next
    /// element is the ground-truth child embedding with probability
    /// `p_gt` (one Bernoulli per element), otherwise the decoder's own
    /// output; generation passes `None` and always feeds its own output.
    pub fn decode<R: Rng>(
        &self,
        tape: &mut Tape,
        z: NodeId,
        ground_truth: Option<&[NodeId]>,
        p_gt: f64,
        rng: &mut R,
    ) -> Result<Vec<NodeId>> {
        if let Some(gt) = ground_truth {
            if gt.len() != self.arity {
                return Err(Error::ShapeMismatch {
                    op: "tuple_decode",
                    expected: format!("{} ground-truth embeddings", self.arity),
                    got: format!("{}", gt.len()),
                });
            }
        }
        let w = tape.param(self.dec_init_w);
        let b = tape.param(self.dec_init_b);
        let pre = tape.linear(w, z, b)?;
        let mut state = tape.celu_capped(pre)?;

        let mut generated = Vec::with_capacity(self.arity);
        for f in 0..self.arity {
            let (hw, hb) = self.heads[f];
            let hw = tape.param(hw);
            let hb = tape.param(hb);
            let head_pre = tape.linear(hw, state, hb)?;
            let emitted = tape.celu_capped(head_pre)?;
            generated.push(emitted);
            if f + 1 < self.arity {
                let input = match ground_truth {
                    Some(gt) => {
                        let use_gt = p_gt >= 1.0 || (p_gt > 0.0 && rng.gen::<f64>() < p_gt);
                        if use_gt {
                            gt[f]
                        } else {
                            emitted
                        }
                    }
                    None => emitted,
                };
                state = self.dec_cells[f].step(tape, input, state)?;
            }
        }
        Ok(generated)
    }

    /// Mean-squared-error skew losses between generated and ground-truth
    /// child embeddings, one per element.
    pub fn skew_losses(
        &self,
        tape: &mut Tape,
        generated: &[NodeId],
        ground_truth: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        generated
            .iter()
            .zip(ground_truth)
            .map(|(&g, &t)| tape.mse(g, t))
            .collect()
    }
}

/// Pass-through baseline: the encoder concatenates child embeddings and
/// applies one fully-connected layer; the decoder hands the latent vector
/// to every child decoder unchanged.
#[derive(Clone, Debug)]
pub struct SimpleTupleModule {
    pub enc_w: ParamId,
    pub enc_b: ParamId,
    pub arity: usize,
    pub latent_dim: usize,
}

impl SimpleTupleModule {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        arity: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<SimpleTupleModule> {
        let enc_w = store.register(
            &format!("{prefix}.enc.w"),
            InitSpec::VarianceScaled,
            &[latent_dim, arity * latent_dim],
            rng,
        )?;
        let enc_b = store.register(&format!("{prefix}.enc.b"), InitSpec::Zeros, &[latent_dim], rng)?;
        Ok(SimpleTupleModule {
            enc_w,
            enc_b,
            arity,
            latent_dim,
        })
    }

    pub fn encode(&self, tape: &mut Tape, children: &[NodeId]) -> Result<NodeId> {
        if children.len() != self.arity {
            return Err(Error::ShapeMismatch {
                op: "simple_tuple_encode",
                expected: format!("{} child embeddings", self.arity),
                got: format!("{}", children.len()),
            });
        }
        let mut cat = children[0];
        for &c in &children[1..] {
            cat = tape.concat(cat, c)?;
        }
        let w = tape.param(self.enc_w);
        let b = tape.param(self.enc_b);
        let pre = tape.linear(w, cat, b)?;
        tape.celu_capped(pre)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(arity: usize, seed: u64) -> (ParameterStore, TupleModule) {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = TupleModule::new(&mut store, "tuple", arity, 4, 5, &mut rng).unwrap();
        (store, t)
    }

    fn const_children(tape: &mut Tape, arity: usize, seed: u64) -> Vec<NodeId> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..arity)
            .map(|_| {
                let v: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() - 0.5).collect();
                tape.constant_vec(v)
            })
            .collect()
    }

    #[test]
    fn encoder_has_distinct_cells_per_element_and_direction() {
        let (store, t) = build(8, 0);
        let mut ids = std::collections::HashSet::new();
        for cell in t.enc_fwd.iter().chain(&t.enc_bwd) {
            for p in cell.param_ids() {
                assert!(ids.insert(p.index()), "cells must not share parameters");
            }
        }
        // 8 elements x 2 directions = 16 distinct cells
        assert_eq!(t.enc_fwd.len() + t.enc_bwd.len(), 16);
        let _ = store;
    }

    #[test]
    fn wrong_element_count_is_an_error() {
        let (store, t) = build(3, 1);
        let mut tape = Tape::new(&store);
        let children = const_children(&mut tape, 2, 0);
        assert!(t.encode(&mut tape, &children).is_err());
    }

    #[test]
    fn permuting_children_changes_the_embedding() {
        let (store, t) = build(3, 2);
        let mut tape = Tape::new(&store);
        let children = const_children(&mut tape, 3, 7);
        let a = t.encode(&mut tape, &children).unwrap();
        let permuted = vec![children[1], children[0], children[2]];
        let b = t.encode(&mut tape, &permuted).unwrap();
        let diff: f64 = tape
            .value(a)
            .data()
            .iter()
            .zip(tape.value(b).data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-8, "positional cells should be order-sensitive");
    }

    #[test]
    fn single_element_tuple_encodes() {
        let (store, t) = build(1, 3);
        let mut tape = Tape::new(&store);
        let children = const_children(&mut tape, 1, 1);
        let e = t.encode(&mut tape, &children).unwrap();
        assert_eq!(tape.value(e).len(), 4);
    }

    #[test]
    fn skew_is_zero_iff_generated_equals_ground_truth() {
        let (store, t) = build(2, 4);
        let mut tape = Tape::new(&store);
        let a = tape.constant_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let b = tape.constant_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let skew = t.skew_losses(&mut tape, &[a, b], &[a, b]).unwrap();
        for s in &skew {
            assert_eq!(tape.value(*s).item(), 0.0);
        }
        // off by a constant vector d: skew = mean(d^2)
        let d = 0.5;
        let c = tape.constant_vec(vec![0.1 + d, 0.2 + d, 0.3 + d, 0.4 + d]);
        let skew = t.skew_losses(&mut tape, &[c], &[a]).unwrap();
        assert!((tape.value(skew[0]).item() - d * d).abs() < 1e-12);
    }

    #[test]
    fn tf_and_as_modes_compute_the_same_loss_structure() {
        let (store, t) = build(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&store);
        let children = const_children(&mut tape, 3, 2);
        let z = tape.constant_vec(vec![0.3, -0.1, 0.2, 0.4]);
        let gen_tf = t.decode(&mut tape, z, Some(&children), 1.0, &mut rng).unwrap();
        let gen_as = t.decode(&mut tape, z, Some(&children), 0.0, &mut rng).unwrap();
        assert_eq!(gen_tf.len(), gen_as.len());
        // identical first element regardless of mode (no recurrent input yet)
        assert_eq!(
            tape.value(gen_tf[0]).data(),
            tape.value(gen_as[0]).data()
        );
        let skew_tf = t.skew_losses(&mut tape, &gen_tf, &children).unwrap();
        let skew_as = t.skew_losses(&mut tape, &gen_as, &children).unwrap();
        assert_eq!(skew_tf.len(), skew_as.len());
    }

    #[test]
    fn decode_gradients_match_finite_differences() {
        let (mut store, t) = build(3, 6);
        let child_vals: Vec<Vec<f64>> = vec![
            vec![0.2, -0.4, 0.6, 0.1],
            vec![-0.3, 0.5, 0.0, 0.2],
            vec![0.7, 0.1, -0.2, -0.5],
        ];
        let z_val = vec![0.1, 0.2, -0.3, 0.4];

        let run = |store: &ParameterStore| -> Result<(f64, Option<crate::diff::Gradients>)> {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut tape = Tape::new(store);
            let children: Vec<NodeId> = child_vals
                .iter()
                .map(|v| tape.constant_vec(v.clone()))
                .collect();
            let z = tape.constant_vec(z_val.clone());
            let gen = t.decode(&mut tape, z, Some(&children), 1.0, &mut rng)?;
            let skews = t.skew_losses(&mut tape, &gen, &children)?;
            let terms: Vec<(NodeId, f64)> = skews.iter().map(|&s| (s, 1.0)).collect();
            let loss = tape.weighted_sum(terms)?;
            let v = tape.value(loss).item();
            let g = tape.backward(loss)?;
            Ok((v, Some(g)))
        };
        let (_, grads) = run(&store).unwrap();
        let report = crate::diff::gradcheck::compare_gradients(
            &mut store,
            &grads.unwrap(),
            crate::diff::gradcheck::DEFAULT_STEP,
            |s| run(s).map(|(v, _)| v),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn simple_tuple_concatenates_and_encodes() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = SimpleTupleModule::new(&mut store, "simple", 3, 4, &mut rng).unwrap();
        let mut tape = Tape::new(&store);
        let children = const_children(&mut tape, 3, 3);
        let e = s.encode(&mut tape, &children).unwrap();
        assert_eq!(tape.value(e).len(), 4);
        let bad = const_children(&mut tape, 2, 3);
        assert!(s.encode(&mut tape, &bad).is_err());
    }
}
