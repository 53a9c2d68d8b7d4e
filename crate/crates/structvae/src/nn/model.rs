//! Assembles compiled plans into runnable encoder/decoder trees and
//! exposes record-level encode, reconstruction-loss, and generation.

use rand::Rng;

use super::scalar_tuple::ScalarTupleModule;
use super::string_literal::StringLiteralModule;
use super::stddev::StdDevNetwork;
use super::tuple::{SimpleTupleModule, TupleModule};
use super::vocab::Vocab;
use crate::data::{serialize_text, AddressRecord};
use crate::diff::{NodeId, ParameterStore, Tape};
use crate::error::{Error, Result};
use crate::schema::{ModelPlan, PlanElement, PlanRoot};

/// A training or generated sample: a structured record for the tuple and
/// pass-through variants, a raw comma-separated line for the text
/// variant.
#[derive(Clone, Debug, PartialEq)]
pub enum Sample {
    Record(AddressRecord),
    Line(String),
}

impl Sample {
    pub fn as_record(&self) -> Option<&AddressRecord> {
        match self {
            Sample::Record(r) => Some(r),
            Sample::Line(_) => None,
        }
    }
}

enum ModelKind {
    Tuple {
        string: StringLiteralModule,
        scalar: Option<ScalarTupleModule>,
        tuple: TupleModule,
    },
    PassThrough {
        strings: Vec<(String, StringLiteralModule)>,
        scalar: Option<ScalarTupleModule>,
        simple: SimpleTupleModule,
    },
    Text {
        string: StringLiteralModule,
    },
}

/// Vocabulary from the byte content the plan's modules will see.
pub fn build_vocab(plan: &ModelPlan, records: &[AddressRecord]) -> Result<Vocab> {
    match plan.root {
        PlanRoot::TextLiteral => {
            let lines: Vec<String> = records
                .iter()
                .map(serialize_text)
                .collect::<Result<Vec<_>>>()?;
            Ok(Vocab::build(lines.iter().map(|s| s.as_str())))
        }
        _ => {
            let mut strings: Vec<&str> = Vec::new();
            for r in records {
                for el in plan.root.elements() {
                    if let PlanElement::StringField { name } = el {
                        strings.push(r.string_field(name)?);
                    }
                }
            }
            Ok(Vocab::build(strings.into_iter()))
        }
    }
}

/// Per-sample targets, precomputed before tape work: vocab-encoded
/// string ids and the whitened scalar pair.
pub struct SampleTargets {
    elements: Vec<ElementTarget>,
}

enum ElementTarget {
    String { ids: Vec<usize> },
    Scalars { whitened: [f64; 2] },
}

/// Encoder outputs for one sample.
pub struct Encoded {
    pub mu: NodeId,
    /// Child embeddings in element order (empty for the text variant).
    pub children: Vec<NodeId>,
}

/// Reconstruction-loss nodes for one sample.
pub struct RecordLoss {
    /// `(element label, loss node)` per element: mean nats per token for
    /// strings, summed squared whitened error for the scalar pair.
    pub recon: Vec<(String, NodeId)>,
    /// Skew losses (tuple variant only), aligned with `recon`.
    pub skew: Vec<(String, NodeId)>,
    /// Weighted per-field average that enters the total objective.
    pub recon_avg: NodeId,
    /// Total string tokens, for bits-per-character reporting.
    pub string_tokens: usize,
    /// Sum over string fields of (mean nats) * tokens, as tape values.
    pub string_nats: f64,
}

pub struct RecordModel {
    pub plan: ModelPlan,
    pub vocab: Vocab,
    kind: ModelKind,
}

impl RecordModel {
    /// Registers all module parameters for `plan` and returns the model.
    /// Construction order is fixed, so a given seed yields bit-identical
    /// parameters.
    pub fn build<R: Rng>(
        plan: ModelPlan,
        vocab: Vocab,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<RecordModel> {
        let (latent, state, chembed) = (plan.latent_dim, plan.state_dim, plan.char_embed_dim);
        let kind = match &plan.root {
            PlanRoot::Tuple { elements } => {
                let string = StringLiteralModule::new(
                    store,
                    "string",
                    vocab.size(),
                    chembed,
                    state,
                    latent,
                    rng,
                )?;
                let scalar = build_scalar(elements, store, latent, rng)?;
                let tuple =
                    TupleModule::new(store, "tuple", elements.len(), latent, state, rng)?;
                ModelKind::Tuple {
                    string,
                    scalar,
                    tuple,
                }
            }
            PlanRoot::SimpleTuple { elements } => {
                let mut strings = Vec::new();
                for el in elements {
                    if let PlanElement::StringField { name } = el {
                        strings.push((
                            name.clone(),
                            StringLiteralModule::new(
                                store,
                                &format!("string.{name}"),
                                vocab.size(),
                                chembed,
                                state,
                                latent,
                                rng,
                            )?,
                        ));
                    }
                }
                let scalar = build_scalar(elements, store, latent, rng)?;
                let simple =
                    SimpleTupleModule::new(store, "simple_tuple", elements.len(), latent, rng)?;
                ModelKind::PassThrough {
                    strings,
                    scalar,
                    simple,
                }
            }
            PlanRoot::TextLiteral => ModelKind::Text {
                string: StringLiteralModule::new(
                    store,
                    "string",
                    vocab.size(),
                    chembed,
                    state,
                    latent,
                    rng,
                )?,
            },
        };
        Ok(RecordModel { plan, vocab, kind })
    }

    /// Labels of the tuple elements, in order.
    pub fn element_labels(&self) -> Vec<String> {
        match &self.plan.root {
            PlanRoot::Tuple { elements } | PlanRoot::SimpleTuple { elements } => {
                elements.iter().map(PlanElement::label).collect()
            }
            PlanRoot::TextLiteral => vec!["text".to_string()],
        }
    }

    pub fn scalar_module(&self) -> Option<&ScalarTupleModule> {
        match &self.kind {
            ModelKind::Tuple { scalar, .. } | ModelKind::PassThrough { scalar, .. } => {
                scalar.as_ref()
            }
            ModelKind::Text { .. } => None,
        }
    }

    pub fn scalar_module_mut(&mut self) -> Option<&mut ScalarTupleModule> {
        match &mut self.kind {
            ModelKind::Tuple { scalar, .. } | ModelKind::PassThrough { scalar, .. } => {
                scalar.as_mut()
            }
            ModelKind::Text { .. } => None,
        }
    }

    /// Raw scalar pair of a record in plan order, if the plan has one.
    pub fn scalar_pair(&self, record: &AddressRecord) -> Result<Option<[f64; 2]>> {
        for el in self.plan.root.elements() {
            if let PlanElement::ScalarGroup { fields } = el {
                return Ok(Some([
                    record.scalar_field(&fields[0])?,
                    record.scalar_field(&fields[1])?,
                ]));
            }
        }
        Ok(None)
    }

    /// Vocab-encodes and whitens one sample. Errors on out-of-vocabulary
    /// bytes or uninitialized scalar statistics.
    pub fn prepare(&self, sample: &Sample) -> Result<SampleTargets> {
        match (&self.plan.root, sample) {
            (PlanRoot::TextLiteral, s) => {
                let line = match s {
                    Sample::Line(l) => l.clone(),
                    Sample::Record(r) => serialize_text(r)?,
                };
                Ok(SampleTargets {
                    elements: vec![ElementTarget::String {
                        ids: self.vocab.encode(&line, "text")?,
                    }],
                })
            }
            (root, Sample::Record(record)) => {
                let mut elements = Vec::with_capacity(root.elements().len());
                for el in root.elements() {
                    match el {
                        PlanElement::StringField { name } => {
                            elements.push(ElementTarget::String {
                                ids: self.vocab.encode(record.string_field(name)?, name)?,
                            });
                        }
                        PlanElement::ScalarGroup { fields } => {
                            let raw = [
                                record.scalar_field(&fields[0])?,
                                record.scalar_field(&fields[1])?,
                            ];
                            let scalar = self.scalar_module().expect("plan has a scalar group");
                            elements.push(ElementTarget::Scalars {
                                whitened: scalar.whiten(raw)?,
                            });
                        }
                    }
                }
                Ok(SampleTargets { elements })
            }
            (_, Sample::Line(_)) => Err(Error::Config(
                "structured variants take records, not text lines".into(),
            )),
        }
    }

    /// Encodes a prepared sample to the mean latent vector.
    pub fn encode(&self, tape: &mut Tape, targets: &SampleTargets) -> Result<Encoded> {
        match &self.kind {
            ModelKind::Text { string } => {
                let ElementTarget::String { ids } = &targets.elements[0] else {
                    unreachable!()
                };
                let mu = string.encode(tape, ids)?;
                Ok(Encoded {
                    mu,
                    children: Vec::new(),
                })
            }
            ModelKind::Tuple {
                string,
                scalar,
                tuple,
            } => {
                let mut children = Vec::with_capacity(targets.elements.len());
                for t in &targets.elements {
                    children.push(match t {
                        ElementTarget::String { ids } => string.encode(tape, ids)?,
                        ElementTarget::Scalars { whitened } => {
                            scalar.as_ref().unwrap().encode(tape, *whitened)?
                        }
                    });
                }
                let mu = tuple.encode(tape, &children)?;
                Ok(Encoded { mu, children })
            }
            ModelKind::PassThrough {
                strings,
                scalar,
                simple,
            } => {
                let mut children = Vec::with_capacity(targets.elements.len());
                let mut string_idx = 0usize;
                for t in &targets.elements {
                    children.push(match t {
                        ElementTarget::String { ids } => {
                            let m = &strings[string_idx].1;
                            string_idx += 1;
                            m.encode(tape, ids)?
                        }
                        ElementTarget::Scalars { whitened } => {
                            scalar.as_ref().unwrap().encode(tape, *whitened)?
                        }
                    });
                }
                let mu = simple.encode(tape, &children)?;
                Ok(Encoded { mu, children })
            }
        }
    }

    /// Reconstruction losses of a prepared sample decoded from `z`.
    ///
    /// `p_gt_tuple` and `p_gt_string` are the ground-truth probabilities
    /// for the tuple decoder and the string decoders. `field_weights`
    /// (default all 1) weight the per-field average; `skew_in_average`
    /// keeps skew terms inside the per-field average (the alternative
    /// adds their raw sum on top).
    #[allow(clippy::too_many_arguments)]
    pub fn decode_loss<R: Rng>(
        &self,
        tape: &mut Tape,
        z: NodeId,
        encoded: &Encoded,
        targets: &SampleTargets,
        p_gt_tuple: f64,
        p_gt_string: f64,
        rng: &mut R,
        field_weights: Option<&[f64]>,
        skew_in_average: bool,
    ) -> Result<RecordLoss> {
        let labels = self.element_labels();
        let n_elements = targets.elements.len();
        let weights: Vec<f64> = match field_weights {
            Some(w) => {
                if w.len() != n_elements {
                    return Err(Error::Config(format!(
                        "field_weights has {} entries for {} elements",
                        w.len(),
                        n_elements
                    )));
                }
                w.to_vec()
            }
            None => vec![1.0; n_elements],
        };
        let weight_sum: f64 = weights.iter().sum();

        let mut recon: Vec<(String, NodeId)> = Vec::with_capacity(n_elements);
        let mut skew: Vec<(String, NodeId)> = Vec::new();
        let mut string_tokens = 0usize;
        let mut string_nats = 0.0f64;

        let child_embeddings: Vec<NodeId> = match &self.kind {
            ModelKind::Tuple { tuple, .. } => {
                tuple.decode(tape, z, Some(&encoded.children), p_gt_tuple, rng)?
            }
            // pass-through and text variants decode from z directly
            _ => vec![z; n_elements],
        };

        let mut string_idx = 0usize;
        for (i, t) in targets.elements.iter().enumerate() {
            let emb = child_embeddings[i];
            match t {
                ElementTarget::String { ids } => {
                    let module = match &self.kind {
                        ModelKind::Tuple { string, .. } | ModelKind::Text { string } => string,
                        ModelKind::PassThrough { strings, .. } => {
                            let m = &strings[string_idx].1;
                            string_idx += 1;
                            m
                        }
                    };
                    let out = module.decode_loss(tape, emb, ids, p_gt_string, rng)?;
                    string_tokens += out.tokens;
                    string_nats += tape.value(out.loss).item() * out.tokens as f64;
                    recon.push((labels[i].clone(), out.loss));
                }
                ElementTarget::Scalars { whitened } => {
                    let scalar = self.scalar_module().unwrap();
                    let loss = scalar.decode_loss(tape, emb, *whitened)?;
                    recon.push((labels[i].clone(), loss));
                }
            }
        }

        if let ModelKind::Tuple { tuple, .. } = &self.kind {
            let skews = tuple.skew_losses(tape, &child_embeddings, &encoded.children)?;
            for (i, s) in skews.into_iter().enumerate() {
                skew.push((labels[i].clone(), s));
            }
        }

        let mut terms: Vec<(NodeId, f64)> = Vec::with_capacity(recon.len() + skew.len());
        for (i, (_, node)) in recon.iter().enumerate() {
            terms.push((*node, weights[i] / weight_sum));
        }
        for (i, (_, node)) in skew.iter().enumerate() {
            let w = if skew_in_average {
                weights[i] / weight_sum
            } else {
                1.0
            };
            terms.push((*node, w));
        }
        let recon_avg = tape.weighted_sum(terms)?;

        Ok(RecordLoss {
            recon,
            skew,
            recon_avg,
            string_tokens,
            string_nats,
        })
    }

    /// Generates one sample from a latent vector node. `argmax` switches
    /// string decoding from softmax sampling to argmax.
    pub fn generate<R: Rng>(
        &self,
        tape: &mut Tape,
        z: NodeId,
        rng: &mut R,
        max_len: usize,
        argmax: bool,
    ) -> Result<Sample> {
        match &self.kind {
            ModelKind::Text { string } => {
                // comma-separated lines are longer than single fields
                let line = string.generate_string(tape, &self.vocab, z, rng, max_len * 2, argmax)?;
                Ok(Sample::Line(line))
            }
            ModelKind::Tuple {
                string,
                scalar,
                tuple,
            } => {
                let embeddings = tuple.decode(tape, z, None, 0.0, rng)?;
                let mut record = AddressRecord::default();
                for (el, &emb) in self.plan.root.elements().iter().zip(&embeddings) {
                    match el {
                        PlanElement::StringField { name } => {
                            let s =
                                string.generate_string(tape, &self.vocab, emb, rng, max_len, argmax)?;
                            record.set_string_field(name, s)?;
                        }
                        PlanElement::ScalarGroup { fields } => {
                            let xy = scalar.as_ref().unwrap().decode_value(tape, emb)?;
                            record.set_scalar_field(&fields[0], xy[0])?;
                            record.set_scalar_field(&fields[1], xy[1])?;
                        }
                    }
                }
                Ok(Sample::Record(record))
            }
            ModelKind::PassThrough {
                strings,
                scalar,
                ..
            } => {
                let mut record = AddressRecord::default();
                let mut string_idx = 0usize;
                for el in self.plan.root.elements() {
                    match el {
                        PlanElement::StringField { name } => {
                            let m = &strings[string_idx].1;
                            string_idx += 1;
                            let s = m.generate_string(tape, &self.vocab, z, rng, max_len, argmax)?;
                            record.set_string_field(name, s)?;
                        }
                        PlanElement::ScalarGroup { fields } => {
                            let xy = scalar.as_ref().unwrap().decode_value(tape, z)?;
                            record.set_scalar_field(&fields[0], xy[0])?;
                            record.set_scalar_field(&fields[1], xy[1])?;
                        }
                    }
                }
                Ok(Sample::Record(record))
            }
        }
    }

    /// Mean latent vector of a sample, value-only.
    pub fn encode_mu(&self, store: &ParameterStore, sample: &Sample) -> Result<Vec<f64>> {
        let targets = self.prepare(sample)?;
        let mut tape = Tape::no_grad(store);
        let enc = self.encode(&mut tape, &targets)?;
        Ok(tape.value(enc.mu).data().to_vec())
    }
}

fn build_scalar<R: Rng>(
    elements: &[PlanElement],
    store: &mut ParameterStore,
    latent: usize,
    rng: &mut R,
) -> Result<Option<ScalarTupleModule>> {
    for el in elements {
        if let PlanElement::ScalarGroup { fields } = el {
            if fields.len() != 2 {
                return Err(Error::Config(format!(
                    "the scalar module models exactly 2 joint fields, schema has {}",
                    fields.len()
                )));
            }
            return Ok(Some(ScalarTupleModule::new(store, "scalar", latent, rng)?));
        }
    }
    Ok(None)
}

/// One stddev network per model (or per multiscale level).
pub fn build_stddev<R: Rng>(
    store: &mut ParameterStore,
    index: usize,
    dim: usize,
    rng: &mut R,
) -> Result<StdDevNetwork> {
    StdDevNetwork::new(store, &format!("stddev.{index}"), dim, rng)
}
