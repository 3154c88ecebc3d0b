use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{AttributionReport, ExplainerKind};
use crate::autodiff::{Tensor, Var};
use crate::data::vocab::PAD_ID;
use crate::data::MultimodalRecord;
use crate::error::{Error, Result};
use crate::model::{BoundInputs, Modality, Model};
use crate::nn::{Graph, Mode};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    /// Riemann steps for integrated gradients (midpoint rule).
    pub ig_steps: usize,
    pub lrp_epsilon: f64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self { ig_steps: 20, lrp_epsilon: 1e-6 }
    }
}

/// Relevance arrays before packaging into a report.
struct Relevance {
    events: Tensor,
    tokens: Vec<f64>,
    vitals: Tensor,
}

impl Relevance {
    fn zeros(r: &MultimodalRecord) -> Self {
        Self {
            events: Tensor::zeros(r.events.values.shape()),
            tokens: vec![0.0; r.notes.len()],
            vitals: Tensor::zeros(r.vitals.values.shape()),
        }
    }
}

struct Pass {
    logit: f64,
    inputs: [Option<Tensor>; 3],
    grads: [Option<Tensor>; 3],
}

fn check_target(target: usize) -> Result<()> {
    if target > 1 {
        return Err(Error::InvalidArgument(format!("target class must be 0 or 1, got {target}")));
    }
    Ok(())
}

/// Input leaves scaled by `alpha`; note embeddings stand in for tokens.
fn scaled_leaves(model: &Model, g: &mut Graph, r: &MultimodalRecord, alpha: f64) -> Result<BoundInputs> {
    let mods = model.config.modalities;
    let scale = |t: &Tensor| t.map(|v| v * alpha);
    let events = mods.events.then(|| g.tape.leaf(scale(&r.events.values)));
    let vitals = mods.vitals.then(|| g.tape.leaf(scale(&r.vitals.values)));
    let notes = if mods.notes {
        let mask: Arc<[bool]> = r.notes.ids.iter().map(|&id| id != PAD_ID).collect();
        Some((g.tape.leaf(scale(&model.note_embeddings(&r.notes.ids)?)), mask))
    } else {
        None
    };
    Ok(BoundInputs { events, notes, vitals })
}

fn gradient_pass(
    model: &Model,
    r: &MultimodalRecord,
    target: usize,
    mode: Mode,
    lrp_epsilon: Option<f64>,
    alpha: f64,
) -> Result<Pass> {
    let mut g = Graph::new(&model.params, mode);
    if let Some(eps) = lrp_epsilon {
        g = g.with_lrp_epsilon(eps);
    }
    let inputs = scaled_leaves(model, &mut g, r, alpha)?;
    let z = model.logits(&mut g, &inputs)?;
    let logit = g.tape.value(z).data()[target];
    let mut seed = Tensor::zeros(&[2]);
    seed.data_mut()[target] = 1.0;
    g.tape.backward_with_seed(z, seed)?;
    let vars: [Option<Var>; 3] = [inputs.events, inputs.notes.as_ref().map(|(v, _)| *v), inputs.vitals];
    let value = |v: Option<Var>| v.map(|v| g.tape.value(v).clone());
    let grad = |v: Option<Var>| v.map(|v| g.tape.grad_or_zeros(v));
    Ok(Pass {
        logit,
        inputs: vars.map(value),
        grads: vars.map(grad),
    })
}

fn token_sums(x: &Tensor) -> Vec<f64> {
    let (t, _) = x.dims2().expect("note embeddings are rank 2");
    (0..t).map(|i| x.row(i).iter().sum()).collect()
}

fn times(x: &Tensor, g: &Tensor) -> Tensor {
    x.zip_map(g, |a, b| a * b).expect("gradient has the input's shape")
}

fn from_products(r: &MultimodalRecord, products: [Option<Tensor>; 3]) -> Relevance {
    let mut rel = Relevance::zeros(r);
    let [e, n, v] = products;
    if let Some(e) = e {
        rel.events = e;
    }
    if let Some(n) = n {
        rel.tokens = token_sums(&n);
    }
    if let Some(v) = v {
        rel.vitals = v;
    }
    rel
}

/// Gradient × input for the `target` logit. In [`Mode::Attribution`] the
/// attention probabilities and layer-norm scales are held fixed; with an
/// epsilon the linear layers additionally follow the epsilon rule.
fn gradient_times_input(
    model: &Model,
    r: &MultimodalRecord,
    target: usize,
    mode: Mode,
    lrp_epsilon: Option<f64>,
) -> Result<(f64, Relevance)> {
    let pass = gradient_pass(model, r, target, mode, lrp_epsilon, 1.0)?;
    let [xe, xn, xv] = pass.inputs;
    let [ge, gn, gv] = pass.grads;
    let mul = |x: Option<Tensor>, g: Option<Tensor>| x.zip(g).map(|(x, g)| times(&x, &g));
    Ok((pass.logit, from_products(r, [mul(xe, ge), mul(xn, gn), mul(xv, gv)])))
}

/// Integrated gradients from the all-zero input with `steps` midpoints.
fn integrated_gradients(model: &Model, r: &MultimodalRecord, target: usize, steps: usize) -> Result<(f64, Relevance)> {
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients needs at least one step".into()));
    }
    let full = gradient_pass(model, r, target, Mode::Standard, None, 1.0)?;
    let mut total: [Option<Tensor>; 3] = [None, None, None];
    for s in 0..steps {
        let alpha = (s as f64 + 0.5) / steps as f64;
        let pass = gradient_pass(model, r, target, Mode::Standard, None, alpha)?;
        for (acc, g) in total.iter_mut().zip(pass.grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.add_assign(&g),
                    None => *acc = Some(g),
                }
            }
        }
    }
    let inv = 1.0 / steps as f64;
    let products = std::array::from_fn(|i| {
        full.inputs[i].as_ref().zip(total[i].as_ref()).map(|(x, g)| times(x, &g.map(|v| v * inv)))
    });
    Ok((full.logit, from_products(r, products)))
}

/// Head-averaged attention maps per block, forward pass in standard mode.
fn attention_maps(model: &Model, r: &MultimodalRecord, target: usize) -> Result<(f64, Vec<(Modality, Vec<Tensor>)>)> {
    let mut g = Graph::new(&model.params, Mode::Standard).with_attention_log();
    let inputs = model.bind_inputs(&mut g, r, false)?;
    let z = model.logits(&mut g, &inputs)?;
    let logit = g.tape.value(z).data()[target];
    let mut out = Vec::new();
    for m in model.config.modalities.enabled() {
        let mut maps: Vec<(usize, Tensor)> = g
            .attention_log()
            .iter()
            .filter(|a| a.encoder == m.name())
            .map(|a| (a.block, a.map.clone()))
            .collect();
        maps.sort_by_key(|(b, _)| *b);
        out.push((m, maps.into_iter().map(|(_, t)| t).collect()));
    }
    Ok((logit, out))
}

/// Row-normalised `0.5·(A + I)` multiplied through the blocks, first block
/// innermost.
pub fn attention_rollout(maps: &[Tensor]) -> Result<Tensor> {
    let mut joint: Option<Tensor> = None;
    for a in maps {
        let (n, m) = a.dims2()?;
        if n != m {
            return Err(Error::Shape(format!("attention map must be square, got {n}×{m}")));
        }
        let mut data = a.data().to_vec();
        for i in 0..n {
            data[i * n + i] += 1.0;
            let row = &mut data[i * n..(i + 1) * n];
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let step = Tensor::new(vec![n, n], data)?;
        joint = Some(match joint {
            Some(j) => step.matmul(&j)?,
            None => step,
        });
    }
    joint.ok_or_else(|| Error::InvalidArgument("no attention maps to roll out".into()))
}

/// Broadcasts a per-position score over every feature of that position.
fn broadcast_positions(scores: &[f64], like: &Tensor) -> Result<Tensor> {
    let (len, width) = like.dims2()?;
    if scores.len() != len {
        return Err(Error::Shape(format!("{} position scores for {len} positions", scores.len())));
    }
    Tensor::new(vec![len, width], scores.iter().flat_map(|&s| std::iter::repeat_n(s, width)).collect())
}

fn attention_relevance(model: &Model, r: &MultimodalRecord, target: usize, rollout: bool) -> Result<(f64, Relevance)> {
    let (logit, per_modality) = attention_maps(model, r, target)?;
    let mut rel = Relevance::zeros(r);
    for (m, maps) in per_modality {
        let map = if rollout {
            attention_rollout(&maps)?
        } else {
            maps.last().cloned().ok_or_else(|| Error::InvalidArgument(format!("{m} encoder has no blocks")))?
        };
        let pooled = map.row(0).to_vec();
        match m {
            Modality::Events => rel.events = broadcast_positions(&pooled, &r.events.values)?,
            Modality::Notes => rel.tokens = pooled,
            Modality::Vitals => rel.vitals = broadcast_positions(&pooled, &r.vitals.values)?,
        }
    }
    Ok((logit, rel))
}

fn random_relevance(model: &Model, r: &MultimodalRecord, target: usize) -> Result<(f64, Relevance)> {
    let logit = model.predict(r)?.logits[target];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(r.stay_id, "random-explainer"));
    let mut fill = |t: &Tensor| Tensor::new(t.shape().to_vec(), (0..t.numel()).map(|_| rng.gen::<f64>()).collect());
    let events = fill(&r.events.values)?;
    let vitals = fill(&r.vitals.values)?;
    let tokens = (0..r.notes.len()).map(|_| rng.gen::<f64>()).collect();
    Ok((logit, Relevance { events, tokens, vitals }))
}

/// Explains the `target` class logit of one (normalised) record.
pub fn explain(
    model: &Model,
    r: &MultimodalRecord,
    kind: ExplainerKind,
    target: usize,
    opts: &ExplainOptions,
) -> Result<AttributionReport> {
    check_target(target)?;
    model.check_record(r)?;
    let (logit, rel) = match kind {
        ExplainerKind::Random => random_relevance(model, r, target)?,
        ExplainerKind::AttentionLast => attention_relevance(model, r, target, false)?,
        ExplainerKind::AttentionRollout => attention_relevance(model, r, target, true)?,
        ExplainerKind::IntegratedGradients => integrated_gradients(model, r, target, opts.ig_steps)?,
        ExplainerKind::LrpEpsilon => gradient_times_input(model, r, target, Mode::Attribution, Some(opts.lrp_epsilon))?,
        ExplainerKind::Lrptrans => gradient_times_input(model, r, target, Mode::Attribution, None)?,
    };
    AttributionReport::new(r.stay_id, kind, target, logit, rel.events, rel.tokens, r.notes.ids.clone(), rel.vitals)
}

/// Gradient × input with attribution-mode propagation.
pub fn gi_attribute(model: &Model, r: &MultimodalRecord, target: usize) -> Result<AttributionReport> {
    explain(model, r, ExplainerKind::Lrptrans, target, &ExplainOptions::default())
}

/// Gradient × input with ordinary gradients; does not conserve relevance.
pub fn gi_attribute_standard(model: &Model, r: &MultimodalRecord, target: usize) -> Result<AttributionReport> {
    check_target(target)?;
    let (logit, rel) = gradient_times_input(model, r, target, Mode::Standard, None)?;
    AttributionReport::new(r.stay_id, ExplainerKind::Lrptrans, target, logit, rel.events, rel.tokens, r.notes.ids.clone(), rel.vitals)
}

pub fn explain_all(
    model: &Model,
    records: &[MultimodalRecord],
    kind: ExplainerKind,
    target: usize,
    opts: &ExplainOptions,
) -> Result<Vec<AttributionReport>> {
    records.iter().map(|r| explain(model, r, kind, target, opts)).collect()
}
