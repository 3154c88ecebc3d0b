use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// How transformer layers propagate gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Ordinary differentiation through every operation.
    Standard,
    /// Attention probabilities and the layer-norm scale are detached, making
    /// both layers locally linear in their input.
    Attribution,
}

/// Head-averaged attention map recorded during a forward pass.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub encoder: &'static str,
    pub block: usize,
    /// (query × key), rows sum to one.
    pub map: Tensor,
}

/// One forward evaluation: a private tape plus the parameters bound on it.
pub struct Graph<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    bound: HashMap<String, Var>,
    trainable: bool,
    mode: Mode,
    dropout: Option<(f64, ChaCha8Rng)>,
    lrp_epsilon: Option<f64>,
    attention: Option<Vec<AttentionRecord>>,
    detached: Detached,
}

/// Values produced by [`Graph::detach_frozen`], either being recorded or
/// replayed as constants.
#[derive(Clone, Debug, Default)]
enum Detached {
    #[default]
    Off,
    Record(Vec<Tensor>),
    Replay(Vec<Tensor>, usize),
}

impl<'p> Graph<'p> {
    /// Inference graph; parameters enter the tape as constants.
    pub fn new(params: &'p ParamStore, mode: Mode) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: HashMap::new(),
            trainable: false,
            mode,
            dropout: None,
            lrp_epsilon: None,
            attention: None,
            detached: Detached::Off,
        }
    }

    /// Training graph: parameters are differentiable leaves and dropout is
    /// active at `rate`.
    pub fn training(params: &'p ParamStore, rate: f64, rng: ChaCha8Rng) -> Self {
        let mut g = Self::new(params, Mode::Standard);
        g.trainable = true;
        if rate > 0.0 {
            g.dropout = Some((rate, rng));
        }
        g
    }

    /// Makes parameters differentiable without enabling dropout.
    pub fn with_trainable_params(mut self) -> Self {
        self.trainable = true;
        self
    }

    /// Enables the epsilon-stabilised relevance rule at every linear mixing
    /// output (see [`Graph::stabilize`]).
    pub fn with_lrp_epsilon(mut self, eps: f64) -> Self {
        self.lrp_epsilon = Some(eps);
        self
    }

    pub fn with_attention_log(mut self) -> Self {
        self.attention = Some(Vec::new());
        self
    }

    /// Records every value frozen by [`Graph::detach_frozen`].
    pub fn recording_detached(mut self) -> Self {
        self.detached = Detached::Record(Vec::new());
        self
    }

    /// Substitutes previously recorded frozen values, in order. Evaluating
    /// the graph at a nearby input then computes the locally linear
    /// surrogate whose gradient attribution mode reports.
    pub fn replaying_detached(mut self, values: Vec<Tensor>) -> Self {
        self.detached = Detached::Replay(values, 0);
        self
    }

    pub fn take_detached(&mut self) -> Vec<Tensor> {
        match std::mem::take(&mut self.detached) {
            Detached::Record(v) | Detached::Replay(v, _) => v,
            Detached::Off => Vec::new(),
        }
    }

    /// Stop-gradient for the attribution-mode interventions.
    pub fn detach_frozen(&mut self, v: Var) -> Result<Var> {
        match &mut self.detached {
            Detached::Off => self.tape.detach(v),
            Detached::Record(log) => {
                log.push(self.tape.value(v).clone());
                self.tape.detach(v)
            }
            Detached::Replay(values, next) => {
                let frozen = values
                    .get(*next)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument("replay ran out of frozen values".into()))?;
                *next += 1;
                if frozen.shape() != self.tape.shape(v) {
                    return Err(Error::Shape("replayed value has a different shape".into()));
                }
                Ok(self.tape.constant(frozen))
            }
        }
    }

    /// Swaps in an externally owned tape; used to run graph code inside
    /// closures that are handed a bare [`Tape`].
    pub fn swap_tape(&mut self, tape: &mut Tape) {
        std::mem::swap(&mut self.tape, tape);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn attention_log(&self) -> &[AttentionRecord] {
        self.attention.as_deref().unwrap_or(&[])
    }

    pub(crate) fn record_attention(&mut self, rec: AttentionRecord) {
        if let Some(log) = &mut self.attention {
            log.push(rec);
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Binds parameter `name` on the tape (once per graph).
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let value = self.params.require(name)?.clone();
        let v = if self.trainable { self.tape.leaf(value) } else { self.tape.constant(value) };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.contains(name)
    }

    /// Parameters bound so far, by name.
    pub fn bound_params(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.bound.iter()
    }

    pub fn dropout_active(&self) -> bool {
        self.dropout.is_some()
    }

    /// Inverted dropout; identity unless the graph was built for training.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = &mut self.dropout else { return Ok(x) };
        let rate = *rate;
        let keep = 1.0 / (1.0 - rate);
        let shape = self.tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        let mask = self.tape.constant(Tensor::new(shape, data)?);
        self.tape.mul(x, mask)
    }

    /// Forward identity. Under the epsilon rule the backward signal is
    /// rescaled by `z / (z + eps·sign(z))`, so that gradient × input at the
    /// layer below reproduces epsilon-LRP redistribution.
    pub fn stabilize(&mut self, z: Var) -> Result<Var> {
        let Some(eps) = self.lrp_epsilon else { return Ok(z) };
        let ratio = self.tape.value(z).map(|v| {
            let s = if v >= 0.0 { 1.0 } else { -1.0 };
            v / (v + eps * s)
        });
        let d = self.tape.detach(z)?;
        let delta = self.tape.sub(z, d)?;
        let c = self.tape.constant(ratio);
        let scaled = self.tape.mul(delta, c)?;
        self.tape.add(d, scaled)
    }

    pub fn require_rank2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        self.tape
            .value(v)
            .dims2()
            .map_err(|_| Error::Shape(format!("{what} must be a matrix, got {:?}", self.tape.shape(v))))
    }
}
