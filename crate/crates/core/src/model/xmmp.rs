use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Modality, ModelConfig};
use crate::autodiff::{Tensor, Var};
use crate::data::record::MultimodalRecord;
use crate::data::vocab::PAD_ID;
use crate::error::{Error, Result};
use crate::nn::{self, Graph, Mode, ParamStore};

/// Softmax output of the classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

impl Prediction {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        let s = e0 + e1;
        Self { logits, probs: [e0 / s, e1 / s] }
    }

    /// Predicted probability of in-hospital death (class 1).
    pub fn death_probability(&self) -> f64 {
        self.probs[1]
    }
}

/// Record inputs bound on a graph. `None` for disabled modalities.
#[derive(Clone, Debug)]
pub struct BoundInputs {
    /// (L × D) event grid.
    pub events: Option<Var>,
    /// (T × H) token plus position embeddings, and the non-pad key mask.
    pub notes: Option<(Var, Arc<[bool]>)>,
    /// (M × N) vitals grid.
    pub vitals: Option<Var>,
}

impl BoundInputs {
    pub fn get(&self, m: Modality) -> Option<Var> {
        match m {
            Modality::Events => self.events,
            Modality::Notes => self.notes.as_ref().map(|n| n.0),
            Modality::Vitals => self.vitals,
        }
    }
}

/// Three transformer encoders with a late-fusion softmax head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn block_prefix(m: Modality, i: usize) -> String {
    format!("{}.block{i}", m.name())
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let h = config.hidden;
        let opts = config.layer_options;
        nn::init_linear(&mut p, "events.input", config.event_width, h, opts, &mut rng);
        p.init_normal("notes.token_embedding", &[config.vocab_size, h], 1.0, &mut rng);
        p.init_normal("notes.position_embedding", &[config.max_note_len, h], 0.1, &mut rng);
        nn::init_linear(&mut p, "vitals.input", config.vital_channels, h, opts, &mut rng);
        for m in Modality::ALL {
            let block = config.block(m);
            for i in 0..config.encoder(m).layers {
                nn::init_block(&mut p, &block_prefix(m, i), &block, opts, &mut rng);
            }
        }
        nn::init_linear(&mut p, "fusion.hidden", 3 * h, config.fusion_hidden, opts, &mut rng);
        nn::init_linear(&mut p, "fusion.out", config.fusion_hidden, 2, opts, &mut rng);
        Ok(Self { config, params: p })
    }

    /// Checks that the record's shapes fit the parameters, naming the first
    /// tensor that disagrees.
    pub fn check_record(&self, r: &MultimodalRecord) -> Result<()> {
        let c = &self.config;
        let mismatch = |name: &str, expected: Vec<usize>, found: Vec<usize>| Error::TensorShape {
            name: name.to_string(),
            expected,
            found,
        };
        if c.modalities.events && r.events.width() != c.event_width {
            return Err(mismatch(
                "events.input.weight",
                vec![c.event_width, c.hidden],
                vec![r.events.width(), c.hidden],
            ));
        }
        if c.modalities.vitals && r.vitals.channels() != c.vital_channels {
            return Err(mismatch(
                "vitals.input.weight",
                vec![c.vital_channels, c.hidden],
                vec![r.vitals.channels(), c.hidden],
            ));
        }
        if c.modalities.notes {
            if r.notes.len() > c.max_note_len {
                return Err(mismatch(
                    "notes.position_embedding",
                    vec![c.max_note_len, c.hidden],
                    vec![r.notes.len(), c.hidden],
                ));
            }
            if let Some(&bad) = r.notes.ids.iter().find(|&&id| id as usize >= c.vocab_size) {
                return Err(Error::UnknownToken { id: bad, vocab: c.vocab_size });
            }
        }
        Ok(())
    }

    /// Token plus learned position embeddings, (T × H), computed off-tape.
    pub fn note_embeddings(&self, ids: &[u32]) -> Result<Tensor> {
        let table = self.params.require("notes.token_embedding")?;
        let pos = self.params.require("notes.position_embedding")?;
        let (vocab, h) = table.dims2()?;
        let mut data = Vec::with_capacity(ids.len() * h);
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= vocab {
                return Err(Error::UnknownToken { id, vocab });
            }
            data.extend(table.row(id as usize).iter().zip(pos.row(i)).map(|(a, b)| a + b));
        }
        Tensor::new(vec![ids.len(), h], data)
    }

    /// Binds a record's inputs. With `as_leaves` the three input arrays are
    /// differentiable leaves (for attribution); note embeddings are then
    /// taken as the leaf, otherwise they are gathered on the tape so the
    /// embedding tables receive gradients.
    pub fn bind_inputs(&self, g: &mut Graph, r: &MultimodalRecord, as_leaves: bool) -> Result<BoundInputs> {
        self.check_record(r)?;
        let mods = self.config.modalities;
        let bind = |g: &mut Graph, t: Tensor| if as_leaves { g.tape.leaf(t) } else { g.tape.constant(t) };
        let events = mods.events.then(|| bind(g, r.events.values.clone()));
        let vitals = mods.vitals.then(|| bind(g, r.vitals.values.clone()));
        let notes = if mods.notes {
            let mask: Arc<[bool]> = r.notes.ids.iter().map(|&id| id != PAD_ID).collect();
            let emb = if as_leaves {
                g.tape.leaf(self.note_embeddings(&r.notes.ids)?)
            } else {
                let table = g.param("notes.token_embedding")?;
                let rows: Vec<usize> = r.notes.ids.iter().map(|&id| id as usize).collect();
                let tok = g.tape.gather_rows(table, &rows)?;
                let pos_table = g.param("notes.position_embedding")?;
                let pos = g.tape.slice(pos_table, 0, 0, rows.len())?;
                g.tape.add(tok, pos)?
            };
            Some((emb, mask))
        } else {
            None
        };
        Ok(BoundInputs { events, notes, vitals })
    }

    fn encode_sequence(
        &self,
        g: &mut Graph,
        m: Modality,
        mut x: Var,
        mask: Option<&Arc<[bool]>>,
    ) -> Result<Var> {
        let block = self.config.block(m);
        for i in 0..self.config.encoder(m).layers {
            x = nn::transformer_block(g, x, &block_prefix(m, i), &block, mask, m.name(), i)?;
        }
        nn::pool_first(g, x)
    }

    fn embed_series(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let (len, _) = g.require_rank2(x, prefix)?;
        if len == 0 {
            return Err(Error::Shape(format!("{prefix}: empty sequence")));
        }
        let mut h = nn::linear(g, x, prefix)?;
        if self.config.positional {
            let pos = g.tape.constant(nn::sinusoidal_positions(len, self.config.hidden)?);
            h = g.tape.add(h, pos)?;
            h = g.stabilize(h)?;
        }
        Ok(h)
    }

    /// (L × D) event grid → H-vector.
    pub fn encode_events(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.embed_series(g, x, "events.input")?;
        self.encode_sequence(g, Modality::Events, h, None)
    }

    /// (T × H) note embeddings → the pooled `[CLS]` H-vector.
    pub fn encode_notes(&self, g: &mut Graph, emb: Var, mask: &Arc<[bool]>) -> Result<Var> {
        let (len, _) = g.require_rank2(emb, "notes")?;
        if len == 0 {
            return Err(Error::Shape("notes: empty sequence".into()));
        }
        self.encode_sequence(g, Modality::Notes, emb, Some(mask))
    }

    /// (M × N) vitals grid → H-vector.
    pub fn encode_vitals(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.embed_series(g, x, "vitals.input")?;
        self.encode_sequence(g, Modality::Vitals, h, None)
    }

    /// Concatenates the three representations (zeros where absent), one
    /// ReLU hidden layer, two logits.
    pub fn fuse_and_classify(&self, g: &mut Graph, reps: [Option<Var>; 3]) -> Result<Var> {
        let h = self.config.hidden;
        let mut parts = Vec::with_capacity(3);
        for rep in reps {
            let v = match rep {
                Some(v) => {
                    if g.tape.shape(v) != [h] {
                        return Err(Error::Shape(format!(
                            "fusion expects {h}-vectors, got {:?}",
                            g.tape.shape(v)
                        )));
                    }
                    v
                }
                None => g.tape.constant(Tensor::zeros(&[h])),
            };
            parts.push(v);
        }
        let cat = g.tape.concat(&parts, 0)?;
        let row = g.tape.reshape(cat, &[1, 3 * h])?;
        let hidden = nn::linear(g, row, "fusion.hidden")?;
        let hidden = g.tape.relu(hidden)?;
        let logits = nn::linear(g, hidden, "fusion.out")?;
        g.tape.reshape(logits, &[2])
    }

    /// Class logits (shape `[2]`) for bound inputs.
    pub fn logits(&self, g: &mut Graph, inputs: &BoundInputs) -> Result<Var> {
        let events = inputs.events.map(|x| self.encode_events(g, x)).transpose()?;
        let notes = match &inputs.notes {
            Some((emb, mask)) => Some(self.encode_notes(g, *emb, mask)?),
            None => None,
        };
        let vitals = inputs.vitals.map(|x| self.encode_vitals(g, x)).transpose()?;
        self.fuse_and_classify(g, [events, notes, vitals])
    }

    pub fn predict_with_mode(&self, r: &MultimodalRecord, mode: Mode) -> Result<Prediction> {
        let mut g = Graph::new(&self.params, mode);
        let inputs = self.bind_inputs(&mut g, r, false)?;
        let z = self.logits(&mut g, &inputs)?;
        let v = g.tape.value(z).data();
        Ok(Prediction::from_logits([v[0], v[1]]))
    }

    pub fn predict(&self, r: &MultimodalRecord) -> Result<Prediction> {
        self.predict_with_mode(r, Mode::Standard)
    }

    /// Death probabilities for every record.
    pub fn scores(&self, records: &[MultimodalRecord]) -> Result<Vec<f64>> {
        records.iter().map(|r| self.predict(r).map(|p| p.death_probability())).collect()
    }
}
