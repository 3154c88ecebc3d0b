use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{AttentionRecord, Graph, Mode};
use super::params::ParamStore;
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// Shape of one transformer encoder block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub dropout: f64,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Which optional intercept terms the layers carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOptions {
    pub bias: bool,
    pub ln_affine: bool,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self { bias: true, ln_affine: true }
    }
}

/// `sin(pos / 10000^(2i/width))` on even columns, the matching cosine on odd ones.
pub fn sinusoidal_positions(seq_len: usize, width: usize) -> Result<Tensor> {
    if width % 2 != 0 {
        return Err(Error::InvalidArgument(format!("positional width {width} must be even")));
    }
    let mut data = vec![0.0; seq_len * width];
    for pos in 0..seq_len {
        for i in 0..width / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / width as f64);
            data[pos * width + 2 * i] = angle.sin();
            data[pos * width + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![seq_len, width], data)
}

pub fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    opts: LayerOptions,
    rng: &mut ChaCha8Rng,
) {
    store.init_weight(&format!("{prefix}.weight"), fan_in, fan_out, rng);
    if opts.bias {
        store.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
    }
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, width: usize, opts: LayerOptions) {
    if opts.ln_affine {
        store.insert(format!("{prefix}.gain"), Tensor::full(&[width], 1.0));
        store.insert(format!("{prefix}.shift"), Tensor::zeros(&[width]));
    }
}

pub fn init_block(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, opts: LayerOptions, rng: &mut ChaCha8Rng) {
    let h = cfg.hidden;
    for proj in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{prefix}.attn.{proj}"), h, h, opts, rng);
    }
    init_layer_norm(store, &format!("{prefix}.ln1"), h, opts);
    init_linear(store, &format!("{prefix}.ffn.in"), h, cfg.ffn, opts, rng);
    init_linear(store, &format!("{prefix}.ffn.out"), cfg.ffn, h, opts, rng);
    init_layer_norm(store, &format!("{prefix}.ln2"), h, opts);
}

/// `x · W (+ b)` for `x` of shape (n × in). A missing `{prefix}.bias`
/// parameter means the layer has no intercept.
pub fn linear(g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
    let w_name = format!("{prefix}.weight");
    let w = g.param(&w_name)?;
    let (_, fan_in) = g.require_rank2(x, prefix)?;
    let w_shape = g.tape.shape(w).to_vec();
    if w_shape[0] != fan_in {
        return Err(Error::TensorShape {
            name: w_name,
            expected: vec![fan_in, w_shape[1]],
            found: w_shape,
        });
    }
    let mut y = g.tape.matmul(x, w)?;
    let b_name = format!("{prefix}.bias");
    if g.has_param(&b_name) {
        let b = g.param(&b_name)?;
        y = g.tape.add_broadcast(y, b)?;
    }
    g.stabilize(y)
}

/// Row-wise layer normalisation of an (n × width) matrix.
///
/// In [`Mode::Attribution`] the factor `sqrt(eps + var)` is detached, so the
/// layer acts as the fixed linear map `(I − 11ᵀ/n) / sqrt(eps + var)`.
pub fn layer_norm(g: &mut Graph, x: Var, prefix: &str, eps: f64) -> Result<Var> {
    let (rows, width) = g.require_rank2(x, prefix)?;
    if width == 0 {
        return Err(Error::Shape("layer norm over zero features".into()));
    }
    let t = &mut g.tape;
    let mean = t.mean_axis(x, 1)?;
    let mean = t.reshape(mean, &[rows, 1])?;
    let mean = t.broadcast(mean, &[rows, width])?;
    let centered = t.sub(x, mean)?;
    let sq = t.mul(centered, centered)?;
    let var = t.mean_axis(sq, 1)?;
    let var = t.reshape(var, &[rows, 1])?;
    let eps_c = t.constant(Tensor::full(&[rows, 1], eps));
    let shifted = t.add(var, eps_c)?;
    let mut denom = t.sqrt(shifted)?;
    if g.mode() == Mode::Attribution {
        denom = g.detach_frozen(denom)?;
    }
    let denom = g.tape.broadcast(denom, &[rows, width])?;
    let mut y = g.tape.div(centered, denom)?;
    y = g.stabilize(y)?;
    let gain_name = format!("{prefix}.gain");
    if g.has_param(&gain_name) {
        let gain = g.param(&gain_name)?;
        let gain = g.tape.broadcast(gain, &[rows, width])?;
        y = g.tape.mul(y, gain)?;
        let shift = g.param(&format!("{prefix}.shift"))?;
        y = g.tape.add_broadcast(y, shift)?;
        y = g.stabilize(y)?;
    }
    Ok(y)
}

/// Self-attention over an (L × hidden) sequence.
///
/// `key_mask[j] == false` removes position `j` as a key. In attribution mode
/// the attention probabilities are detached, so gradients reach the input
/// only through the value path.
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    prefix: &str,
    cfg: &BlockConfig,
    key_mask: Option<&Arc<[bool]>>,
    encoder: &'static str,
    block: usize,
) -> Result<Var> {
    cfg.validate()?;
    let (len, width) = g.require_rank2(x, prefix)?;
    if len == 0 {
        return Err(Error::Shape("attention over an empty sequence".into()));
    }
    if width != cfg.hidden {
        return Err(Error::Shape(format!("{prefix}: width {width} but block expects {}", cfg.hidden)));
    }
    let q = linear(g, x, &format!("{prefix}.q"))?;
    let k = linear(g, x, &format!("{prefix}.k"))?;
    let v = linear(g, x, &format!("{prefix}.v"))?;
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut mean_map = Tensor::zeros(&[len, len]);
    for h in 0..cfg.heads {
        let t = &mut g.tape;
        let qh = t.slice(q, 1, h * dk, (h + 1) * dk)?;
        let kh = t.slice(k, 1, h * dk, (h + 1) * dk)?;
        let vh = t.slice(v, 1, h * dk, (h + 1) * dk)?;
        let kt = t.transpose(kh)?;
        let scores = t.matmul(qh, kt)?;
        let scores = t.scale(scores, scale)?;
        let mut p = match key_mask {
            Some(m) => t.masked_softmax(scores, 1, m.clone())?,
            None => t.softmax(scores, 1)?,
        };
        mean_map.add_assign(g.tape.value(p));
        p = g.dropout(p)?;
        if g.mode() == Mode::Attribution {
            p = g.detach_frozen(p)?;
        }
        let a = g.tape.matmul(p, vh)?;
        heads.push(g.stabilize(a)?);
    }
    let inv = 1.0 / cfg.heads as f64;
    g.record_attention(AttentionRecord { encoder, block, map: mean_map.map(|v| v * inv) });
    let merged = if heads.len() == 1 { heads[0] } else { g.tape.concat(&heads, 1)? };
    linear(g, merged, &format!("{prefix}.o"))
}

/// Post-norm encoder block: `LN(x + MHA(x))` then `LN(h + FFN(h))`.
pub fn transformer_block(
    g: &mut Graph,
    x: Var,
    prefix: &str,
    cfg: &BlockConfig,
    key_mask: Option<&Arc<[bool]>>,
    encoder: &'static str,
    block: usize,
) -> Result<Var> {
    let attn = multi_head_attention(g, x, &format!("{prefix}.attn"), cfg, key_mask, encoder, block)?;
    let sum = g.tape.add(x, attn)?;
    let sum = g.stabilize(sum)?;
    let h = layer_norm(g, sum, &format!("{prefix}.ln1"), LN_EPS)?;
    let inner = linear(g, h, &format!("{prefix}.ffn.in"))?;
    let inner = g.tape.relu(inner)?;
    let inner = g.dropout(inner)?;
    let ffn = linear(g, inner, &format!("{prefix}.ffn.out"))?;
    let sum = g.tape.add(h, ffn)?;
    let sum = g.stabilize(sum)?;
    layer_norm(g, sum, &format!("{prefix}.ln2"), LN_EPS)
}

/// Row 0 of an (L × H) sequence, as an H-vector.
pub fn pool_first(g: &mut Graph, x: Var) -> Result<Var> {
    let (len, width) = g.require_rank2(x, "pooler input")?;
    if len == 0 {
        return Err(Error::Shape("cannot pool an empty sequence".into()));
    }
    let row = g.tape.slice(x, 0, 0, 1)?;
    g.tape.reshape(row, &[width])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::autodiff::grad_check;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut store = ParamStore::new();
        store.init_normal("x", &[rows, cols], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        store.get("x").unwrap().clone()
    }

    fn block_store(cfg: &BlockConfig, opts: LayerOptions) -> ParamStore {
        let mut store = ParamStore::new();
        init_block(&mut store, "b", cfg, opts, &mut rng());
        // Non-trivial affine terms so they are exercised.
        for (name, t) in store.iter_mut() {
            if name.ends_with(".bias") || name.ends_with(".shift") {
                t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.05 * (i as f64).sin());
            }
        }
        store
    }

    const CFG: BlockConfig = BlockConfig { hidden: 8, heads: 2, ffn: 12, dropout: 0.0 };

    #[test]
    fn positions_by_formula() {
        let p = sinusoidal_positions(3, 4).unwrap();
        assert_eq!(p.get2(0, 0), 0.0);
        assert_eq!(p.get2(0, 1), 1.0);
        assert!((p.get2(1, 0) - 0.841471).abs() < 1e-6);
        assert!(p.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(sinusoidal_positions(3, 5).is_err());
    }

    #[test]
    fn layer_norm_of_two_values() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Standard);
        let x = g.tape.constant(Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap());
        let y = layer_norm(&mut g, x, "ln", 1e-5).unwrap();
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((g.tape.value(y).data()[0] + expected).abs() < 1e-12);
        assert!((g.tape.value(y).data()[1] - expected).abs() < 1e-12);
        assert!((expected - 0.999995).abs() < 1e-6);
    }

    #[test]
    fn attribution_layer_norm_jacobian_is_scaled_centering() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Attribution);
        let x = g.tape.leaf(Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap());
        let y = layer_norm(&mut g, x, "ln", 1e-5).unwrap();
        g.tape.backward_with_seed(y, Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let s = (1.0f64 + 1e-5).sqrt();
        let grad = g.tape.grad(x).unwrap().data().to_vec();
        assert!((grad[0] - 0.5 / s).abs() < 1e-15);
        assert!((grad[1] + 0.5 / s).abs() < 1e-15);
    }

    #[test]
    fn attribution_layer_norm_conserves_relevance() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Attribution);
        let xv = random_matrix(3, 6, 1);
        let r = random_matrix(3, 6, 2);
        let x = g.tape.leaf(xv.clone());
        let y = layer_norm(&mut g, x, "ln", LN_EPS).unwrap();
        let ry: f64 = g.tape.value(y).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        g.tape.backward_with_seed(y, r).unwrap();
        let gi: f64 = g.tape.grad(x).unwrap().data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
        assert!((gi - ry).abs() <= 1e-8 * ry.abs().max(1e-12), "{gi} vs {ry}");
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let store = block_store(&CFG, LayerOptions::default());
        let mut g = Graph::new(&store, Mode::Standard).with_attention_log();
        let x = g.tape.constant(random_matrix(5, 8, 3));
        multi_head_attention(&mut g, x, "b.attn", &CFG, None, "t", 0).unwrap();
        let map = &g.attention_log()[0].map;
        for i in 0..5 {
            let s: f64 = map.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(map.row(i).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn attribution_attention_ignores_query_and_key_weights() {
        let store = block_store(&CFG, LayerOptions::default());
        let mut g = Graph::new(&store, Mode::Attribution).with_trainable_params();
        let x = g.tape.constant(random_matrix(4, 8, 4));
        let y = multi_head_attention(&mut g, x, "b.attn", &CFG, None, "t", 0).unwrap();
        let s = g.tape.sum_all(y).unwrap();
        g.tape.backward(s).unwrap();
        for name in ["b.attn.q.weight", "b.attn.k.weight", "b.attn.q.bias", "b.attn.k.bias"] {
            let v = g.param(name).unwrap();
            assert!(g.tape.grad_or_zeros(v).data().iter().all(|&d| d == 0.0), "{name}");
        }
        let wv = g.param("b.attn.v.weight").unwrap();
        assert!(g.tape.grad_or_zeros(wv).data().iter().any(|&d| d != 0.0));
    }

    #[test]
    fn single_position_attention_is_value_projection() {
        let opts = LayerOptions { bias: false, ln_affine: false };
        let store = block_store(&CFG, opts);
        let mut g = Graph::new(&store, Mode::Standard).with_attention_log();
        let xv = random_matrix(1, 8, 5);
        let x = g.tape.constant(xv.clone());
        let y = multi_head_attention(&mut g, x, "b.attn", &CFG, None, "t", 0).unwrap();
        assert_eq!(g.attention_log()[0].map.data(), &[1.0]);
        let wv = store.get("b.attn.v.weight").unwrap();
        let wo = store.get("b.attn.o.weight").unwrap();
        let expected = xv.matmul(wv).unwrap().matmul(wo).unwrap();
        for (a, b) in g.tape.value(y).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn modes_agree_bitwise_on_forward() {
        let store = block_store(&CFG, LayerOptions::default());
        let xv = random_matrix(6, 8, 6);
        let run = |mode| {
            let mut g = Graph::new(&store, mode);
            let x = g.tape.constant(xv.clone());
            let y = transformer_block(&mut g, x, "b", &CFG, None, "t", 0).unwrap();
            g.tape.value(y).clone()
        };
        assert_eq!(run(Mode::Standard), run(Mode::Attribution));
    }

    #[test]
    fn block_preserves_shape() {
        let store = block_store(&CFG, LayerOptions::default());
        for len in [1, 3, 9] {
            let mut g = Graph::new(&store, Mode::Standard);
            let x = g.tape.constant(random_matrix(len, 8, len as u64));
            let y = transformer_block(&mut g, x, "b", &CFG, None, "t", 0).unwrap();
            assert_eq!(g.tape.shape(y), &[len, 8]);
        }
    }

    #[test]
    fn zeroed_sublayers_reduce_to_stacked_layer_norms() {
        let opts = LayerOptions { bias: false, ln_affine: false };
        let mut store = block_store(&CFG, opts);
        for (name, t) in store.iter_mut() {
            if name.contains(".attn.") || name.contains(".ffn.") {
                t.data_mut().fill(0.0);
            }
        }
        let xv = random_matrix(4, 8, 7);
        let mut g = Graph::new(&store, Mode::Standard);
        let x = g.tape.constant(xv.clone());
        let y = transformer_block(&mut g, x, "b", &CFG, None, "t", 0).unwrap();
        let mut g2 = Graph::new(&store, Mode::Standard);
        let x2 = g2.tape.constant(xv);
        let l1 = layer_norm(&mut g2, x2, "none", LN_EPS).unwrap();
        let l2 = layer_norm(&mut g2, l1, "none", LN_EPS).unwrap();
        assert_eq!(g.tape.value(y), g2.tape.value(l2));
    }

    /// Scalar probe `Σ w ⊙ block(x)`; in attribution mode the detached
    /// values are frozen at `base` so finite differences see the surrogate.
    fn block_probe(store: &ParamStore, mode: Mode, base: &Tensor, weights: &Tensor) -> f64 {
        let mut g = Graph::new(store, mode).recording_detached();
        let x = g.tape.constant(base.clone());
        transformer_block(&mut g, x, "b", &CFG, None, "t", 0).unwrap();
        let frozen = g.take_detached();
        grad_check(
            |t, x| {
                let mut g = Graph::new(store, mode).replaying_detached(frozen.clone());
                g.swap_tape(t);
                let y = transformer_block(&mut g, x, "b", &CFG, None, "t", 0);
                g.swap_tape(t);
                let w = t.constant(weights.clone());
                let p = t.mul(y?, w)?;
                t.sum_all(p)
            },
            base,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn block_passes_grad_check_in_both_modes() {
        let store = block_store(&CFG, LayerOptions::default());
        let weights = random_matrix(3, 8, 8);
        let base = random_matrix(3, 8, 9);
        for mode in [Mode::Standard, Mode::Attribution] {
            let err = block_probe(&store, mode, &base, &weights);
            assert!(err < 1e-4, "{mode:?}: {err}");
        }
    }

    #[test]
    fn attribution_gradient_differs_from_true_gradient() {
        let store = block_store(&CFG, LayerOptions::default());
        let base = random_matrix(3, 8, 10);
        let grad = |mode| {
            let mut g = Graph::new(&store, mode);
            let x = g.tape.leaf(base.clone());
            let y = transformer_block(&mut g, x, "b", &CFG, None, "t", 0).unwrap();
            let s = g.tape.sum_all(y).unwrap();
            let s2 = g.tape.mul(s, s).unwrap();
            g.tape.backward(s2).unwrap();
            g.tape.grad(x).unwrap().clone()
        };
        assert_ne!(grad(Mode::Standard), grad(Mode::Attribution));
    }

    #[test]
    fn pooler_returns_first_row_and_ignores_the_rest() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Standard);
        let x = g.tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = pool_first(&mut g, x).unwrap();
        assert_eq!(g.tape.value(p).data(), &[1.0, 2.0]);
        let s = g.tape.sum_all(p).unwrap();
        g.tape.backward(s).unwrap();
        assert_eq!(g.tape.grad(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = BlockConfig { hidden: 10, heads: 4, ffn: 8, dropout: 0.0 };
        assert!(cfg.validate().is_err());
    }
}
