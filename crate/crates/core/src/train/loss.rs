//! Class-weighted binary cross-entropy on the death probability.

/// Probabilities are clamped to `[CLAMP, 1 − CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-12;

/// −[w⁺·y·log ŷ + (1−y)·log(1−ŷ)].
pub fn cross_entropy(y: u8, p_death: f64, pos_weight: f64) -> f64 {
    let p = p_death.clamp(CLAMP, 1.0 - CLAMP);
    if y == 1 {
        -pos_weight * p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Gradient of [`cross_entropy`] with respect to the two class logits,
/// given the softmax probabilities `(p₀, p₁)` (class 1 = death).
pub fn logit_gradient(y: u8, probs: [f64; 2], pos_weight: f64) -> [f64; 2] {
    let [p0, p1] = probs;
    if y == 1 {
        // d(−w·log p₁)/dz = −w·(e₁ − p)
        [pos_weight * p0, -pos_weight * p0]
    } else {
        // d(−log p₀)/dz = −(e₀ − p)
        [-p1, p1]
    }
}
