//! Desk-scale reference transformer forward pass.
//!
//! Pre-norm residual wiring with RMSNorm, causal grouped-query attention
//! with rotary embeddings, and a gated (SwiGLU) MLP — the Llama/Qwen block
//! structure. This is the ground-truth oracle behind every output-invariance
//! claim in the crate: divergence is measured on final hidden states, in
//! 64-bit floats, with no sampling, caching, or batching.

use crate::checkpoint::{
    input_norm_name, post_attn_norm_name, CheckpointView, LoraAdapter, ModelConfig, Site,
};
use crate::error::{Error, Result};
use crate::linalg::{matmul, stream_rng, Matrix};

/// Fixed sequence length for seeded divergence probes.
pub const DIVERGENCE_SEQ_LEN: usize = 8;

/// A sequence of hidden-size embedding vectors, one per position.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardInput {
    pub embeddings: Matrix,
}

impl ForwardInput {
    pub fn new(embeddings: Matrix) -> Result<Self> {
        if embeddings.rows() == 0 {
            return Err(Error::InvalidConfig(
                "forward input needs at least one position".to_string(),
            ));
        }
        Ok(ForwardInput { embeddings })
    }

    /// Seeded random input: i.i.d. standard-normal entries.
    pub fn seeded_random(config: &ModelConfig, seq_len: usize, seed: u64, index: u64) -> Self {
        let mut rng = stream_rng(seed, index, "forward-input");
        ForwardInput {
            embeddings: Matrix::gaussian(seq_len, config.hidden_size, 1.0, &mut rng),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.embeddings.rows()
    }
}

/// Per-position hidden states after the final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub hidden_states: Matrix,
}

/// RMSNorm: `y_j = x_j / sqrt(mean(x^2) + eps) * w_j`, applied per row.
fn rmsnorm(x: &Matrix, weight: &Matrix, eps: f64) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        let row = x.row(i);
        let mean_sq = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let scale = 1.0 / (mean_sq + eps).sqrt();
        x.get(i, j) * scale * weight.get(0, j)
    })
}

/// Numerically stable softmax over a slice, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Apply rotary embeddings in place to a `seq x (n_heads * head_dim)`
/// projection. Position `p` rotates each head's adjacent coordinate pair
/// `(2j, 2j+1)` by `p * theta^(-2j / head_dim)`.
pub fn apply_rope(m: &mut Matrix, n_heads: usize, head_dim: usize, rope_theta: f64) {
    debug_assert_eq!(m.cols(), n_heads * head_dim);
    debug_assert_eq!(head_dim % 2, 0);
    for pos in 0..m.rows() {
        for head in 0..n_heads {
            let base = head * head_dim;
            for pair in 0..head_dim / 2 {
                let freq = rope_theta.powf(-2.0 * pair as f64 / head_dim as f64);
                let angle = pos as f64 * freq;
                let (sin, cos) = angle.sin_cos();
                let a = m.get(pos, base + 2 * pair);
                let b = m.get(pos, base + 2 * pair + 1);
                m.set(pos, base + 2 * pair, a * cos - b * sin);
                m.set(pos, base + 2 * pair + 1, a * sin + b * cos);
            }
        }
    }
}

fn check_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::ShapeMismatch {
            tensor: name.to_string(),
            expected: vec![rows, cols],
            found: vec![m.rows(), m.cols()],
        });
    }
    Ok(())
}

/// Causal grouped-query attention with RoPE: softmax-scaled dot products
/// per query head against its KV group, per-head concatenation, then the
/// output projection. `x` is the already-normalized block input.
pub fn attention_block(
    x: &Matrix,
    w_q: &Matrix,
    w_k: &Matrix,
    w_v: &Matrix,
    w_o: &Matrix,
    config: &ModelConfig,
) -> Result<Matrix> {
    let d = config.head_dim;
    let seq = x.rows();
    check_shape("q_proj", w_q, config.hidden_size, config.q_dim())?;
    check_shape("k_proj", w_k, config.hidden_size, config.kv_dim())?;
    check_shape("v_proj", w_v, config.hidden_size, config.kv_dim())?;
    check_shape("o_proj", w_o, config.q_dim(), config.hidden_size)?;
    if x.cols() != config.hidden_size {
        return Err(Error::ShapeMismatch {
            tensor: "attention input".to_string(),
            expected: vec![seq, config.hidden_size],
            found: vec![x.rows(), x.cols()],
        });
    }

    let mut q = matmul(x, w_q)?;
    let mut k = matmul(x, w_k)?;
    let v = matmul(x, w_v)?;
    apply_rope(&mut q, config.n_heads, d, config.rope_theta);
    apply_rope(&mut k, config.n_kv_heads, d, config.rope_theta);

    let scale = 1.0 / (d as f64).sqrt();
    let mut context = Matrix::zeros(seq, config.q_dim());
    let mut scores = vec![0.0f64; seq];
    for q_head in 0..config.n_heads {
        let kv_head = config.kv_group(q_head);
        let q_base = q_head * d;
        let kv_base = kv_head * d;
        for pos in 0..seq {
            // causal: attend to positions <= pos
            for (past, score) in scores.iter_mut().enumerate().take(pos + 1) {
                let mut dot = 0.0;
                for c in 0..d {
                    dot += q.get(pos, q_base + c) * k.get(past, kv_base + c);
                }
                *score = dot * scale;
            }
            softmax_in_place(&mut scores[..pos + 1]);
            for c in 0..d {
                let mut acc = 0.0;
                for (past, &w) in scores.iter().enumerate().take(pos + 1) {
                    acc += w * v.get(past, kv_base + c);
                }
                context.set(pos, q_base + c, acc);
            }
        }
    }
    matmul(&context, w_o)
}

/// Gated MLP: `(silu(x W_gate) ⊙ (x W_up)) W_down` with
/// `silu(t) = t / (1 + e^-t)`. `x` is the already-normalized block input.
pub fn mlp_block(x: &Matrix, w_gate: &Matrix, w_up: &Matrix, w_down: &Matrix) -> Result<Matrix> {
    let gate = matmul(x, w_gate)?;
    let up = matmul(x, w_up)?;
    if gate.cols() != up.cols() || w_down.rows() != gate.cols() {
        return Err(Error::DimensionMismatch {
            context: "mlp gate/up/down widths",
            left_rows: gate.cols(),
            left_cols: up.cols(),
            right_rows: w_down.rows(),
            right_cols: w_down.cols(),
        });
    }
    let hidden = Matrix::from_fn(gate.rows(), gate.cols(), |i, j| {
        let g = gate.get(i, j);
        let silu = g / (1.0 + (-g).exp());
        silu * up.get(i, j)
    });
    matmul(&hidden, w_down)
}

/// Base weight plus the adapter's effective delta `(alpha/rank) * A * B`,
/// when the adapter targets this site.
fn effective_weight(
    view: &CheckpointView,
    adapter: Option<&LoraAdapter>,
    layer: usize,
    site: Site,
) -> Result<Matrix> {
    let base = view.tensor(&site.tensor_name(layer))?;
    match adapter.and_then(|a| a.delta(layer, site)) {
        Some(delta) => base.add(&delta?),
        None => Ok(base.clone()),
    }
}

/// Full pre-norm forward pass over all layers. Adapter deltas, when
/// present, are folded into the effective weight of each targeted site
/// before the block runs.
pub fn forward(
    view: &CheckpointView,
    adapter: Option<&LoraAdapter>,
    input: &ForwardInput,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    config.validate()?;
    if input.embeddings.cols() != config.hidden_size {
        return Err(Error::ShapeMismatch {
            tensor: "forward input".to_string(),
            expected: vec![input.seq_len(), config.hidden_size],
            found: vec![input.embeddings.rows(), input.embeddings.cols()],
        });
    }
    if let Some(a) = adapter {
        a.validate_against(config)?;
    }

    let mut x = input.embeddings.clone();
    for layer in 0..config.n_layers {
        let w_q = effective_weight(view, adapter, layer, Site::Q)?;
        let w_k = effective_weight(view, adapter, layer, Site::K)?;
        let w_v = effective_weight(view, adapter, layer, Site::V)?;
        let w_o = effective_weight(view, adapter, layer, Site::O)?;
        let attn_in = rmsnorm(&x, view.tensor(&input_norm_name(layer))?, config.norm_eps);
        let attn_out = attention_block(&attn_in, &w_q, &w_k, &w_v, &w_o, config)?;
        x = x.add(&attn_out)?;

        let w_gate = effective_weight(view, adapter, layer, Site::Gate)?;
        let w_up = effective_weight(view, adapter, layer, Site::Up)?;
        let w_down = effective_weight(view, adapter, layer, Site::Down)?;
        let mlp_in = rmsnorm(&x, view.tensor(&post_attn_norm_name(layer))?, config.norm_eps);
        let mlp_out = mlp_block(&mlp_in, &w_gate, &w_up, &w_down)?;
        x = x.add(&mlp_out)?;
    }
    Ok(ForwardOutput { hidden_states: x })
}

/// Max over `n_inputs` seeded random inputs of the max-abs difference
/// between the two forward outputs. Both views must share `config`.
#[allow(clippy::too_many_arguments)]
pub fn max_divergence(
    view_a: &CheckpointView,
    view_b: &CheckpointView,
    adapter_a: Option<&LoraAdapter>,
    adapter_b: Option<&LoraAdapter>,
    n_inputs: usize,
    seed: u64,
    config: &ModelConfig,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..n_inputs {
        let input = ForwardInput::seeded_random(config, DIVERGENCE_SEQ_LEN, seed, i as u64);
        let out_a = forward(view_a, adapter_a, &input, config)?;
        let out_b = forward(view_b, adapter_b, &input, config)?;
        worst = worst.max(out_a.hidden_states.max_abs_diff(&out_b.hidden_states));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::generate_toy_checkpoint;
    use crate::container::Dtype;

    fn toy() -> (ModelConfig, CheckpointView) {
        let config = ModelConfig::toy_default();
        let view = generate_toy_checkpoint(&config, 42, Dtype::F64).unwrap();
        (config, view)
    }

    #[test]
    fn single_position_attention_is_value_projection() {
        // With one position the softmax weight is 1, and RoPE at position 0
        // is the identity, so the block reduces to (x W_V) W_O per head.
        let (config, view) = toy();
        let mut rng = stream_rng(3, 0, "attn-seq1");
        let x = Matrix::gaussian(1, config.hidden_size, 1.0, &mut rng);
        let got = attention_block(
            &x,
            view.tensor(&Site::Q.tensor_name(0)).unwrap(),
            view.tensor(&Site::K.tensor_name(0)).unwrap(),
            view.tensor(&Site::V.tensor_name(0)).unwrap(),
            view.tensor(&Site::O.tensor_name(0)).unwrap(),
            &config,
        )
        .unwrap();

        let v = matmul(&x, view.tensor(&Site::V.tensor_name(0)).unwrap()).unwrap();
        // expand per-KV-head values to per-query-head concatenation
        let expanded = Matrix::from_fn(1, config.q_dim(), |_, c| {
            let q_head = c / config.head_dim;
            let kv = config.kv_group(q_head);
            v.get(0, kv * config.head_dim + c % config.head_dim)
        });
        let want = matmul(&expanded, view.tensor(&Site::O.tensor_name(0)).unwrap()).unwrap();
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }

    #[test]
    fn zero_value_projection_gives_zero_output() {
        let (config, view) = toy();
        let mut rng = stream_rng(4, 0, "attn-zero-v");
        let x = Matrix::gaussian(3, config.hidden_size, 1.0, &mut rng);
        let zero_v = Matrix::zeros(config.hidden_size, config.kv_dim());
        let got = attention_block(
            &x,
            view.tensor(&Site::Q.tensor_name(0)).unwrap(),
            view.tensor(&Site::K.tensor_name(0)).unwrap(),
            &zero_v,
            view.tensor(&Site::O.tensor_name(0)).unwrap(),
            &config,
        )
        .unwrap();
        assert_eq!(got.max_abs(), 0.0);
    }

    #[test]
    fn mlp_zero_input_and_zero_up_give_zero() {
        let (config, view) = toy();
        let gate = view.tensor(&Site::Gate.tensor_name(0)).unwrap();
        let up = view.tensor(&Site::Up.tensor_name(0)).unwrap();
        let down = view.tensor(&Site::Down.tensor_name(0)).unwrap();

        let zero_x = Matrix::zeros(2, config.hidden_size);
        assert_eq!(mlp_block(&zero_x, gate, up, down).unwrap().max_abs(), 0.0);

        let mut rng = stream_rng(5, 0, "mlp-zero-up");
        let x = Matrix::gaussian(2, config.hidden_size, 1.0, &mut rng);
        let zero_up = Matrix::zeros(config.hidden_size, config.intermediate_size);
        assert_eq!(mlp_block(&x, gate, &zero_up, down).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn zero_layer_forward_is_identity() {
        let mut config = ModelConfig::toy_default();
        config.n_layers = 1; // generate one layer, then forward over zero
        let view = generate_toy_checkpoint(&config, 11, Dtype::F64).unwrap();
        config.n_layers = 0;
        let input = ForwardInput::seeded_random(&config, 4, 9, 0);
        let out = forward(&view, None, &input, &config).unwrap();
        assert_eq!(out.hidden_states, input.embeddings);
    }

    #[test]
    fn zero_a_adapter_matches_no_adapter_bitwise() {
        let (config, view) = toy();
        let mut adapter =
            LoraAdapter::seeded_random(&config, 2, 4.0, &Site::ALL, 7, Dtype::F64).unwrap();
        for pair in adapter.targets.values_mut() {
            pair.a = Matrix::zeros(pair.a.rows(), pair.a.cols());
        }
        let input = ForwardInput::seeded_random(&config, 5, 1, 0);
        let plain = forward(&view, None, &input, &config).unwrap();
        let adapted = forward(&view, Some(&adapter), &input, &config).unwrap();
        for (a, b) in plain
            .hidden_states
            .data()
            .iter()
            .zip(adapted.hidden_states.data())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let (config, view) = toy();
        let input = ForwardInput::seeded_random(&config, 6, 2, 0);
        let a = forward(&view, None, &input, &config).unwrap();
        let b = forward(&view, None, &input, &config).unwrap();
        for (x, y) in a.hidden_states.data().iter().zip(b.hidden_states.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn max_divergence_same_view_is_exactly_zero() {
        let (config, view) = toy();
        let d = max_divergence(&view, &view, None, None, 5, 3, &config).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn max_divergence_detects_perturbation() {
        let (config, view) = toy();
        let mut perturbed = view.clone();
        let name = Site::V.tensor_name(0);
        let m = perturbed.tensor_mut(&name).unwrap();
        let old = m.get(0, 0);
        m.set(0, 0, old + 0.1);
        let d = max_divergence(&view, &perturbed, None, None, 5, 3, &config).unwrap();
        assert!(d > 0.0, "divergence {d}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::Rng;
        let mut rng = stream_rng(7, 0, "softmax");
        for len in 1..20 {
            let mut row: Vec<f64> = (0..len)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * 5.0)
                .collect();
            softmax_in_place(&mut row);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        }
    }

    #[test]
    fn rope_preserves_same_position_dot_products() {
        let config = ModelConfig::toy_default();
        let mut rng = stream_rng(8, 0, "rope-dot");
        let q0 = Matrix::gaussian(6, config.q_dim(), 1.0, &mut rng);
        let k0 = Matrix::gaussian(6, config.q_dim(), 1.0, &mut rng);
        let mut q = q0.clone();
        let mut k = k0.clone();
        apply_rope(&mut q, config.n_heads, config.head_dim, config.rope_theta);
        apply_rope(&mut k, config.n_heads, config.head_dim, config.rope_theta);
        for pos in 0..6 {
            for head in 0..config.n_heads {
                let base = head * config.head_dim;
                let dot = |a: &Matrix, b: &Matrix| {
                    (0..config.head_dim)
                        .map(|c| a.get(pos, base + c) * b.get(pos, base + c))
                        .sum::<f64>()
                };
                let before = dot(&q0, &k0);
                let after = dot(&q, &k);
                assert!((before - after).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn attention_rejects_wrong_shapes() {
        let (config, view) = toy();
        let x = Matrix::zeros(2, config.hidden_size);
        let bad_q = Matrix::zeros(config.hidden_size, config.q_dim() - 1);
        assert!(attention_block(
            &x,
            &bad_q,
            view.tensor(&Site::K.tensor_name(0)).unwrap(),
            view.tensor(&Site::V.tensor_name(0)).unwrap(),
            view.tensor(&Site::O.tensor_name(0)).unwrap(),
            &config,
        )
        .is_err());
    }

    use crate::linalg::stream_rng;
}
