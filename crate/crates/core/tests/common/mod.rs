//! Shared test helpers: an independent scalar-loop transformer reference.
//!
//! Everything here is written straight-line against flat slices, with its
//! own RoPE, softmax, and silu code, so it shares no implementation path
//! with the library. It exists to catch the library being wrong in ways
//! that a second copy of the same code would not.

/// Naive causal GQA attention with rotary embeddings.
///
/// `x` is `seq x hidden`, row-major. Weights are in right-multiplication
/// orientation: `wq` is `hidden x (n_heads*head_dim)`, `wk`/`wv` are
/// `hidden x (n_kv_heads*head_dim)`, `wo` is `(n_heads*head_dim) x hidden`.
#[allow(clippy::too_many_arguments)]
pub fn naive_attention(
    x: &[f64],
    seq: usize,
    hidden: usize,
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    wo: &[f64],
    n_heads: usize,
    n_kv_heads: usize,
    head_dim: usize,
    rope_theta: f64,
) -> Vec<f64> {
    let q_dim = n_heads * head_dim;
    let kv_dim = n_kv_heads * head_dim;
    let q_per_kv = n_heads / n_kv_heads;

    // projections
    let mut q = vec![0.0; seq * q_dim];
    let mut k = vec![0.0; seq * kv_dim];
    let mut v = vec![0.0; seq * kv_dim];
    for p in 0..seq {
        for j in 0..q_dim {
            let mut acc = 0.0;
            for c in 0..hidden {
                acc += x[p * hidden + c] * wq[c * q_dim + j];
            }
            q[p * q_dim + j] = acc;
        }
        for j in 0..kv_dim {
            let mut acc_k = 0.0;
            let mut acc_v = 0.0;
            for c in 0..hidden {
                acc_k += x[p * hidden + c] * wk[c * kv_dim + j];
                acc_v += x[p * hidden + c] * wv[c * kv_dim + j];
            }
            k[p * kv_dim + j] = acc_k;
            v[p * kv_dim + j] = acc_v;
        }
    }

    // rotary embeddings on q and k, adjacent pairs
    let rotate = |buf: &mut [f64], width: usize, heads: usize| {
        for p in 0..seq {
            for h in 0..heads {
                for pair in 0..head_dim / 2 {
                    let theta = rope_theta.powf(-2.0 * pair as f64 / head_dim as f64);
                    let angle = p as f64 * theta;
                    let i0 = p * width + h * head_dim + 2 * pair;
                    let (a, b) = (buf[i0], buf[i0 + 1]);
                    buf[i0] = a * angle.cos() - b * angle.sin();
                    buf[i0 + 1] = a * angle.sin() + b * angle.cos();
                }
            }
        }
    };
    rotate(&mut q, q_dim, n_heads);
    rotate(&mut k, kv_dim, n_kv_heads);

    // per-head causal attention
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut context = vec![0.0; seq * q_dim];
    for h in 0..n_heads {
        let kv = h / q_per_kv;
        for p in 0..seq {
            let mut weights = vec![0.0; p + 1];
            for (past, w) in weights.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in 0..head_dim {
                    dot += q[p * q_dim + h * head_dim + c] * k[past * kv_dim + kv * head_dim + c];
                }
                *w = (dot * scale).exp();
            }
            let total: f64 = weights.iter().sum();
            for c in 0..head_dim {
                let mut acc = 0.0;
                for (past, w) in weights.iter().enumerate() {
                    acc += (w / total) * v[past * kv_dim + kv * head_dim + c];
                }
                context[p * q_dim + h * head_dim + c] = acc;
            }
        }
    }

    // output projection
    let mut out = vec![0.0; seq * hidden];
    for p in 0..seq {
        for j in 0..hidden {
            let mut acc = 0.0;
            for c in 0..q_dim {
                acc += context[p * q_dim + c] * wo[c * hidden + j];
            }
            out[p * hidden + j] = acc;
        }
    }
    out
}

/// Naive gated MLP: `(silu(x W_gate) ⊙ (x W_up)) W_down`.
#[allow(clippy::too_many_arguments)]
pub fn naive_mlp(
    x: &[f64],
    seq: usize,
    hidden: usize,
    w_gate: &[f64],
    w_up: &[f64],
    w_down: &[f64],
    intermediate: usize,
) -> Vec<f64> {
    let mut activated = vec![0.0; seq * intermediate];
    for p in 0..seq {
        for j in 0..intermediate {
            let mut gate = 0.0;
            let mut up = 0.0;
            for c in 0..hidden {
                gate += x[p * hidden + c] * w_gate[c * intermediate + j];
                up += x[p * hidden + c] * w_up[c * intermediate + j];
            }
            let silu = gate / (1.0 + (-gate).exp());
            activated[p * intermediate + j] = silu * up;
        }
    }
    let mut out = vec![0.0; seq * hidden];
    for p in 0..seq {
        for j in 0..hidden {
            let mut acc = 0.0;
            for c in 0..intermediate {
                acc += activated[p * intermediate + c] * w_down[c * hidden + j];
            }
            out[p * hidden + j] = acc;
        }
    }
    out
}
