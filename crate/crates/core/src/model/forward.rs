//! Forward pass: causal decoder stack producing next-token logits, plus the
//! completion log-probability and per-token cross-entropy built on top of it.

use alloc::vec::Vec;

use super::linalg::{dot, gelu, layer_norm, log_sum_exp, matmul};
use super::{Mat, ModelError, Parameters};
use crate::seq::PromptEncoding;

/// Per-layer intermediates retained for backpropagation.
pub(crate) struct LayerCache {
    pub xhat1: Vec<f64>,
    pub rstd1: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Attention probabilities, `[n_heads, T, T]`, zero above the diagonal.
    pub p: Vec<f64>,
    /// Concatenated head outputs before the output projection.
    pub z: Vec<f64>,
    pub xhat2: Vec<f64>,
    pub rstd2: Vec<f64>,
    /// Feed-forward pre-activation.
    pub u: Vec<f64>,
    /// Feed-forward activation (GELU of `u`).
    pub h: Vec<f64>,
}

/// Everything the backward pass needs besides the logits.
pub struct FwdCache {
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) xhat_f: Vec<f64>,
    pub(crate) rstd_f: Vec<f64>,
    pub(crate) hf: Vec<f64>,
}

fn add_bias(out: &mut [f64], bias: &[f64], rows: usize, n: usize) {
    for t in 0..rows {
        let row = &mut out[t * n..(t + 1) * n];
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Runs the decoder over `ids`, returning one row of unnormalized next-token
/// scores per position. Row `p` is causal: it depends only on tokens `0..=p`.
pub fn forward_seq(
    params: &Parameters,
    ids: &[usize],
    want_cache: bool,
) -> Result<(Mat, Option<FwdCache>), ModelError> {
    let cfg = params.config();
    let t_len = ids.len();
    if t_len == 0 || t_len > cfg.max_len {
        return Err(ModelError::OverLength { len: t_len, max: cfg.max_len });
    }
    let (d, f, v, n_heads) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
    let dh = cfg.head_dim();
    let inv_sqrt_dh = 1.0 / libm::sqrt(dh as f64);
    let w = params.data();
    let off = params.off();

    // Embedding sum.
    let mut x = alloc::vec![0.0; t_len * d];
    for (t, &id) in ids.iter().enumerate() {
        debug_assert!(id < v, "token id out of vocabulary");
        let tok = &w[off.tok + id * d..off.tok + (id + 1) * d];
        let pos = &w[off.pos + t * d..off.pos + (t + 1) * d];
        let row = &mut x[t * d..(t + 1) * d];
        for i in 0..d {
            row[i] = tok[i] + pos[i];
        }
    }

    let mut layer_caches: Vec<LayerCache> = Vec::new();
    let mut s_row = alloc::vec![0.0; t_len];

    for lo in &off.layers {
        let mut a = alloc::vec![0.0; t_len * d];
        let mut xhat1 = alloc::vec![0.0; t_len * d];
        let mut rstd1 = alloc::vec![0.0; t_len];
        layer_norm(
            &mut a,
            &mut xhat1,
            &mut rstd1,
            &x,
            &w[lo.ln1_g..lo.ln1_g + d],
            &w[lo.ln1_b..lo.ln1_b + d],
            t_len,
            d,
        );

        let mut q = alloc::vec![0.0; t_len * d];
        let mut k = alloc::vec![0.0; t_len * d];
        let mut vv = alloc::vec![0.0; t_len * d];
        matmul(&mut q, &a, &w[lo.wq..lo.wq + d * d], t_len, d, d);
        matmul(&mut k, &a, &w[lo.wk..lo.wk + d * d], t_len, d, d);
        matmul(&mut vv, &a, &w[lo.wv..lo.wv + d * d], t_len, d, d);

        let mut z = alloc::vec![0.0; t_len * d];
        let mut p_store = if want_cache {
            alloc::vec![0.0; n_heads * t_len * t_len]
        } else {
            Vec::new()
        };
        for h in 0..n_heads {
            let c0 = h * dh;
            for i in 0..t_len {
                let q_i = &q[i * d + c0..i * d + c0 + dh];
                // Causal scores over the prefix, softmaxed in place.
                let mut mx = f64::NEG_INFINITY;
                for j in 0..=i {
                    let s = dot(q_i, &k[j * d + c0..j * d + c0 + dh]) * inv_sqrt_dh;
                    s_row[j] = s;
                    if s > mx {
                        mx = s;
                    }
                }
                let mut denom = 0.0;
                for sj in s_row.iter_mut().take(i + 1) {
                    *sj = libm::exp(*sj - mx);
                    denom += *sj;
                }
                let z_i = &mut z[i * d + c0..i * d + c0 + dh];
                for j in 0..=i {
                    let pj = s_row[j] / denom;
                    if want_cache {
                        p_store[(h * t_len + i) * t_len + j] = pj;
                    }
                    let v_j = &vv[j * d + c0..j * d + c0 + dh];
                    for (zi, &vj) in z_i.iter_mut().zip(v_j) {
                        *zi += pj * vj;
                    }
                }
            }
        }

        let mut o = alloc::vec![0.0; t_len * d];
        matmul(&mut o, &z, &w[lo.wo..lo.wo + d * d], t_len, d, d);
        for (xi, oi) in x.iter_mut().zip(&o) {
            *xi += oi;
        }

        let mut b = alloc::vec![0.0; t_len * d];
        let mut xhat2 = alloc::vec![0.0; t_len * d];
        let mut rstd2 = alloc::vec![0.0; t_len];
        layer_norm(
            &mut b,
            &mut xhat2,
            &mut rstd2,
            &x,
            &w[lo.ln2_g..lo.ln2_g + d],
            &w[lo.ln2_b..lo.ln2_b + d],
            t_len,
            d,
        );

        let mut u = alloc::vec![0.0; t_len * f];
        matmul(&mut u, &b, &w[lo.w1..lo.w1 + d * f], t_len, d, f);
        add_bias(&mut u, &w[lo.b1..lo.b1 + f], t_len, f);
        let mut hh = alloc::vec![0.0; t_len * f];
        for (hi, &ui) in hh.iter_mut().zip(&u) {
            *hi = gelu(ui);
        }
        let mut ff_out = alloc::vec![0.0; t_len * d];
        matmul(&mut ff_out, &hh, &w[lo.w2..lo.w2 + f * d], t_len, f, d);
        add_bias(&mut ff_out, &w[lo.b2..lo.b2 + d], t_len, d);
        for (xi, oi) in x.iter_mut().zip(&ff_out) {
            *xi += oi;
        }

        if want_cache {
            layer_caches.push(LayerCache {
                xhat1,
                rstd1,
                q,
                k,
                v: vv,
                p: p_store,
                z,
                xhat2,
                rstd2,
                u,
                h: hh,
            });
        }
    }

    let mut hf = alloc::vec![0.0; t_len * d];
    let mut xhat_f = alloc::vec![0.0; t_len * d];
    let mut rstd_f = alloc::vec![0.0; t_len];
    layer_norm(
        &mut hf,
        &mut xhat_f,
        &mut rstd_f,
        &x,
        &w[off.lnf_g..off.lnf_g + d],
        &w[off.lnf_b..off.lnf_b + d],
        t_len,
        d,
    );
    let mut logits = Mat::zeros(t_len, v);
    matmul(&mut logits.data, &hf, &w[off.out_w..off.out_w + d * v], t_len, d, v);

    let cache = want_cache.then_some(FwdCache { layers: layer_caches, xhat_f, rstd_f, hf });
    Ok((logits, cache))
}

/// Next-token logits, one row per position.
pub fn forward_logits(params: &Parameters, ids: &[usize]) -> Result<Mat, ModelError> {
    forward_seq(params, ids, false).map(|(logits, _)| logits)
}

pub(crate) fn masked_logprob_terms(logits: &Mat, enc: &PromptEncoding) -> Vec<f64> {
    let ids = enc.token_ids();
    let mask = enc.completion_mask();
    let mut terms = Vec::with_capacity(enc.mask_count());
    for p in 1..ids.len() {
        if mask[p] {
            let row = logits.row(p - 1);
            terms.push(row[ids[p]] - log_sum_exp(row));
        }
    }
    terms
}

/// Log-probability of the masked span under teacher forcing: the sum over
/// masked positions `p` of `log softmax(logits[p-1])[token p]`.
pub fn completion_logprob(params: &Parameters, enc: &PromptEncoding) -> Result<f64, ModelError> {
    Ok(completion_logprob_terms(params, enc)?.iter().sum())
}

/// Per-masked-position log-probabilities, in order. Their sum is
/// [`completion_logprob`].
pub fn completion_logprob_terms(
    params: &Parameters,
    enc: &PromptEncoding,
) -> Result<Vec<f64>, ModelError> {
    let logits = forward_logits(params, enc.token_ids())?;
    Ok(masked_logprob_terms(&logits, enc))
}

/// Mean next-token cross-entropy over the masked span: the "model loss" used
/// as the likelihood surrogate when ranking candidates.
pub fn completion_cross_entropy(
    params: &Parameters,
    enc: &PromptEncoding,
) -> Result<f64, ModelError> {
    let lp = completion_logprob(params, enc)?;
    Ok(-lp / enc.mask_count() as f64)
}
