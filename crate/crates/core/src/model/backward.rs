//! Exact reverse-mode gradients through the decoder stack.
//!
//! [`backward_seq`] accumulates `dL/dθ` into a flat gradient buffer given the
//! forward cache and `dL/dlogits`. [`completion_logprob_with_grad`] composes
//! forward, the softmax/cross-entropy identity and backward for the masked
//! completion span, which is the only objective shape the trainer needs.

use super::forward::{forward_seq, masked_logprob_terms, FwdCache};
use super::linalg::{
    dot, gelu_prime, layer_norm_backward, log_sum_exp, matmul_at_b_acc, matmul_b_t,
    matmul_b_t_acc,
};
use super::{Mat, ModelError, Parameters};
use crate::seq::PromptEncoding;

fn bias_grad_acc(dbias: &mut [f64], dout: &[f64], rows: usize, n: usize) {
    for t in 0..rows {
        let row = &dout[t * n..(t + 1) * n];
        for (db, &d) in dbias.iter_mut().zip(row) {
            *db += d;
        }
    }
}

/// Accumulates the gradient of a scalar objective into `grad`, given the
/// objective's gradient with respect to the logits.
pub fn backward_seq(
    params: &Parameters,
    ids: &[usize],
    cache: &FwdCache,
    dlogits: &Mat,
    grad: &mut [f64],
) {
    let cfg = params.config();
    let t_len = ids.len();
    let (d, f, v, n_heads) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
    let dh = cfg.head_dim();
    let inv_sqrt_dh = 1.0 / libm::sqrt(dh as f64);
    let w = params.data();
    let off = params.off();
    debug_assert_eq!(grad.len(), w.len());
    debug_assert_eq!(dlogits.rows, t_len);
    debug_assert_eq!(dlogits.cols, v);

    // Output projection and final norm.
    matmul_at_b_acc(&mut grad[off.out_w..off.out_w + d * v], &cache.hf, &dlogits.data, t_len, d, v);
    let mut dhf = alloc::vec![0.0; t_len * d];
    matmul_b_t(&mut dhf, &dlogits.data, &w[off.out_w..off.out_w + d * v], t_len, v, d);

    let mut dx = alloc::vec![0.0; t_len * d];
    {
        let (g_lnf, rest) = grad[off.lnf_g..].split_at_mut(d);
        let b_lnf = &mut rest[..d];
        layer_norm_backward(
            &mut dx,
            g_lnf,
            b_lnf,
            &dhf,
            &cache.xhat_f,
            &cache.rstd_f,
            &w[off.lnf_g..off.lnf_g + d],
            t_len,
            d,
        );
    }

    let mut a_buf = alloc::vec![0.0; t_len * d];
    for (li, lo) in off.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];

        // Feed-forward block. dx holds dL/d(block output); the residual path
        // passes it through unchanged, the branch adds its own contribution.
        bias_grad_acc(&mut grad[lo.b2..lo.b2 + d], &dx, t_len, d);
        matmul_at_b_acc(&mut grad[lo.w2..lo.w2 + f * d], &lc.h, &dx, t_len, f, d);
        let mut du = alloc::vec![0.0; t_len * f];
        matmul_b_t(&mut du, &dx, &w[lo.w2..lo.w2 + f * d], t_len, d, f);
        for (dui, &ui) in du.iter_mut().zip(&lc.u) {
            *dui *= gelu_prime(ui);
        }
        bias_grad_acc(&mut grad[lo.b1..lo.b1 + f], &du, t_len, f);
        // Recompute the LN2 output (feed-forward input) from its cache.
        for t in 0..t_len {
            for i in 0..d {
                a_buf[t * d + i] =
                    lc.xhat2[t * d + i] * w[lo.ln2_g + i] + w[lo.ln2_b + i];
            }
        }
        matmul_at_b_acc(&mut grad[lo.w1..lo.w1 + d * f], &a_buf, &du, t_len, d, f);
        let mut db = alloc::vec![0.0; t_len * d];
        matmul_b_t(&mut db, &du, &w[lo.w1..lo.w1 + d * f], t_len, f, d);
        {
            let (g_ln2, rest) = grad[lo.ln2_g..].split_at_mut(d);
            let b_ln2 = &mut rest[..d];
            layer_norm_backward(
                &mut dx,
                g_ln2,
                b_ln2,
                &db,
                &lc.xhat2,
                &lc.rstd2,
                &w[lo.ln2_g..lo.ln2_g + d],
                t_len,
                d,
            );
        }

        // Attention block. dx now holds dL/d(attention block output).
        matmul_at_b_acc(&mut grad[lo.wo..lo.wo + d * d], &lc.z, &dx, t_len, d, d);
        let mut dz = alloc::vec![0.0; t_len * d];
        matmul_b_t(&mut dz, &dx, &w[lo.wo..lo.wo + d * d], t_len, d, d);

        let mut dq = alloc::vec![0.0; t_len * d];
        let mut dk = alloc::vec![0.0; t_len * d];
        let mut dv = alloc::vec![0.0; t_len * d];
        let mut dp_row = alloc::vec![0.0; t_len];
        for h in 0..n_heads {
            let c0 = h * dh;
            for i in 0..t_len {
                let dz_i = &dz[i * d + c0..i * d + c0 + dh];
                let p_row = &lc.p[(h * t_len + i) * t_len..(h * t_len + i) * t_len + i + 1];
                // dP and the softmax pullback over the causal prefix.
                let mut row_dot = 0.0;
                for j in 0..=i {
                    let dp = dot(dz_i, &lc.v[j * d + c0..j * d + c0 + dh]);
                    dp_row[j] = dp;
                    row_dot += dp * p_row[j];
                }
                for j in 0..=i {
                    let ds = p_row[j] * (dp_row[j] - row_dot) * inv_sqrt_dh;
                    let pj = p_row[j];
                    let k_j = &lc.k[j * d + c0..j * d + c0 + dh];
                    let q_i = &lc.q[i * d + c0..i * d + c0 + dh];
                    let dq_i = &mut dq[i * d + c0..i * d + c0 + dh];
                    for (dqv, &kv) in dq_i.iter_mut().zip(k_j) {
                        *dqv += ds * kv;
                    }
                    let dk_j = &mut dk[j * d + c0..j * d + c0 + dh];
                    for (dkv, &qv) in dk_j.iter_mut().zip(q_i) {
                        *dkv += ds * qv;
                    }
                    let dv_j = &mut dv[j * d + c0..j * d + c0 + dh];
                    for (dvv, &dzv) in dv_j.iter_mut().zip(dz_i) {
                        *dvv += pj * dzv;
                    }
                }
            }
        }

        // Recompute the LN1 output (attention input).
        for t in 0..t_len {
            for i in 0..d {
                a_buf[t * d + i] =
                    lc.xhat1[t * d + i] * w[lo.ln1_g + i] + w[lo.ln1_b + i];
            }
        }
        matmul_at_b_acc(&mut grad[lo.wq..lo.wq + d * d], &a_buf, &dq, t_len, d, d);
        matmul_at_b_acc(&mut grad[lo.wk..lo.wk + d * d], &a_buf, &dk, t_len, d, d);
        matmul_at_b_acc(&mut grad[lo.wv..lo.wv + d * d], &a_buf, &dv, t_len, d, d);
        let mut da = alloc::vec![0.0; t_len * d];
        matmul_b_t(&mut da, &dq, &w[lo.wq..lo.wq + d * d], t_len, d, d);
        matmul_b_t_acc(&mut da, &dk, &w[lo.wk..lo.wk + d * d], t_len, d, d);
        matmul_b_t_acc(&mut da, &dv, &w[lo.wv..lo.wv + d * d], t_len, d, d);
        {
            let (g_ln1, rest) = grad[lo.ln1_g..].split_at_mut(d);
            let b_ln1 = &mut rest[..d];
            layer_norm_backward(
                &mut dx,
                g_ln1,
                b_ln1,
                &da,
                &lc.xhat1,
                &lc.rstd1,
                &w[lo.ln1_g..lo.ln1_g + d],
                t_len,
                d,
            );
        }
    }

    // Embeddings.
    for (t, &id) in ids.iter().enumerate() {
        let dxr = &dx[t * d..(t + 1) * d];
        let gt = &mut grad[off.tok + id * d..off.tok + (id + 1) * d];
        for (g, &v) in gt.iter_mut().zip(dxr) {
            *g += v;
        }
        let gp = &mut grad[off.pos + t * d..off.pos + (t + 1) * d];
        for (g, &v) in gp.iter_mut().zip(dxr) {
            *g += v;
        }
    }
}

/// Backpropagates `upstream * d(logprob)/dθ` into `grad` from an already-run
/// cached forward pass over `enc`.
///
/// At a masked position with target token `y`, the gradient of the
/// log-probability with respect to that row's logits is `onehot(y) - softmax`,
/// so only masked rows contribute.
pub(crate) fn backward_completion(
    params: &Parameters,
    enc: &PromptEncoding,
    logits: &Mat,
    cache: &FwdCache,
    upstream: f64,
    grad: &mut [f64],
) {
    let ids = enc.token_ids();
    let mask = enc.completion_mask();
    let mut dlogits = Mat::zeros(logits.rows, logits.cols);
    for p in 1..ids.len() {
        if mask[p] {
            let r = p - 1;
            let row = logits.row(r);
            let lse = log_sum_exp(row);
            let drow = dlogits.row_mut(r);
            for (dj, &xj) in drow.iter_mut().zip(row) {
                *dj = -upstream * libm::exp(xj - lse);
            }
            drow[ids[p]] += upstream;
        }
    }
    backward_seq(params, ids, cache, &dlogits, grad);
}

/// Computes the completion log-probability and accumulates
/// `upstream * d(logprob)/dθ` into `grad`. Returns the log-probability.
pub fn completion_logprob_with_grad(
    params: &Parameters,
    enc: &PromptEncoding,
    upstream: f64,
    grad: &mut [f64],
) -> Result<f64, ModelError> {
    let (logits, cache) = forward_seq(params, enc.token_ids(), true)?;
    let cache = cache.expect("cache requested");
    let lp: f64 = masked_logprob_terms(&logits, enc).iter().sum();
    if !lp.is_finite() {
        return Err(ModelError::NonFinite);
    }
    backward_completion(params, enc, &logits, &cache, upstream, grad);
    Ok(lp)
}
