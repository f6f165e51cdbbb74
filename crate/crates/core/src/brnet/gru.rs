//! Gated recurrent unit over a whole sequence, with the gate order and
//! equations of the common `r, z, n` formulation.

use super::linalg::{axpy, dot, matmul_nn, matmul_nt, matmul_tn_acc, sigmoid, sum_rows};
use super::params::GruSlots;

/// Activations kept for the backward pass, all `t x ...` row-major.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    pub steps: usize,
    pub hidden: usize,
    /// `t x 3h`: hidden-side pre-activations including `b_hh`.
    gh: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `t x h` outputs.
    pub out: Vec<f64>,
}

/// Runs the cell from a zero state over `xs` (`t x h`).
pub fn forward(params: &[f64], slots: &GruSlots, xs: &[f64], t: usize, h: usize) -> GruCache {
    let w_ih = &params[slots.w_ih.clone()];
    let w_hh = &params[slots.w_hh.clone()];
    let b_ih = &params[slots.b_ih.clone()];
    let b_hh = &params[slots.b_hh.clone()];
    let mut gi = vec![0.0; t * 3 * h];
    for row in gi.chunks_exact_mut(3 * h) {
        row.copy_from_slice(b_ih);
    }
    matmul_nt(t, h, 3 * h, xs, w_ih, &mut gi, 1.0);

    let mut c = GruCache {
        steps: t,
        hidden: h,
        gh: vec![0.0; t * 3 * h],
        r: vec![0.0; t * h],
        z: vec![0.0; t * h],
        n: vec![0.0; t * h],
        out: vec![0.0; t * h],
    };
    let zero = vec![0.0; h];
    for s in 0..t {
        let (done, rest) = c.out.split_at_mut(s * h);
        let prev = if s == 0 { &zero[..] } else { &done[(s - 1) * h..] };
        let gh = &mut c.gh[s * 3 * h..(s + 1) * 3 * h];
        for (j, g) in gh.iter_mut().enumerate() {
            *g = dot(&w_hh[j * h..(j + 1) * h], prev) + b_hh[j];
        }
        let gi = &gi[s * 3 * h..(s + 1) * 3 * h];
        let cur = &mut rest[..h];
        for j in 0..h {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[h + j] + gh[h + j]);
            let n = (gi[2 * h + j] + r * gh[2 * h + j]).tanh();
            c.r[s * h + j] = r;
            c.z[s * h + j] = z;
            c.n[s * h + j] = n;
            cur[j] = (1.0 - z) * n + z * prev[j];
        }
    }
    c
}

/// Backpropagates `d_out` (`t x h`, gradient w.r.t. every output) through
/// time, accumulating into `grads` and returning the input gradient.
pub fn backward(
    params: &[f64],
    slots: &GruSlots,
    cache: &GruCache,
    xs: &[f64],
    d_out: &[f64],
    grads: &mut [f64],
) -> Vec<f64> {
    let (t, h) = (cache.steps, cache.hidden);
    let w_ih = &params[slots.w_ih.clone()];
    let w_hh = &params[slots.w_hh.clone()];
    let mut d_gi = vec![0.0; t * 3 * h];
    let mut d_gh = vec![0.0; t * 3 * h];
    let mut dh = vec![0.0; h];
    let zero = vec![0.0; h];
    for s in (0..t).rev() {
        let prev = if s == 0 { &zero[..] } else { &cache.out[(s - 1) * h..s * h] };
        for (d, g) in dh.iter_mut().zip(&d_out[s * h..(s + 1) * h]) {
            *d += g;
        }
        let gh = &cache.gh[s * 3 * h..(s + 1) * 3 * h];
        let dgi = &mut d_gi[s * 3 * h..(s + 1) * 3 * h];
        let dgh = &mut d_gh[s * 3 * h..(s + 1) * 3 * h];
        let mut dh_prev = vec![0.0; h];
        for j in 0..h {
            let (r, z, n) = (cache.r[s * h + j], cache.z[s * h + j], cache.n[s * h + j]);
            let d = dh[j];
            let dn = d * (1.0 - z) * (1.0 - n * n);
            let dz = d * (prev[j] - n) * z * (1.0 - z);
            let dr = dn * gh[2 * h + j] * r * (1.0 - r);
            dh_prev[j] = d * z;
            dgi[j] = dr;
            dgi[h + j] = dz;
            dgi[2 * h + j] = dn;
            dgh[j] = dr;
            dgh[h + j] = dz;
            dgh[2 * h + j] = dn * r;
        }
        for (j, g) in dgh.iter().enumerate() {
            axpy(*g, &w_hh[j * h..(j + 1) * h], &mut dh_prev);
        }
        dh = dh_prev;
    }
    // weight gradients as batched products over the sequence
    let mut prev_states = vec![0.0; t * h];
    if t > 1 {
        prev_states[h..].copy_from_slice(&cache.out[..(t - 1) * h]);
    }
    matmul_tn_acc(t, 3 * h, h, &d_gh, &prev_states, &mut grads[slots.w_hh.clone()]);
    matmul_tn_acc(t, 3 * h, h, &d_gi, xs, &mut grads[slots.w_ih.clone()]);
    sum_rows(&d_gh, 3 * h, &mut grads[slots.b_hh.clone()]);
    sum_rows(&d_gi, 3 * h, &mut grads[slots.b_ih.clone()]);
    let mut dx = vec![0.0; t * h];
    matmul_nn(t, 3 * h, h, &d_gi, w_ih, &mut dx, 0.0);
    dx
}
