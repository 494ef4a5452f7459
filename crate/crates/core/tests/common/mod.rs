//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcn_core::recurrent::{ConvGruParams, FcGruParams};
use rcn_core::Tensor;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = m.shape()[1];
    m.data().chunks(cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Plain-loop fully-connected GRU step.
pub fn gru_step(x: &[f64], h: &[f64], p: &FcGruParams) -> Vec<f64> {
    let z: Vec<f64> = add(&matvec(&p.w_z, x), &matvec(&p.u_z, h)).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = add(&matvec(&p.w_r, x), &matvec(&p.u_r, h)).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = add(&matvec(&p.w, x), &matvec(&p.u, &rh)).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect()
}

pub fn random_fc(rng: &mut ChaCha8Rng, c_x: usize, c_h: usize) -> FcGruParams {
    let mut m = |r: usize, c: usize| Tensor::from_fn(&[r, c], |_| rng.gen_range(-1.0..1.0));
    FcGruParams {
        w_z: m(c_h, c_x),
        w_r: m(c_h, c_x),
        w: m(c_h, c_x),
        u_z: m(c_h, c_h),
        u_r: m(c_h, c_h),
        u: m(c_h, c_h),
    }
}

/// The same weights as `1×1` convolution kernels.
pub fn as_conv(p: &FcGruParams) -> ConvGruParams {
    let k = |t: &Tensor| {
        let s = t.shape();
        t.clone().reshape(&[s[0], s[1], 1, 1]).unwrap()
    };
    ConvGruParams {
        w_z: k(&p.w_z),
        w_r: k(&p.w_r),
        w: k(&p.w),
        u_z: k(&p.u_z),
        u_r: k(&p.u_r),
        u: k(&p.u),
        cross: None,
        bias: None,
    }
}

/// Counting CMC: entry `r - 1` is the share of probes whose true rank is at
/// most `r`.
pub fn counting_cmc(ranks: &[usize], gallery: usize) -> Vec<f64> {
    (1..=gallery)
        .map(|r| ranks.iter().filter(|&&k| k <= r).count() as f64 / ranks.len() as f64)
        .collect()
}

/// Brute-force rank of the true match: one plus the number of gallery
/// entries that beat it, where an equal score beats it only from an earlier
/// index.
pub fn brute_rank(scores: &[f64], truth: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&g| scores[g] > scores[truth] || (scores[g] == scores[truth] && g < truth))
        .count()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
