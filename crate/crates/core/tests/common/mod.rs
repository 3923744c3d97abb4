#![allow(dead_code)]

use l3dmc_core::model::{Activation, Architecture, L3Model};
use l3dmc_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, uniform(rng, r * c, lo, hi)).unwrap()
}

/// A point with `sqrt(c) * |x| <= radius`.
pub fn ball_point(rng: &mut ChaCha8Rng, n: usize, c: f64, radius: f64) -> Vec<f64> {
    let v = uniform(rng, n, -1.0, 1.0);
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    let r = rng.random_range(0.0..radius) / c.sqrt();
    v.iter().map(|a| a * r / norm).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn tiny_arch(activation: Activation) -> Architecture {
    Architecture { input_dim: 4, hidden: vec![6], feature_dim: 8, proj_dim: 4, activation, num_classes: 3 }
}

pub fn tiny_model(seed: u64) -> L3Model {
    L3Model::new(tiny_arch(Activation::Tanh), seed).unwrap()
}

/// Möbius addition written out scalar by scalar.
pub fn mobius_ref(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let xy = dot(x, y);
    let xx = dot(x, x);
    let yy = dot(y, y);
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    x.iter()
        .zip(y)
        .map(|(a, b)| ((1.0 + 2.0 * c * xy + c * yy) * a + (1.0 - c * xx) * b) / den)
        .collect()
}

pub fn log0_ref(z: &[f64], c: f64) -> Vec<f64> {
    let n = norm(z);
    if n == 0.0 {
        return z.to_vec();
    }
    let sc = c.sqrt();
    z.iter().map(|v| v * (sc * n).atanh() / (sc * n)).collect()
}

pub fn exp0_ref(v: &[f64], c: f64) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        return v.to_vec();
    }
    let sc = c.sqrt();
    v.iter().map(|a| a * (sc * n).tanh() / (sc * n)).collect()
}
