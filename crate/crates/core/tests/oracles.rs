//! Library results against independently written reference computations.

mod common;

use common::*;
use l3dmc_core::continual::{
    build_task_stream, compute_metrics, herding_select, ncm_predict, ncm_predict_features, update_memory, Memory,
    MetricsLedger,
};
use l3dmc_core::datasets::{self, LabeledDataset, Normalize};
use l3dmc_core::distill::{
    alpha_solve, kd_loss, kd_loss_from_projections, subspace_distance, DistillConfig, ProjectionHeads, SubspaceBasis,
};
use l3dmc_core::kernels::{self, KernelSpec};
use l3dmc_core::manifold::{self, BallPoint, TangentVector, BALL_EPS};
use l3dmc_core::model::{cross_entropy, snapshot, L3Model};
use l3dmc_core::numerics::{matmul, spd_solve};
use l3dmc_core::{Tape, Tensor};
use nalgebra::DMatrix;
use rand::Rng;

// ---- numerics ----

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for _ in 0..20 {
        let (m, k, n) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..6));
        let a = matrix(&mut r, m, k, -1.0, 1.0);
        let b = matrix(&mut r, k, n, -1.0, 1.0);
        let got = matmul(&a, &b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                assert!((got.data()[i * n + j] - s).abs() <= 1e-12);
            }
        }
    }
    let a = matrix(&mut r, 3, 4, -1.0, 1.0);
    let b = matrix(&mut r, 4, 2, -1.0, 1.0);
    assert_eq!(matmul(&a, &b).unwrap().shape(), &[3, 2]);
}

#[test]
fn spd_solve_residual_on_gram() {
    let mut r = rng(2);
    let spec = KernelSpec::euclidean(1.0).unwrap();
    for _ in 0..20 {
        let z = matrix(&mut r, 5, 3, -1.0, 1.0);
        let k = kernels::gram_matrix(&spec, &z).unwrap();
        let b = matrix(&mut r, 5, 2, -1.0, 1.0);
        let (x, rep) = spd_solve(&k, &b).unwrap();
        let kx = matmul(&k, &x).unwrap();
        let bmax = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..5 {
            for j in 0..2 {
                let lhs = kx.data()[i * 2 + j] + rep.ridge_added * x.data()[i * 2 + j];
                assert!((lhs - b.data()[i * 2 + j]).abs() <= 1e-8 * (1.0 + bmax));
            }
        }
    }
}

#[test]
fn spd_solve_on_duplicate_rows_takes_ridge() {
    let spec = KernelSpec::hyperbolic(2.0, 1.0).unwrap();
    let z = Tensor::matrix(2, 2, vec![0.3, 0.4, 0.3, 0.4]).unwrap();
    let k = kernels::gram_matrix(&spec, &z).unwrap();
    let b = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
    let (x, rep) = spd_solve(&k, &b).unwrap();
    assert!(rep.ridge_added > 0.0);
    let kx = matmul(&k, &x).unwrap();
    for i in 0..2 {
        assert!((kx.data()[i] + rep.ridge_added * x.data()[i] - 1.0).abs() <= 1e-8 * 2.0);
    }
}

// ---- manifold ----

fn bp(v: Vec<f64>, c: f64) -> BallPoint {
    BallPoint::new(v, c).unwrap()
}

#[test]
fn mobius_matches_scalar_formula() {
    let x = bp(vec![0.3, 0.0], 1.0);
    let y = bp(vec![0.2, 0.0], 1.0);
    let got = manifold::mobius_add(&x, &y).unwrap();
    let want = mobius_ref(&[0.3, 0.0], &[0.2, 0.0], 1.0);
    assert!((got.coords()[0] - want[0]).abs() <= 1e-12);
    assert!(got.coords()[1].abs() <= 1e-12);
    let mut r = rng(3);
    for _ in 0..100 {
        let c = r.random_range(0.2..2.0);
        let a = ball_point(&mut r, 4, c, 0.9);
        let b = ball_point(&mut r, 4, c, 0.9);
        let got = manifold::mobius_add(&bp(a.clone(), c), &bp(b.clone(), c)).unwrap();
        for (g, w) in got.coords().iter().zip(mobius_ref(&a, &b, c)) {
            assert!((g - w).abs() <= 1e-12);
        }
    }
}

#[test]
fn geodesic_distance_compositional_oracle() {
    let mut r = rng(4);
    for _ in 0..100 {
        let a = ball_point(&mut r, 3, 1.0, 0.9);
        let b = ball_point(&mut r, 3, 1.0, 0.9);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let want = 2.0 * norm(&mobius_ref(&neg, &b, 1.0)).atanh();
        let x = bp(a, 1.0);
        let y = bp(b, 1.0);
        let d = manifold::geodesic_distance(&x, &y).unwrap();
        assert!((d - want).abs() <= 1e-10);
        assert!((d - manifold::geodesic_distance(&y, &x).unwrap()).abs() <= 1e-10);
    }
}

#[test]
fn distance_from_origin_closed_form() {
    let mut r = rng(5);
    for _ in 0..100 {
        let c = r.random_range(0.1..3.0);
        let a = ball_point(&mut r, 5, c, 0.95);
        let d = manifold::geodesic_distance(&BallPoint::origin(5, c).unwrap(), &bp(a.clone(), c)).unwrap();
        let want = 2.0 / c.sqrt() * (c.sqrt() * norm(&a)).atanh();
        assert!((d - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn conformal_factor_direct_formula() {
    let mut r = rng(6);
    for _ in 0..100 {
        let c = r.random_range(0.1..3.0);
        let a = ball_point(&mut r, 4, c, 0.95);
        let want = 2.0 / (1.0 - c * dot(&a, &a));
        assert!((manifold::conformal_factor(&bp(a, c)) - want).abs() <= 1e-12 * want);
    }
}

#[test]
fn exp_log_round_trips() {
    let mut r = rng(7);
    for _ in 0..200 {
        let c = r.random_range(0.2..2.0);
        let anchor = bp(ball_point(&mut r, 3, c, 0.9), c);
        let x = bp(ball_point(&mut r, 3, c, 0.9), c);
        let v = manifold::log_map(&anchor, &x).unwrap();
        let back = manifold::exp_map(&v).unwrap();
        for (a, b) in back.coords().iter().zip(x.coords()) {
            assert!((a - b).abs() <= 1e-8);
        }
        let lam = manifold::conformal_factor(&anchor);
        // tangent vectors whose image stays within sqrt(c)|.| <= 0.9 of the anchor
        let t: Vec<f64> = uniform(&mut r, 3, -1.0, 1.0).iter().map(|a| a * 0.5 / (c.sqrt() * lam)).collect();
        let tv = TangentVector::new(t.clone(), anchor.clone()).unwrap();
        let y = manifold::exp_map(&tv).unwrap();
        if c.sqrt() * y.norm() <= 0.9 {
            let back = manifold::log_map(&anchor, &y).unwrap();
            for (a, b) in back.coords().iter().zip(&t) {
                assert!((a - b).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn origin_maps_match_closed_forms() {
    let mut r = rng(8);
    for _ in 0..50 {
        let c = r.random_range(0.2..2.0);
        let z = ball_point(&mut r, 4, c, 0.9);
        let got = manifold::log0(&z, c).unwrap();
        for (g, w) in got.iter().zip(log0_ref(&z, c)) {
            assert!((g - w).abs() <= 1e-12);
        }
        let via_general = manifold::log_map(&BallPoint::origin(4, c).unwrap(), &bp(z.clone(), c)).unwrap();
        for (g, w) in via_general.coords().iter().zip(&got) {
            assert!((g - w).abs() <= 1e-10);
        }
        let v = uniform(&mut r, 4, -1.0, 1.0);
        let e = manifold::exp0(&v, c).unwrap();
        for (g, w) in e.coords().iter().zip(exp0_ref(&v, c)) {
            assert!((g - w).abs() <= 1e-12);
        }
    }
}

#[test]
fn projection_cases() {
    let p = manifold::project_to_ball(&[0.0, 0.0], 1.0).unwrap();
    assert_eq!(p.coords(), &[0.0, 0.0]);
    let p = manifold::project_to_ball(&[0.3, 0.4], 1.0).unwrap();
    assert_eq!(p.coords(), &[0.3, 0.4]);
    let p = manifold::project_to_ball(&[2.0, 0.0], 1.0).unwrap();
    assert!((p.norm() - (1.0 - BALL_EPS)).abs() <= 1e-15);
}

// ---- kernels ----

#[test]
fn hyperbolic_kernel_compositional_oracle() {
    let mut r = rng(9);
    let spec = KernelSpec::hyperbolic(1.0, 1.0).unwrap();
    for _ in 0..100 {
        let a = ball_point(&mut r, 4, 1.0, 0.9);
        let b = ball_point(&mut r, 4, 1.0, 0.9);
        let d = dist(&log0_ref(&a, 1.0), &log0_ref(&b, 1.0));
        let want = (-d * d).exp();
        assert!((kernels::kernel_value(&spec, &a, &b).unwrap() - want).abs() <= 1e-12);
    }
}

fn min_eigenvalue(k: &Tensor) -> f64 {
    let n = k.rows();
    let m = DMatrix::from_row_slice(n, n, k.data());
    m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

#[test]
fn gram_matrices_are_psd() {
    let mut r = rng(10);
    for trial in 0..20 {
        let m = 6 + trial % 11;
        let pts: Vec<Vec<f64>> = (0..m).map(|_| ball_point(&mut r, 3, 1.0, 0.95)).collect();
        let z = Tensor::from_rows(&pts).unwrap();
        for spec in [KernelSpec::euclidean(0.5).unwrap(), KernelSpec::hyperbolic(0.5, 1.0).unwrap()] {
            let k = kernels::gram_matrix(&spec, &z).unwrap();
            for i in 0..m {
                for j in 0..m {
                    assert_eq!(k.data()[i * m + j], k.data()[j * m + i]);
                }
            }
            assert!(min_eigenvalue(&k) >= -1e-10);
        }
    }
}

#[test]
fn cross_kernel_matches_elementwise_loop() {
    let mut r = rng(11);
    let spec = KernelSpec::hyperbolic(0.7, 0.5).unwrap();
    let pts: Vec<Vec<f64>> = (0..5).map(|_| ball_point(&mut r, 3, 0.5, 0.9)).collect();
    let basis = Tensor::from_rows(&pts).unwrap();
    let z = ball_point(&mut r, 3, 0.5, 0.9);
    let k = kernels::cross_kernel(&spec, &z, &basis).unwrap();
    for (i, p) in pts.iter().enumerate() {
        assert_eq!(k.data()[i], kernels::kernel_value(&spec, &z, p).unwrap());
    }
}

// ---- distill ----

/// Compensated accumulator: sums and products are carried with their exact
/// rounding errors, so cancelling terms of size `|alpha|^2` stay accurate.
#[derive(Default)]
struct Compensated {
    sum: f64,
    err: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let s = self.sum + x;
        let bb = s - self.sum;
        self.err += (self.sum - (s - bb)) + (x - bb);
        self.sum = s;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.err += a.mul_add(b, -p);
        self.add(p);
    }

    fn add_triple(&mut self, a: f64, b: f64, c: f64) {
        let p = b * c;
        self.err += a * b.mul_add(c, -p);
        self.add_product(a, p);
    }

    fn value(&self) -> f64 {
        self.sum + self.err
    }
}

/// `|phi(z) - sum_i a_i phi(z_i)|^2 = k(z,z) - 2 a.k + a^T K a`.
fn quadratic(spec: &KernelSpec, z: &[f64], basis: &[Vec<f64>], a: &[f64]) -> f64 {
    let m = basis.len();
    let mut q = Compensated::default();
    q.add(kernels::kernel_value(spec, z, z).unwrap());
    for i in 0..m {
        q.add_product(-2.0 * a[i], kernels::kernel_value(spec, z, &basis[i]).unwrap());
        for j in 0..m {
            q.add_triple(a[i], kernels::kernel_value(spec, &basis[i], &basis[j]).unwrap(), a[j]);
        }
    }
    q.value()
}

#[test]
fn closed_form_equals_alpha_minimization() {
    let mut r = rng(12);
    for spec in [KernelSpec::euclidean(1.0).unwrap(), KernelSpec::hyperbolic(1.0, 1.0).unwrap()] {
        for _ in 0..40 {
            let d = r.random_range(1..=8);
            let m = r.random_range(1..=8);
            let pts: Vec<Vec<f64>> = (0..m).map(|_| ball_point(&mut r, d, 1.0, 0.95)).collect();
            let basis = SubspaceBasis::new(spec, Tensor::from_rows(&pts).unwrap()).unwrap();
            let z = ball_point(&mut r, d, 1.0, 0.95);
            let delta = subspace_distance(&z, &basis).unwrap();
            let alpha = alpha_solve(&z, &basis).unwrap();
            let q = quadratic(&spec, &z, &pts, &alpha);
            assert!((delta - q.max(0.0)).abs() <= 1e-9, "{delta} vs {q}");
            for _ in 0..200 {
                let a = uniform(&mut r, m, -2.0, 2.0);
                assert!(delta <= quadratic(&spec, &z, &pts, &a) + 1e-9);
            }
        }
    }
}

#[test]
fn kd_loss_per_sample_decomposition() {
    let mut r = rng(13);
    let cfg = DistillConfig { beta: 0.7, lambda_e: 0.8, lambda_h: 1.3, curvature: 0.9 };
    let old = tiny_model(1);
    let live = tiny_model(2);
    let x = matrix(&mut r, 4, 4, -1.0, 1.0);
    let old_feat = old.forward_features(&x).unwrap();
    let new_feat = live.forward_features(&x).unwrap();

    let mut tape = Tape::new();
    let bound = live.bind(&mut tape, true);
    let f = tape.constant(new_feat.clone());
    let heads = ProjectionHeads { live: &bound, old: &old };
    let loss = kd_loss(&mut tape, f, &old_feat, &heads, &cfg).unwrap();
    let got = tape.value(loss.loss).item().unwrap();

    let ze_old = old.project_e(&old_feat).unwrap();
    let zh_old: Vec<Vec<f64>> = (0..4).map(|i| exp0_ref(old.project_h(&old_feat).unwrap().row(i), 0.9)).collect();
    let ze_new = live.project_e(&new_feat).unwrap();
    let zh_new = live.project_h(&new_feat).unwrap();
    let be = SubspaceBasis::new(cfg.euclidean_kernel().unwrap(), ze_old).unwrap();
    let bh = SubspaceBasis::new(cfg.hyperbolic_kernel().unwrap(), Tensor::from_rows(&zh_old).unwrap()).unwrap();
    let mut e = 0.0;
    let mut h = 0.0;
    for i in 0..4 {
        e += subspace_distance(ze_new.row(i), &be).unwrap();
        h += subspace_distance(&exp0_ref(zh_new.row(i), 0.9), &bh).unwrap();
    }
    let want = e / 4.0 + 0.7 * h / 4.0;
    assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    assert!((loss.euclidean - e / 4.0).abs() <= 1e-10);
}

#[test]
fn self_distillation_is_zero() {
    let mut r = rng(14);
    let m = tiny_model(3);
    for b in 1..=8 {
        let x = matrix(&mut r, b, 4, -1.0, 1.0);
        let feats = m.forward_features(&x).unwrap();
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, true);
        let f = tape.constant(feats.clone());
        let heads = ProjectionHeads { live: &bound, old: &m };
        let loss = kd_loss(&mut tape, f, &feats, &heads, &DistillConfig::default()).unwrap();
        assert!(tape.value(loss.loss).item().unwrap() <= 1e-8);
        assert!(loss.hyperbolic.is_some());
    }
}

#[test]
fn beta_zero_is_euclidean_term() {
    let mut r = rng(15);
    let old_e = matrix(&mut r, 5, 3, -1.0, 1.0);
    let old_h = matrix(&mut r, 5, 3, -1.0, 1.0);
    let new_e = matrix(&mut r, 5, 3, -1.0, 1.0);
    let new_h = matrix(&mut r, 5, 3, -1.0, 1.0);
    let run = |beta: f64| {
        let mut tape = Tape::new();
        let ne = tape.leaf(new_e.clone());
        let nh = tape.leaf(new_h.clone());
        let cfg = DistillConfig { beta, ..Default::default() };
        let l = kd_loss_from_projections(&mut tape, ne, nh, &old_e, &old_h, &cfg).unwrap();
        (tape.value(l.loss).item().unwrap(), l.euclidean, l.hyperbolic)
    };
    let (loss0, e0, h0) = run(0.0);
    assert_eq!(loss0, e0);
    assert!(h0.is_none());
    let (loss1, e1, h1) = run(1.0);
    assert_eq!(e0, e1);
    assert!((loss1 - e1 - h1.unwrap()).abs() <= 1e-15);
}

// ---- model ----

#[test]
fn cross_entropy_matches_naive_softmax() {
    let mut r = rng(16);
    let logits = matrix(&mut r, 6, 5, -3.0, 3.0);
    let labels: Vec<usize> = (0..6).map(|_| r.random_range(0..5)).collect();
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let ce = cross_entropy(&mut tape, l, &labels).unwrap();
    let mut want = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        want -= (row[y].exp() / z).ln();
    }
    want /= 6.0;
    assert!((tape.value(ce).item().unwrap() - want).abs() <= 1e-10);
}

#[test]
fn logits_compose_classifier_and_features() {
    let mut r = rng(17);
    let m = tiny_model(4);
    let x = matrix(&mut r, 3, 4, -1.0, 1.0);
    let f = m.forward_features(&x).unwrap();
    let w = &m.classifier().weight;
    let b = &m.classifier().bias;
    let mut want = matmul(&f, w).unwrap().into_data();
    for i in 0..3 {
        for j in 0..3 {
            want[i * 3 + j] += b.data()[j];
        }
    }
    let got = m.forward_logits(&x).unwrap();
    for (g, w) in got.data().iter().zip(&want) {
        assert!((g - w).abs() <= 1e-12);
    }
}

#[test]
fn snapshot_equals_live_at_capture_and_is_isolated() {
    let mut r = rng(18);
    let mut m = tiny_model(5);
    let x = matrix(&mut r, 3, 4, -1.0, 1.0);
    let snap = snapshot(&m);
    assert_eq!(snap.forward_features(&x).unwrap(), m.forward_features(&x).unwrap());
    let fp = snap.fingerprint();
    for p in m.parameters_mut() {
        let shape = p.shape().to_vec();
        *p = Tensor::filled(shape, 0.5);
    }
    assert_eq!(snap.fingerprint(), fp);
    let again = snapshot(&snap.restore());
    assert_eq!(again.forward_logits(&x).unwrap(), snap.forward_logits(&x).unwrap());
}

#[test]
fn seeded_features_are_bit_identical() {
    let mut r = rng(19);
    let x = matrix(&mut r, 5, 4, -1.0, 1.0);
    let a = tiny_model(9).forward_features(&x).unwrap();
    let b = tiny_model(9).forward_features(&x).unwrap();
    assert_eq!(a.data(), b.data());
}

// ---- continual ----

#[test]
fn herding_steps_are_greedy_minimizers() {
    let mut r = rng(20);
    for _ in 0..20 {
        let f = matrix(&mut r, 6, 3, -1.0, 1.0);
        let order = herding_select(&f, 3).unwrap();
        let mu: Vec<f64> = (0..3).map(|j| (0..6).map(|i| f.row(i)[j]).sum::<f64>() / 6.0).collect();
        let mut chosen: Vec<usize> = Vec::new();
        for &pick in &order {
            let gap = |j: usize| {
                let mut s = vec![0.0; 3];
                for &c in chosen.iter().chain(std::iter::once(&j)) {
                    for k in 0..3 {
                        s[k] += f.row(c)[k];
                    }
                }
                let n = (chosen.len() + 1) as f64;
                dist(&mu, &s.iter().map(|v| v / n).collect::<Vec<_>>())
            };
            let best = (0..6).filter(|j| !chosen.contains(j)).map(gap).fold(f64::INFINITY, f64::min);
            assert!(gap(pick) <= best + 1e-12);
            chosen.push(pick);
        }
    }
}

#[test]
fn ncm_matches_distance_table() {
    let mut r = rng(21);
    let means: Vec<Vec<f64>> = (0..3).map(|_| uniform(&mut r, 4, -1.0, 1.0)).collect();
    let f = matrix(&mut r, 10, 4, -1.0, 1.0);
    let got = ncm_predict_features(&f, &means).unwrap();
    for i in 0..10 {
        let d: Vec<f64> = means.iter().map(|m| dist(f.row(i), m)).collect();
        let best = (0..3).min_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap()).unwrap();
        assert_eq!(got[i], best);
    }
}

#[test]
fn ncm_ties_go_to_lowest_class_and_ignore_order() {
    let means = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
    let f = Tensor::from_rows(&[[0.0, 0.5]]).unwrap();
    assert_eq!(ncm_predict_features(&f, &means).unwrap(), vec![0]);

    let m = tiny_model(6);
    let mut r = rng(22);
    let xs = matrix(&mut r, 6, 4, -1.0, 1.0);
    let mut a = Memory::new(6, 4);
    let mut b = Memory::new(6, 4);
    for c in 0..3 {
        let rows = vec![xs.row(2 * c).to_vec(), xs.row(2 * c + 1).to_vec()];
        let mut rev = rows.clone();
        rev.reverse();
        a.set_class(c, rows).unwrap();
        b.set_class(c, rev).unwrap();
    }
    let y = vec![0, 0, 1, 1, 2, 2];
    update_memory(&mut a, &m, &xs, &y).unwrap();
    update_memory(&mut b, &m, &xs, &y).unwrap();
    let q = matrix(&mut r, 8, 4, -1.0, 1.0);
    assert_eq!(ncm_predict(&m, &a, &q).unwrap(), ncm_predict(&m, &b, &q).unwrap());
}

#[test]
fn memory_quota_truncation_keeps_rank_prefix() {
    let m = tiny_model(7);
    let mut r = rng(23);
    let mut mem = Memory::new(200, 4);
    let x1 = matrix(&mut r, 240, 4, -1.0, 1.0);
    let y1: Vec<usize> = (0..240).map(|i| i % 2).collect();
    update_memory(&mut mem, &m, &x1, &y1).unwrap();
    assert_eq!(mem.class_count(0), 100);
    let before: Vec<Vec<f64>> = mem.exemplars(0).to_vec();
    let x2 = matrix(&mut r, 240, 4, -1.0, 1.0);
    let y2: Vec<usize> = (0..240).map(|i| 2 + i % 2).collect();
    update_memory(&mut mem, &m, &x2, &y2).unwrap();
    assert_eq!(mem.class_count(0), 50);
    assert_eq!(mem.exemplars(0), &before[..50]);
    assert!(mem.len() <= 200);
}

#[test]
fn metrics_match_formula_oracle() {
    let mut r = rng(24);
    let rows: Vec<Vec<f64>> = (0..4).map(|t| uniform(&mut r, t + 1, 0.0, 1.0)).collect();
    let ledger = MetricsLedger::from_rows(rows.clone()).unwrap();
    for t in 1..=4 {
        let (acc, f) = compute_metrics(&ledger, t).unwrap();
        let want_acc: f64 = rows[t - 1].iter().sum::<f64>() / t as f64;
        assert_eq!(acc, want_acc);
        if t == 1 {
            assert!(f.is_none());
            continue;
        }
        let mut want_f = 0.0;
        for i in 0..t - 1 {
            let mut best = f64::MIN;
            for j in i..t - 1 {
                best = best.max(rows[j][i]);
            }
            want_f += best - rows[t - 1][i];
        }
        assert!((f.unwrap() - want_f / (t - 1) as f64).abs() <= 1e-15);
    }
}

#[test]
fn metrics_hand_examples() {
    let l = MetricsLedger::from_rows(vec![vec![0.9], vec![0.8, 0.6]]).unwrap();
    let (acc, _) = compute_metrics(&l, 2).unwrap();
    assert!((acc - 0.7).abs() <= 1e-15);
    let l = MetricsLedger::from_rows(vec![vec![0.9], vec![0.7, 1.0]]).unwrap();
    assert!((compute_metrics(&l, 2).unwrap().1.unwrap() - 0.2).abs() <= 1e-15);
}

#[test]
fn stream_group_sizes() {
    let eight = datasets::make_blobs(8, 3, 2, 0.1, 0).unwrap();
    let s = build_task_stream(&eight, 4, 1).unwrap();
    assert_eq!(s.group_sizes(), &[2, 2, 2, 2]);
    let eleven = datasets::make_blobs(11, 3, 2, 0.1, 0).unwrap();
    let s = build_task_stream(&eleven, 4, 1).unwrap();
    assert_eq!(s.group_sizes(), &[3, 3, 3, 2]);
    assert!(build_task_stream(&eight, 9, 1).is_err());
}

// ---- datasets ----

#[test]
fn csv_toy_file_and_standardization() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("toy.csv");
    std::fs::write(&p, "f1,label,f2\n1.0,a,2.0\n2.0,b,4.0\n3.0,a,9.0\n").unwrap();
    let ds = datasets::load_csv(&p, "label", Normalize::None).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.num_classes(), 2);
    assert_eq!(ds.y(), &[0, 1, 0]);
    assert_eq!(ds.class_names().unwrap(), &["a".to_string(), "b".to_string()]);
    assert_eq!(ds.x().row(2), &[3.0, 9.0]);

    let s = datasets::load_csv(&p, "label", Normalize::Standardize).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = (0..3).map(|i| s.x().row(i)[j]).collect();
        let mean = col.iter().sum::<f64>() / 3.0;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() <= 1e-9);
        assert!((sd - 1.0).abs() <= 1e-9);
    }
    assert_eq!(datasets::load_csv(&p, "label", Normalize::None).unwrap(), ds);
}

#[test]
fn csv_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "f1,label\n1.0,a\nxyz,b\n").unwrap();
    match datasets::load_csv(&p, "label", Normalize::None) {
        Err(l3dmc_core::Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    std::fs::write(&p, "f1,label\n").unwrap();
    assert!(datasets::load_csv(&p, "label", Normalize::None).is_err());
    std::fs::write(&p, "f1,y\n1,a\n").unwrap();
    assert!(datasets::load_csv(&p, "label", Normalize::None).is_err());
}

#[test]
fn numeric_labels_sort_numerically() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("n.csv");
    std::fs::write(&p, "x,label\n0,10\n1,2\n2,1\n").unwrap();
    let ds = datasets::load_csv(&p, "label", Normalize::None).unwrap();
    assert_eq!(ds.y(), &[2, 1, 0]);
}

#[test]
fn binary_and_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ds = datasets::make_tree_data(2, 2, 5, 3, 0.2, 4).unwrap();
    let p = dir.path().join("d.bin");
    datasets::write_binary(&ds, &p).unwrap();
    let back = datasets::read_binary(&p).unwrap();
    assert_eq!(back.x().data(), ds.x().data());
    assert_eq!(back.y(), ds.y());
    let bytes = datasets::to_binary(&ds).unwrap();
    assert_eq!(&bytes[..4], b"L3DS");
    assert!(datasets::from_binary(&bytes[..bytes.len() - 1]).is_err());

    let c = dir.path().join("d.csv");
    datasets::write_csv(&ds, &c, "label").unwrap();
    let back = datasets::load_csv(&c, "label", Normalize::None).unwrap();
    assert_eq!(back.x().data(), ds.x().data());
    assert_eq!(back.y(), ds.y());
}

/// Least-squares one-vs-rest linear classifier fit via normal equations.
fn linear_fit_accuracy(ds: &LabeledDataset) -> f64 {
    let (n, d) = (ds.len(), ds.input_dim());
    let c = ds.num_classes();
    let mut xa = DMatrix::<f64>::zeros(n, d + 1);
    let mut y = DMatrix::<f64>::zeros(n, c);
    for i in 0..n {
        for j in 0..d {
            xa[(i, j)] = ds.x().row(i)[j];
        }
        xa[(i, d)] = 1.0;
        y[(i, ds.y()[i])] = 1.0;
    }
    let xtx = xa.transpose() * &xa + DMatrix::<f64>::identity(d + 1, d + 1) * 1e-9;
    let w = xtx.cholesky().unwrap().solve(&(xa.transpose() * &y));
    let scores = &xa * w;
    let hits = (0..n)
        .filter(|&i| {
            let row = scores.row(i);
            let best = (0..c).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            best == ds.y()[i]
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn separated_blobs_are_linearly_separable() {
    let ds = datasets::make_blobs(4, 50, 8, 0.1, 3).unwrap();
    assert!(linear_fit_accuracy(&ds) >= 0.99);
}

#[test]
fn tree_siblings_are_closer_than_cousins() {
    let centers = datasets::tree_centers(2, 3, 16, 5).unwrap();
    let ds = datasets::make_tree_data(2, 3, 40, 16, 0.05, 5).unwrap();
    let mut centroid = vec![vec![0.0; 16]; 8];
    for i in 0..ds.len() {
        for j in 0..16 {
            centroid[ds.y()[i]][j] += ds.x().row(i)[j] / 40.0;
        }
    }
    let (mut sib, mut ns, mut cross, mut nc) = (0.0, 0, 0.0, 0);
    for a in 0..8 {
        for b in a + 1..8 {
            let d = dist(&centroid[a], &centroid[b]);
            if a / 2 == b / 2 {
                sib += d;
                ns += 1;
            } else if a / 4 != b / 4 {
                cross += d;
                nc += 1;
            }
        }
        assert!(dist(&centroid[a], &centers[a]) < 0.1);
    }
    assert!(sib / ns as f64 <= cross / nc as f64);
}

#[test]
fn generators_are_pure() {
    assert_eq!(
        datasets::make_blobs(3, 4, 5, 0.2, 11).unwrap(),
        datasets::make_blobs(3, 4, 5, 0.2, 11).unwrap()
    );
    let m1 = L3Model::new(tiny_arch(l3dmc_core::model::Activation::Relu), 1).unwrap();
    let m2 = L3Model::new(tiny_arch(l3dmc_core::model::Activation::Relu), 1).unwrap();
    assert_eq!(m1.fingerprint(), m2.fingerprint());
}
