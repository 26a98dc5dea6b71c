//! Finite-difference checks of the analytic gradients against independent
//! re-implementations of the objectives.

mod common;

use common::{random_image, rng, small_net};
use rand::Rng;
use ssimadv::attacks::{lagrangian_gradient, margin_loss, MarginLossParams};
use ssimadv::metrics::constraint_gradients;
use ssimadv::model::{input_gradient, ScoreModel};
use ssimadv::{ConstraintThresholds, Image, Network, Shape, SsimParams};

/// `g1..g4` written directly from the SSIM factor definitions.
fn reference_constraints(shape: Shape, y: &[f64], x: &[f64], z1: f64, z2: f64) -> [f64; 4] {
    let (c1, c2) = (1e-4, 9e-4);
    let plane = shape.height * shape.width;
    let n = plane as f64;
    let mut g = [0.0; 4];
    for c in 0..shape.channels {
        let xs = &x[c * plane..(c + 1) * plane];
        let ys = &y[c * plane..(c + 1) * plane];
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let vx = xs.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / n;
        let vy = ys.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / n;
        let cov = xs.iter().zip(ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        let s1 = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        let s2 = (2.0 * cov + c2) / (vx + vy + c2);
        g[0] += z1 - s1;
        g[1] += z2 - s2;
        g[2] += -2.0 * mx * my - c1;
        g[3] += -2.0 * cov - c2;
    }
    g.map(|v| v / shape.channels as f64)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    d / n.max(1e-8)
}

#[test]
fn constraint_gradients_match_central_differences() {
    let mut r = rng(11);
    let p = SsimParams::default();
    let h = 1e-5;
    for case in 0..100 {
        let channels = if r.gen_bool(0.5) { 1 } else { 3 };
        let shape = Shape::new(channels, r.gen_range(4..=9), r.gen_range(4..=9));
        let x = random_image(&mut r, shape);
        let y = random_image(&mut r, shape);
        let (z1, z2) = (r.gen::<f64>(), r.gen::<f64>());
        let t = ConstraintThresholds::new(z1, z2).unwrap();
        let analytic = constraint_gradients(&y, &x, &p, &t).unwrap();
        let mut yv = y.as_slice().to_vec();
        let mut numeric: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; shape.len()]);
        for j in 0..shape.len() {
            let o = yv[j];
            yv[j] = o + h;
            let up = reference_constraints(shape, &yv, x.as_slice(), z1, z2);
            yv[j] = o - h;
            let down = reference_constraints(shape, &yv, x.as_slice(), z1, z2);
            yv[j] = o;
            for k in 0..4 {
                numeric[k][j] = (up[k] - down[k]) / (2.0 * h);
            }
        }
        for k in 0..4 {
            let e = rel_err(&analytic[k], &numeric[k]);
            assert!(e <= 1e-4, "case {case} g{}: rel err {e:e}", k + 1);
        }
    }
}

#[test]
fn constraint_values_match_reference() {
    let mut r = rng(12);
    let p = SsimParams::default();
    for _ in 0..50 {
        let shape = Shape::new(3, 5, 6);
        let (x, y) = (random_image(&mut r, shape), random_image(&mut r, shape));
        let t = ConstraintThresholds::new(0.7, 0.8).unwrap();
        let got = ssimadv::metrics::constraints(&y, &x, &p, &t).unwrap();
        let want = reference_constraints(shape, y.as_slice(), x.as_slice(), 0.7, 0.8);
        for k in 0..4 {
            assert!((got[k] - want[k]).abs() < 1e-12, "g{}: {} vs {}", k + 1, got[k], want[k]);
        }
    }
}

/// True when the stencil point stays in the smooth piece of `y`.
fn same_piece(net: &Network, label: usize, kappa: f64, a: &[f64], b: &[f64]) -> bool {
    let piece = |v: &[f64]| {
        let s = net.scores(v).unwrap();
        let mut rival = None;
        for (i, &f) in s.iter().enumerate() {
            if i != label && rival.is_none_or(|(_, g)| f > g) {
                rival = Some((i, f));
            }
        }
        let (ri, rf) = rival.unwrap();
        (net.activation_pattern(v).unwrap(), ri, s[label] - rf + kappa > 0.0)
    };
    piece(a) == piece(b)
}

#[test]
fn lagrangian_gradient_matches_central_differences() {
    let mut r = rng(13);
    let shape = Shape::new(1, 9, 9);
    let h = 1e-6;
    let (mut done, mut skipped) = (0, 0);
    while done < 100 {
        assert!(skipped < 5000, "too many kink cases");
        let net = small_net(shape, 4, r.gen());
        let x = random_image(&mut r, shape);
        let label = r.gen_range(0..4);
        let delta: Vec<f64> = x.as_slice().iter().map(|&v| r.gen_range(-v..=1.0 - v) * 0.5).collect();
        let lambda: [f64; 4] = std::array::from_fn(|_| r.gen_range(0.0..3.0));
        let kappa = if done % 2 == 0 { 0.0 } else { 20.0 };
        let c = 10f64.powf(r.gen_range(-2.0..2.0));
        let loss = MarginLossParams::cw(c, kappa).unwrap();
        let t = ConstraintThresholds::new(0.9, 0.85).unwrap();
        let y: Vec<f64> = x.as_slice().iter().zip(&delta).map(|(a, b)| a + b).collect();

        // L(δ) = c (f_s - max f_s' + κ)^+ + Σ λ_i g_i(x + δ), evaluated from scratch.
        let objective = |y: &[f64]| {
            let s = net.scores(y).unwrap();
            let l = margin_loss(&s, label, &loss).unwrap();
            let g = reference_constraints(shape, y, x.as_slice(), 0.9, 0.85);
            l + lambda.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut numeric = vec![0.0; y.len()];
        let mut smooth = true;
        for j in 0..y.len() {
            let (mut up, mut down) = (y.clone(), y.clone());
            up[j] += h;
            down[j] -= h;
            if !same_piece(&net, label, kappa, &y, &up) || !same_piece(&net, label, kappa, &y, &down) {
                smooth = false;
                break;
            }
            numeric[j] = (objective(&up) - objective(&down)) / (2.0 * h);
        }
        if !smooth {
            skipped += 1;
            continue;
        }
        let (analytic, report) = lagrangian_gradient(&net, &x, label, &delta, &lambda, &loss, &t).unwrap();
        assert!((report.lagrangian - objective(&y)).abs() < 1e-9);
        let e = rel_err(&analytic, &numeric);
        assert!(e <= 1e-3, "case {done}: rel err {e:e}");
        done += 1;
    }
}

#[test]
fn input_gradient_is_linear_in_the_upstream_weights() {
    let mut r = rng(14);
    let shape = Shape::new(2, 8, 7);
    let net = small_net(shape, 5, 3);
    let x = random_image(&mut r, shape);
    let a: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
    let grad = |w: Vec<f64>| {
        input_gradient(&net, x.as_slice(), &move |s: &[f64]| (s.iter().zip(&w).map(|(p, q)| p * q).sum(), w.clone()))
            .unwrap()
            .gradient
    };
    let ga = grad(a.clone());
    let gb = grad(b.clone());
    let gab = grad(a.iter().zip(&b).map(|(p, q)| 2.0 * p - 3.0 * q).collect());
    for i in 0..ga.len() {
        assert!((gab[i] - (2.0 * ga[i] - 3.0 * gb[i])).abs() < 1e-10);
    }
}

#[test]
fn wrong_sized_inputs_are_rejected() {
    let shape = Shape::new(1, 5, 5);
    let x = Image::zeros(shape);
    let y = Image::zeros(Shape::new(1, 5, 4));
    let p = SsimParams::default();
    assert!(constraint_gradients(&y, &x, &p, &ConstraintThresholds::default()).is_err());
    let net = small_net(shape, 3, 0);
    let loss = MarginLossParams::cw(1.0, 0.0).unwrap();
    assert!(lagrangian_gradient(&net, &x, 0, &[0.0; 3], &[0.0; 4], &loss, &ConstraintThresholds::default()).is_err());
}
