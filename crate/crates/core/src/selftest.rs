//! Quick invariant suites behind the `selftest` command: SSIM properties,
//! finite-difference checks of the constraint and Lagrangian gradients,
//! NMSE quasi-convexity, and the traces of the search over `c`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::{
    binary_search_c, lagrangian, lagrangian_gradient, runner_up, score_margin, Candidate, MarginLossParams, C_INIT,
};
use crate::error::Result;
use crate::image::{Image, Shape};
use crate::metrics::{constraint_gradients, constraints_raw, nmse, ssim, ConstraintThresholds, SsimParams};
use crate::model::{LayerSpec, Network, ScoreModel};

/// Result of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, cases: usize, failures: Vec<String>, summary: String) -> Self {
        let passed = failures.is_empty();
        let detail = if passed { summary } else { format!("{} failures, first: {}", failures.len(), failures[0]) };
        Self { name, passed, cases, detail }
    }
}

fn random_image<R: Rng>(rng: &mut R, shape: Shape) -> Image {
    Image::new(shape, (0..shape.len()).map(|_| rng.gen::<f64>()).collect()).expect("values in [0, 1)")
}

fn random_shape<R: Rng>(rng: &mut R, max_side: usize) -> Shape {
    let channels = if rng.gen_bool(0.5) { 1 } else { 3 };
    Shape::new(channels, rng.gen_range(4..=max_side), rng.gen_range(4..=max_side))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `|a - b| / max(|b|, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(numeric).max(floor)
}

/// Symmetry, identity and range of SSIM on random pairs.
pub fn ssim_properties(cases: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = SsimParams::default();
    let mut failures = Vec::new();
    let mut worst_asym = 0.0f64;
    for i in 0..cases {
        let shape = random_shape(&mut rng, 28);
        let x = random_image(&mut rng, shape);
        let y = random_image(&mut rng, shape);
        let (xy, yx, xx) = (ssim(&x, &y, &p)?, ssim(&y, &x, &p)?, ssim(&x, &x, &p)?);
        worst_asym = worst_asym.max((xy - yx).abs());
        if (xy - yx).abs() > 1e-12 {
            failures.push(format!("case {i}: ssim(x,y)={xy} ssim(y,x)={yx}"));
        }
        if xx != 1.0 {
            failures.push(format!("case {i}: ssim(x,x)={xx}"));
        }
        if !(xy > -1.0 && xy <= 1.0) {
            failures.push(format!("case {i}: ssim(x,y)={xy} out of range"));
        }
    }
    Ok(Check::new("ssim properties", cases, failures, format!("max asymmetry {worst_asym:.1e}")))
}

/// Central differences of `g1..g4` against the analytic gradients.
pub fn constraint_gradient_check(cases: usize, seed: u64, tolerance: f64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = SsimParams::default();
    let h = 1e-5;
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..cases {
        let shape = random_shape(&mut rng, 8);
        let x = random_image(&mut rng, shape);
        let y = random_image(&mut rng, shape);
        let t = ConstraintThresholds::new(rng.gen(), rng.gen())?;
        let analytic = constraint_gradients(&y, &x, &p, &t)?;
        let mut numeric: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; shape.len()]);
        let mut yv = y.as_slice().to_vec();
        for j in 0..shape.len() {
            let orig = yv[j];
            yv[j] = orig + h;
            let up = constraints_raw(shape, &yv, x.as_slice(), &p, &t);
            yv[j] = orig - h;
            let down = constraints_raw(shape, &yv, x.as_slice(), &p, &t);
            yv[j] = orig;
            for k in 0..4 {
                numeric[k][j] = (up[k] - down[k]) / (2.0 * h);
            }
        }
        for k in 0..4 {
            let err = relative_error(&analytic[k], &numeric[k], 1e-8);
            worst = worst.max(err);
            if err > tolerance {
                failures.push(format!("case {i}: g{} rel err {err:.2e}", k + 1));
            }
        }
    }
    Ok(Check::new("constraint gradients", cases, failures, format!("max rel err {worst:.1e}")))
}

/// True when `a` and `b` lie in the same smooth piece of the margin loss
/// composed with `model`: same ReLU pattern, same runner-up, same hinge side.
fn same_piece(model: &Network, label: usize, kappa: f64, a: &[f64], b: &[f64]) -> Result<bool> {
    if model.activation_pattern(a)? != model.activation_pattern(b)? {
        return Ok(false);
    }
    let (sa, sb) = (model.scores(a)?, model.scores(b)?);
    let hinge = |s: &[f64]| score_margin(s, label) + kappa > 0.0;
    Ok(runner_up(&sa, label).0 == runner_up(&sb, label).0 && hinge(&sa) == hinge(&sb))
}

/// Central differences of the Lagrangian in `δ` through a small random
/// network. Cases whose difference stencil crosses a ReLU kink, a runner-up
/// switch or the hinge are redrawn.
pub fn lagrangian_gradient_check(cases: usize, seed: u64, tolerance: f64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(1, 8, 8);
    let h = 1e-6;
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let (mut done, mut redrawn) = (0, 0);
    while done < cases {
        if redrawn > 50 * cases {
            failures.push(format!("only {done} usable cases after {redrawn} redraws"));
            break;
        }
        let model = Network::random(
            shape,
            &[LayerSpec::Conv { filters: 4, kernel: 3, stride: 2 }, LayerSpec::Dense { units: 8 }],
            4,
            &mut rng,
        )?;
        let x = random_image(&mut rng, shape);
        let label = rng.gen_range(0..4);
        let delta: Vec<f64> = x.as_slice().iter().map(|&v| rng.gen_range(-v..=1.0 - v) * 0.3).collect();
        let lambda: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..2.0));
        let kappa = if rng.gen_bool(0.5) { 0.0 } else { 10.0 };
        let loss = MarginLossParams::cw(10f64.powf(rng.gen_range(-2.0..2.0)), kappa)?;
        let t = ConstraintThresholds::default();
        let y: Vec<f64> = x.as_slice().iter().zip(&delta).map(|(a, b)| a + b).collect();

        let mut numeric = vec![0.0; delta.len()];
        let mut usable = true;
        let mut d = delta.clone();
        for j in 0..d.len() {
            let orig = d[j];
            let (mut yu, mut yd) = (y.clone(), y.clone());
            yu[j] += h;
            yd[j] -= h;
            if !same_piece(&model, label, kappa, &y, &yu)? || !same_piece(&model, label, kappa, &y, &yd)? {
                usable = false;
                break;
            }
            d[j] = orig + h;
            let up = lagrangian(&model, &x, label, &d, &lambda, &loss, &t)?;
            d[j] = orig - h;
            let down = lagrangian(&model, &x, label, &d, &lambda, &loss, &t)?;
            d[j] = orig;
            numeric[j] = (up - down) / (2.0 * h);
        }
        if !usable {
            redrawn += 1;
            continue;
        }
        let (analytic, _) = lagrangian_gradient(&model, &x, label, &delta, &lambda, &loss, &t)?;
        let err = relative_error(&analytic, &numeric, 1e-6);
        worst = worst.max(err);
        if err > tolerance {
            failures.push(format!("case {done}: rel err {err:.2e}"));
        }
        done += 1;
    }
    Ok(Check::new("lagrangian gradient", done, failures, format!("max rel err {worst:.1e}, {redrawn} redrawn")))
}

/// Midpoint NMSE never exceeds the larger endpoint value on the half-space
/// `<u, v> >= -C/2`.
pub fn quasi_convexity(cases: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut done = 0;
    while done < cases {
        let n = rng.gen_range(1..=16);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = 10f64.powf(rng.gen_range(-4.0..0.0));
        let dot = |u: &[f64]| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        if dot(&u1) < -c / 2.0 || dot(&u2) < -c / 2.0 {
            continue;
        }
        let mid: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| 0.5 * (a + b)).collect();
        let (a, b, m) = (nmse(&u1, &v, c)?, nmse(&u2, &v, c)?, nmse(&mid, &v, c)?);
        if m > a.max(b) + 1e-9 {
            failures.push(format!("case {done}: midpoint {m} > max({a}, {b})"));
        }
        done += 1;
    }
    Ok(Check::new("nmse quasi-convexity", cases, failures, "no violations".into()))
}

#[derive(Clone)]
struct Stub(bool);

impl Candidate for Stub {
    fn is_success(&self) -> bool {
        self.0
    }

    fn quality(&self) -> f64 {
        0.0
    }
}

/// Traces of the search over `c` against always-fail, always-succeed and
/// threshold stubs.
pub fn search_traces() -> Result<Check> {
    let mut failures = Vec::new();
    let fail = binary_search_c(9, |_| Ok(Stub(false)))?;
    let cs: Vec<f64> = fail.rounds.iter().map(|r| r.c).collect();
    let want: Vec<f64> = (0..9).map(|k| C_INIT * 10f64.powi(k)).collect();
    if cs != want {
        failures.push(format!("always-fail: {cs:?}"));
    }
    let ok = binary_search_c(9, |_| Ok(Stub(true)))?;
    let cs: Vec<f64> = ok.rounds.iter().map(|r| r.c).collect();
    let want: Vec<f64> = (0..9).map(|k| C_INIT / 2f64.powi(k)).collect();
    if cs != want {
        failures.push(format!("always-succeed: {cs:?}"));
    }
    let mixed = binary_search_c(20, |c| Ok(Stub(c >= 3.7)))?;
    if mixed.rounds.windows(2).any(|w| w[1].upper > w[0].upper) {
        failures.push("threshold stub: upper bound increased".into());
    }
    Ok(Check::new("search traces", 3, failures, "exact".into()))
}

/// Every suite at its default size.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        ssim_properties(1000, seed)?,
        constraint_gradient_check(100, seed, 1e-4)?,
        lagrangian_gradient_check(100, seed, 1e-3)?,
        quasi_convexity(1000, seed)?,
        search_traces()?,
    ])
}
