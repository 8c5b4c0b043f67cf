//! Finite-difference verification of every backward rule, runnable from the
//! CLI as well as from tests.
//!
//! Each check compares the tape's analytic gradients against central finite
//! differences of the forward computation, in `f64` where single-precision
//! rounding would mask real errors. Op-level checks use h = 1e-3 and a 1e-3
//! relative tolerance; the whole-network check uses a 1e-2 tolerance on ten
//! sampled input pixels.

use crate::model::{Model, ModelConfig, Rational};
use crate::rng::{derive_seed, DetRng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Result;

const OP_H: f64 = 1e-3;
const OP_TOL: f64 = 1e-3;
const NET_TOL: f64 = 1e-2;
const INSTANCES: usize = 5;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: &str, instances: usize, max_rel_err: f64, tolerance: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            instances,
            max_rel_err,
            tolerance,
            passed: max_rel_err < tolerance,
        }
    }
}

pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

fn rel_err(analytic: f64, reference: f64) -> f64 {
    (analytic - reference).abs() / reference.abs().max(1e-6)
}

/// Central finite difference of `f` w.r.t. one element of `x`.
fn central_diff(f: &mut dyn FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, idx: usize) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[idx] += OP_H;
    let mut minus = x.clone();
    minus.data_mut()[idx] -= OP_H;
    (f(&plus) - f(&minus)) / (2.0 * OP_H)
}

/// Runs one op check instance: `build` records the op chain on a fresh tape
/// over the given leaves (all `requires_grad`) and returns the scalar loss
/// var. Finite differences re-run the same builder with one perturbed leaf.
fn check_op(
    leaves: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = leaves
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect::<Result<_>>()?;
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(vars[li])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape().to_vec()));
        for idx in 0..leaf.numel() {
            let mut eval = |perturbed: &Tensor<f64>| -> f64 {
                let mut t = Tape::<f64>::new();
                let vs: Vec<Var> = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, orig)| {
                        let tensor = if j == li { perturbed.clone() } else { orig.clone() };
                        t.leaf(tensor).unwrap()
                    })
                    .collect();
                let out = build(&mut t, &vs).unwrap();
                t.value(out).item()
            };
            let fd = central_diff(&mut eval, leaf, idx);
            worst = worst.max(rel_err(analytic.data()[idx], fd));
        }
    }
    Ok(worst)
}

/// Weighted sum of all elements: turns any output into a scalar objective
/// with fixed random coefficients.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, coeffs: &Tensor<f64>) -> Result<Var> {
    let c = tape.leaf(coeffs.clone())?;
    let prod = tape.mul(out, c)?;
    tape.sum(prod)
}

fn randn(shape: Vec<usize>, rng: &mut DetRng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Random tensor with every element at least `margin` away from zero, for
/// kink-free ReLU checks.
fn randn_off_zero(shape: Vec<usize>, margin: f64, rng: &mut DetRng) -> Tensor<f64> {
    let mut t = randn(shape, rng);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = margin * v.signum() + *v;
        }
        if *v == 0.0 {
            *v = margin;
        }
    }
    t
}

pub fn check_conv2d(seed: u64) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = DetRng::new(derive_seed(seed, 0xC0 + i as u64));
        let input = randn(vec![2, 2, 4, 5], &mut rng);
        let weight = randn(vec![3, 2, 3, 3], &mut rng);
        let bias = randn(vec![3], &mut rng);
        let coeffs = randn(vec![2, 3, 4, 5], &mut rng);
        let err = check_op(&[input, weight, bias], &|tape, vars| {
            let out = tape.conv2d(vars[0], vars[1], vars[2], 1, 1)?;
            weighted_sum(tape, out, &coeffs)
        })?;
        worst = worst.max(err);
    }
    Ok(CheckReport::new("conv2d", INSTANCES, worst, OP_TOL))
}

pub fn check_batchnorm(seed: u64) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = DetRng::new(derive_seed(seed, 0xB0 + i as u64));
        let input = randn(vec![3, 2, 3, 4], &mut rng);
        let gamma = randn_off_zero(vec![2], 0.2, &mut rng);
        let beta = randn(vec![2], &mut rng);
        let coeffs = randn(vec![3, 2, 3, 4], &mut rng);
        let err = check_op(&[input, gamma, beta], &|tape, vars| {
            let (out, _) = tape.batchnorm_train(vars[0], vars[1], vars[2], 1e-5)?;
            weighted_sum(tape, out, &coeffs)
        })?;
        worst = worst.max(err);
    }
    Ok(CheckReport::new("batchnorm2d", INSTANCES, worst, OP_TOL))
}

pub fn check_maxpool(seed: u64) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = DetRng::new(derive_seed(seed, 0xA0 + i as u64));
        let input = randn(vec![2, 2, 4, 6], &mut rng);
        let coeffs = randn(vec![2, 2, 2, 3], &mut rng);
        let err = check_op(&[input], &|tape, vars| {
            let out = tape.maxpool2d(vars[0], 2, 2)?;
            weighted_sum(tape, out, &coeffs)
        })?;
        worst = worst.max(err);
    }
    Ok(CheckReport::new("maxpool2d", INSTANCES, worst, OP_TOL))
}

pub fn check_linear(seed: u64) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = DetRng::new(derive_seed(seed, 0x10 + i as u64));
        let input = randn(vec![3, 4], &mut rng);
        let weight = randn(vec![5, 4], &mut rng);
        let bias = randn(vec![5], &mut rng);
        let coeffs = randn(vec![3, 5], &mut rng);
        let err = check_op(&[input, weight, bias], &|tape, vars| {
            let out = tape.linear(vars[0], vars[1], vars[2])?;
            weighted_sum(tape, out, &coeffs)
        })?;
        worst = worst.max(err);
    }
    Ok(CheckReport::new("linear", INSTANCES, worst, OP_TOL))
}

pub fn check_relu(seed: u64) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = DetRng::new(derive_seed(seed, 0x20 + i as u64));
        // Inputs stay clear of the kink at zero.
        let input = randn_off_zero(vec![4, 6], 0.05, &mut rng);
        let coeffs = randn(vec![4, 6], &mut rng);
        let err = check_op(&[input], &|tape, vars| {
            let out = tape.relu(vars[0])?;
            weighted_sum(tape, out, &coeffs)
        })?;
        worst = worst.max(err);
    }
    Ok(CheckReport::new("relu", INSTANCES, worst, OP_TOL))
}

pub fn check_softmax(seed: u64) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = DetRng::new(derive_seed(seed, 0x30 + i as u64));
        let input = randn(vec![3, 4], &mut rng);
        let coeffs = randn(vec![3, 4], &mut rng);
        let err = check_op(&[input], &|tape, vars| {
            let out = tape.softmax(vars[0])?;
            weighted_sum(tape, out, &coeffs)
        })?;
        worst = worst.max(err);
    }
    Ok(CheckReport::new("softmax", INSTANCES, worst, OP_TOL))
}

pub fn check_cross_entropy(seed: u64) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = DetRng::new(derive_seed(seed, 0x40 + i as u64));
        let logits = randn(vec![4, 3], &mut rng);
        let labels: Vec<usize> = (0..4).map(|_| rng.below(3) as usize).collect();
        let err = check_op(&[logits], &|tape, vars| tape.cross_entropy(vars[0], &labels))?;
        worst = worst.max(err);
    }
    Ok(CheckReport::new("cross_entropy", INSTANCES, worst, OP_TOL))
}

/// Whole-network check: gradient of the glitch-class logit w.r.t. ten
/// sampled input pixels, on the desk-scale architecture.
pub fn check_full_network(seed: u64) -> Result<CheckReport> {
    let cfg = ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 });
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let instance_seed = derive_seed(seed, 0xF0 + i as u64);
        let mut model: Model<f64> = Model::build(cfg.clone(), instance_seed)?;
        // The classifier layer initializes to zero; perturb everything so
        // gradients actually reach the input.
        let mut rng = DetRng::new(derive_seed(instance_seed, 1));
        for t in model.trainable_mut() {
            for v in t.data_mut() {
                *v += rng.normal_f64() * 0.1;
            }
        }
        let input = {
            let mut t = Tensor::<f64>::zeros(vec![1, 3, 32, 64]);
            for v in t.data_mut() {
                *v = rng.uniform_f64();
            }
            t
        };

        let mut tape = Tape::<f64>::new();
        let (logits, input_var) = model.forward_input_grad(&mut tape, input.clone())?;
        let picked = tape.pick(logits, 1)?;
        let mut grads = tape.backward(picked)?;
        let analytic = grads.take(input_var).expect("input gradient");
        let f0 = model.forward_infer(&input)?.data()[1];

        let mut checked = 0;
        let mut tries = 0;
        while checked < 10 && tries < 100 {
            tries += 1;
            let idx = rng.below(input.numel() as u64) as usize;
            let mut plus = input.clone();
            plus.data_mut()[idx] += OP_H;
            let mut minus = input.clone();
            minus.data_mut()[idx] -= OP_H;
            let fp = model.forward_infer(&plus)?.data()[1];
            let fm = model.forward_infer(&minus)?.data()[1];
            // The inference network is piecewise linear in the input; a
            // disagreement between one-sided slopes means the step crossed a
            // ReLU or max-pool boundary, where finite differences are
            // meaningless. Skip those pixels.
            let s_plus = (fp - f0) / OP_H;
            let s_minus = (f0 - fm) / OP_H;
            if (s_plus - s_minus).abs() > 1e-7 * s_plus.abs().max(s_minus.abs()).max(1.0) {
                continue;
            }
            let fd = (fp - fm) / (2.0 * OP_H);
            worst = worst.max(rel_err(analytic.data()[idx], fd));
            checked += 1;
        }
        if checked < 10 {
            // Could not find ten kink-free pixels; flag as a failure.
            worst = f64::INFINITY;
        }
    }
    Ok(CheckReport::new("full_network_input_grad", INSTANCES, worst, NET_TOL))
}

/// The complete suite, as run by the `gradcheck` CLI subcommand.
pub fn run_full_suite(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_conv2d(seed)?,
        check_batchnorm(seed)?,
        check_maxpool(seed)?,
        check_linear(seed)?,
        check_relu(seed)?,
        check_softmax(seed)?,
        check_cross_entropy(seed)?,
        check_full_network(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let reports = run_full_suite(42).unwrap();
        for r in &reports {
            assert!(
                r.passed,
                "{}: max rel err {} over tolerance {}",
                r.name, r.max_rel_err, r.tolerance
            );
        }
        assert_eq!(reports.len(), 8);
    }
}
