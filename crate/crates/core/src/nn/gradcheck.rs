//! Central-difference gradient checking.
//!
//! Analytic gradients come from the f32 engine; numeric ones from the f64 reference
//! evaluator in [`super::reference`]. The scalar probed is `sum(r * output)` for a fixed
//! random `r`. Coordinates whose perturbation flips any ReLU input sign are skipped,
//! since the finite difference straddles a kink there.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::ModelWeights;
use super::reference::{self, RefTensor};
use super::tensor::{Shape, Tensor};
use crate::error::{bail, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared absolutely rather than relatively.
    pub abs_floor: f64,
    /// Check a seeded random subset when the fragment has more coordinates than this.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-3, tolerance: 1e-3, abs_floor: 1e-3, max_coords: 1_500, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate label with the largest error.
    pub worst: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

/// A scalar probe evaluated at a point, with a signature that changes when a kink is crossed.
pub struct Probe {
    pub value: f64,
    pub signature: Vec<bool>,
}

/// Compares `analytic` against central differences of `eval` around `point`.
pub fn compare_gradients(
    point: &[f64],
    analytic: &[f64],
    labels: &dyn Fn(usize) -> String,
    opts: &GradCheckOptions,
    mut eval: impl FnMut(&[f64]) -> Result<Probe>,
) -> Result<GradCheckReport> {
    if point.len() != analytic.len() {
        bail!(Shape, "{} coordinates but {} analytic gradients", point.len(), analytic.len());
    }
    let mut coords: Vec<usize> = if point.len() > opts.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
        let mut v = sample(&mut rng, point.len(), opts.max_coords).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..point.len()).collect()
    };
    coords.dedup();
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped_kinks: 0,
        tolerance: opts.tolerance,
    };
    for i in coords {
        let orig = x[i];
        x[i] = orig + opts.step;
        let plus = eval(&x)?;
        x[i] = orig - opts.step;
        let minus = eval(&x)?;
        x[i] = orig;
        if plus.signature != minus.signature {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * opts.step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.abs_floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err;
            report.worst = format!("{} (analytic {a:.6e}, numeric {numeric:.6e})", labels(i));
        }
    }
    Ok(report)
}

/// Checks every parameter and input gradient of `weights` (training-mode batch norm).
///
/// `frame` and `mask` should hold values of the scale the network sees (roughly `[0, 1]`).
pub fn grad_check(
    weights: &ModelWeights,
    frame: &Tensor,
    mask: Option<&Tensor>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (point, analytic, labels) = analytic_gradients(weights, frame, mask, opts.seed)?;
    let out_shape = weights.forward(frame, mask)?.shape();
    let projection = projection(out_shape, opts.seed);
    let arch = weights.architecture().clone();
    let frame_len = frame.data().len();
    let mask_len = mask.map_or(0, |m| m.data().len());
    let mut params = reference::params_from_weights(weights);
    let names: Vec<(String, usize)> = weights.params().iter().map(|(n, t)| (n.clone(), t.data().len())).collect();
    let (fs, ms) = (frame.shape(), mask.map(Tensor::shape));
    compare_gradients(&point, &analytic, &|i| labels[i].clone(), opts, |x| {
        let f = RefTensor { shape: fs, data: x[..frame_len].to_vec() };
        let m = ms.map(|shape| RefTensor { shape, data: x[frame_len..frame_len + mask_len].to_vec() });
        let mut off = frame_len + mask_len;
        for (name, len) in &names {
            params.get_mut(name).unwrap().copy_from_slice(&x[off..off + len]);
            off += len;
        }
        let out = reference::forward(&arch, &params, &f, m.as_ref(), true)?;
        Ok(Probe {
            value: out.output.data.iter().zip(&projection).map(|(a, b)| a * b).sum(),
            signature: out.relu_pattern,
        })
    })
}

fn projection(shape: Shape, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    (0..shape.len()).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect()
}

/// Flattened `(inputs ++ params)`, their analytic gradients, and coordinate labels.
#[allow(clippy::type_complexity)]
fn analytic_gradients(
    weights: &ModelWeights,
    frame: &Tensor,
    mask: Option<&Tensor>,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<String>)> {
    let mut w = weights.clone();
    w.zero_grads();
    let (out, tape) = w.forward_train(frame, mask)?;
    let proj: Vec<f32> = projection(out.shape(), seed).into_iter().map(|v| v as f32).collect();
    let grad_out = Tensor::from_vec(out.shape(), proj)?;
    let input_grads = w.backward(tape, &grad_out, true)?.expect("requested input gradients");
    let mut point = Vec::new();
    let mut analytic = Vec::new();
    let mut labels = Vec::new();
    let mut push = |name: &str, values: &[f32], grads: &[f32]| {
        for (j, (&v, &g)) in values.iter().zip(grads).enumerate() {
            point.push(v as f64);
            analytic.push(g as f64);
            labels.push(format!("{name}[{j}]"));
        }
    };
    push("input.frame", frame.data(), input_grads.frame.data());
    if let (Some(m), Some(gm)) = (mask, input_grads.mask.as_ref()) {
        push("input.mask", m.data(), gm.data());
    }
    for (name, t) in w.params() {
        let zeros = vec![0.0; t.data().len()];
        push(name, t.data(), t.grad().unwrap_or(&zeros));
    }
    // Parameters were read after forward_train, which leaves them untouched.
    Ok((point, analytic, labels))
}
