//! Shared oracles for the integration suites: central finite-difference
//! gradients and an independent scalar-loop evaluation of the DMU
//! memory update.

#![allow(dead_code)]

use dmu::autodiff::{Parameter, Tape, TensorId};
use dmu::training::{build_loss, Batch, BatchTargets, Model};
use ndarray::Array2;
use rand::Rng;

/// Loss of one batch forward pass, no gradients.
pub fn loss_value(model: &Model, batch: &Batch, scale: f64) -> f64 {
    let mut tape = Tape::new();
    let pass = build_loss(model, &mut tape, batch, scale).expect("forward pass");
    tape.value(pass.loss)[[0, 0]]
}

/// Reverse-mode gradients for every model parameter, aligned with
/// `Model::params`.
pub fn ad_grads(model: &Model, batch: &Batch, scale: f64) -> Vec<Array2<f64>> {
    let mut tape = Tape::new();
    let pass = build_loss(model, &mut tape, batch, scale).expect("forward pass");
    tape.backward(pass.loss).expect("backward");
    pass.param_ids
        .iter()
        .map(|&id| tape.adjoint(id).expect("adjoint after backward"))
        .collect()
}

/// Central finite differences over every parameter entry.
pub fn fd_grads(model: &mut Model, batch: &Batch, scale: f64, step: f64) -> Vec<Array2<f64>> {
    let n_params = model.params().len();
    let mut grads = Vec::with_capacity(n_params);
    for idx in 0..n_params {
        let (rows, cols) = model.params()[idx].value.dim();
        let mut grad = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.params()[idx].value[[r, c]];
                model.params_mut()[idx].value[[r, c]] = orig + step;
                let plus = loss_value(model, batch, scale);
                model.params_mut()[idx].value[[r, c]] = orig - step;
                let minus = loss_value(model, batch, scale);
                model.params_mut()[idx].value[[r, c]] = orig;
                grad[[r, c]] = (plus - minus) / (2.0 * step);
            }
        }
        grads.push(grad);
    }
    grads
}

/// Largest elementwise relative error between two gradient lists, with
/// a small denominator floor so near-zero entries compare absolutely.
pub fn max_rel_err(a: &[Array2<f64>], b: &[Array2<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst: f64 = 0.0;
    for (ga, gb) in a.iter().zip(b) {
        assert_eq!(ga.dim(), gb.dim());
        for (&x, &y) in ga.iter().zip(gb.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

/// Compare reverse-mode adjoints of every leaf of an arbitrary graph
/// against central finite differences; returns the max relative error.
///
/// `build` must construct the same scalar root from the given leaves
/// every time it is called.
pub fn fd_check_graph(
    values: &[Array2<f64>],
    build: &dyn Fn(&mut Tape, &[TensorId]) -> TensorId,
    step: f64,
) -> f64 {
    let eval = |vals: &[Array2<f64>]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<TensorId> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let root = build(&mut tape, &leaves);
        tape.value(root)[[0, 0]]
    };

    let mut tape = Tape::new();
    let leaves: Vec<TensorId> = values.iter().map(|v| tape.leaf(v.clone())).collect();
    let root = build(&mut tape, &leaves);
    tape.backward(root).expect("backward");
    let ad: Vec<Array2<f64>> = leaves
        .iter()
        .map(|&id| tape.adjoint(id).expect("adjoint"))
        .collect();

    let mut fd = Vec::with_capacity(values.len());
    let mut work: Vec<Array2<f64>> = values.to_vec();
    for idx in 0..values.len() {
        let (rows, cols) = values[idx].dim();
        let mut grad = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let orig = work[idx][[r, c]];
                work[idx][[r, c]] = orig + step;
                let plus = eval(&work);
                work[idx][[r, c]] = orig - step;
                let minus = eval(&work);
                work[idx][[r, c]] = orig;
                grad[[r, c]] = (plus - minus) / (2.0 * step);
            }
        }
        fd.push(grad);
    }
    max_rel_err(&ad, &fd)
}

/// Random batch with real-valued targets (scored by MSE).
pub fn random_real_batch(
    rng: &mut impl Rng,
    steps: usize,
    batch: usize,
    width: usize,
) -> Batch {
    let inputs = (0..steps)
        .map(|_| Array2::from_shape_fn((batch, width), |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let targets = Array2::from_shape_fn((batch, 1), |_| rng.gen_range(-1.0..1.0));
    Batch {
        inputs,
        targets: BatchTargets::Real(targets),
    }
}

/// Random batch with class targets (scored by cross-entropy).
pub fn random_class_batch(
    rng: &mut impl Rng,
    steps: usize,
    batch: usize,
    width: usize,
    classes: usize,
) -> Batch {
    let inputs = (0..steps)
        .map(|_| Array2::from_shape_fn((batch, width), |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let targets = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    Batch {
        inputs,
        targets: BatchTargets::Class(targets),
    }
}

/// Independent scalar-loop evaluation of one DMU memory update: a plain
/// double loop over the FNN layers followed by the per-element gate
/// blend. Shares no code with the tape-based forward pass.
pub fn dmu_step_scalar(
    params: &[Parameter],
    memory_width: usize,
    h_prev: &Array2<f64>,
    x: &Array2<f64>,
    scale: f64,
) -> Array2<f64> {
    let batch = h_prev.nrows();
    let layers = params.len() / 2;
    let mut out = Array2::zeros((batch, memory_width));
    for row in 0..batch {
        let mut act: Vec<f64> = x
            .row(row)
            .iter()
            .cloned()
            .chain(h_prev.row(row).iter().map(|&h| scale * h))
            .collect();
        for l in 0..layers {
            let w = &params[2 * l].value;
            let b = &params[2 * l + 1].value;
            let mut next = vec![0.0; w.ncols()];
            for (j, slot) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, &a) in act.iter().enumerate() {
                    acc += a * w[[i, j]];
                }
                *slot = acc + b[[0, j]];
                if l + 1 < layers {
                    *slot = slot.tanh();
                }
            }
            act = next;
        }
        for j in 0..memory_width {
            let gate = 1.0 / (1.0 + (-act[j]).exp());
            let cand = act[memory_width + j].tanh();
            out[[row, j]] = h_prev[[row, j]] * gate + cand * (1.0 - gate);
        }
    }
    out
}
