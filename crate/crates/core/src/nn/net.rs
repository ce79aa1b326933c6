use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::spec::{LossKind, ModelSpec, ParamVector};
use crate::error::{Error, Result};

/// Supervision for a batch: dense targets for MSE, class indices for
/// cross-entropy.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Dense(ArrayView2<'a, f64>),
    Classes(&'a [usize]),
}

impl Targets<'_> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Dense(t) => t.nrows(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub targets: Targets<'a>,
}

fn layer_views<'p>(
    params: &'p [f64],
    layout: (usize, usize, usize, usize),
) -> (ArrayView2<'p, f64>, ArrayView1<'p, f64>) {
    let (w_start, b_start, fan_in, fan_out) = layout;
    let w = ArrayView2::from_shape((fan_out, fan_in), &params[w_start..b_start]).unwrap();
    let b = ArrayView1::from(&params[b_start..b_start + fan_out]);
    (w, b)
}

fn check_inputs(params: &ParamVector, spec: &ModelSpec, inputs: &ArrayView2<f64>) -> Result<()> {
    params.check_spec(spec)?;
    if inputs.ncols() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            actual: inputs.ncols(),
        });
    }
    Ok(())
}

/// Pre-activations of every layer for a batch.
fn forward_trace(params: &[f64], spec: &ModelSpec, inputs: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let layout = spec.layer_layout();
    let mut pre = Vec::with_capacity(layout.len());
    let mut act = inputs.to_owned();
    for (l, entry) in layout.iter().enumerate() {
        let (w, b) = layer_views(params, *entry);
        let z = act.dot(&w.t()) + b;
        let f = spec.activation_of(l);
        act = z.mapv(|v| f.apply(v));
        pre.push(z);
    }
    pre
}

/// Row `i` of the result is the network output for row `i` of `inputs`.
pub fn forward(params: &ParamVector, spec: &ModelSpec, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_inputs(params, spec, &inputs)?;
    let mut pre = forward_trace(&params.values, spec, inputs);
    Ok(pre.pop().unwrap())
}

fn log_softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.mapv(|v| v - lse)
}

/// Batch-mean loss and the derivative of that loss w.r.t. the outputs.
fn loss_and_output_grad(
    outputs: &Array2<f64>,
    targets: Targets,
    kind: LossKind,
) -> Result<(f64, Array2<f64>)> {
    let n = outputs.nrows();
    let c = outputs.ncols();
    let inv_n = 1.0 / n as f64;
    match (kind, targets) {
        (LossKind::Mse, Targets::Dense(t)) => {
            if t.dim() != outputs.dim() {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    actual: t.ncols(),
                });
            }
            let resid = outputs - &t;
            let loss = resid.iter().map(|r| r * r).sum::<f64>() * inv_n;
            Ok((loss, resid * (2.0 * inv_n)))
        }
        (LossKind::SoftmaxCrossEntropy, Targets::Classes(labels)) => {
            let mut grad = Array2::zeros((n, c));
            let mut loss = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                if y >= c {
                    return Err(Error::InvalidArgument(format!(
                        "class index {y} out of range for {c} outputs"
                    )));
                }
                let ls = log_softmax_row(outputs.row(i));
                loss -= ls[y];
                let mut g = grad.row_mut(i);
                for (j, v) in ls.iter().enumerate() {
                    g[j] = v.exp() * inv_n;
                }
                g[y] -= inv_n;
            }
            Ok((loss * inv_n, grad))
        }
        (LossKind::Mse, Targets::Classes(_)) => Err(Error::InvalidArgument(
            "mse loss needs dense targets".into(),
        )),
        (LossKind::SoftmaxCrossEntropy, Targets::Dense(_)) => Err(Error::InvalidArgument(
            "cross-entropy loss needs class-index targets".into(),
        )),
    }
}

/// Batch-mean loss and its exact gradient by backpropagation.
pub fn loss_and_grad(params: &ParamVector, spec: &ModelSpec, batch: Batch) -> Result<(f64, Vec<f64>)> {
    check_inputs(params, spec, &batch.inputs)?;
    let n = batch.inputs.nrows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.targets.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: batch.targets.len(),
        });
    }
    if batch.inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inputs"));
    }

    let layout = spec.layer_layout();
    let pre = forward_trace(&params.values, spec, batch.inputs);
    let (loss, mut delta) = loss_and_output_grad(pre.last().unwrap(), batch.targets, spec.loss_kind())?;

    let mut grad = vec![0.0; params.len()];
    for l in (0..layout.len()).rev() {
        let (w_start, b_start, fan_in, fan_out) = layout[l];
        let prev_act = if l == 0 {
            batch.inputs.to_owned()
        } else {
            let f = spec.activation_of(l - 1);
            pre[l - 1].mapv(|v| f.apply(v))
        };
        let gw = delta.t().dot(&prev_act);
        grad[w_start..b_start].copy_from_slice(gw.as_standard_layout().as_slice().unwrap());
        let gb = delta.sum_axis(Axis(0));
        grad[b_start..b_start + fan_out].copy_from_slice(gb.as_slice().unwrap());
        if l > 0 {
            let (w, _) = layer_views(&params.values, layout[l]);
            debug_assert_eq!(w.ncols(), fan_in);
            let f = spec.activation_of(l - 1);
            let mut back = delta.dot(&w);
            back.zip_mut_with(&pre[l - 1], |d, &z| *d *= f.derivative(z));
            delta = back;
        }
    }
    Ok((loss, grad))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Loss (per the model's loss kind) and top-1 accuracy over a labelled set.
///
/// `one_hot` is used for MSE models, `labels` for cross-entropy models and for
/// accuracy in both cases.
pub fn evaluate(
    params: &ParamVector,
    spec: &ModelSpec,
    inputs: ArrayView2<f64>,
    one_hot: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, f64)> {
    if inputs.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let out = forward(params, spec, inputs)?;
    let targets = match spec.loss_kind() {
        LossKind::Mse => Targets::Dense(one_hot),
        LossKind::SoftmaxCrossEntropy => Targets::Classes(labels),
    };
    let (loss, _) = loss_and_output_grad(&out, targets, spec.loss_kind())?;
    let correct = out
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(*row) == y)
        .count();
    Ok((loss, correct as f64 / labels.len() as f64))
}
