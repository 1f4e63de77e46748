//! Reverse-mode gradients through the layer stack. A forward pass records
//! every intermediate activation; the backward pass walks the layers in
//! reverse from a `d(loss)/d(logits)` seed.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::loss::{dlogits_row, BatchTargets, LossKind, Target};
use super::{Layer, Model};

/// Activations recorded by [`forward_cached`]: `acts[0]` is the input batch
/// and `acts[l + 1]` the output of layer `l` (so the last entry is the
/// logits).
pub(crate) struct Cache {
    pub acts: Vec<Tensor>,
}

pub(crate) fn forward_cached(model: &Model, inputs: &Tensor) -> (Tensor, Cache) {
    let batch = inputs.rows();
    let mut acts = Vec::with_capacity(model.layers().len() + 1);
    let first = inputs
        .reshape(vec![batch, inputs.row_len()])
        .expect("row view");
    acts.push(first);
    for layer in model.layers() {
        let next = apply_layer(layer, acts.last().unwrap());
        acts.push(next);
    }
    let logits = acts.last().unwrap().clone();
    logits.assert_finite("forward");
    (logits, Cache { acts })
}

fn apply_layer(layer: &Layer, input: &Tensor) -> Tensor {
    let batch = input.rows();
    match layer {
        Layer::Dense { weight, bias } => {
            let (outs, ins) = (weight.shape()[0], weight.shape()[1]);
            let w = weight.data();
            let b = bias.data();
            let mut out = Tensor::zeros(vec![batch, outs]);
            for r in 0..batch {
                let x = input.row(r);
                let y = out.row_mut(r);
                for o in 0..outs {
                    let wrow = &w[o * ins..(o + 1) * ins];
                    let mut acc = b[o];
                    for i in 0..ins {
                        acc += wrow[i] * x[i];
                    }
                    y[o] = acc;
                }
            }
            out
        }
        Layer::Relu => {
            let mut out = input.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            out
        }
        Layer::Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            height,
            width,
            ..
        } => {
            let (ic, oc, k, h, w) = (*in_channels, *out_channels, *kernel, *height, *width);
            let pad = (k - 1) / 2;
            let wd = weight.data();
            let bd = bias.data();
            let mut out = Tensor::zeros(vec![batch, oc * h * w]);
            for r in 0..batch {
                let x = input.row(r);
                let y = out.row_mut(r);
                for o in 0..oc {
                    for yy in 0..h {
                        for xx in 0..w {
                            let mut acc = bd[o];
                            for c in 0..ic {
                                for ky in 0..k {
                                    let iy = yy + ky;
                                    if iy < pad || iy - pad >= h {
                                        continue;
                                    }
                                    let iy = iy - pad;
                                    for kx in 0..k {
                                        let ix = xx + kx;
                                        if ix < pad || ix - pad >= w {
                                            continue;
                                        }
                                        let ix = ix - pad;
                                        acc += wd[((o * ic + c) * k + ky) * k + kx]
                                            * x[(c * h + iy) * w + ix];
                                    }
                                }
                            }
                            y[(o * h + yy) * w + xx] = acc;
                        }
                    }
                }
            }
            out
        }
    }
}

/// Backward pass from a `[batch, C]` seed. Returns parameter gradients (in
/// [`Model::param_tensors`] order) when `want_params`, and the gradient with
/// respect to the input batch when `want_input`.
pub(crate) fn backward(
    model: &Model,
    cache: &Cache,
    dlogits: Tensor,
    want_params: bool,
    want_input: bool,
) -> (Option<Vec<Tensor>>, Option<Tensor>) {
    let mut param_grads: Vec<Tensor> = Vec::new();
    let mut d = dlogits;
    for (l, layer) in model.layers().iter().enumerate().rev() {
        let input = &cache.acts[l];
        let need_din = want_input || l > 0;
        match layer {
            Layer::Dense { weight, .. } => {
                let (outs, ins) = (weight.shape()[0], weight.shape()[1]);
                let batch = input.rows();
                if want_params {
                    let mut dw = Tensor::zeros(vec![outs, ins]);
                    let mut db = Tensor::zeros(vec![outs]);
                    {
                        let dwd = dw.data_mut();
                        for r in 0..batch {
                            let x = input.row(r);
                            let g = d.row(r);
                            for o in 0..outs {
                                let go = g[o];
                                let wrow = &mut dwd[o * ins..(o + 1) * ins];
                                for i in 0..ins {
                                    wrow[i] += go * x[i];
                                }
                            }
                        }
                    }
                    {
                        let dbd = db.data_mut();
                        for r in 0..batch {
                            let g = d.row(r);
                            for o in 0..outs {
                                dbd[o] += g[o];
                            }
                        }
                    }
                    param_grads.push(db);
                    param_grads.push(dw);
                }
                if need_din {
                    let w = weight.data();
                    let mut din = Tensor::zeros(vec![batch, ins]);
                    for r in 0..batch {
                        let g = d.row(r);
                        let dx = din.row_mut(r);
                        for o in 0..outs {
                            let go = g[o];
                            let wrow = &w[o * ins..(o + 1) * ins];
                            for i in 0..ins {
                                dx[i] += go * wrow[i];
                            }
                        }
                    }
                    d = din;
                }
            }
            Layer::Relu => {
                if need_din {
                    let mut din = d;
                    for (dv, &xv) in din.data_mut().iter_mut().zip(input.data()) {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    d = din;
                }
            }
            Layer::Conv2d {
                weight,
                in_channels,
                out_channels,
                kernel,
                height,
                width,
                ..
            } => {
                let (ic, oc, k, h, w) = (*in_channels, *out_channels, *kernel, *height, *width);
                let pad = (k - 1) / 2;
                let batch = input.rows();
                let wd = weight.data();
                if want_params {
                    let mut dw = Tensor::zeros(vec![oc, ic, k, k]);
                    let mut db = Tensor::zeros(vec![oc]);
                    {
                        let dwd = dw.data_mut();
                        let mut dbd = vec![0.0; oc];
                        for r in 0..batch {
                            let x = input.row(r);
                            let g = d.row(r);
                            for o in 0..oc {
                                for yy in 0..h {
                                    for xx in 0..w {
                                        let go = g[(o * h + yy) * w + xx];
                                        dbd[o] += go;
                                        for c in 0..ic {
                                            for ky in 0..k {
                                                let iy = yy + ky;
                                                if iy < pad || iy - pad >= h {
                                                    continue;
                                                }
                                                let iy = iy - pad;
                                                for kx in 0..k {
                                                    let ix = xx + kx;
                                                    if ix < pad || ix - pad >= w {
                                                        continue;
                                                    }
                                                    let ix = ix - pad;
                                                    dwd[((o * ic + c) * k + ky) * k + kx] +=
                                                        go * x[(c * h + iy) * w + ix];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        db.data_mut().copy_from_slice(&dbd);
                    }
                    param_grads.push(db);
                    param_grads.push(dw);
                }
                if need_din {
                    let mut din = Tensor::zeros(vec![batch, ic * h * w]);
                    for r in 0..batch {
                        let g = d.row(r);
                        let dx = din.row_mut(r);
                        for o in 0..oc {
                            for yy in 0..h {
                                for xx in 0..w {
                                    let go = g[(o * h + yy) * w + xx];
                                    for c in 0..ic {
                                        for ky in 0..k {
                                            let iy = yy + ky;
                                            if iy < pad || iy - pad >= h {
                                                continue;
                                            }
                                            let iy = iy - pad;
                                            for kx in 0..k {
                                                let ix = xx + kx;
                                                if ix < pad || ix - pad >= w {
                                                    continue;
                                                }
                                                let ix = ix - pad;
                                                dx[(c * h + iy) * w + ix] +=
                                                    go * wd[((o * ic + c) * k + ky) * k + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    d = din;
                }
            }
        }
    }
    // Gradients were pushed bias-then-weight walking backwards; flip to the
    // forward weight-then-bias order.
    param_grads.reverse();
    let params = if want_params {
        for g in &param_grads {
            g.assert_finite("parameter gradient");
        }
        Some(param_grads)
    } else {
        None
    };
    let input = if want_input {
        d.assert_finite("input gradient");
        Some(d)
    } else {
        None
    };
    (params, input)
}

// `Target::Reference` borrows a whole tensor; batched references need a row
// view of it, handled privately here.
enum RowTarget<'a> {
    Label(usize),
    ReferenceRow(&'a [f64]),
}

fn row_target<'a>(targets: &BatchTargets<'a>, row: usize, batch: usize) -> Result<RowTarget<'a>> {
    match targets {
        BatchTargets::Labels(labels) => {
            if labels.len() != batch {
                return Err(Error::config(format!(
                    "{} labels for a batch of {}",
                    labels.len(),
                    batch
                )));
            }
            Ok(RowTarget::Label(labels[row]))
        }
        BatchTargets::References(refs) => {
            if refs.rows() != batch {
                return Err(Error::config(format!(
                    "{} reference rows for a batch of {}",
                    refs.rows(),
                    batch
                )));
            }
            Ok(RowTarget::ReferenceRow(refs.row(row)))
        }
    }
}

fn dlogits_for_row(logits: &[f64], target: &RowTarget, kind: LossKind) -> Result<Vec<f64>> {
    match target {
        RowTarget::Label(y) => dlogits_row(logits, &Target::Label(*y), kind),
        RowTarget::ReferenceRow(r) => {
            let t = Tensor::new(vec![r.len()], r.to_vec()).expect("finite reference row");
            dlogits_row(logits, &Target::Reference(&t), kind)
        }
    }
}

fn loss_for_row(logits: &[f64], target: &RowTarget, kind: LossKind) -> Result<f64> {
    match (kind, target) {
        (LossKind::CrossEntropy, RowTarget::Label(y)) => super::loss::cross_entropy_row(logits, *y),
        (LossKind::MartMargin, RowTarget::Label(y)) => super::loss::mart_margin_row(logits, *y),
        (LossKind::KlDivergence, RowTarget::ReferenceRow(r)) => {
            Ok(super::loss::kl_terms(logits, r).0)
        }
        _ => Err(Error::config("target kind does not match loss kind")),
    }
}

/// Per-example losses for a batch; no weighting or averaging applied.
pub fn batch_losses(
    model: &Model,
    inputs: &Tensor,
    targets: &BatchTargets,
    kind: LossKind,
) -> Result<Vec<f64>> {
    let logits = model.forward(inputs)?;
    let batch = logits.rows();
    let mut out = Vec::with_capacity(batch);
    for r in 0..batch {
        let t = row_target(targets, r, batch)?;
        out.push(loss_for_row(logits.row(r), &t, kind)?);
    }
    Ok(out)
}

/// Gradients of the weighted batch loss `sum_i w_i * loss_i` with respect to
/// every parameter tensor. With `weights = None` the loss is the plain mean
/// `(1/m) sum_i loss_i`.
pub fn param_gradients(
    model: &Model,
    inputs: &Tensor,
    targets: &BatchTargets,
    kind: LossKind,
    weights: Option<&[f64]>,
) -> Result<Vec<Tensor>> {
    if inputs.row_len() != model.input_dim() {
        return Err(Error::config("param_gradients: input width mismatch"));
    }
    let batch = inputs.rows();
    if let Some(w) = weights {
        if w.len() != batch {
            return Err(Error::config(format!(
                "{} weights for a batch of {}",
                w.len(),
                batch
            )));
        }
        if let Some(bad) = w.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(Error::domain(format!("negative example weight {bad}")));
        }
    }
    if batch == 0 {
        return Ok(model
            .param_tensors()
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect());
    }
    let (logits, cache) = forward_cached(model, inputs);
    let mut dlogits = Tensor::zeros(vec![batch, model.class_count()]);
    for r in 0..batch {
        let t = row_target(targets, r, batch)?;
        let d = dlogits_for_row(logits.row(r), &t, kind)?;
        let scale = match weights {
            Some(w) => w[r],
            None => 1.0 / batch as f64,
        };
        for (dst, src) in dlogits.row_mut(r).iter_mut().zip(&d) {
            *dst = scale * src;
        }
    }
    let (grads, _) = backward(model, &cache, dlogits, true, false);
    Ok(grads.expect("param gradients requested"))
}

/// Gradient of each example's own loss with respect to that example's input
/// row. Accepts a single `[d]` example or a `[batch, d]` batch and returns a
/// tensor of the same shape. Rows are independent: no `1/m` scaling.
pub fn input_gradient(
    model: &Model,
    inputs: &Tensor,
    targets: &BatchTargets,
    kind: LossKind,
) -> Result<Tensor> {
    if inputs.row_len() != model.input_dim() {
        return Err(Error::config("input_gradient: input width mismatch"));
    }
    let batch = inputs.rows();
    let (logits, cache) = forward_cached(model, inputs);
    let mut dlogits = Tensor::zeros(vec![batch, model.class_count()]);
    for r in 0..batch {
        let t = row_target(targets, r, batch)?;
        let d = dlogits_for_row(logits.row(r), &t, kind)?;
        dlogits.row_mut(r).copy_from_slice(&d);
    }
    let (_, din) = backward(model, &cache, dlogits, false, true);
    din.expect("input gradient requested").reshape(inputs.shape().to_vec())
}
