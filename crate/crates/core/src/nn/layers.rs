use serde::{Deserialize, Serialize};

use super::Real;
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub len: usize,
    pub channels: usize,
}

impl Shape {
    pub fn vector(n: usize) -> Self {
        Shape { len: 1, channels: n }
    }

    pub fn size(&self) -> usize {
        self.len * self.channels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Stride 1, no padding.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    },
    /// Inverted dropout; identity at inference.
    Dropout {
        rate: f64,
    },
    /// Window and stride equal.
    MaxPool1d {
        window: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => {
                if input.len != 1 || input.channels != inputs {
                    return Err(Error::shape(format!(
                        "dense layer expects ({inputs},) input, got ({}, {})",
                        input.len, input.channels
                    )));
                }
                if outputs == 0 {
                    return Err(Error::config("dense layer needs at least one output"));
                }
                Ok(Shape::vector(outputs))
            }
            LayerSpec::Conv1d { in_channels, out_channels, kernel, .. } => {
                if input.channels != in_channels {
                    return Err(Error::shape(format!("conv1d expects {in_channels} channels, got {}", input.channels)));
                }
                if kernel == 0 || out_channels == 0 || input.len < kernel {
                    return Err(Error::shape(format!(
                        "conv1d kernel {kernel} does not fit input length {}",
                        input.len
                    )));
                }
                Ok(Shape { len: input.len - kernel + 1, channels: out_channels })
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input)
            }
            LayerSpec::MaxPool1d { window } => {
                if window == 0 || input.len < window {
                    return Err(Error::shape(format!(
                        "max-pool window {window} does not fit input length {}",
                        input.len
                    )));
                }
                Ok(Shape { len: input.len / window, channels: input.channels })
            }
            LayerSpec::Flatten => Ok(Shape::vector(input.size())),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => inputs * outputs + outputs,
            LayerSpec::Conv1d { in_channels, out_channels, kernel, .. } => {
                kernel * in_channels * out_channels + out_channels
            }
            _ => 0,
        }
    }

    /// `(fan_in, fan_out, weight_count)` for layers with weights.
    pub(crate) fn fans(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => Some((inputs, outputs, inputs * outputs)),
            LayerSpec::Conv1d { in_channels, out_channels, kernel, .. } => {
                Some((kernel * in_channels, kernel * out_channels, kernel * in_channels * out_channels))
            }
            _ => None,
        }
    }
}

/// Splits `out` into `rows` equal rows and runs `f(row_index, row)`.
pub(crate) fn rows_mut<T: Send, F>(out: &mut [T], rows: usize, parallel: bool, f: F)
where
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if rows == 0 || out.is_empty() {
        return;
    }
    let width = out.len() / rows;
    if parallel {
        par::for_each_chunk_mut(out, width, f);
    } else {
        out.chunks_mut(width).enumerate().for_each(|(i, r)| f(i, r));
    }
}

#[inline]
pub(crate) fn activate<T: Real>(act: Activation, x: T) -> T {
    match act {
        Activation::Relu => x.max(T::zero()),
        Activation::Linear => x,
    }
}

/// Multiplies `d_out` by the activation derivative, using the post-activation
/// output.
pub(crate) fn activation_grad<T: Real>(act: Activation, out: &[T], d_out: &[T]) -> Vec<T> {
    match act {
        Activation::Linear => d_out.to_vec(),
        Activation::Relu => out.iter().zip(d_out).map(|(&y, &d)| if y > T::zero() { d } else { T::zero() }).collect(),
    }
}

/// `y[b] = act(x[b] · W + bias)` with `W` stored `inputs × outputs`.
pub(crate) struct Affine<'a, T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: &'a [T],
    pub bias: &'a [T],
}

impl<T: Real> Affine<'_, T> {
    /// `x` is `rows × inputs`; returns `rows × outputs`.
    pub fn forward(&self, x: &[T], rows: usize, act: Activation, parallel: bool) -> Vec<T> {
        let mut out = vec![T::zero(); rows * self.outputs];
        rows_mut(&mut out, rows, parallel, |b, y| {
            y.copy_from_slice(self.bias);
            let xb = &x[b * self.inputs..(b + 1) * self.inputs];
            for (i, &xi) in xb.iter().enumerate() {
                let w = &self.weights[i * self.outputs..(i + 1) * self.outputs];
                for (yo, &wo) in y.iter_mut().zip(w) {
                    *yo = *yo + xi * wo;
                }
            }
            y.iter_mut().for_each(|v| *v = activate(act, *v));
        });
        out
    }

    /// Given `dz` (gradient w.r.t. the pre-activation, `rows × outputs`),
    /// returns `(dx, dW, dbias)`.
    pub fn backward(&self, x: &[T], dz: &[T], rows: usize, parallel: bool) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (ni, no) = (self.inputs, self.outputs);
        let mut dw = vec![T::zero(); ni * no];
        rows_mut(&mut dw, ni, parallel, |i, row| {
            for b in 0..rows {
                let xi = x[b * ni + i];
                if xi == T::zero() {
                    continue;
                }
                for (g, &d) in row.iter_mut().zip(&dz[b * no..(b + 1) * no]) {
                    *g = *g + xi * d;
                }
            }
        });
        let mut db = vec![T::zero(); no];
        for b in 0..rows {
            for (g, &d) in db.iter_mut().zip(&dz[b * no..(b + 1) * no]) {
                *g = *g + d;
            }
        }
        let mut dx = vec![T::zero(); rows * ni];
        rows_mut(&mut dx, rows, parallel, |b, row| {
            let d = &dz[b * no..(b + 1) * no];
            for (i, g) in row.iter_mut().enumerate() {
                let w = &self.weights[i * no..(i + 1) * no];
                *g = w.iter().zip(d).fold(T::zero(), |acc, (&wv, &dv)| acc + wv * dv);
            }
        });
        (dx, dw, db)
    }
}

/// Valid, stride-1 1-D convolution. The receptive field of output position
/// `t` is the contiguous slice `x[t*C_in .. (t+K)*C_in]`, so the layer is an
/// [`Affine`] map applied to sliding windows.
pub(crate) struct Conv<'a, T> {
    pub len_in: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weights: &'a [T],
    pub bias: &'a [T],
}

impl<T: Real> Conv<'_, T> {
    fn len_out(&self) -> usize {
        self.len_in - self.kernel + 1
    }

    pub fn forward(&self, x: &[T], rows: usize, act: Activation, parallel: bool) -> Vec<T> {
        let (lo, co, ci, win) = (self.len_out(), self.out_channels, self.in_channels, self.kernel * self.in_channels);
        let mut out = vec![T::zero(); rows * lo * co];
        rows_mut(&mut out, rows, parallel, |b, y| {
            let xb = &x[b * self.len_in * ci..(b + 1) * self.len_in * ci];
            for t in 0..lo {
                let yt = &mut y[t * co..(t + 1) * co];
                yt.copy_from_slice(self.bias);
                for (j, &xv) in xb[t * ci..t * ci + win].iter().enumerate() {
                    let w = &self.weights[j * co..(j + 1) * co];
                    for (yo, &wo) in yt.iter_mut().zip(w) {
                        *yo = *yo + xv * wo;
                    }
                }
                yt.iter_mut().for_each(|v| *v = activate(act, *v));
            }
        });
        out
    }

    pub fn backward(&self, x: &[T], dz: &[T], rows: usize, parallel: bool) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (li, lo, co, ci, win) =
            (self.len_in, self.len_out(), self.out_channels, self.in_channels, self.kernel * self.in_channels);
        let mut dw = vec![T::zero(); win * co];
        rows_mut(&mut dw, win, parallel, |j, row| {
            for b in 0..rows {
                for t in 0..lo {
                    let xv = x[b * li * ci + t * ci + j];
                    if xv == T::zero() {
                        continue;
                    }
                    let d = &dz[(b * lo + t) * co..(b * lo + t + 1) * co];
                    for (g, &dv) in row.iter_mut().zip(d) {
                        *g = *g + xv * dv;
                    }
                }
            }
        });
        let mut db = vec![T::zero(); co];
        for d in dz.chunks(co) {
            for (g, &dv) in db.iter_mut().zip(d) {
                *g = *g + dv;
            }
        }
        let mut dx = vec![T::zero(); rows * li * ci];
        rows_mut(&mut dx, rows, parallel, |b, row| {
            for t in 0..lo {
                let d = &dz[(b * lo + t) * co..(b * lo + t + 1) * co];
                for (j, g) in row[t * ci..t * ci + win].iter_mut().enumerate() {
                    let w = &self.weights[j * co..(j + 1) * co];
                    *g = *g + w.iter().zip(d).fold(T::zero(), |acc, (&wv, &dv)| acc + wv * dv);
                }
            }
        });
        (dx, dw, db)
    }
}

/// Max over non-overlapping windows; returns the pooled tensor and the flat
/// input index of each selected element (first maximum wins ties).
pub(crate) fn maxpool_forward<T: Real>(x: &[T], rows: usize, input: Shape, window: usize) -> (Vec<T>, Vec<usize>) {
    let lo = input.len / window;
    let c = input.channels;
    let mut out = Vec::with_capacity(rows * lo * c);
    let mut argmax = Vec::with_capacity(rows * lo * c);
    for b in 0..rows {
        let base = b * input.size();
        for t in 0..lo {
            for ch in 0..c {
                let mut best = base + (t * window) * c + ch;
                for k in 1..window {
                    let idx = base + (t * window + k) * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward<T: Real>(d_out: &[T], argmax: &[usize], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &d) in argmax.iter().zip(d_out) {
        dx[i] = dx[i] + d;
    }
    dx
}
