//! Dense channels-first tensors and the forward kernels of the supported
//! CNN layers. Every kernel accumulates in `f64` and stores `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Tensor<T> {
    pub fn filled(shape: Vec<usize>, value: T) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }
}

impl Tensor<f32> {
    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Tensor::filled(shape, 0.0)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Output spatial extent of a strided window sweep.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn chw(t: &Tensor, layer: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(layer, format!("expected CxHxW input, got {s:?}"))),
    }
}

/// Zero-padded 2-D cross-correlation. `weights` is `O x C x Kh x Kw`.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c, h, w) = chw(input, "conv2d")?;
    let [o, wc, kh, kw] = *weights.shape() else {
        return Err(Error::shape(
            "conv2d",
            format!("expected OxCxKhxKw weights, got {:?}", weights.shape()),
        ));
    };
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, weights expect {wc}"),
        ));
    }
    if let Some(b) = bias {
        if b.len() != o {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries, expected {o}", b.len()),
            ));
        }
    }
    let oh = conv_output_size(h, kh, stride, padding).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} does not fit {h}x{w} with padding {padding}"),
        )
    })?;
    let ow = conv_output_size(w, kw, stride, padding).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} does not fit {h}x{w} with padding {padding}"),
        )
    })?;

    let x = input.data();
    let k = weights.data();
    let mut out = vec![0.0f32; o * oh * ow];
    for oc in 0..o {
        let b = bias.map_or(0.0, |b| b.data()[oc] as f64);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b;
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = (ic * h + iy as usize) * w;
                        let krow = ((oc * c + ic) * kh + ky) * kw;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += k[krow + kx] as f64 * x[row + ix as usize] as f64;
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc as f32;
            }
        }
    }
    Tensor::new(vec![o, oh, ow], out)
}

/// Fully connected layer: `out_i = sum_j W_ij * in_j + b_i`, `W` is `N x M`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let [n, m] = *weights.shape() else {
        return Err(Error::shape(
            "dense",
            format!("expected NxM weights, got {:?}", weights.shape()),
        ));
    };
    if input.len() != m || input.shape().len() != 1 {
        return Err(Error::shape(
            "dense",
            format!("input shape {:?} does not match {m} weight columns", input.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != n {
            return Err(Error::shape(
                "dense",
                format!("bias has {} entries, expected {n}", b.len()),
            ));
        }
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(m)
        .enumerate()
        .map(|(i, row)| {
            let b = bias.map_or(0.0, |b| b.data()[i] as f64);
            row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w as f64 * v as f64) as f32
        })
        .collect();
    Tensor::new(vec![n], out)
}

/// Average pooling with zero padding. The window must tile the input exactly.
pub fn avgpool_forward(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = chw(input, "avgpool")?;
    let (oh, ow) = pool_output_shape(h, w, window, stride)?;
    let x = input.data();
    let inv = 1.0 / (window * window) as f64;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for ky in 0..window {
                    let row = (ch * h + oy * stride + ky) * w + ox * stride;
                    acc += x[row..row + window].iter().map(|&v| v as f64).sum::<f64>();
                }
                out.push((acc * inv) as f32);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub(crate) fn pool_output_shape(h: usize, w: usize, window: usize, stride: usize) -> Result<(usize, usize)> {
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(Error::shape(
            "avgpool",
            format!("window {window} stride {stride} invalid for {h}x{w}"),
        ));
    }
    if !(h - window).is_multiple_of(stride) || !(w - window).is_multiple_of(stride) {
        return Err(Error::shape(
            "avgpool",
            format!("window {window} with stride {stride} does not tile {h}x{w}"),
        ));
    }
    Ok(((h - window) / stride + 1, (w - window) / stride + 1))
}

/// Inference-mode batch normalisation along the leading (channel) axis.
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    variance: &Tensor,
    epsilon: f32,
) -> Result<Tensor> {
    let c = input.shape()[0];
    for (name, p) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("variance", variance)] {
        if p.len() != c {
            return Err(Error::shape(
                "batchnorm",
                format!("{name} has {} entries, input has {c} channels", p.len()),
            ));
        }
    }
    if let Some((i, v)) = variance
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| **v < 0.0 || v.is_nan())
    {
        return Err(Error::InvalidParameter(format!(
            "batchnorm variance[{i}] = {v} is negative"
        )));
    }
    let per_channel = input.len() / c;
    let mut out = input.clone();
    for (ch, chunk) in out.data_mut().chunks_exact_mut(per_channel).enumerate() {
        let scale = gamma.data()[ch] as f64 / (variance.data()[ch] as f64 + epsilon as f64).sqrt();
        let mu = mean.data()[ch] as f64;
        let shift = beta.data()[ch] as f64;
        for v in chunk {
            *v = (scale * (*v as f64 - mu) + shift) as f32;
        }
    }
    Ok(out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|&v| v.max(0.0))
}
