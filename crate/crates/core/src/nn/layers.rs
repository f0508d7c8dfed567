use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Training uses batch statistics in batch norm; inference uses running ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Inference,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    fn new(name: String, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name, value, grad }
    }

    fn uniform(name: String, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(name, Tensor::new(shape.to_vec(), data).expect("shape product"))
    }

    fn zeros(name: String, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }
}

/// Fan-in scaled uniform bound for ReLU networks.
fn init_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn expect_rank(x: &Tensor, rank: usize, what: &str) -> Result<()> {
    if x.shape().len() != rank {
        return Err(Error::Shape(format!("{what} expects rank {rank}, got {:?}", x.shape())));
    }
    Ok(())
}

// ---------------------------------------------------------------- conv1d

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f64>,
    batch: usize,
    in_len: usize,
    out_len: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = init_bound(in_channels * kernel);
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[out_channels, in_channels, kernel], bound, rng),
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), &[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_len(&self, in_len: usize) -> Result<usize> {
        let span = in_len + 2 * self.padding;
        if span < self.kernel {
            return Err(Error::Shape(format!("conv input length {in_len} shorter than kernel {}", self.kernel)));
        }
        Ok((span - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        expect_rank(x, 3, "conv1d")?;
        let (batch, cin, lin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if cin != self.in_channels {
            return Err(Error::Shape(format!("conv1d expects {} channels, got {cin}", self.in_channels)));
        }
        let lout = self.out_len(lin)?;
        let ck = cin * self.kernel;
        let mut cols = vec![0.0; batch * ck * lout];
        let xd = x.data();
        for n in 0..batch {
            let cn = &mut cols[n * ck * lout..(n + 1) * ck * lout];
            for ci in 0..cin {
                let xrow = &xd[(n * cin + ci) * lin..(n * cin + ci + 1) * lin];
                for kk in 0..self.kernel {
                    let dst = &mut cn[(ci * self.kernel + kk) * lout..(ci * self.kernel + kk + 1) * lout];
                    for (l, d) in dst.iter_mut().enumerate() {
                        let pos = (l * self.stride + kk) as isize - self.padding as isize;
                        if pos >= 0 && (pos as usize) < lin {
                            *d = xrow[pos as usize];
                        }
                    }
                }
            }
        }
        let cout = self.out_channels;
        let mut out = vec![0.0; batch * cout * lout];
        let w = self.weight.value.data();
        for n in 0..batch {
            gemm(
                cout,
                ck,
                lout,
                w,
                (ck, 1),
                &cols[n * ck * lout..],
                (lout, 1),
                0.0,
                &mut out[n * cout * lout..],
                (lout, 1),
            );
        }
        if let Some(b) = &self.bias {
            for n in 0..batch {
                for co in 0..cout {
                    let bv = b.value.data()[co];
                    out[(n * cout + co) * lout..(n * cout + co + 1) * lout].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        Ok((
            Tensor::new(vec![batch, cout, lout], out)?,
            ConvCache { cols, batch, in_len: lin, out_len: lout },
        ))
    }

    pub fn backward(&mut self, grad: &Tensor, cache: &ConvCache) -> Result<Tensor> {
        let (batch, lin, lout) = (cache.batch, cache.in_len, cache.out_len);
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        if grad.shape() != [batch, cout, lout] {
            return Err(Error::Shape(format!("conv1d grad shape {:?}", grad.shape())));
        }
        let ck = cin * k;
        let g = grad.data();
        for n in 0..batch {
            gemm(
                cout,
                lout,
                ck,
                &g[n * cout * lout..],
                (lout, 1),
                &cache.cols[n * ck * lout..],
                (1, lout),
                1.0,
                self.weight.grad.data_mut(),
                (ck, 1),
            );
        }
        if let Some(b) = &mut self.bias {
            let bg = b.grad.data_mut();
            for n in 0..batch {
                for (co, bgc) in bg.iter_mut().enumerate() {
                    *bgc += g[(n * cout + co) * lout..(n * cout + co + 1) * lout].iter().sum::<f64>();
                }
            }
        }
        let mut dx = vec![0.0; batch * cin * lin];
        let mut dcols = vec![0.0; ck * lout];
        let w = self.weight.value.data();
        for n in 0..batch {
            gemm(ck, cout, lout, w, (1, ck), &g[n * cout * lout..], (lout, 1), 0.0, &mut dcols, (lout, 1));
            for ci in 0..cin {
                let dxrow = &mut dx[(n * cin + ci) * lin..(n * cin + ci + 1) * lin];
                for kk in 0..k {
                    let src = &dcols[(ci * k + kk) * lout..(ci * k + kk + 1) * lout];
                    for (l, s) in src.iter().enumerate() {
                        let pos = (l * self.stride + kk) as isize - self.padding as isize;
                        if pos >= 0 && (pos as usize) < lin {
                            dxrow[pos as usize] += s;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![batch, cin, lin], dx)
    }

    pub fn param_count(&self) -> usize {
        self.weight.value.len() + self.bias.as_ref().map_or(0, |b| b.value.len())
    }
}

// ---------------------------------------------------------------- batch norm

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    name: String,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    batch_stats: bool,
}

/// Per-channel `(mean, biased variance)` of a training batch.
pub type BatchStats = (Vec<f64>, Vec<f64>);

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize) -> Self {
        let mut gamma = Param::zeros(format!("{name}.gamma"), &[channels]);
        gamma.value.data_mut().iter_mut().for_each(|v| *v = 1.0);
        Self {
            gamma,
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            name: name.to_string(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        let (n, c, l) = match s.len() {
            2 => (s[0], s[1], 1),
            3 => (s[0], s[1], s[2]),
            _ => return Err(Error::Shape(format!("batch norm expects rank 2 or 3, got {s:?}"))),
        };
        if c != self.gamma.value.len() {
            return Err(Error::Shape(format!("batch norm expects {} channels, got {c}", self.gamma.value.len())));
        }
        Ok((n, c, l))
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache, Option<BatchStats>)> {
        let (n, c, l) = self.dims(x)?;
        let xd = x.data();
        let m = (n * l) as f64;
        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += xd[(b * c + ch) * l..(b * c + ch + 1) * l].iter().sum::<f64>();
                    }
                    mean[ch] = s / m;
                    let mut v = 0.0;
                    for b in 0..n {
                        v += xd[(b * c + ch) * l..(b * c + ch + 1) * l]
                            .iter()
                            .map(|x| (x - mean[ch]) * (x - mean[ch]))
                            .sum::<f64>();
                    }
                    var[ch] = v / m;
                }
                (mean.clone(), var.clone(), Some((mean, var)))
            }
            Mode::Inference => (self.running_mean.data().to_vec(), self.running_var.data().to_vec(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let (g, bt) = (self.gamma.value.data(), self.beta.value.data());
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        Ok((
            Tensor::new(x.shape().to_vec(), out)?,
            BnCache { xhat, inv_std, shape: x.shape().to_vec(), batch_stats: mode == Mode::Train },
            stats,
        ))
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, v) in self.running_mean.data_mut().iter_mut().zip(&stats.0) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&stats.1) {
            *r = (1.0 - m) * *r + m * v;
        }
    }

    pub fn backward(&mut self, grad: &Tensor, cache: &BnCache) -> Result<Tensor> {
        if grad.shape() != cache.shape.as_slice() {
            return Err(Error::Shape(format!("batch norm grad shape {:?}", grad.shape())));
        }
        let (n, c, l) = self.dims(grad)?;
        let gd = grad.data();
        let m = (n * l) as f64;
        let gamma = self.gamma.value.data().to_vec();
        let mut dx = vec![0.0; gd.len()];
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for b in 0..n {
                for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                    sum_dy += gd[i];
                    sum_dy_xhat += gd[i] * cache.xhat[i];
                }
            }
            self.beta.grad.data_mut()[ch] += sum_dy;
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat;
            let k = gamma[ch] * cache.inv_std[ch];
            for b in 0..n {
                for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                    dx[i] = if cache.batch_stats {
                        k * (gd[i] - sum_dy / m - cache.xhat[i] * sum_dy_xhat / m)
                    } else {
                        k * gd[i]
                    };
                }
            }
        }
        Tensor::new(grad.shape().to_vec(), dx)
    }
}

// ---------------------------------------------------------------- relu

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient through ReLU given its output (positive outputs pass gradient).
pub fn relu_backward(grad: &Tensor, out: &Tensor) -> Result<Tensor> {
    if grad.shape() != out.shape() {
        return Err(Error::Shape(format!("relu grad shape {:?}", grad.shape())));
    }
    let data = grad.data().iter().zip(out.data()).map(|(g, o)| if *o > 0.0 { *g } else { 0.0 }).collect();
    Tensor::new(grad.shape().to_vec(), data)
}

// ---------------------------------------------------------------- max pool

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxPool1d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl MaxPool1d {
    pub fn out_len(&self, in_len: usize) -> Result<usize> {
        let span = in_len + 2 * self.padding;
        if span < self.kernel {
            return Err(Error::Shape(format!("pool input length {in_len} shorter than kernel")));
        }
        Ok((span - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, PoolCache)> {
        expect_rank(x, 3, "max pool")?;
        let (n, c, lin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let lout = self.out_len(lin)?;
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * lout);
        let mut argmax = Vec::with_capacity(n * c * lout);
        for row in 0..n * c {
            let base = row * lin;
            for o in 0..lout {
                let start = (o * self.stride) as isize - self.padding as isize;
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + start.max(0) as usize;
                for kk in 0..self.kernel {
                    let p = start + kk as isize;
                    if p >= 0 && (p as usize) < lin {
                        let v = xd[base + p as usize];
                        if v > best {
                            best = v;
                            best_i = base + p as usize;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
        Ok((Tensor::new(vec![n, c, lout], out)?, PoolCache { argmax, in_shape: x.shape().to_vec() }))
    }

    pub fn backward(&self, grad: &Tensor, cache: &PoolCache) -> Result<Tensor> {
        if grad.len() != cache.argmax.len() {
            return Err(Error::Shape(format!("max pool grad shape {:?}", grad.shape())));
        }
        let mut dx = Tensor::zeros(&cache.in_shape);
        let d = dx.data_mut();
        for (g, &i) in grad.data().iter().zip(&cache.argmax) {
            d[i] += g;
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------- global average pool

pub fn gap_forward(x: &Tensor) -> Result<Tensor> {
    expect_rank(x, 3, "global average pool")?;
    let (n, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let data = x.data().chunks(l).map(|r| r.iter().sum::<f64>() / l as f64).collect();
    Tensor::new(vec![n, c], data)
}

pub fn gap_backward(grad: &Tensor, in_shape: &[usize]) -> Result<Tensor> {
    let l = in_shape[2];
    if grad.shape() != [in_shape[0], in_shape[1]] {
        return Err(Error::Shape(format!("global pool grad shape {:?}", grad.shape())));
    }
    let inv = 1.0 / l as f64;
    let data = grad.data().iter().flat_map(|g| std::iter::repeat(g * inv).take(l)).collect();
    Tensor::new(in_shape.to_vec(), data)
}

// ---------------------------------------------------------------- dense

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[outputs, inputs], init_bound(inputs), rng),
            bias: Param::zeros(format!("{name}.bias"), &[outputs]),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        expect_rank(x, 2, "dense")?;
        let n = x.shape()[0];
        if x.shape()[1] != self.inputs {
            return Err(Error::Shape(format!("dense expects {} inputs, got {}", self.inputs, x.shape()[1])));
        }
        let mut out = Vec::with_capacity(n * self.outputs);
        for _ in 0..n {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(
            n,
            self.inputs,
            self.outputs,
            x.data(),
            (self.inputs, 1),
            self.weight.value.data(),
            (1, self.inputs),
            1.0,
            &mut out,
            (self.outputs, 1),
        );
        Tensor::new(vec![n, self.outputs], out)
    }

    pub fn backward(&mut self, grad: &Tensor, input: &Tensor) -> Result<Tensor> {
        let n = input.shape()[0];
        if grad.shape() != [n, self.outputs] {
            return Err(Error::Shape(format!("dense grad shape {:?}", grad.shape())));
        }
        let (i, o) = (self.inputs, self.outputs);
        gemm(o, n, i, grad.data(), (1, o), input.data(), (i, 1), 1.0, self.weight.grad.data_mut(), (i, 1));
        let bg = self.bias.grad.data_mut();
        for r in grad.data().chunks(o) {
            bg.iter_mut().zip(r).for_each(|(b, g)| *b += g);
        }
        let mut dx = vec![0.0; n * i];
        gemm(n, o, i, grad.data(), (o, 1), self.weight.value.data(), (i, 1), 0.0, &mut dx, (i, 1));
        Tensor::new(vec![n, i], dx)
    }
}

// ---------------------------------------------------------------- softmax

pub fn softmax_forward(x: &Tensor) -> Result<Tensor> {
    expect_rank(x, 2, "softmax")?;
    let c = x.shape()[1];
    let mut out = Vec::with_capacity(x.len());
    for r in x.data().chunks(c) {
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_backward(grad: &Tensor, out: &Tensor) -> Result<Tensor> {
    if grad.shape() != out.shape() {
        return Err(Error::Shape(format!("softmax grad shape {:?}", grad.shape())));
    }
    let c = out.shape()[1];
    let mut dx = Vec::with_capacity(out.len());
    for (g, y) in grad.data().chunks(c).zip(out.data().chunks(c)) {
        let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
        dx.extend(g.iter().zip(y).map(|(gi, yi)| yi * (gi - dot)));
    }
    Tensor::new(out.shape().to_vec(), dx)
}
