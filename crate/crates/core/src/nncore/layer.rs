//! Layer primitives: valid (no-padding) 1D convolution, max pooling, ReLU,
//! flatten, fully-connected, and their analytic gradients.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool1d {
        kernel: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Fc {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, stride: usize) -> LayerSpec {
        LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel: 5,
            stride,
        }
    }

    pub fn pool() -> LayerSpec {
        LayerSpec::MaxPool1d { kernel: 5, stride: 3 }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv1d { .. } | LayerSpec::Fc { .. })
    }
}

pub fn out_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len - kernel) / stride + 1
}

/// out[c,i] = b[c] + sum_{d,k} w[c,d,k] * x[d, i*stride + k]
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: &[f32], stride: usize) -> Result<Tensor> {
    let (in_ch, len) = (x.shape()[0], x.shape()[1]);
    let (out_ch, w_in, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if w_in != in_ch || b.len() != out_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv: x {:?} w {:?} b {}",
            x.shape(),
            w.shape(),
            b.len()
        )));
    }
    if len < kernel {
        return Err(Error::ShapeMismatch(format!(
            "conv: input length {len} < kernel {kernel}"
        )));
    }
    let olen = out_len(len, kernel, stride);
    let mut out = Tensor::zeros(&[out_ch, olen]);
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for c in 0..out_ch {
        let orow = &mut od[c * olen..(c + 1) * olen];
        let wbase = &wd[c * in_ch * kernel..(c + 1) * in_ch * kernel];
        for (i, o) in orow.iter_mut().enumerate() {
            let base = i * stride;
            let mut acc = b[c];
            for d in 0..in_ch {
                let window = &xd[d * len + base..d * len + base + kernel];
                let wrow = &wbase[d * kernel..(d + 1) * kernel];
                for (wk, xk) in wrow.iter().zip(window) {
                    acc += wk * xk;
                }
            }
            *o = acc;
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Vec<f32>,
}

pub fn conv1d_backward(x: &Tensor, w: &Tensor, stride: usize, dy: &Tensor) -> ConvGrads {
    let (in_ch, len) = (x.shape()[0], x.shape()[1]);
    let (out_ch, _, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let olen = dy.shape()[1];
    let mut dx = Tensor::zeros(&[in_ch, len]);
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![0.0f32; out_ch];
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();
    for c in 0..out_ch {
        let dyrow = &dyd[c * olen..(c + 1) * olen];
        db[c] += dyrow.iter().sum::<f32>();
        for d in 0..in_ch {
            let xrow = &xd[d * len..(d + 1) * len];
            let wrow = &wd[(c * in_ch + d) * kernel..(c * in_ch + d + 1) * kernel];
            let dwrow = &mut dw.data_mut()[(c * in_ch + d) * kernel..(c * in_ch + d + 1) * kernel];
            for (i, &g) in dyrow.iter().enumerate() {
                let base = i * stride;
                for k in 0..kernel {
                    dwrow[k] += g * xrow[base + k];
                }
            }
            let dxrow = &mut dx.data_mut()[d * len..(d + 1) * len];
            for (i, &g) in dyrow.iter().enumerate() {
                let base = i * stride;
                for k in 0..kernel {
                    dxrow[base + k] += g * wrow[k];
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Valid-window max pooling.
pub fn maxpool1d_forward(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (ch, len) = (x.shape()[0], x.shape()[1]);
    if len < kernel {
        return Err(Error::ShapeMismatch(format!(
            "pool: input length {len} < kernel {kernel}"
        )));
    }
    let olen = out_len(len, kernel, stride);
    let mut out = Tensor::zeros(&[ch, olen]);
    for c in 0..ch {
        let xrow = &x.data()[c * len..(c + 1) * len];
        for i in 0..olen {
            let base = i * stride;
            let mut m = xrow[base];
            for &v in &xrow[base + 1..base + kernel] {
                if v > m {
                    m = v;
                }
            }
            out.data_mut()[c * olen + i] = m;
        }
    }
    Ok(out)
}

/// Routes each output gradient to the first maximal element of its window.
pub fn maxpool1d_backward(x: &Tensor, kernel: usize, stride: usize, dy: &Tensor) -> Tensor {
    let (ch, len) = (x.shape()[0], x.shape()[1]);
    let olen = dy.shape()[1];
    let mut dx = Tensor::zeros(&[ch, len]);
    for c in 0..ch {
        let xrow = &x.data()[c * len..(c + 1) * len];
        for i in 0..olen {
            let base = i * stride;
            let mut arg = base;
            for j in base + 1..base + kernel {
                if xrow[j] > xrow[arg] {
                    arg = j;
                }
            }
            dx.data_mut()[c * len + arg] += dy.data()[c * olen + i];
        }
    }
    dx
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// y = W x + b with W of shape [out, in].
pub fn fc_forward(x: &Tensor, w: &Tensor, b: &[f32]) -> Result<Tensor> {
    let inputs = x.len();
    let (out, w_in) = (w.shape()[0], w.shape()[1]);
    if w_in != inputs || b.len() != out {
        return Err(Error::ShapeMismatch(format!(
            "fc: x len {inputs} vs w {:?} b {}",
            w.shape(),
            b.len()
        )));
    }
    let mut y = Tensor::zeros(&[out]);
    for r in 0..out {
        let wrow = w.row(r);
        let mut acc = b[r];
        for (wv, xv) in wrow.iter().zip(x.data()) {
            acc += wv * xv;
        }
        y.data_mut()[r] = acc;
    }
    Ok(y)
}

pub struct FcGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Vec<f32>,
}

pub fn fc_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> FcGrads {
    let inputs = x.len();
    let out = w.shape()[0];
    let mut dx = Tensor::zeros(&[inputs]);
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![0.0f32; out];
    for r in 0..out {
        let g = dy.data()[r];
        db[r] = g;
        let wrow = w.row(r);
        let dwrow = &mut dw.data_mut()[r * inputs..(r + 1) * inputs];
        for i in 0..inputs {
            dwrow[i] = g * x.data()[i];
            dx.data_mut()[i] += g * wrow[i];
        }
    }
    FcGrads { dx, dw, db }
}

pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Mean-reduced negative log-likelihood for one sample; returns
/// (loss, dlogits).
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> (f32, Vec<f32>) {
    let p = softmax(logits);
    let loss = -(p[label].max(1e-12)).ln();
    let mut d = p;
    d[label] -= 1.0;
    (loss, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream};
    use rand::Rng;

    fn random_tensor(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Naive triple-loop convolution; the oracle for the slice-based path.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f32], stride: usize) -> Tensor {
        let (in_ch, len) = (x.shape()[0], x.shape()[1]);
        let (out_ch, _, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let olen = out_len(len, kernel, stride);
        let mut out = Tensor::zeros(&[out_ch, olen]);
        for c in 0..out_ch {
            for i in 0..olen {
                let mut acc = b[c];
                for d in 0..in_ch {
                    for k in 0..kernel {
                        acc += w.data()[(c * in_ch + d) * kernel + k]
                            * x.data()[d * len + i * stride + k];
                    }
                }
                out.data_mut()[c * olen + i] = acc;
            }
        }
        out
    }

    #[test]
    fn conv_identity_tap_trims_two_pixels_each_side() {
        let x = Tensor::from_vec(&[1, 10], (0..10).map(|v| v as f32).collect());
        let w = Tensor::from_vec(&[1, 1, 5], vec![0., 0., 1., 0., 0.]);
        let y = conv1d_forward(&x, &w, &[0.0], 1).unwrap();
        assert_eq!(y.data(), &x.data()[2..8]);
    }

    #[test]
    fn conv_zero_input_broadcasts_bias() {
        let x = Tensor::zeros(&[2, 12]);
        let mut rng = stream(1, domain::NOISE, 0);
        let w = random_tensor(&[3, 2, 5], &mut rng);
        let y = conv1d_forward(&x, &w, &[1.5, -2.0, 0.25], 1).unwrap();
        for c in 0..3 {
            assert!(y.row(c).iter().all(|&v| v == [1.5, -2.0, 0.25][c]));
        }
    }

    #[test]
    fn conv_matches_naive_oracle_exactly() {
        let mut rng = stream(2, domain::NOISE, 0);
        for case in 0..20 {
            let in_ch = 1 + case % 3;
            let out_ch = 1 + case % 4;
            let stride = 1 + case % 2;
            let len = 8 + case;
            let x = random_tensor(&[in_ch, len], &mut rng);
            let w = random_tensor(&[out_ch, in_ch, 5], &mut rng);
            let b: Vec<f32> = (0..out_ch).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = conv1d_forward(&x, &w, &b, stride).unwrap();
            let want = conv_oracle(&x, &w, &b, stride);
            assert_eq!(got.data(), want.data());
        }
    }

    #[test]
    fn pool_constant_input_is_constant() {
        let x = Tensor::from_vec(&[1, 20], vec![3.25; 20]);
        let y = maxpool1d_forward(&x, 5, 3).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn pool_output_length_formula() {
        // floor((124 - 5) / 3) + 1 = 40
        let x = Tensor::zeros(&[1, 124]);
        let y = maxpool1d_forward(&x, 5, 3).unwrap();
        assert_eq!(y.shape(), &[1, 40]);
        assert!(maxpool1d_forward(&Tensor::zeros(&[1, 4]), 5, 3).is_err());
    }

    #[test]
    fn pool_matches_naive_window_max() {
        let mut rng = stream(3, domain::NOISE, 0);
        let x = random_tensor(&[2, 37], &mut rng);
        let y = maxpool1d_forward(&x, 5, 3).unwrap();
        for c in 0..2 {
            for i in 0..y.shape()[1] {
                let window = &x.row(c)[i * 3..i * 3 + 5];
                let m = window.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                assert_eq!(y.row(c)[i], m);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[0.3, -2.0, 5.0, 0.0, 1.0, -1.0, 2.0]);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
