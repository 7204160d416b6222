//! A small convolutional autoencoder with deterministic training and exact
//! reconstruction-error evaluation, used as the per-cluster anomaly scorer.
//!
//! Topology: two stride-2 3x3 convolutions down (3 -> c1 -> c2 channels),
//! mirrored by nearest-neighbor upsampling plus stride-1 convolutions back
//! to 3 channels. Leaky-rectifier activations (slope 0.1) everywhere except
//! the linear output. All arithmetic is double precision; training with a
//! fixed seed is bit-reproducible in serial mode.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.1;
const MAGIC: &[u8; 4] = b"GEAE";

/// One crop_size x crop_size x 3 pixel block in [0,1], stored CHW.
#[derive(Debug, Clone)]
pub struct Crop {
    pub pixels: Vec<f64>,
    pub source_image_id: String,
    pub crop_index: usize,
}

impl Crop {
    pub fn new(pixels: Vec<f64>, source_image_id: &str, crop_index: usize) -> Self {
        let pixels = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Crop {
            pixels,
            source_image_id: source_image_id.to_string(),
            crop_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    /// Input spatial size; must be divisible by 4.
    pub input_size: usize,
    pub c1: usize,
    pub c2: usize,
}

impl Topology {
    pub fn standard() -> Self {
        Topology {
            input_size: 32,
            c1: 8,
            c2: 16,
        }
    }

    /// Reduced configuration for gradient checking.
    pub fn reduced() -> Self {
        Topology {
            input_size: 4,
            c1: 2,
            c2: 3,
        }
    }

    pub fn input_len(&self) -> usize {
        3 * self.input_size * self.input_size
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    in_c: usize,
    out_c: usize,
    stride: usize,
    weights: Vec<f64>, // [out_c][in_c][3][3]
    bias: Vec<f64>,
}

impl ConvLayer {
    fn init(in_c: usize, out_c: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_c * 9) as f64;
        let fan_out = (out_c * 9) as f64;
        let a = (6.0 / (fan_in + fan_out)).sqrt();
        let weights = (0..out_c * in_c * 9)
            .map(|_| rng.random_range(-a..a))
            .collect();
        ConvLayer {
            in_c,
            out_c,
            stride,
            weights,
            bias: vec![0.0; out_c],
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn out_size(&self, in_size: usize) -> usize {
        (in_size + 2 - 3) / self.stride + 1
    }

    /// 3x3 convolution with padding 1.
    fn forward(&self, input: &[f64], in_size: usize) -> Vec<f64> {
        let out_size = self.out_size(in_size);
        let mut out = vec![0.0; self.out_c * out_size * out_size];
        for oc in 0..self.out_c {
            let w_base = oc * self.in_c * 9;
            for oy in 0..out_size {
                for ox in 0..out_size {
                    let mut acc = self.bias[oc];
                    let iy0 = (oy * self.stride) as isize - 1;
                    let ix0 = (ox * self.stride) as isize - 1;
                    for ic in 0..self.in_c {
                        let in_base = ic * in_size * in_size;
                        let w_ic = w_base + ic * 9;
                        for ky in 0..3usize {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= in_size as isize {
                                continue;
                            }
                            let row = in_base + iy as usize * in_size;
                            let w_row = w_ic + ky * 3;
                            for kx in 0..3usize {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= in_size as isize {
                                    continue;
                                }
                                acc += self.weights[w_row + kx] * input[row + ix as usize];
                            }
                        }
                    }
                    out[oc * out_size * out_size + oy * out_size + ox] = acc;
                }
            }
        }
        out
    }

    /// Gradients of the loss wrt input, weights and bias, given the gradient
    /// wrt this layer's pre-activation output.
    fn backward(
        &self,
        input: &[f64],
        in_size: usize,
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Vec<f64> {
        let out_size = self.out_size(in_size);
        let mut grad_in = vec![0.0; self.in_c * in_size * in_size];
        for oc in 0..self.out_c {
            let w_base = oc * self.in_c * 9;
            for oy in 0..out_size {
                for ox in 0..out_size {
                    let g = grad_out[oc * out_size * out_size + oy * out_size + ox];
                    if g == 0.0 {
                        continue;
                    }
                    grad_b[oc] += g;
                    let iy0 = (oy * self.stride) as isize - 1;
                    let ix0 = (ox * self.stride) as isize - 1;
                    for ic in 0..self.in_c {
                        let in_base = ic * in_size * in_size;
                        let w_ic = w_base + ic * 9;
                        for ky in 0..3usize {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= in_size as isize {
                                continue;
                            }
                            let row = in_base + iy as usize * in_size;
                            let w_row = w_ic + ky * 3;
                            for kx in 0..3usize {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= in_size as isize {
                                    continue;
                                }
                                let idx = row + ix as usize;
                                grad_w[w_row + kx] += g * input[idx];
                                grad_in[idx] += g * self.weights[w_row + kx];
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

fn leaky_forward(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

fn leaky_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

/// Nearest-neighbor 2x upsample, CHW.
fn upsample(input: &[f64], channels: usize, in_size: usize) -> Vec<f64> {
    let out_size = in_size * 2;
    let mut out = vec![0.0; channels * out_size * out_size];
    for c in 0..channels {
        for y in 0..out_size {
            for x in 0..out_size {
                out[c * out_size * out_size + y * out_size + x] =
                    input[c * in_size * in_size + (y / 2) * in_size + x / 2];
            }
        }
    }
    out
}

fn upsample_backward(grad_out: &[f64], channels: usize, in_size: usize) -> Vec<f64> {
    let out_size = in_size * 2;
    let mut grad_in = vec![0.0; channels * in_size * in_size];
    for c in 0..channels {
        for y in 0..out_size {
            for x in 0..out_size {
                grad_in[c * in_size * in_size + (y / 2) * in_size + x / 2] +=
                    grad_out[c * out_size * out_size + y * out_size + x];
            }
        }
    }
    grad_in
}

#[derive(Debug, Clone)]
pub struct AeModel {
    pub topology: Topology,
    enc1: ConvLayer,
    enc2: ConvLayer,
    dec1: ConvLayer,
    dec2: ConvLayer,
    pub seed: u64,
    /// Mean training loss of the last epoch of the most recent `train` call.
    pub final_training_loss: Option<f64>,
}

struct ForwardTrace {
    enc1_pre: Vec<f64>,
    enc1_act: Vec<f64>,
    enc2_pre: Vec<f64>,
    enc2_act: Vec<f64>,
    up1: Vec<f64>,
    dec1_pre: Vec<f64>,
    up2: Vec<f64>,
    output: Vec<f64>,
}

impl AeModel {
    /// Seeded initialization: parameters drawn uniform(-a, a) with
    /// a = sqrt(6 / (fan_in + fan_out)).
    pub fn init(topology: Topology, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AeModel {
            topology,
            enc1: ConvLayer::init(3, topology.c1, 2, &mut rng),
            enc2: ConvLayer::init(topology.c1, topology.c2, 2, &mut rng),
            dec1: ConvLayer::init(topology.c2, topology.c1, 1, &mut rng),
            dec2: ConvLayer::init(topology.c1, 3, 1, &mut rng),
            seed,
            final_training_loss: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.enc1.param_count()
            + self.enc2.param_count()
            + self.dec1.param_count()
            + self.dec2.param_count()
    }

    fn forward_trace(&self, input: &[f64]) -> ForwardTrace {
        let s = self.topology.input_size;
        let enc1_pre = self.enc1.forward(input, s);
        let mut enc1_act = enc1_pre.clone();
        leaky_forward(&mut enc1_act);
        let enc2_pre = self.enc2.forward(&enc1_act, s / 2);
        let mut enc2_act = enc2_pre.clone();
        leaky_forward(&mut enc2_act);
        let up1 = upsample(&enc2_act, self.topology.c2, s / 4);
        let dec1_pre = self.dec1.forward(&up1, s / 2);
        let mut dec1_act = dec1_pre.clone();
        leaky_forward(&mut dec1_act);
        let up2 = upsample(&dec1_act, self.topology.c1, s / 2);
        let output = self.dec2.forward(&up2, s);
        ForwardTrace {
            enc1_pre,
            enc1_act,
            enc2_pre,
            enc2_act,
            up1,
            dec1_pre,
            up2,
            output,
        }
    }

    /// Deterministic reconstruction of a crop.
    pub fn forward(&self, crop: &Crop) -> Result<Vec<f64>> {
        self.check_shape(crop)?;
        Ok(self.forward_trace(&crop.pixels).output)
    }

    fn check_shape(&self, crop: &Crop) -> Result<()> {
        if crop.pixels.len() != self.topology.input_len() {
            return Err(Error::Shape {
                expected: format!("{} values", self.topology.input_len()),
                got: format!("{} values", crop.pixels.len()),
            });
        }
        Ok(())
    }

    /// RE(x) = ||x - x'||^2: sum of squared per-element differences.
    pub fn reconstruction_error(&self, crop: &Crop) -> Result<f64> {
        let out = self.forward(crop)?;
        Ok(crop
            .pixels
            .iter()
            .zip(&out)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// Per-sample gradient of the mean-squared-error loss wrt all
    /// parameters, accumulated into `grads`; returns the sample loss.
    fn accumulate_gradient(&self, input: &[f64], grads: &mut Gradients) -> f64 {
        let s = self.topology.input_size;
        let trace = self.forward_trace(input);
        let n_out = trace.output.len() as f64;
        let loss: f64 = trace
            .output
            .iter()
            .zip(input)
            .map(|(o, x)| (o - x) * (o - x))
            .sum::<f64>()
            / n_out;

        let mut grad: Vec<f64> = trace
            .output
            .iter()
            .zip(input)
            .map(|(o, x)| 2.0 * (o - x) / n_out)
            .collect();
        grad = self
            .dec2
            .backward(&trace.up2, s, &grad, &mut grads.dec2_w, &mut grads.dec2_b);
        grad = upsample_backward(&grad, self.topology.c1, s / 2);
        leaky_backward(&trace.dec1_pre, &mut grad);
        grad = self.dec1.backward(
            &trace.up1,
            s / 2,
            &grad,
            &mut grads.dec1_w,
            &mut grads.dec1_b,
        );
        grad = upsample_backward(&grad, self.topology.c2, s / 4);
        leaky_backward(&trace.enc2_pre, &mut grad);
        grad = self.enc2.backward(
            &trace.enc1_act,
            s / 2,
            &grad,
            &mut grads.enc2_w,
            &mut grads.enc2_b,
        );
        leaky_backward(&trace.enc1_pre, &mut grad);
        let _ = self
            .enc1
            .backward(input, s, &grad, &mut grads.enc1_w, &mut grads.enc1_b);
        let _ = &trace.enc1_act;
        let _ = &trace.enc2_act;
        loss
    }

    /// Mini-batch gradient descent on MSE with the adaptive-moment update
    /// (beta 0.9/0.999, eps 1e-8). Batch order is shuffled by a seeded RNG.
    pub fn train(
        &mut self,
        crops: &[Crop],
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<()> {
        if crops.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        for c in crops {
            self.check_shape(c)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adam = Adam::new(self);
        let mut order: Vec<usize> = (0..crops.len()).collect();
        let batch_size = batch_size.max(1);
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(batch_size) {
                let mut grads = Gradients::zeros(self);
                let mut batch_loss = 0.0;
                for &i in batch {
                    batch_loss += self.accumulate_gradient(&crops[i].pixels, &mut grads);
                }
                let scale = 1.0 / batch.len() as f64;
                grads.scale(scale);
                epoch_loss += batch_loss;
                if !batch_loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                adam.step(self, &grads, learning_rate);
            }
            self.final_training_loss = Some(epoch_loss / crops.len() as f64);
        }
        Ok(())
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.enc1.weights,
            &mut self.enc1.bias,
            &mut self.enc2.weights,
            &mut self.enc2.bias,
            &mut self.dec1.weights,
            &mut self.dec1.bias,
            &mut self.dec2.weights,
            &mut self.dec2.bias,
        ]
    }

    pub fn params_flat(&self) -> Vec<f64> {
        [
            &self.enc1.weights,
            &self.enc1.bias,
            &self.enc2.weights,
            &self.enc2.bias,
            &self.dec1.weights,
            &self.dec1.bias,
            &self.dec2.weights,
            &self.dec2.bias,
        ]
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let len = p.len();
            p.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len());
    }

    /// Mean MSE loss over a crop set, no parameter updates.
    pub fn mean_loss(&self, crops: &[Crop]) -> Result<f64> {
        let mut total = 0.0;
        for c in crops {
            self.check_shape(c)?;
            let out = self.forward_trace(&c.pixels).output;
            total += out
                .iter()
                .zip(&c.pixels)
                .map(|(o, x)| (o - x) * (o - x))
                .sum::<f64>()
                / out.len() as f64;
        }
        Ok(total / crops.len() as f64)
    }

    /// Save as a flat binary: magic, version, topology, then little-endian
    /// f64 parameters in declared layer order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&1u32.to_le_bytes())?;
        for dim in [
            self.topology.input_size,
            self.topology.c1,
            self.topology.c2,
        ] {
            f.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in self.params_flat() {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AeModel> {
        let mut f = std::fs::File::open(path)?;
        let mut header = [0u8; 20];
        f.read_exact(&mut header)?;
        if &header[0..4] != MAGIC {
            return Err(Error::Config("not a model file (bad magic)".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let topology = Topology {
            input_size: dim(8),
            c1: dim(12),
            c2: dim(16),
        };
        let mut model = AeModel::init(topology, 0);
        let count = model.param_count();
        let mut buf = vec![0u8; count * 8];
        f.read_exact(&mut buf)?;
        let flat: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.set_params_flat(&flat);
        Ok(model)
    }
}

struct Gradients {
    enc1_w: Vec<f64>,
    enc1_b: Vec<f64>,
    enc2_w: Vec<f64>,
    enc2_b: Vec<f64>,
    dec1_w: Vec<f64>,
    dec1_b: Vec<f64>,
    dec2_w: Vec<f64>,
    dec2_b: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &AeModel) -> Self {
        Gradients {
            enc1_w: vec![0.0; model.enc1.weights.len()],
            enc1_b: vec![0.0; model.enc1.bias.len()],
            enc2_w: vec![0.0; model.enc2.weights.len()],
            enc2_b: vec![0.0; model.enc2.bias.len()],
            dec1_w: vec![0.0; model.dec1.weights.len()],
            dec1_b: vec![0.0; model.dec1.bias.len()],
            dec2_w: vec![0.0; model.dec2.weights.len()],
            dec2_b: vec![0.0; model.dec2.bias.len()],
        }
    }

    fn flat(&self) -> Vec<f64> {
        [
            &self.enc1_w,
            &self.enc1_b,
            &self.enc2_w,
            &self.enc2_b,
            &self.dec1_w,
            &self.dec1_b,
            &self.dec2_w,
            &self.dec2_b,
        ]
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect()
    }

    fn scale(&mut self, s: f64) {
        for v in [
            &mut self.enc1_w,
            &mut self.enc1_b,
            &mut self.enc2_w,
            &mut self.enc2_b,
            &mut self.dec1_w,
            &mut self.dec1_b,
            &mut self.dec2_w,
            &mut self.dec2_b,
        ] {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &AeModel) -> Self {
        let n = model.param_count();
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut AeModel, grads: &Gradients, lr: f64) {
        self.t += 1;
        let g = grads.flat();
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut flat = model.params_flat();
        for i in 0..flat.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            flat[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
        model.set_params_flat(&flat);
    }
}

/// Analytic gradient of the MSE loss on one input, flattened in parameter
/// order; exposed for finite-difference verification.
pub fn loss_gradient(model: &AeModel, input: &[f64]) -> (f64, Vec<f64>) {
    let mut grads = Gradients::zeros(model);
    let loss = model.accumulate_gradient(input, &mut grads);
    (loss, grads.flat())
}

/// MSE loss of the model on one input, for finite differencing.
pub fn loss_only(model: &AeModel, input: &[f64]) -> f64 {
    let out = model.forward_trace(input).output;
    out.iter()
        .zip(input)
        .map(|(o, x)| (o - x) * (o - x))
        .sum::<f64>()
        / out.len() as f64
}
