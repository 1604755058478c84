//! Network assembly: three conv blocks feeding a regression head (voltage and
//! both concentration images) and a failure head (sigmoid probability).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::electrochem::GRID_LEN;
use crate::error::{Error, Result};
use crate::nn::{
    dense_backward_raw, dense_raw, maxpool3_backward_raw, maxpool3_raw, pooled, relu_backward_in_place, relu_in_place,
    sigmoid_scalar, ConvGeometry, Padding, Tensor,
};

/// Side of the concentration images.
pub const IMAGE_SIDE: usize = 20;
/// Regression outputs: voltage plus both 20×20 grids.
pub const REGRESSION_OUTPUTS: usize = 1 + 2 * GRID_LEN;
/// Scalar features appended to the flattened convolution output.
pub const EXTRA_FEATURES: usize = 3;
/// Spatial side after the two pooling stages.
pub const FINAL_SIDE: usize = pooled(pooled(IMAGE_SIDE));
/// Flattened convolution output with the default 64 final channels.
pub const DEFAULT_FLAT_LEN: usize = 64 * FINAL_SIDE * FINAL_SIDE;

const _: () = assert!(FINAL_SIDE == 2 && DEFAULT_FLAT_LEN == 256 && REGRESSION_OUTPUTS == 801);

const INPUT_LEN: usize = 2 * GRID_LEN;

pub const TENSOR_NAMES: [&str; 18] = [
    "conv1.kernel",
    "conv1.bias",
    "conv2.kernel",
    "conv2.bias",
    "conv3.kernel",
    "conv3.bias",
    "reg1.weight",
    "reg1.bias",
    "reg2.weight",
    "reg2.bias",
    "reg3.weight",
    "reg3.bias",
    "fail1.weight",
    "fail1.bias",
    "fail2.weight",
    "fail2.bias",
    "fail3.weight",
    "fail3.bias",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub regression_hidden: [usize; 2],
    pub failure_hidden: [usize; 2],
    /// Predict increments over the input voltage and images instead of absolute values.
    pub residual: bool,
    /// Append the predicted (normalized) next voltage to the failure head's input.
    #[serde(default)]
    pub voltage_to_failure: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            c1: 16,
            c2: 32,
            c3: 64,
            regression_hidden: [256, 256],
            failure_hidden: [64, 16],
            residual: false,
            voltage_to_failure: true,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.c1,
            self.c2,
            self.c3,
            self.regression_hidden[0],
            self.regression_hidden[1],
            self.failure_hidden[0],
            self.failure_hidden[1],
        ];
        if widths.contains(&0) {
            return Err(Error::Model(format!("all layer widths must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn convs(&self) -> [ConvGeometry; 3] {
        let s1 = IMAGE_SIDE;
        let s2 = pooled(s1);
        let s3 = pooled(s2);
        [
            ConvGeometry::new(2, s1, s1, self.c1, 7, Padding::Same),
            ConvGeometry::new(self.c1, s2, s2, self.c2, 5, Padding::Same),
            ConvGeometry::new(self.c2, s3, s3, self.c3, 3, Padding::Same),
        ]
        .map(|g| g.expect("same-padded geometry is always valid"))
    }

    pub fn flat_len(&self) -> usize {
        self.c3 * FINAL_SIDE * FINAL_SIDE
    }

    pub fn feature_len(&self) -> usize {
        self.flat_len() + EXTRA_FEATURES
    }

    /// Width of the failure head's input.
    pub fn failure_input_len(&self) -> usize {
        self.feature_len() + usize::from(self.voltage_to_failure)
    }

    /// `(name, shape, fan_in, fan_out)` for every tensor in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>, usize, usize)> {
        let mut out = Vec::with_capacity(TENSOR_NAMES.len());
        let mut names = TENSOR_NAMES.iter();
        for (c_in, c_out, k) in [(2, self.c1, 7), (self.c1, self.c2, 5), (self.c2, self.c3, 3)] {
            let (fi, fo) = (c_in * k * k, c_out * k * k);
            out.push((*names.next().unwrap(), vec![c_out, c_in, k, k], fi, fo));
            out.push((*names.next().unwrap(), vec![c_out], fi, fo));
        }
        let f = self.feature_len();
        let [r1, r2] = self.regression_hidden;
        let [f1, f2] = self.failure_hidden;
        let fi = self.failure_input_len();
        for (n, m) in [(f, r1), (r1, r2), (r2, REGRESSION_OUTPUTS), (fi, f1), (f1, f2), (f2, 1)] {
            out.push((*names.next().unwrap(), vec![m, n], n, m));
            out.push((*names.next().unwrap(), vec![m], n, m));
        }
        out
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.layout().into_iter().map(|(_, s, _, _)| s).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Input and output scaling frozen into the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub v_cut: f64,
    pub v_full: f64,
    /// Currents are divided by this (C-rate).
    pub current_scale: f64,
    /// Normalized currents are clamped to `[0, current_max]`.
    pub current_max: f64,
}

impl Normalization {
    pub fn new(v_cut: f64, v_full: f64) -> Self {
        Self {
            v_cut,
            v_full,
            current_scale: 6.0,
            current_max: 1.5,
        }
    }

    pub fn span(&self) -> f64 {
        self.v_full - self.v_cut
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.span() > 0.0 && self.current_scale > 0.0 && self.current_max > 0.0) {
            return Err(Error::Model(format!("invalid normalization {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateWeights {
    pub architecture: Architecture,
    pub normalization: Normalization,
    pub init_seed: u64,
    pub tensors: Vec<Tensor>,
}

/// Network input for one 100-s window, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateInput {
    pub c_n: Vec<f64>,
    pub c_p: Vec<f64>,
    pub voltage: f64,
    pub i_t: f64,
    pub i_t100: f64,
}

impl SurrogateInput {
    pub fn from_sample(s: &crate::cycles::Sample) -> Self {
        Self {
            c_n: s.c_n.iter().map(|&v| v as f64).collect(),
            c_p: s.c_p.iter().map(|&v| v as f64).collect(),
            voltage: s.v_t as f64,
            i_t: s.i_t as f64,
            i_t100: s.i_t100 as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub voltage: f64,
    pub c_n: Vec<f64>,
    pub c_p: Vec<f64>,
    pub p_fail: f64,
    /// Input values that had to be clamped into range.
    pub clamped: usize,
}

/// Normalized network input.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    pub(crate) image: Vec<f64>,
    pub(crate) features: [f64; EXTRA_FEATURES],
    pub(crate) voltage: f64,
    pub(crate) clamped: usize,
}

impl SurrogateWeights {
    /// Fan-in/fan-out scaled uniform initialisation, zero biases.
    pub fn init(architecture: Architecture, normalization: Normalization, seed: u64) -> Result<Self> {
        architecture.validate()?;
        normalization.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors: Vec<Tensor> = architecture
            .layout()
            .into_iter()
            .map(|(name, shape, fan_in, fan_out)| {
                let n = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
                };
                Tensor::new(&shape, data).expect("layout shapes are consistent")
            })
            .collect();
        if architecture.voltage_to_failure {
            // the voltage input is not unit scale; shrink its column so the head starts unsaturated
            let scale = normalization.span() / FAILURE_VOLTAGE_UNIT;
            let width = architecture.failure_input_len();
            for row in tensors[12].data_mut().chunks_mut(width) {
                row[width - 1] /= scale;
            }
        }
        Ok(Self {
            architecture,
            normalization,
            init_seed: seed,
            tensors,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.normalization.validate()?;
        let shapes = self.architecture.shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::Model(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for ((shape, t), name) in shapes.iter().zip(&self.tensors).zip(TENSOR_NAMES) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Model(format!(
                    "tensor `{name}` has shape {:?}, architecture needs {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Rounds every weight to the nearest `f32`, the precision of checkpoints.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub(crate) fn encode(&self, input: &SurrogateInput) -> Result<Encoded> {
        if input.c_n.len() != GRID_LEN || input.c_p.len() != GRID_LEN {
            return Err(Error::Model(format!(
                "concentration grids must have {GRID_LEN} values, got {} and {}",
                input.c_n.len(),
                input.c_p.len()
            )));
        }
        let mut clamped = 0;
        let mut image = Vec::with_capacity(INPUT_LEN);
        for &v in input.c_n.iter().chain(&input.c_p) {
            let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            if c != v {
                clamped += 1;
            }
            image.push(c);
        }
        let n = &self.normalization;
        let mut current = |i: f64| {
            let raw = i / n.current_scale;
            let c = if raw.is_nan() {
                0.0
            } else {
                raw.clamp(0.0, n.current_max)
            };
            if c != raw {
                clamped += 1;
            }
            c
        };
        let features = [
            current(input.i_t),
            current(input.i_t100),
            (input.voltage - n.v_cut) / n.span(),
        ];
        Ok(Encoded {
            image,
            features,
            voltage: input.voltage,
            clamped,
        })
    }

    pub fn predict(&self, input: &SurrogateInput) -> Result<Prediction> {
        self.validate()?;
        super::infer::predict_one(self, None, input)
    }

    pub fn predict_batch(&self, inputs: &[SurrogateInput]) -> Result<Vec<Prediction>> {
        self.validate()?;
        inputs
            .iter()
            .map(|i| super::infer::predict_one(self, None, i))
            .collect()
    }
}

/// Every intermediate activation of a batched forward pass, kept for backward.
pub(crate) struct Trace {
    n: usize,
    cols: [Vec<f64>; 3],
    act: [Vec<f64>; 3],
    argmax: [Vec<usize>; 2],
    features: Vec<f64>,
    fail_input: Vec<f64>,
    reg: [Vec<f64>; 3],
    fail: [Vec<f64>; 2],
    p_fail: Vec<f64>,
}

fn dims(w: &SurrogateWeights) -> ([ConvGeometry; 3], usize, [usize; 3], [usize; 3]) {
    let a = &w.architecture;
    (
        a.convs(),
        a.feature_len(),
        [a.regression_hidden[0], a.regression_hidden[1], REGRESSION_OUTPUTS],
        [a.failure_hidden[0], a.failure_hidden[1], 1],
    )
}

impl Trace {
    pub(crate) fn forward(w: &SurrogateWeights, inputs: &[Encoded]) -> Self {
        let n = inputs.len();
        let t = &w.tensors;
        let (g, f_len, reg_w, fail_w) = dims(w);
        let mut cols: [Vec<f64>; 3] = std::array::from_fn(|l| vec![0.0; n * g[l].cols_len()]);
        let mut act: [Vec<f64>; 3] = std::array::from_fn(|l| vec![0.0; n * g[l].out_len()]);
        let pool_len = [g[1].in_len(), g[2].in_len()];
        let mut argmax: [Vec<usize>; 2] = std::array::from_fn(|l| vec![0; n * pool_len[l]]);
        let mut features = vec![0.0; n * f_len];
        let flat = w.architecture.flat_len();

        for s in 0..n {
            let mut pooled_input = inputs[s].image.clone();
            for l in 0..3 {
                let c = &mut cols[l][s * g[l].cols_len()..(s + 1) * g[l].cols_len()];
                g[l].im2col(&pooled_input, c);
                let a = &mut act[l][s * g[l].out_len()..(s + 1) * g[l].out_len()];
                g[l].forward_cols(c, t[2 * l].data(), t[2 * l + 1].data(), a);
                relu_in_place(a);
                if l < 2 {
                    pooled_input = vec![0.0; pool_len[l]];
                    maxpool3_raw(
                        g[l].c_out,
                        g[l].out_h(),
                        g[l].out_w(),
                        a,
                        &mut pooled_input,
                        &mut argmax[l][s * pool_len[l]..(s + 1) * pool_len[l]],
                    );
                }
            }
            let row = &mut features[s * f_len..(s + 1) * f_len];
            row[..flat].copy_from_slice(&act[2][s * flat..(s + 1) * flat]);
            row[flat..].copy_from_slice(&inputs[s].features);
        }

        let reg = mlp_forward(n, &features, f_len, reg_w, t, 6);
        let fi_len = w.architecture.failure_input_len();
        let mut fail_input = vec![0.0; n * fi_len];
        for s in 0..n {
            let row = &mut fail_input[s * fi_len..(s + 1) * fi_len];
            row[..f_len].copy_from_slice(&features[s * f_len..(s + 1) * f_len]);
            if fi_len > f_len {
                row[f_len] = failure_voltage(w, &inputs[s], reg[2][s * REGRESSION_OUTPUTS]);
            }
        }
        let [f0, f1, logit] = mlp_forward(n, &fail_input, fi_len, fail_w, t, 12);
        let fail = [f0, f1];
        let p_fail = logit.iter().map(|&z| sigmoid_scalar(z)).collect();
        Self {
            n,
            cols,
            act,
            argmax,
            features,
            fail_input,
            reg,
            fail,
            p_fail,
        }
    }

    pub(crate) fn prediction(&self, w: &SurrogateWeights, input: &Encoded, s: usize) -> Prediction {
        let out = &self.reg[2][s * REGRESSION_OUTPUTS..(s + 1) * REGRESSION_OUTPUTS];
        decode(w, input, out, self.p_fail[s])
    }

    /// Accumulates weight gradients into `grads` given the loss gradient with
    /// respect to the raw regression outputs (`n × 801`) and the failure logits.
    pub(crate) fn backward(&self, w: &SurrogateWeights, d_reg: &[f64], d_logit: &[f64], grads: &mut [Tensor]) {
        let n = self.n;
        let t = &w.tensors;
        let (g, f_len, reg_w, fail_w) = dims(w);
        let fi_len = w.architecture.failure_input_len();
        let mut d_features = vec![0.0; n * f_len];
        let mut d_reg = d_reg.to_vec();

        // failure head first: its voltage input feeds back into the regression output
        for (head, widths, base) in [(1, fail_w, 12), (0, reg_w, 6)] {
            let mut upstream: Vec<f64> = if head == 0 { d_reg.clone() } else { d_logit.to_vec() };
            for l in (0..3).rev() {
                let input: &[f64] = match (head, l) {
                    (0, 0) => &self.features,
                    (_, 0) => &self.fail_input,
                    (0, _) => &self.reg[l - 1],
                    _ => &self.fail[l - 1],
                };
                let in_len = match (head, l) {
                    (0, 0) => f_len,
                    (_, 0) => fi_len,
                    _ => widths[l - 1],
                };
                let mut d_in = vec![0.0; n * in_len];
                let (gw, gb) = split_pair(grads, base + 2 * l);
                dense_backward_raw(
                    n,
                    in_len,
                    widths[l],
                    input,
                    t[base + 2 * l].data(),
                    &upstream,
                    gw.data_mut(),
                    gb.data_mut(),
                    Some(&mut d_in),
                );
                if l > 0 {
                    relu_backward_in_place(input, &mut d_in);
                    upstream = d_in;
                } else {
                    for s in 0..n {
                        let row = &d_in[s * in_len..(s + 1) * in_len];
                        for (a, b) in d_features[s * f_len..(s + 1) * f_len].iter_mut().zip(row) {
                            *a += b;
                        }
                        if in_len > f_len {
                            d_reg[s * REGRESSION_OUTPUTS] += row[f_len] * w.normalization.span() / FAILURE_VOLTAGE_UNIT;
                        }
                    }
                }
            }
        }

        let flat = w.architecture.flat_len();
        let pool_len = [g[1].in_len(), g[2].in_len()];
        for s in 0..n {
            let mut d_act = d_features[s * f_len..s * f_len + flat].to_vec();
            for l in (0..3).rev() {
                let a = &self.act[l][s * g[l].out_len()..(s + 1) * g[l].out_len()];
                relu_backward_in_place(a, &mut d_act);
                let c = &self.cols[l][s * g[l].cols_len()..(s + 1) * g[l].cols_len()];
                let (gk, gb) = split_pair(grads, 2 * l);
                if l == 0 {
                    g[l].backward_cols(c, t[0].data(), &d_act, gk.data_mut(), gb.data_mut(), None);
                    break;
                }
                let mut d_cols = vec![0.0; g[l].cols_len()];
                g[l].backward_cols(
                    c,
                    t[2 * l].data(),
                    &d_act,
                    gk.data_mut(),
                    gb.data_mut(),
                    Some(&mut d_cols),
                );
                let mut d_pooled = vec![0.0; pool_len[l - 1]];
                g[l].col2im(&d_cols, &mut d_pooled);
                let mut d_prev = vec![0.0; g[l - 1].out_len()];
                let idx = &self.argmax[l - 1][s * pool_len[l - 1]..(s + 1) * pool_len[l - 1]];
                maxpool3_backward_raw(&d_pooled, idx, &mut d_prev);
                d_act = d_prev;
            }
        }
    }
}

/// Voltage resolution of the failure head's voltage input, V. Failure turns
/// on margins of a few millivolts, far below the normalized voltage scale.
pub const FAILURE_VOLTAGE_UNIT: f64 = 0.01;

/// Predicted next-window margin above cutoff, in [`FAILURE_VOLTAGE_UNIT`]s.
pub(crate) fn failure_voltage(w: &SurrogateWeights, input: &Encoded, out0: f64) -> f64 {
    let scale = w.normalization.span() / FAILURE_VOLTAGE_UNIT;
    if w.architecture.residual {
        (out0 + input.features[2]) * scale
    } else {
        out0 * scale
    }
}

/// Maps raw regression outputs back to physical units.
pub(crate) fn decode(w: &SurrogateWeights, input: &Encoded, out: &[f64], p_fail: f64) -> Prediction {
    let span = w.normalization.span();
    let residual = w.architecture.residual;
    let voltage = if residual { input.voltage } else { w.normalization.v_cut } + span * out[0];
    let grid = |k: usize| -> Vec<f64> {
        let o = &out[1 + k * GRID_LEN..1 + (k + 1) * GRID_LEN];
        if residual {
            o.iter().zip(&input.image[k * GRID_LEN..]).map(|(d, c)| c + d).collect()
        } else {
            o.to_vec()
        }
    };
    Prediction {
        voltage,
        c_n: grid(0),
        c_p: grid(1),
        p_fail,
        clamped: input.clamped,
    }
}

fn mlp_forward(n: usize, input: &[f64], in_len: usize, widths: [usize; 3], t: &[Tensor], base: usize) -> [Vec<f64>; 3] {
    let layer = |x: &[f64], l: usize, x_len: usize| {
        let mut y = vec![0.0; n * widths[l]];
        dense_raw(
            n,
            x_len,
            widths[l],
            x,
            t[base + 2 * l].data(),
            t[base + 2 * l + 1].data(),
            &mut y,
        );
        if l < 2 {
            relu_in_place(&mut y);
        }
        y
    };
    let h0 = layer(input, 0, in_len);
    let h1 = layer(&h0, 1, widths[0]);
    let h2 = layer(&h1, 2, widths[1]);
    [h0, h1, h2]
}

fn split_pair(grads: &mut [Tensor], i: usize) -> (&mut Tensor, &mut Tensor) {
    let (a, b) = grads.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}
