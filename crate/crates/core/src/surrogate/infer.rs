//! Allocation-free single-window inference. The arithmetic is identical to
//! the training forward pass; only buffers are reused between calls and the
//! dense weights may be stored in single precision (see [`Surrogate`]).

use std::cell::RefCell;

use super::model::{
    decode, failure_voltage, Architecture, Encoded, Prediction, SurrogateInput, SurrogateWeights, REGRESSION_OUTPUTS,
};
use crate::error::Result;
use crate::nn::{gemv, maxpool3_raw, relu_in_place, sigmoid_scalar, Weight};

struct Workspace {
    architecture: Architecture,
    cols: [Vec<f64>; 3],
    act: [Vec<f64>; 3],
    pooled: [Vec<f64>; 2],
    argmax: Vec<usize>,
    features: Vec<f64>,
    fail_input: Vec<f64>,
    hidden: [Vec<f64>; 4],
    out: Vec<f64>,
}

impl Workspace {
    fn new(a: Architecture) -> Self {
        let g = a.convs();
        Self {
            architecture: a,
            cols: std::array::from_fn(|l| vec![0.0; g[l].cols_len()]),
            act: std::array::from_fn(|l| vec![0.0; g[l].out_len()]),
            pooled: std::array::from_fn(|l| vec![0.0; g[l + 1].in_len()]),
            argmax: vec![0; g[1].in_len().max(g[2].in_len())],
            features: vec![0.0; a.feature_len()],
            fail_input: vec![0.0; a.failure_input_len()],
            hidden: [
                vec![0.0; a.regression_hidden[0]],
                vec![0.0; a.regression_hidden[1]],
                vec![0.0; a.failure_hidden[0]],
                vec![0.0; a.failure_hidden[1]],
            ],
            out: vec![0.0; REGRESSION_OUTPUTS],
        }
    }
}

thread_local! {
    static WORKSPACE: RefCell<Option<Workspace>> = const { RefCell::new(None) };
}

fn layer<W: Weight>(x: &[f64], weight: &[W], bias: &[f64], y: &mut [f64], relu: bool) {
    gemv(x.len(), x, weight, bias, y);
    if relu {
        relu_in_place(y);
    }
}

fn run<W: Weight>(w: &SurrogateWeights, dense: [&[W]; 6], enc: &Encoded, ws: &mut Workspace) -> Prediction {
    let g = w.architecture.convs();
    let t = &w.tensors;
    for l in 0..3 {
        let input: &[f64] = if l == 0 { &enc.image } else { &ws.pooled[l - 1] };
        g[l].im2col(input, &mut ws.cols[l]);
        g[l].forward_cols(&ws.cols[l], t[2 * l].data(), t[2 * l + 1].data(), &mut ws.act[l]);
        relu_in_place(&mut ws.act[l]);
        if l < 2 {
            let n = ws.pooled[l].len();
            maxpool3_raw(
                g[l].c_out,
                g[l].out_h(),
                g[l].out_w(),
                &ws.act[l],
                &mut ws.pooled[l],
                &mut ws.argmax[..n],
            );
        }
    }
    let flat = w.architecture.flat_len();
    ws.features[..flat].copy_from_slice(&ws.act[2]);
    ws.features[flat..].copy_from_slice(&enc.features);

    let [h0, h1, f0, f1] = &mut ws.hidden;
    layer(&ws.features, dense[0], t[7].data(), h0, true);
    layer(h0, dense[1], t[9].data(), h1, true);
    layer(h1, dense[2], t[11].data(), &mut ws.out, false);
    let f_len = ws.features.len();
    ws.fail_input[..f_len].copy_from_slice(&ws.features);
    if ws.fail_input.len() > f_len {
        ws.fail_input[f_len] = failure_voltage(w, enc, ws.out[0]);
    }
    layer(&ws.fail_input, dense[3], t[13].data(), f0, true);
    layer(f0, dense[4], t[15].data(), f1, true);
    let mut logit = [0.0];
    layer(f1, dense[5], t[17].data(), &mut logit, false);
    decode(w, enc, &ws.out, sigmoid_scalar(logit[0]))
}

/// Forward pass for one window; `w` must already be validated.
pub(crate) fn predict_one(
    w: &SurrogateWeights,
    packed: Option<&[Vec<f32>]>,
    input: &SurrogateInput,
) -> Result<Prediction> {
    let enc = w.encode(input)?;
    Ok(WORKSPACE.with(|cell| {
        let mut slot = cell.borrow_mut();
        if slot.as_ref().map(|ws| ws.architecture) != Some(w.architecture) {
            *slot = Some(Workspace::new(w.architecture));
        }
        let ws = slot.as_mut().expect("workspace initialised above");
        match packed {
            Some(p) => run(w, std::array::from_fn(|i| p[i].as_slice()), &enc, ws),
            None => run(w, std::array::from_fn(|i| w.tensors[6 + 2 * i].data()), &enc, ws),
        }
    }))
}

/// Inference handle. When every dense weight is exactly representable in
/// `f32` (true for trained and loaded models) those matrices are kept in
/// single precision, halving memory traffic without changing any result.
#[derive(Debug, Clone)]
pub struct Surrogate {
    weights: SurrogateWeights,
    packed: Option<Vec<Vec<f32>>>,
}

impl Surrogate {
    pub fn new(weights: SurrogateWeights) -> Result<Self> {
        weights.validate()?;
        let dense = |i: usize| weights.tensors[6 + 2 * i].data();
        let exact = (0..6).all(|i| dense(i).iter().all(|&v| v as f32 as f64 == v));
        let packed = exact.then(|| (0..6).map(|i| dense(i).iter().map(|&v| v as f32).collect()).collect());
        Ok(Self { weights, packed })
    }

    pub fn weights(&self) -> &SurrogateWeights {
        &self.weights
    }

    pub fn into_weights(self) -> SurrogateWeights {
        self.weights
    }

    pub fn is_packed(&self) -> bool {
        self.packed.is_some()
    }

    pub fn predict(&self, input: &SurrogateInput) -> Result<Prediction> {
        predict_one(&self.weights, self.packed.as_deref(), input)
    }
}
