use super::tensor::Tensor;

pub fn relu_scalar(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        // same value, no overflow for large negative x
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        *v = relu_scalar(*v);
    }
}

/// Zeroes `grad` wherever the activation output is not positive (subgradient 0 at 0).
pub fn relu_backward_in_place(output: &[f64], grad: &mut [f64]) {
    for (g, y) in grad.iter_mut().zip(output) {
        if *y <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    relu_in_place(y.data_mut());
    y
}

/// Gradient through relu given the layer input `x`.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gi, xi) in g.data_mut().iter_mut().zip(x.data()) {
        if *xi <= 0.0 {
            *gi = 0.0;
        }
    }
    g
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = sigmoid_scalar(*v);
    }
    y
}

/// Gradient through sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gi, yi) in g.data_mut().iter_mut().zip(y.data()) {
        *gi *= yi * (1.0 - yi);
    }
    g
}
