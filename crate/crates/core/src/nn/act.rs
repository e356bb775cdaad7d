use crate::tensor::Tensor;

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { v * slope })
}

/// Gradient through a leaky ReLU, keyed on the forward output (same sign as input).
pub fn leaky_relu_backward(y: &Tensor, dy: &Tensor, slope: f32) -> Tensor {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
        if *v <= 0.0 {
            *d *= slope;
        }
    }
    dx
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f32::tanh)
}

pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= 1.0 - v * v;
    }
    dx
}
