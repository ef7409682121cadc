//! Differentiable numerical substrate.
//!
//! Only the handful of operations the three networks and their losses need
//! are provided. Values live in a [`Graph`] tape; [`Graph::backward`] walks
//! it in reverse and returns gradients for every node that requires them.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, FdConfig, FdReport, ParamFdReport};
pub use graph::{BnMode, Gradients, Graph, Var, BN_EPSILON, PROB_CLAMP};
pub use params::ParameterSet;
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Leak used by every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn tanh_act(x: f64) -> f64 {
    x.tanh()
}

pub fn sigmoid_act(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn identity_act(x: f64) -> f64 {
    x
}
