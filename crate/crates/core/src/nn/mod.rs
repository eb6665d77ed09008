//! Minimal dense-matrix autodiff used by every model component.

mod graph;
mod params;
mod tensor;

pub use graph::{Graph, Mask, Stream, Var};
pub use params::{init_uniform, Gradients, ParamId, ParamStore};
pub use tensor::{masked_logsumexp, Tensor};

/// Fixed sinusoidal position table, `len × d`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}
