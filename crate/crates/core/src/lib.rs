//! Automatic integration with neural networks.
//!
//! An integral network `Phi` is built as an explicit computational graph. Its
//! derivative with respect to one input, the grad network `Psi`, is derived
//! node by node and shares every parameter with `Phi`. Training `Psi` to match
//! a signal makes `Phi` an antiderivative of that signal, so a definite
//! integral costs two evaluations of `Phi`.

pub mod fit1d;
pub mod gradnet;
pub mod graph;
pub mod nets;
pub mod quad;
pub mod rng;
pub mod tomography;
pub mod volrender;
pub mod train;
