//! Tensor math, residual network layers with hand-written backward passes,
//! momentum SGD and a finite-difference gradient checker.

pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod modelfile;
pub mod network;
pub mod pool;
pub mod sgd;
pub mod tensor;

pub use batchnorm::Mode;
pub use conv::ConvGeometry;
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use layers::{default_architecture, LayerSpec, NetworkParams};
pub use network::{ForwardPass, Network};
pub use sgd::Sgd;
pub use tensor::Tensor4;
