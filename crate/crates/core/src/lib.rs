//! Class activation mapping for small ReLU CNNs.
//!
//! The engine runs a forward pass that keeps every layer's activation, an
//! exact reverse pass for gradients, and five channel-weighting methods
//! (Grad-CAM, Grad-CAM++, Ablation-CAM, XGrad-CAM and CAM for GAP heads).
//! [`axioms`] measures how far a set of channel weights is from the
//! sensitivity and conservation properties, and [`perturb`] scores a heatmap
//! by masking its hottest pixels.

pub mod autodiff;
pub mod axioms;
pub mod cam;
pub mod error;
pub mod modelio;
pub mod network;
pub mod perturb;
pub mod synth;
pub mod tensor;

pub use autodiff::{backward, backward_from, guided_backward, GradientTrace};
pub use axioms::{axiom_report, axiom_report_with, AxiomReport, Decomposition};
pub use cam::{explain, CamMethod, CamResult, Explanation};
pub use error::{Error, Result};
pub use modelio::{load_image, load_model, save_model};
pub use network::{ActivationTrace, Layer, LayerKind, LayerSpec, Network, Normalization};
pub use perturb::{confidence_drop, PerturbationResult};
pub use tensor::Tensor;
