//! Network building blocks: parameters, conv/deconv layers, the extractor
//! block families, and the sigmoid attention gate.

mod attention;
mod block;
mod layers;
mod param;

pub use attention::{attention_param_count, AttentionGate};
pub use block::{BlockKind, BlockSpec, ExtractorBlock};
pub use layers::{Activation, ConvLayer, DeconvLayer};
pub use param::{Initializer, Param, ParamId, ParamVisitor};
