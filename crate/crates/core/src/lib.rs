pub mod analyzer;
pub mod archdsl;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod train;

pub use archdsl::{parse, ArchSpec, LayerSpec};
pub use error::{Error, Result};
pub use network::{Layer, Model, Node, ParamLedger};
pub use rng::CounterRng;
pub use tensor::{DType, ImageShape, Scalar, Shape4, Tensor4};
