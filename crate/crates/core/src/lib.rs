//! Core of the CoLoRS audio-video model: a small reverse-mode tensor engine,
//! bidirectional selective state-space blocks, conditional low-rank steering
//! of the audio branch by the video CLS token, and the training objectives.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod frontend;
pub mod gradcheck;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod ssm;
pub mod steering;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{concat, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
