//! Minimal neural-network toolkit: parameter storage, a reverse-mode tape and Adam.

mod optim;
mod params;
mod tape;

pub use optim::{Adam, AdamConfig, TransformerSchedule};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{log_softmax_rows, softmax_rows, Tape, Var};
