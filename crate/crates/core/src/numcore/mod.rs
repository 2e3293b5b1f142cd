//! Differentiable compute core: matrices, a reverse-mode tape with the
//! layer set the classifier heads need, and Adam.

mod lstm;
mod matrix;
mod params;
mod tape;

pub use lstm::{bilstm, lstm_cell, lstm_sequence, LstmSlots, LstmVars};
pub use matrix::Matrix;
pub use params::{glorot_uniform, Adam, ParamId, ParamStore, Slot};
pub use tape::{Segments, Tape, Var};
