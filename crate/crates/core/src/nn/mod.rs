//! The trainable side: parameter stores, a dense network with hand-written
//! reverse-mode gradients, the student and discriminator built on it, the
//! optimizer, EMA targets, gradient checking, and the checkpoint format.

mod adam;
pub mod checkpoint;
mod disc;
pub mod gradcheck;
mod mlp;
mod params;
mod student;

pub use adam::{adam_step, ema_update, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, DType};
pub use disc::{DiscConfig, DiscTape, Discriminator};
pub use mlp::{Activation, Mlp, MlpTape};
pub use params::{Param, ParamStore};
pub use student::{ConsistencyTape, StudentConfig, StudentNet, StudentTape};
