//! Object-centric model-based reinforcement learning from pixels.
//!
//! A slot-based video encoder (SAVi) turns frames into sets of object slots, a
//! causal transformer predicts future slots from actions, and reward, value and
//! policy heads read slot histories through a slot-aggregation transformer.
//! Behaviors are learned purely in imagination on a 2D blockworld.
//!
//! Every model is generic over the scalar type; `f32` and `f64` aliases follow.

pub mod agent;
pub mod blocks;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod heads;
pub mod image;
pub mod replay;
pub mod sat;
pub mod savi;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
pub use slotrl_tensor as tensor;

pub type Agent32 = agent::Agent<f32>;
pub type Agent64 = agent::Agent<f64>;
pub type Savi32 = savi::Savi<f32>;
pub type Savi64 = savi::Savi<f64>;
pub type Dynamics32 = dynamics::Dynamics<f32>;
pub type Dynamics64 = dynamics::Dynamics<f64>;
pub type Sat32 = sat::Sat<f32>;
pub type Sat64 = sat::Sat<f64>;
pub type BinSpec32 = codec::BinSpec<f32>;
pub type BinSpec64 = codec::BinSpec<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
