//! Off-policy actor-critic with a tanh-constrained critic input layer, toy
//! continuous-control environments, and finite-MDP checks of TD learning
//! under tanh features.
//!
//! Networks, the tape and the training loop are generic over [`Scalar`];
//! the aliases below pin the common instantiations.

pub mod algo;
pub mod autodiff;
pub mod envs;
pub mod error;
pub mod gradsuite;
pub mod nn;
pub mod replay;
pub mod scalar;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tape<'a> = autodiff::Tape<'a, f64>;
pub type ParamStore = nn::ParamStore<f64>;
pub type CriticNet = nn::CriticNet<f64>;
pub type ActorNet = nn::ActorNet<f64>;
pub type ReplayBuffer = replay::ReplayBuffer<f64>;
pub type Batch = replay::Batch<f64>;
pub type TrainState = algo::TrainState<f64>;

pub type CriticNetF32 = nn::CriticNet<f32>;
pub type ActorNetF32 = nn::ActorNet<f32>;
pub type TrainStateF32 = algo::TrainState<f32>;
