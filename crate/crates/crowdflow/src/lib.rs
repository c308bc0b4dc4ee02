//! Crowd simulation engine combining a social-force destination term with a
//! learned conditional diffusion model over pedestrian accelerations.
//!
//! The crate is organized around the data flow of a simulation step:
//!
//! * [`autodiff`] — dense-array values with reverse-mode differentiation and
//!   the neural building blocks (affine, MLP, LSTM cell, attention pieces).
//! * [`scene`] — pedestrian episodes, trajectory I/O, scene environments,
//!   lighting and density grids.
//! * [`physics`] — destination force, desired-speed estimation, kinematic
//!   integration, and the optional repulsion post-processor.
//! * [`environment`] — environment conditioning from obstacles, objects of
//!   interest, and lighting (or a density-grid alternative).
//! * [`igi`] — individual–group interaction: k-NN graph, similarity measures,
//!   and the message-passing network producing the social feature.
//! * [`history`] — LSTM encoder over the recent observation window.
//! * [`diffusion`] — noise schedule, conditional denoiser, DDPM/DDIM samplers.
//! * [`training`] — multi-frame rollout loss, the training loop, closed-loop
//!   simulation, and checkpointing.
//! * [`metrics`] — the evaluation suite (MAE, OT, FDE, MMD, DTW, collisions).
//! * [`scenario`] — synthetic scenario generation for desk-scale experiments.
//! * [`config`] / [`cli`] — run configuration and the command-line harness.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod container;
pub mod diffusion;
pub mod environment;
pub mod error;
pub mod history;
pub mod igi;
pub mod metrics;
pub mod model;
pub mod numcheck;
pub mod physics;
pub mod rng;
pub mod scenario;
pub mod scene;
pub mod training;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
