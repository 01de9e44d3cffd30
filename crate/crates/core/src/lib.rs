//! Adversarial camouflage textures for a two-stage object detector.

pub mod attack;
pub mod boxes;
pub mod detector;
pub mod camera;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod mesh;
pub mod optim;
pub mod patterns;
pub mod render;
pub mod rng;
pub mod scenes;
pub mod texture;

pub use error::{Error, Result};
