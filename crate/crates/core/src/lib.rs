//! Node-specific, multi-dimension differentiable graph architecture search.

pub mod cli;
pub mod context;
pub mod graph;
pub mod heads;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod seeding;
pub mod synth;
pub mod tensor;
pub mod trainer;
