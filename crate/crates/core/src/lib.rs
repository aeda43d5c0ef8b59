//! Audio-driven 3D facial animation: head model, audio features, generator,
//! training, emotion control and evaluation.

pub mod audio;
pub mod container;
pub mod emotion;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod head;
pub mod params_io;
pub mod pipeline;
pub mod training;
