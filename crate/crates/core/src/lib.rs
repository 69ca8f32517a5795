//! Core of the livesketch engine: camera geometry, recorded scenes, color
//! tracking, sketch interpretation, the expression language, bindings and
//! the visualizations built on top of them.

pub mod expr;
pub mod geometry;
pub mod scene;
pub mod sketch;
pub mod tracker;
pub mod viz;
pub mod engine;
pub mod session;
pub mod synth;
pub mod headless;
