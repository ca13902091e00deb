pub mod align;
pub mod blocks;
pub mod codec;
pub mod container;
pub mod detmath;
pub mod diagnostics;
pub mod entropy;
pub mod error;
pub mod nn;
pub mod permcode;
pub mod quant;
pub mod predictor;
pub mod synth;
