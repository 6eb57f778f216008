pub mod augment;
pub mod data;
pub mod dsp;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod text;
pub mod train;
