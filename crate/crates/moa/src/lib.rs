pub mod activations;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod expressivity;
pub mod ffn;
pub mod guide;
pub mod tensor;
pub mod train;
pub mod transformer;
