pub mod checkpoint;
pub mod cli;
pub mod container;
pub mod error;
pub mod gauge;
pub mod linalg;
pub mod safelora;
pub mod transformer;
