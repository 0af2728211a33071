pub mod dense_model;
pub mod fixtures;
pub mod oracles;
