pub mod diffusion;
pub mod error;
pub mod eval;
pub mod fragmentation;
pub mod inference;
pub mod io;
pub mod ncrp;
pub mod points;
pub mod stats;
pub mod tree;
