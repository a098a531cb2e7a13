pub mod cli;
pub mod evolve;
pub mod exec;
pub mod linalg;
pub mod network;
pub mod pde;
pub mod subspace;
