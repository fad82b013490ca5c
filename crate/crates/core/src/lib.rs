pub mod cli;
pub mod env;
pub mod eval;
pub mod nn;
pub mod ppo;
pub mod seed;
pub mod tensor;
