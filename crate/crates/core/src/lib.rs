pub mod autodiff;
pub mod dataset;
pub mod eval;
pub mod fem;
pub mod image;
pub mod kv;
pub mod nets;
pub mod objectives;
pub mod train;
