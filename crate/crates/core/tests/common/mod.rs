#![allow(dead_code)]

pub mod fem_oracle;
pub mod grad_cases;
pub mod mbd_oracle;
