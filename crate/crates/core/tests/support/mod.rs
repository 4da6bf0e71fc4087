// Shared between test targets; each uses a different subset.
#![allow(dead_code)]

pub mod checker_oracle;
pub mod golden;
