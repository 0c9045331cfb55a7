//! Test-only reference implementations. These deliberately avoid the crate's
//! own forward/loss code paths: plain loops over `Vec<f64>`.
#![allow(dead_code)]

pub mod dag;
pub mod oracle;
