//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod decoding;
pub mod loss;
pub mod metrics;
pub mod synth;
