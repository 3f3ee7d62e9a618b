//! Desk-scale GAN laboratory with a discriminator whose capacity changes
//! during training.

pub mod layers;
pub mod schedule;
pub mod tensor;
pub mod container;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod nets;
pub mod trainer;
pub mod selfcheck;
pub mod config;
pub mod report;
pub mod harness;
