//! Oracles and generators shared by the workspace's property tests.

pub mod gen;
pub mod oracle;
pub mod reference;
