//! Static analysis of Android key-storage configurations in decompiled apps,
//! plus corpus aggregation and on-device benchmark statistics.

pub mod smali;
pub mod sigdb;
pub mod slicer;
pub mod callgraph;
pub mod corpus;
pub mod config;
pub mod fsutil;
pub mod pipeline;
pub mod labels;
pub mod analytics;
pub mod benchstats;
