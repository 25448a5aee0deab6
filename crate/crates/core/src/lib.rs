//! Raw-byte traffic classification with a small 1D convolutional network.
//!
//! Captures are read from classic pcap files, split into packets, flows or
//! sessions, sliced by header category, scaled to `[0, 1]` and zero-padded
//! to a fixed length, then classified by a two-layer 1D CNN.

pub mod bench;
pub mod dataset;
pub mod encoder;
pub mod ingest;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod report;
pub mod splitter;
pub mod synth;
