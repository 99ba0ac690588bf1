// SPDX-License-Identifier: Apache-2.0
pub mod cli;
pub mod config;
pub mod distribution;
pub mod grouping;
pub mod inference;
pub mod ingest;
pub mod postprocess;
pub mod replay;
pub mod synth;
pub mod trace;
pub mod verify;
