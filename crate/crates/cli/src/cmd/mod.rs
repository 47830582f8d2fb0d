// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod aggregate;
pub mod evaluate;
pub mod hrv;
pub mod render;
pub mod synth;
