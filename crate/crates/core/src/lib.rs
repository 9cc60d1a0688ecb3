#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod grid;
pub mod linalg;
pub mod network;
pub mod qp;
pub mod reformulation;
pub mod stats;
pub mod tuner;
pub mod uncertainty;
pub mod violation;
