//! Engines and numerics for Activated Random Walks and the Stochastic
//! Sandpile: lattice geometry, the instruction-tape stabilizer, the
//! abelian-network sandpile, heat kernels, soft local times and the
//! multiscale bookkeeping. Needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod arw;
pub mod df;
pub mod kernels;
pub mod lattice;
pub mod multiscale;
pub mod order;
pub mod rng;
pub mod slt;
pub mod ssm;
