//! Implementations of the pose6d subcommands.

pub mod ablate;
pub mod dump_attention;
pub mod eval;
pub mod gen_data;
pub mod gradcheck;
pub mod solve_pnp;
pub mod train_rotest;
pub mod train_toy;
