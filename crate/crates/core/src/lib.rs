pub mod config;
pub mod experiments;
pub mod greens;
pub mod io;
pub mod landscape;
pub mod nls;
pub mod lattice;
pub mod rng;
pub mod special;
pub mod spherical;
pub mod stats;
pub mod tempering;
