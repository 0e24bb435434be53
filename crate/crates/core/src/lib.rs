pub mod clients;
pub mod corpus;
pub mod depgraph;
pub mod evalkit;
pub mod generation;
pub mod patterns;
pub mod pipeline;
pub mod rng;
pub mod selection;
pub mod stats;
