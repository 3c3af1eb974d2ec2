//! Compass-aligned temporal topic embeddings.
//!
//! The crate trains an atemporal compass model over a whole corpus, trains
//! one slice model per time period against the compass' frozen output
//! weights, builds a global topic space over compass document vectors, and
//! derives the keyword flow graph rendered by the TimeLink dashboard.

pub mod cluster;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod flow;
pub mod pipeline;
pub mod reduce;
pub mod store;
pub mod synthetic;
pub mod topicspace;
pub mod vector;
