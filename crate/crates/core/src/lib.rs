//! Hierarchical tool-retrieval agents over large API catalogs.
//!
//! The engine chains three stages per query:
//!
//! 1. a retriever, in which a meta agent spawns category agents, which spawn
//!    tool agents, which fill a shared candidate pool;
//! 2. a solver that works the query against that pool with either a linear
//!    chain of function calls or a depth-first decision tree;
//! 3. a reflection loop that feeds failures back into both.
//!
//! Every model interaction goes through [`llm::ChatBackend`], so a
//! [`llm::ScriptedBackend`] can replace a live model for tests and examples.

pub mod catalog;
pub mod cli;
pub mod error;
pub mod eval;
pub mod http;
pub mod llm;
pub mod prompts;
pub mod reflection;
pub mod retriever;
pub mod solver;
pub mod trace;

pub use error::{Error, Result};
