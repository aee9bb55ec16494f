//! Provenance-first workflow engine.
//!
//! Every executed process and every datum it consumes or produces is a node
//! in a validated directed graph ([`graph`], [`store`]) that can be queried
//! by pattern ([`query`]). Processes ([`process`]) run on a durable,
//! checkpointed, multi-worker engine ([`engine`]) with content-hash caching
//! ([`caching`]).

pub mod attrs;
pub mod bench;
pub mod caching;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod hashing;
pub mod kind;
pub mod node;
pub mod oracle;
pub mod process;
pub mod query;
pub mod store;

pub use error::{Error, Result};
pub use graph::{Link, LinkType};
pub use kind::NodeKind;
pub use node::Node;
pub use engine::{Action, Engine, EngineConfig, ProcessState};
pub use process::{Inputs, Outcome, Outputs, Registry};
pub use store::{Store, TcMode};
