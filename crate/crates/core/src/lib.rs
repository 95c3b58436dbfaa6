//! Output-label reliability for queries over databases whose tuples carry
//! uncertain correctness labels.
//!
//! Tuples are labeled correct, incorrect or unknown, each known label with an
//! error probability. Queries propagate labels to outputs through monotone
//! provenance, and the maximal error score (MES) of an output is the highest
//! probability of any possible world in which its derived label is wrong.
//! The [`reduce`] module spends a verification budget to drive that score down.

pub mod error;
pub mod experiments;
pub mod ilp;
pub mod io;
pub mod mes;
pub mod model;
pub mod provenance;
pub mod query;
pub mod reduce;
pub mod risky;
pub mod verifier;

pub use error::Error;
pub use mes::{mes, mes_set, MesMethod, MesScore};
pub use model::{AnnotatedDes, Database, Label, LogProb, Tri, TupleId, World};
pub use provenance::{Form, ProvExpr};
pub use query::{evaluate_with_provenance, parse_query, QueryResult};
pub use reduce::{mes_reduce, run_baseline, BaselineKind, ReduceConfig, ReductionTrace};
