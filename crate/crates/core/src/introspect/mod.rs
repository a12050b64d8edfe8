//! Reading recorded key vectors back as pictures: association graphs (each
//! input token linked to the slot it addressed most strongly) and
//! step-by-step memory tables in bracket notation.

mod graph;
mod table;

pub use graph::{build_graph, emit_dot, AssociationGraph, Edge};
pub use table::{dump_memory_states, MemoryTable, StepRow};
