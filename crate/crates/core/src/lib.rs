//! Constrained decoding that filters next tokens by grammar and by the
//! constraints of a typed-graph metamodel, evaluated on a partial model
//! projected from the prefix.

pub mod bench;
pub mod clevr;
pub mod cli;
pub mod decoder;
pub mod escape;
pub mod grammar;
pub mod lm_provider;
pub mod metamodel;
pub mod partial_model;
pub mod projector;
pub mod semantics;
pub mod vocab;
