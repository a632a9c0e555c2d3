//! Reference implementations used only by tests. They share the document types of
//! `seclab-core` but none of its evaluation code.

pub mod gen;
pub mod numeric;
pub mod prep;
