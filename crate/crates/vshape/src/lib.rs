//! Adaptive compaction of immutable value objects.
//!
//! Value objects are immutable, identity-free records that reference only
//! other value objects or integers. This crate learns frequent reference
//! patterns at run-time and inlines referenced objects into their
//! referrers: a histogram of (shape, position, sub-shape) occurrences is
//! kept during construction, and entries that reach a threshold become
//! transformation rules that splice a referenced object's storage into
//! the new object. Field access reifies inlined regions back into fresh
//! objects, invisibly to the language.
//!
//! The crate also ships a small s-expression language with pattern
//! matching, evaluated by a CEK machine whose constructors and
//! destructuring run through the optimization, plus micro-benchmarks and
//! a CLI for observing the effect.

pub mod bench;
pub mod lang;
pub mod machine;
pub mod shapes;
pub mod tables;
pub mod values;

pub use shapes::{ClassDescriptor, Shape, ShapeRegistry};
pub use tables::{dump_stats, Config, Counters, Mode, Runtime};
pub use values::{checksum, measure, structural_eq, MemoryStats, Value};
