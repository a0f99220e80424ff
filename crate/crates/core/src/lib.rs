//! Pathwise quadratic-variation calculus for cadlag paths in R^d.
//!
//! Paths carry their jumps explicitly, partitions are half-open pieces
//! `]r, s]`, and every limit statement is certified numerically along a
//! finite prefix of a partition sequence.

pub mod bilinear;
pub mod conditions;
pub mod error;
pub mod generators;
pub mod io;
pub mod norm;
pub mod partition;
pub mod path;
pub mod qv;
pub mod representation;
pub mod smooth;
pub mod transform;

pub use bilinear::{BilinearForm, BilinearKind, FormNorm};
pub use conditions::{Condition, ConditionReport, Verdict};
pub use error::{Error, Result};
pub use norm::{CrossnormChoice, NormChoice};
pub use partition::{Partition, PartitionSequence, Piece, SequenceKind};
pub use path::{family_variation, Bounds, CadlagPath, FvPath, Interp, Jump, JumpSet, Side};
pub use qv::{ConvergenceEstimate, QvOptions, QvPath};
pub use smooth::{PathFunctional, SmoothFunction, Smoothness};
pub use transform::{Integrand, ItoReport, ItoRow};
