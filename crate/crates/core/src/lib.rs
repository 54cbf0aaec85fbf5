//! Personalized federated learning through parameterized group knowledge
//! transfer.
//!
//! Clients with heterogeneous dense networks train on private Non-IID
//! shards, exchange temperature-softened predictions on a shared public
//! set, and distill toward personalized teachers. Each teacher is a
//! combination of all clients' predictions weighted by a trainable
//! knowledge-coefficient matrix, updated on the server by gradient descent.
//!
//! Modules:
//! - [`nn`]: dense networks, softmax with temperature, CE/KL losses and their gradients
//! - [`gradcheck`]: finite-difference oracle
//! - [`data`]: IDX ingestion, synthetic clusters, label-skew/Dirichlet partitions, batching
//! - [`knowledge`]: soft predictions, coefficient matrix, teachers and coefficient policies
//! - [`fedsim`]: the round engine, baselines, client sampling and byte accounting


// `!(x >= 0.0)` is deliberate: NaN must fail range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod data;
pub mod error;
pub mod fedsim;
pub mod gradcheck;
pub mod knowledge;
pub mod nn;
pub mod seed;
pub mod tensor;

pub use data::{Dataset, Partition, PartitionScheme, PublicSet, SynthParams};
pub use error::{Error, Result};
pub use fedsim::{Algorithm, CommsLedger, Federation, RoundMetrics, RunOutcome, SimConfig};
pub use knowledge::{CoefficientMatrix, KnowledgeHyper, SoftPredictionBank};
pub use nn::{GradientSet, Model};
pub use tensor::Tensor;
