//! Simulation and verification engine for density-dependent branching
//! populations and their spine (tagged-lineage) constructions.

pub mod config;
pub mod eigen;
pub mod error;
pub mod genealogy;
pub mod model;
pub mod models;
pub mod rng;
pub mod simulate;
pub mod spine;
pub mod stats;

pub use error::{ConfigError, EigenError, ModelError, OdeError, SimError, StatsError};
pub use genealogy::{GenealogyTree, Label, NodeId, NodeRecord};
pub use model::{
    ModelSpec, OffspringVector, PopVector, PsiFunction, RateFn, RateKernel, SupportEntry, TypeId,
    TypeAssignmentLaw,
};
pub use simulate::{FractionLaw, SamplingLaw, SimConfig, SimOutcome, SimStatus, SpineOutcome};
pub use stats::{Estimate, Functional, PairedCheck};
