//! Analytical simulator for hierarchical and heterogeneous tensor accelerators.
//!
//! The pipeline runs bottom-up: [`workload`] builds operator cascades,
//! [`architecture`] describes and classifies machines, [`partitioner`]
//! assigns ops and splits shared resources, [`mapper`] searches a tiling per
//! op, [`scheduler`] plays the cascade out over time, and [`analysis`]
//! compares configurations. [`experiment`] ties them to config files.

pub mod analysis;
pub mod architecture;
pub mod error;
pub mod experiment;
pub mod mapper;
pub mod partitioner;
pub mod scheduler;
pub mod workload;

pub use architecture::{HHPConfig, HetClass, HierClass, MemoryLevel, SubAccelerator};
pub use error::{Error, Result};
pub use mapper::{Mapping, OpCost, SearchBudget};
pub use workload::{Cascade, EinsumOp, TransformerSpec};
