//! Data ingestion and task construction.
//!
//! * [`load_idx`] reads the MNIST/EMNIST IDX distribution format.
//! * [`build_permuted_tasks`] and [`build_split_tasks`] turn one labelled set
//!   into a task sequence for the two incremental protocols.
//! * [`partition_clients`] deals each task's training data to clients with a
//!   balanced per-label histogram.
//! * [`make_synthetic_blobs`] and [`make_synthetic_glyphs`] produce small
//!   stand-in datasets for tests and desk-scale experiments.

mod idx;
mod partition;
mod set;
mod synthetic;
mod tasks;

pub use idx::{load_idx, load_idx_with, parse_idx_images, parse_idx_labels, IdxError, IdxOptions};
pub use partition::{partition_clients, ClientPartition, ReleaseMode};
pub use set::LabeledSet;
pub use synthetic::{make_synthetic_blobs, make_synthetic_glyphs};
pub use tasks::{build_permuted_tasks, build_split_tasks, BaseData, Task, TaskSequence};
