//! Run containerised image-analysis workflows on a Slurm cluster from an
//! image-management server.
//!
//! The crate is layered bottom-up:
//!
//! * [`descriptor`] parses workflow descriptors and renders parameter values.
//! * [`config`] loads the cluster profile and workflow registry.
//! * [`jobscript`] generates batch scripts.
//! * [`transport`] runs commands and moves files on the cluster.
//! * [`slurm`] wraps `sbatch`, `sacct` and `scancel` and environment setup.
//! * [`orchestrator`] drives complete runs.
//! * [`sim`] is an in-process cluster used by tests and `--simulate`.

pub mod config;
pub mod descriptor;
pub mod jobscript;
pub mod orchestrator;
pub mod sim;
pub mod slurm;
pub mod transport;
