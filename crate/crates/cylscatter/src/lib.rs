//! Forward scattering and boundary-control inversion on discrete manifolds with
//! cylindrical ends.

pub mod cli;
pub mod config;
pub mod cross_section;
pub mod error;
pub mod export;
pub mod linalg;
pub mod manifold;
pub mod helmholtz;
pub mod scattering;
pub mod boundary_data;
pub mod oracle;
pub mod reconstruct;
pub mod verify;
pub mod bc_method;
