//! Deterministic synthetic recordings with a known latent-to-landmark and
//! latent-to-motion mapping, synthetic head rigs, and a ridge-regression
//! baseline.

mod face;
mod generator;
mod oracle;
mod rig;

pub use face::neutral_face;
pub use generator::{generate_session, GeneratorSpec, SyntheticSession, UserModel};
pub use oracle::LinearOracle;
pub use rig::{generate_rig, landmark_basis_condition, rig_sequence, RigSequence};
