//! Supernodal selected inversion, an emulated distributed runtime for its
//! parallel form, and the restricted collective trees it communicates over.

pub mod dense;
pub mod sparse;
pub mod symbolic;
pub mod factor;
pub mod selinv;
pub mod dist;
pub mod runtime;
pub mod analysis;
