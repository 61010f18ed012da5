//! Neural surrogates of a Gaussian line-source dispersion model, trained
//! per subdomain and coupled through boundary intervals.

pub mod ddtrain;
pub mod features;
pub mod geometry;
pub mod metrics;
pub mod neural;
pub mod plume;
pub mod rng;
pub mod scenario;
