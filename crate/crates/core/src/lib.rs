//! Kernelized multi-armed bandits through a reduction to misspecified
//! linear bandits.
//!
//! A P-greedy Newton basis approximates every function of the kernel's
//! RKHS uniformly on the arm set, so the bandit problem becomes a linear
//! one with a known misspecification bound. The crate provides:
//!
//! * [`kernels`]: RQ, SE and half-integer Matérn kernels,
//! * [`numerics`]: incremental inverse / log-determinant tracking,
//! * [`pgreedy`]: greedy Newton-basis construction and the feature map,
//! * [`misspec_bandits`]: modified LinUCB, Thompson sampling, EXP3 with
//!   G-optimal exploration, and phased elimination,
//! * [`rkhs_bandits`]: APG-UCB / APG-TS / APG-PE / APG-EXP3 and the
//!   IGP-UCB baseline,
//! * [`environments`]: synthetic RKHS reward functions on grid arm sets,
//! * [`harness`]: configuration, benchmark execution and CSV output.
//!
//! The numeric layers are generic over [`Real`]; the experiment layers
//! work in `f64`. Aliases for the common `f64` instantiations live at the
//! crate root.

pub mod environments;
pub mod harness;
pub mod kernels;
pub mod misspec_bandits;
pub mod numerics;
pub mod pgreedy;
pub mod points;
pub mod rkhs_bandits;
pub mod scalar;

pub use scalar::Real;

pub type Kernel64 = kernels::Kernel<f64>;
pub type PointSet64 = points::PointSet<f64>;
pub type SpdTracker64 = numerics::SpdTracker<f64>;
pub type NewtonBasis64 = pgreedy::NewtonBasis<f64>;
pub type FeatureMap64 = pgreedy::FeatureMap<f64>;
pub type LinBanditState64 = misspec_bandits::LinBanditState<f64>;
pub type Exp3State64 = misspec_bandits::Exp3State<f64>;
pub type Design64 = misspec_bandits::Design<f64>;
