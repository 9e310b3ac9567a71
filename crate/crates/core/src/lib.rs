//! Data-driven synthesis of neural certificates for reachability, safety and
//! reach-while-avoid properties of discrete-time systems, with risk bounds
//! from compression sets.

pub mod bounds;
pub mod certificate;
pub mod dynamics;
pub mod dynexpr;
pub mod experiment;
pub mod loss;
pub mod regions;
pub mod synthesis;
pub mod validation;

pub use bounds::{epsilon_compression, epsilon_direct, BoundError, BoundRow};
pub use certificate::{CertificateNet, NetworkSpec, SavedCertificate};
pub use dynamics::{SamplingDistribution, System, Trajectory};
pub use loss::{GridDensities, LossBreakdown, LossModel, PropertyKind, PropertySpec};
pub use regions::Region;
pub use synthesis::{algorithm1, algorithm2, HyperParams, SynthesisError, SynthesisResult};
pub use experiment::{preset, ExperimentConfig, ExperimentError, RunReport, PRESETS};
pub use validation::{check_property, direct_discard_count, empirical_risks, ValidationReport};
