//! Dynamic anatomy: skinning weights and keypose deformation, phase volume
//! registration and interpolation, and the ECG phase clock.

pub mod clock;
pub mod registration;
pub mod skinning;
pub mod sparse;

pub use clock::{phase_clock, phase_rr_fraction, ModelPhase, PhaseClock};
pub use registration::{interpolate_phase, register_volumes, DeformationField, Registration, RegistrationParams};
pub use skinning::{
    biharmonic_operator, compute_skinning_weights, deform_mesh, interpolate_pose, skinning_energy, HandlePose, HandleSet,
    RigidTransform, SkinningWeights,
};
