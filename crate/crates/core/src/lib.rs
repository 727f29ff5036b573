//! Damage-adaptive flight control core: airframe dynamics with a moving centre
//! of mass, a robust tracking controller, a joint unscented estimator of
//! motion, force-moment and inertial parameters, a batch/recursive
//! force-moment identifier, and the supervisor that blends model-based and
//! data-based dynamics.
//!
//! Every numerical module is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod dynamics;
pub mod estimator;
pub mod identifier;
pub mod integrate;
pub mod scalar;
pub mod supervisor;

pub use scalar::{lit, Real, GRAVITY_FT_S2, LBM_PER_SLUG};

pub type InertialParams = dynamics::InertialParams<f64>;
pub type RegressorSet = dynamics::RegressorSet<f64>;
pub type DamageCase = dynamics::DamageCase<f64>;
pub type ExtraTermSpec = dynamics::ExtraTermSpec<f64>;
pub type Pose = dynamics::Pose<f64>;
pub type PlantState = dynamics::PlantState<f64>;
pub type Airframe = dynamics::Airframe<f64>;
pub type ControllerGains = controller::ControllerGains<f64>;
pub type Excitation = controller::Excitation<f64>;
pub type JointUkf = estimator::JointUkf<f64>;
pub type UkfConfig = estimator::UkfConfig<f64>;
pub type RegressorEstimate = identifier::RegressorEstimate<f64>;
pub type RlsState = identifier::RlsState<f64>;
pub type BlendedModel = supervisor::BlendedModel<f64>;
pub type DecisionState = supervisor::DecisionState<f64>;
