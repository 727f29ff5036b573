//! Robust velocity regulator, least-squares control allocation, persistent
//! excitation and actuator saturation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{GeneralizedVelocity, Mat6x4, Vec3, Vec4, Vec6, N_ACTUATORS};
use crate::scalar::{lit, to_f64, Real};
use crate::supervisor::BlendedModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("gain Γ[{0}] must be positive")]
    NonPositiveGamma(usize),
    #[error("robustness bound χ[{0}] must be nonnegative")]
    NegativeChi(usize),
    #[error("tanh smoothing ε must be positive")]
    NonPositiveEpsilon,
    #[error(
        "control matrix is rank deficient after redacting {redacted:?}; lower the decision factor"
    )]
    SingularAllocation { redacted: Vec<usize> },
    #[error("excitation channel {0} out of range")]
    BadChannel(usize),
}

/// Diagonal feedback gain Γ, per-channel robustness bound χ and tanh width ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains<T: Real> {
    pub gamma: Vec6<T>,
    pub chi: Vec6<T>,
    pub epsilon: T,
}

impl<T: Real> ControllerGains<T> {
    /// Γ = diag(2,2,2,4,4,4), χ = 0.1‖τ₀‖ on every channel, ε = 0.05.
    pub fn default_for(tau0: &Vec6<T>) -> Self {
        let two = lit::<T>(2.0);
        let four = lit::<T>(4.0);
        Self {
            gamma: Vec6::new(two, two, two, four, four, four),
            chi: Vec6::repeat(tau0.norm() * lit(0.1)),
            epsilon: lit(0.05),
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        for i in 0..6 {
            if !(self.gamma[i] > T::zero()) {
                return Err(ControllerError::NonPositiveGamma(i));
            }
            if !(self.chi[i] >= T::zero()) {
                return Err(ControllerError::NegativeChi(i));
            }
        }
        if !(self.epsilon > T::zero()) {
            return Err(ControllerError::NonPositiveEpsilon);
        }
        Ok(())
    }
}

/// Velocity reference and its rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredMotion<T: Real> {
    pub v_d: GeneralizedVelocity<T>,
    pub vdot_d: Vec6<T>,
}

impl<T: Real> DesiredMotion<T> {
    pub fn hold(v_d: GeneralizedVelocity<T>) -> Self {
        Self {
            v_d,
            vdot_d: Vec6::zeros(),
        }
    }
}

/// Commanded wrench
/// `τ_c = G + C(v)v_d + M v̇_d − Γṽ − τ_r − τ₀ − Dv − χ⊙tanh(ṽ/ε)`.
pub fn control_wrench<T: Real>(
    v: &GeneralizedVelocity<T>,
    euler: &Vec3<T>,
    desired: &DesiredMotion<T>,
    model: &BlendedModel<T>,
    gains: &ControllerGains<T>,
) -> Vec6<T> {
    let err = v - desired.v_d;
    let robust = Vec6::from_fn(|i, _| gains.chi[i] * (err[i] / gains.epsilon).tanh());
    model.gravity(euler) + model.coriolis(v) * desired.v_d + model.mass * desired.vdot_d
        - gains.gamma.component_mul(&err)
        - model.tau_r
        - model.tau0
        - model.d * v
        - robust
}

/// Result of a least-squares allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T: Real> {
    pub delta: Vec4<T>,
    /// Channels whose control column norm fell to or below the redaction threshold.
    pub redacted: Vec<usize>,
}

/// Least-squares allocation `δ* = (BᵀB)⁻¹Bᵀτ_c` over columns with `‖bᵢ‖ > ε_δ`.
/// Redacted channels hold `previous`.
pub fn allocate<T: Real>(
    tau_c: &Vec6<T>,
    b: &Mat6x4<T>,
    eps_delta: T,
    previous: &Vec4<T>,
) -> Result<Allocation<T>, ControllerError> {
    let (kept, redacted): (Vec<usize>, Vec<usize>) =
        (0..N_ACTUATORS).partition(|&j| b.column(j).norm() > eps_delta);
    let mut delta = *previous;
    if kept.is_empty() {
        return Ok(Allocation { delta, redacted });
    }
    let bk = DMatrix::from_fn(6, kept.len(), |i, j| b[(i, kept[j])]);
    let normal = bk.transpose() * &bk;
    let rhs: DVector<T> = bk.transpose() * DVector::from_column_slice(tau_c.as_slice());
    let singular = || ControllerError::SingularAllocation {
        redacted: redacted.clone(),
    };
    // Reject near-singular normal equations before solving them.
    let eig = normal.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((eig[0], eig[0]), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > hi * lit::<T>(1e-14)) {
        return Err(singular());
    }
    let sol = normal.cholesky().ok_or_else(singular)?.solve(&rhs);
    for (slot, &j) in kept.iter().enumerate() {
        delta[j] = sol[slot];
    }
    Ok(Allocation { delta, redacted })
}

/// Actuator range, element-wise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorLimits<T: Real> {
    pub lower: Vec4<T>,
    pub upper: Vec4<T>,
}

impl<T: Real> ActuatorLimits<T> {
    pub fn range(&self) -> Vec4<T> {
        self.upper - self.lower
    }
}

/// Element-wise clamp; returns the clamped command and which channels hit a limit.
pub fn saturate<T: Real>(delta: &Vec4<T>, limits: &ActuatorLimits<T>) -> (Vec4<T>, [bool; 4]) {
    let mut out = *delta;
    let mut hit = [false; 4];
    for j in 0..N_ACTUATORS {
        if out[j] > limits.upper[j] {
            out[j] = limits.upper[j];
            hit[j] = true;
        } else if out[j] < limits.lower[j] {
            out[j] = limits.lower[j];
            hit[j] = true;
        }
    }
    (out, hit)
}

/// Raises a flag once a channel has been saturated for `threshold` consecutive steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationMonitor {
    pub threshold: usize,
    run: [usize; 4],
    pub events: usize,
}

impl SaturationMonitor {
    pub fn new(threshold: usize) -> Self {
        Self {
            threshold,
            run: [0; 4],
            events: 0,
        }
    }

    /// Records one step; returns whether any channel is in sustained saturation.
    pub fn record(&mut self, hit: [bool; 4]) -> bool {
        for (run, &h) in self.run.iter_mut().zip(&hit) {
            if h {
                *run += 1;
                self.events += 1;
            } else {
                *run = 0;
            }
        }
        self.sustained()
    }

    pub fn sustained(&self) -> bool {
        self.run.iter().any(|&r| r >= self.threshold)
    }
}

/// One excitation sinusoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone<T: Real> {
    pub channel: usize,
    pub amplitude: T,
    /// rad/s
    pub frequency: T,
    /// rad
    pub phase: T,
}

/// Where the excitation enters the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExcitationInjection {
    /// Added to the allocated command, before saturation.
    #[default]
    PostAllocation,
    /// Mapped through the control matrix and added to the commanded wrench.
    PreAllocation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationConfig<T: Real> {
    pub tones: Vec<Tone<T>>,
    /// Half-width of the uniform noise per channel.
    pub noise: Vec4<T>,
    pub seed: u64,
    pub injection: ExcitationInjection,
}

impl<T: Real> ExcitationConfig<T> {
    pub fn silent() -> Self {
        Self {
            tones: Vec::new(),
            noise: Vec4::zeros(),
            seed: 0,
            injection: ExcitationInjection::PostAllocation,
        }
    }

    /// Tones at 0.7, 1.3 and 2.1 rad/s on every channel at 1% of the actuator
    /// range plus uniform noise at 0.2%. Channels get staggered phases so that
    /// no two command histories are collinear.
    pub fn default_for(limits: &ActuatorLimits<T>, seed: u64) -> Self {
        let range = limits.range();
        let freqs = [0.7, 1.3, 2.1];
        let mut tones = Vec::new();
        for channel in 0..N_ACTUATORS {
            for (k, &f) in freqs.iter().enumerate() {
                tones.push(Tone {
                    channel,
                    amplitude: range[channel] * lit(0.01),
                    frequency: lit(f),
                    phase: lit(0.9 * channel as f64 + 2.0 * k as f64 * channel as f64 / 4.0),
                });
            }
        }
        Self {
            tones,
            noise: range * lit::<T>(0.002),
            seed,
            injection: ExcitationInjection::PostAllocation,
        }
    }
}

/// Deterministic excitation source: configured sinusoids plus seeded uniform noise.
#[derive(Debug, Clone)]
pub struct Excitation<T: Real> {
    pub config: ExcitationConfig<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Excitation<T> {
    pub fn new(config: ExcitationConfig<T>) -> Result<Self, ControllerError> {
        if let Some(t) = config.tones.iter().find(|t| t.channel >= N_ACTUATORS) {
            return Err(ControllerError::BadChannel(t.channel));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { config, rng })
    }

    /// Excitation at time `t`; every call advances the noise stream by four draws.
    pub fn sample(&mut self, t: T) -> Vec4<T> {
        let mut e = Vec4::zeros();
        for tone in &self.config.tones {
            e[tone.channel] += tone.amplitude * (tone.frequency * t + tone.phase).sin();
        }
        for j in 0..N_ACTUATORS {
            let u: f64 = self.rng.random_range(-1.0..=1.0);
            e[j] += self.config.noise[j] * lit(u);
        }
        e
    }
}

/// `λ_min(Γ)/λ_max(M)`: half the guaranteed decay rate of `ln ½ṽᵀMṽ` on an
/// exactly known plant with full control authority.
pub fn decay_rate_bound<T: Real>(
    gains: &ControllerGains<T>,
    mass: &crate::dynamics::Mat6<T>,
) -> f64 {
    let eig = mass.symmetric_eigenvalues();
    let lmax = eig.iter().fold(f64::MIN, |a, &e| a.max(to_f64(e)));
    let gmin = gains.gamma.iter().fold(f64::MAX, |a, &g| a.min(to_f64(g)));
    gmin / lmax
}
