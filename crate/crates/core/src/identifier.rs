//! Identification of the linear evolution `τ̂ ≈ B̂δ + D̂v + τ̂₀` of estimated
//! force-moments: windowed batch least squares over stacked observations and a
//! per-channel recursive least-squares baseline.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SMatrix, SVector};
use thiserror::Error;

use crate::dynamics::{GeneralizedVelocity, Mat6, Mat6x4, RegressorSet, Vec4, Vec6};
use crate::scalar::{lit, to_f64, Real};

/// Regressor length: four commands, six velocities and a constant.
pub const N_REGRESSOR: usize = 11;

pub type Regressor<T> = SVector<T, N_REGRESSOR>;
pub type RegressorMatrix<T> = SMatrix<T, 6, N_REGRESSOR>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentifierError {
    #[error("window holds {have} samples, at least {need} required")]
    TooFewSamples { have: usize, need: usize },
    #[error("stack condition number {0:e} above the hard ceiling")]
    IllConditioned(f64),
    #[error("normal equations are not positive definite")]
    Singular,
}

/// One pseudo-observation and the inputs that accompany it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T: Real> {
    pub tau_hat: Vec6<T>,
    pub delta: Vec4<T>,
    pub v: GeneralizedVelocity<T>,
    pub t: T,
}

impl<T: Real> Sample<T> {
    /// `[δ; v; 1]`
    pub fn regressor(&self) -> Regressor<T> {
        regressor(&self.delta, &self.v)
    }
}

pub fn regressor<T: Real>(delta: &Vec4<T>, v: &GeneralizedVelocity<T>) -> Regressor<T> {
    let mut y = Regressor::zeros();
    y.fixed_rows_mut::<4>(0).copy_from(delta);
    y.fixed_rows_mut::<6>(4).copy_from(v);
    y[10] = T::one();
    y
}

/// Fixed-capacity, time-ordered ring buffer of samples.
#[derive(Debug, Clone)]
pub struct SampleWindow<T: Real> {
    capacity: usize,
    samples: VecDeque<Sample<T>>,
}

impl<T: Real> SampleWindow<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            samples: VecDeque::with_capacity(capacity),
        }
    }

    /// Appends a sample, evicting the oldest when full. Out-of-order samples are dropped.
    pub fn push(&mut self, s: Sample<T>) -> bool {
        if let Some(last) = self.samples.back() {
            if !(s.t > last.t) {
                return false;
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(s);
        true
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample<T>> {
        self.samples.iter()
    }
}

/// Column `i` of `T̂` is `τ̂ᵢ`; column `i` of `Y` is `[δᵢ; vᵢ; 1]`.
pub fn build_stacks<T: Real>(
    window: &SampleWindow<T>,
) -> Result<(DMatrix<T>, DMatrix<T>), IdentifierError> {
    stacks_from(window.iter())
}

pub fn stacks_from<'a, T: Real + 'a>(
    samples: impl Iterator<Item = &'a Sample<T>>,
) -> Result<(DMatrix<T>, DMatrix<T>), IdentifierError> {
    let samples: Vec<&Sample<T>> = samples.collect();
    let m = samples.len();
    if m < N_REGRESSOR {
        return Err(IdentifierError::TooFewSamples {
            have: m,
            need: N_REGRESSOR,
        });
    }
    let mut t_hat = DMatrix::zeros(6, m);
    let mut y = DMatrix::zeros(N_REGRESSOR, m);
    for (i, s) in samples.iter().enumerate() {
        t_hat.set_column(i, &s.tau_hat);
        y.set_column(i, &s.regressor());
    }
    Ok((t_hat, y))
}

/// Numerical rank of a stack, relative to its largest singular value.
pub fn stack_rank<T: Real>(y: &DMatrix<T>, tol: T) -> usize {
    let sv = y.clone().singular_values();
    let top = sv.iter().fold(T::zero(), |a, &b| a.max(b));
    sv.iter().filter(|&&s| s > tol * top).count()
}

/// When to regularise and when to give up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgePolicy<T: Real> {
    /// Condition number above which the ridge engages.
    pub threshold: T,
    /// Ridge weight relative to `trace(YYᵀ)/11`.
    pub scale: T,
    /// Condition number above which the fit is rejected.
    pub ceiling: T,
}

impl<T: Real> Default for RidgePolicy<T> {
    fn default() -> Self {
        Self {
            threshold: lit(1e8),
            scale: lit(1e-8),
            ceiling: lit(1e14),
        }
    }
}

/// Identified `P̂ = [B̂ | D̂ | τ̂₀]` with fit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorEstimate<T: Real> {
    pub p_hat: RegressorMatrix<T>,
    /// Condition number of the row-equilibrated `YYᵀ`.
    pub condition_number: T,
    /// RMS over samples of `‖τ̂ᵢ − P̂yᵢ‖`.
    pub fit_residual_rms: T,
    /// Ridge actually applied (0 when well conditioned).
    pub ridge: T,
}

impl<T: Real> RegressorEstimate<T> {
    pub fn b(&self) -> Mat6x4<T> {
        self.p_hat.fixed_view::<6, 4>(0, 0).into_owned()
    }

    pub fn d(&self) -> Mat6<T> {
        self.p_hat.fixed_view::<6, 6>(0, 4).into_owned()
    }

    pub fn tau0(&self) -> Vec6<T> {
        self.p_hat.column(10).into_owned()
    }

    pub fn predict(&self, delta: &Vec4<T>, v: &GeneralizedVelocity<T>) -> Vec6<T> {
        self.p_hat * regressor(delta, v)
    }

    pub fn to_regressor_set(&self, tau_r: Vec6<T>) -> RegressorSet<T> {
        RegressorSet {
            b: self.b(),
            d: self.d(),
            tau0: self.tau0(),
            tau_r,
            b_negative: None,
        }
    }

    pub fn from_regressor_set(r: &RegressorSet<T>) -> Self {
        let mut p_hat = RegressorMatrix::zeros();
        p_hat.fixed_view_mut::<6, 4>(0, 0).copy_from(&r.b);
        p_hat.fixed_view_mut::<6, 6>(0, 4).copy_from(&r.d);
        p_hat.set_column(10, &r.tau0);
        Self {
            p_hat,
            condition_number: T::one(),
            fit_residual_rms: T::zero(),
            ridge: T::zero(),
        }
    }
}

/// Batch fit `P̂ = T̂Yᵀ(YYᵀ + ridge·I)⁻¹`.
///
/// The rows of `Y` are equilibrated to unit norm before the condition number is
/// measured and the ridge applied; without a ridge this is the same estimator,
/// and it keeps the large airspeed row from masking the small angular-rate rows.
pub fn koopman_fit<T: Real>(
    t_hat: &DMatrix<T>,
    y: &DMatrix<T>,
    policy: &RidgePolicy<T>,
) -> Result<RegressorEstimate<T>, IdentifierError> {
    let m = y.ncols();
    if m < N_REGRESSOR {
        return Err(IdentifierError::TooFewSamples {
            have: m,
            need: N_REGRESSOR,
        });
    }
    let scale: Vec<T> = (0..N_REGRESSOR)
        .map(|i| {
            let n = y.row(i).norm();
            if n > T::zero() {
                T::one() / n
            } else {
                T::one()
            }
        })
        .collect();
    let mut ys = y.clone();
    for (i, s) in scale.iter().enumerate() {
        ys.row_mut(i).scale_mut(*s);
    }
    let gram = &ys * ys.transpose();
    let eig = gram.clone().symmetric_eigenvalues();
    let lo = eig
        .iter()
        .fold(T::max_value().unwrap_or(lit(f64::MAX)), |a, &b| a.min(b));
    let hi = eig.iter().fold(T::zero(), |a, &b| a.max(b));
    let cond = if lo > T::zero() {
        hi / lo
    } else {
        T::max_value().unwrap_or(lit(f64::MAX))
    };
    if !(cond <= policy.ceiling) {
        return Err(IdentifierError::IllConditioned(to_f64(cond)));
    }
    let ridge = if cond > policy.threshold {
        policy.scale * gram.trace() / lit(N_REGRESSOR as f64)
    } else {
        T::zero()
    };
    let reg = &gram + DMatrix::identity(N_REGRESSOR, N_REGRESSOR) * ridge;
    let chol = reg.cholesky().ok_or(IdentifierError::Singular)?;
    // P̂ᵀ = S (G + rI)⁻¹ S Y T̂ᵀ with S the row scaling
    let rhs = &ys * t_hat.transpose();
    let sol = chol.solve(&rhs);
    let mut p_hat = RegressorMatrix::zeros();
    for i in 0..N_REGRESSOR {
        for r in 0..6 {
            p_hat[(r, i)] = sol[(i, r)] * scale[i];
        }
    }
    let resid = t_hat - DMatrix::from_column_slice(6, N_REGRESSOR, p_hat.as_slice()) * y;
    let rms = (resid.norm_squared() / lit(m as f64)).sqrt();
    Ok(RegressorEstimate {
        p_hat,
        condition_number: cond,
        fit_residual_rms: rms,
        ridge,
    })
}

/// Fits a window directly.
pub fn fit_window<T: Real>(
    window: &SampleWindow<T>,
    policy: &RidgePolicy<T>,
) -> Result<RegressorEstimate<T>, IdentifierError> {
    let (t_hat, y) = build_stacks(window)?;
    koopman_fit(&t_hat, &y, policy)
}

/// Per-sample `τ̂ᵢ − P̂yᵢ`.
pub fn estimate_extra_term<'a, T: Real + 'a>(
    samples: impl Iterator<Item = &'a Sample<T>>,
    fit: &RegressorEstimate<T>,
) -> Vec<Vec6<T>> {
    samples
        .map(|s| s.tau_hat - fit.p_hat * s.regressor())
        .collect()
}

/// Per-channel RMS of a residual series.
pub fn channel_rms<T: Real>(residuals: &[Vec6<T>]) -> Vec6<T> {
    if residuals.is_empty() {
        return Vec6::zeros();
    }
    let mut acc = Vec6::zeros();
    for r in residuals {
        acc += r.component_mul(r);
    }
    (acc / lit::<T>(residuals.len() as f64)).map(|x| x.sqrt())
}

/// Exponentially weighted recursive least squares sharing one covariance across
/// the six output channels (they share the regressor).
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState<T: Real> {
    /// 11×6 weights; column `c` predicts channel `c`.
    pub theta: SMatrix<T, N_REGRESSOR, 6>,
    pub p_cov: SMatrix<T, N_REGRESSOR, N_REGRESSOR>,
    pub forgetting: T,
}

impl<T: Real> RlsState<T> {
    pub fn new(initial_covariance: T, forgetting: T) -> Self {
        Self {
            theta: SMatrix::zeros(),
            p_cov: SMatrix::identity() * initial_covariance,
            forgetting,
        }
    }

    pub fn estimate(&self) -> RegressorEstimate<T> {
        RegressorEstimate {
            p_hat: self.theta.transpose(),
            condition_number: T::one(),
            fit_residual_rms: T::zero(),
            ridge: T::zero(),
        }
    }

    /// A-priori prediction for a regressor.
    pub fn predict(&self, phi: &Regressor<T>) -> Vec6<T> {
        self.theta.transpose() * phi
    }
}

/// One RLS step; returns the updated state and the a-priori prediction error.
pub fn rls_update<T: Real>(state: &RlsState<T>, sample: &Sample<T>) -> (RlsState<T>, Vec6<T>) {
    let phi = sample.regressor();
    let err = sample.tau_hat - state.predict(&phi);
    let p_phi = state.p_cov * phi;
    let denom = state.forgetting + (phi.transpose() * p_phi)[0];
    let gain = p_phi / denom;
    let theta = state.theta + gain * err.transpose();
    let p = (state.p_cov - gain * p_phi.transpose()) / state.forgetting;
    let p = (p + p.transpose()) * lit::<T>(0.5);
    (
        RlsState {
            theta,
            p_cov: p,
            forgetting: state.forgetting,
        },
        err,
    )
}
