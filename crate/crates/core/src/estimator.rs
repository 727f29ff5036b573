//! Joint unscented Kalman filter over generalized velocity, a third-order
//! Gauss-Markov model of the generalized force, and the inertial parameters.
//!
//! State layout (34): `[v (6); τ (6); ζ₁ (6); ζ₂ (6); p (10)]` with
//! `τ̇ = ζ₁`, `ζ̇₁ = ζ₂`, `ζ̇₂ = 0`, `ṗ = 0` and
//! `v̇ = M(p)⁻¹(τ + τ_r − C(v,p)v − G(η,p))`. The measurement is `y = v + noise`.

use nalgebra::{DMatrix, SMatrix, SVector};
use thiserror::Error;

use crate::dynamics::{
    acceleration, mass_matrix_unchecked, DynamicsError, InertialParams, Mat6, Vec3, Vec6, N_PARAMS,
};
use crate::integrate::rk4;
use crate::scalar::{lit, to_f64, Real};

pub const N_STATE: usize = 34;
pub const N_SIGMA: usize = 2 * N_STATE + 1;
pub const N_TAU_A: usize = 18;
pub const V_OFFSET: usize = 0;
pub const TAU_OFFSET: usize = 6;
pub const P_OFFSET: usize = 24;
pub const N_OBS_ROWS: usize = 6 * N_STATE;

pub type StateVector<T> = SVector<T, N_STATE>;
pub type StateMatrix<T> = SMatrix<T, N_STATE, N_STATE>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("covariance factorisation failed after diagonal jitter")]
    CovarianceNotFactorable,
    #[error("invalid filter configuration: {0}")]
    BadConfig(&'static str),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Structured view of the 34-element filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState<T: Real> {
    pub v: Vec6<T>,
    /// `[τ; ζ₁; ζ₂]`
    pub tau_a: SVector<T, N_TAU_A>,
    pub p: InertialParams<T>,
}

impl<T: Real> AugmentedState<T> {
    pub fn new(v: Vec6<T>, tau: Vec6<T>, p: InertialParams<T>) -> Self {
        let mut tau_a = SVector::<T, N_TAU_A>::zeros();
        tau_a.fixed_rows_mut::<6>(0).copy_from(&tau);
        Self { v, tau_a, p }
    }

    pub fn tau(&self) -> Vec6<T> {
        self.tau_a.fixed_rows::<6>(0).into_owned()
    }

    pub fn to_vector(&self) -> StateVector<T> {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<6>(V_OFFSET).copy_from(&self.v);
        x.fixed_rows_mut::<N_TAU_A>(TAU_OFFSET)
            .copy_from(&self.tau_a);
        x.fixed_rows_mut::<N_PARAMS>(P_OFFSET)
            .copy_from(&self.p.to_vector());
        x
    }

    pub fn from_vector(x: &StateVector<T>) -> Self {
        Self {
            v: x.fixed_rows::<6>(V_OFFSET).into_owned(),
            tau_a: x.fixed_rows::<N_TAU_A>(TAU_OFFSET).into_owned(),
            p: InertialParams::from_slice(x.fixed_rows::<N_PARAMS>(P_OFFSET).as_slice()),
        }
    }
}

/// Filter tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct UkfConfig<T: Real> {
    /// Sigma-point spread; points sit at `±√(n+κ)` Cholesky columns.
    pub kappa: T,
    /// Initial process noise, per step.
    pub q0: StateMatrix<T>,
    /// Initial measurement noise.
    pub r0: Mat6<T>,
    /// Forget factor α of the covariance adaptation (1 disables it).
    pub alpha_forget: T,
    /// Relative finite-difference step for the jacobians.
    pub fd_step: T,
    /// Steps between observability evaluations (0 disables them).
    pub obs_check_period: usize,
    /// Innovation Mahalanobis distance above which a measurement is rejected.
    pub gate: T,
    /// Minimum eigenvalue kept in the adapted measurement covariance.
    pub r_floor: T,
    pub adapt_process_noise: bool,
    pub adapt_measurement_noise: bool,
    pub mass_floor: T,
    pub inertia_floor: T,
    pub g: T,
}

impl<T: Real> UkfConfig<T> {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.alpha_forget > T::zero() && self.alpha_forget <= T::one()) {
            return Err(EstimatorError::BadConfig(
                "forget factor must lie in (0, 1]",
            ));
        }
        if !(lit::<T>(N_STATE as f64) + self.kappa > T::zero()) {
            return Err(EstimatorError::BadConfig("n + κ must be positive"));
        }
        if !(self.fd_step > T::zero()) {
            return Err(EstimatorError::BadConfig(
                "finite-difference step must be positive",
            ));
        }
        if self.r0.cholesky().is_none() {
            return Err(EstimatorError::BadConfig("R0 must be positive definite"));
        }
        let q_sym = (self.q0 + self.q0.transpose()) * lit::<T>(0.5);
        if q_sym
            .symmetric_eigenvalues()
            .iter()
            .any(|&e| e < lit(-1e-12))
        {
            return Err(EstimatorError::BadConfig(
                "Q0 must be positive semidefinite",
            ));
        }
        Ok(())
    }
}

/// Weighted sigma-point set.
#[derive(Debug, Clone)]
pub struct SigmaPoints<T: Real> {
    pub points: Vec<StateVector<T>>,
    pub weights: Vec<T>,
    /// Diagonal jitter that had to be added before the factorisation succeeded.
    pub jitter: T,
}

/// Symmetric `2n+1` set `{x̄, x̄ ± √(n+κ)·Lᵢ}` with `W₀ = κ/(n+κ)`, `Wᵢ = 1/(2(n+κ))`.
pub fn sigma_points<T: Real>(
    mean: &StateVector<T>,
    cov: &StateMatrix<T>,
    kappa: T,
) -> Result<SigmaPoints<T>, EstimatorError> {
    let n = lit::<T>(N_STATE as f64);
    let spread = n + kappa;
    let sym = (cov + cov.transpose()) * lit::<T>(0.5);
    let scale = (sym.trace() / n).abs().max(T::default_epsilon());
    let mut jitter = T::zero();
    let mut factor = None;
    for attempt in 0..8 {
        let trial = if attempt == 0 {
            sym
        } else {
            jitter = scale * lit::<T>(10f64.powi(attempt - 13));
            sym + StateMatrix::identity() * jitter
        };
        if let Some(ch) = (trial * spread).cholesky() {
            factor = Some(ch.l());
            break;
        }
    }
    let l = factor.ok_or(EstimatorError::CovarianceNotFactorable)?;
    let mut points = Vec::with_capacity(N_SIGMA);
    points.push(*mean);
    for i in 0..N_STATE {
        points.push(mean + l.column(i));
    }
    for i in 0..N_STATE {
        points.push(mean - l.column(i));
    }
    let mut weights = vec![T::one() / (lit::<T>(2.0) * spread); N_SIGMA];
    weights[0] = kappa / spread;
    Ok(SigmaPoints {
        points,
        weights,
        jitter,
    })
}

/// Weighted mean and covariance of a sigma-point set.
pub fn sigma_moments<T: Real, const R: usize>(
    points: &[SVector<T, R>],
    weights: &[T],
) -> (SVector<T, R>, SMatrix<T, R, R>) {
    let mut mean = SVector::<T, R>::zeros();
    for (x, &w) in points.iter().zip(weights) {
        mean += x * w;
    }
    let mut cov = SMatrix::<T, R, R>::zeros();
    for (x, &w) in points.iter().zip(weights) {
        let d = x - mean;
        cov += d * d.transpose() * w;
    }
    (mean, cov)
}

/// Inputs held over one filter step besides the state itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessContext<T: Real> {
    pub euler: Vec3<T>,
    pub tau_r: Vec6<T>,
}

/// Continuous-time filter dynamics.
pub fn process_rhs<T: Real>(
    x: &StateVector<T>,
    ctx: &ProcessContext<T>,
    g: T,
) -> Result<StateVector<T>, DynamicsError> {
    let s = AugmentedState::from_vector(x);
    let vdot = acceleration(&s.v, &ctx.euler, &s.tau(), &s.p, &ctx.tau_r, g)?;
    let mut dx = StateVector::zeros();
    dx.fixed_rows_mut::<6>(V_OFFSET).copy_from(&vdot);
    // triple integrator: τ̇ = ζ₁, ζ̇₁ = ζ₂
    for i in 0..12 {
        dx[TAU_OFFSET + i] = x[TAU_OFFSET + 6 + i];
    }
    Ok(dx)
}

/// 18×18 block shift of the force-moment augmentation.
pub fn tau_a_transition<T: Real>() -> SMatrix<T, N_TAU_A, N_TAU_A> {
    let mut a = SMatrix::<T, N_TAU_A, N_TAU_A>::zeros();
    for i in 0..12 {
        a[(i, i + 6)] = T::one();
    }
    a
}

/// Linearisation of the velocity dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians<T: Real> {
    pub df_dv: SMatrix<T, 6, 6>,
    pub df_dtau_a: SMatrix<T, 6, N_TAU_A>,
    pub df_dp: SMatrix<T, 6, N_PARAMS>,
}

fn central_difference<T: Real>(
    x: &StateVector<T>,
    idx: usize,
    h: T,
    ctx: &ProcessContext<T>,
    g: T,
) -> Result<Vec6<T>, DynamicsError> {
    let mut xp = *x;
    let mut xm = *x;
    xp[idx] += h;
    xm[idx] -= h;
    let fp = process_rhs(&xp, ctx, g)?;
    let fm = process_rhs(&xm, ctx, g)?;
    Ok((fp.fixed_rows::<6>(0) - fm.fixed_rows::<6>(0)) / (h + h))
}

/// Jacobians of `v̇` with respect to `v`, `τ_a` and `p`. The `τ_a` block is
/// analytic (`[M⁻¹ 0]`); the others use central differences with step
/// `fd_step·(1 + |xᵢ|)`.
pub fn jacobians<T: Real>(
    x: &StateVector<T>,
    ctx: &ProcessContext<T>,
    fd_step: T,
    g: T,
) -> Result<Jacobians<T>, DynamicsError> {
    let s = AugmentedState::from_vector(x);
    let minv = mass_matrix_unchecked(&s.p)
        .cholesky()
        .ok_or(DynamicsError::MassMatrixNotPositiveDefinite)?
        .inverse();
    let mut df_dtau_a = SMatrix::<T, 6, N_TAU_A>::zeros();
    df_dtau_a.fixed_view_mut::<6, 6>(0, 0).copy_from(&minv);
    let mut df_dv = SMatrix::<T, 6, 6>::zeros();
    for j in 0..6 {
        let idx = V_OFFSET + j;
        let h = fd_step * (T::one() + x[idx].abs());
        df_dv.set_column(j, &central_difference(x, idx, h, ctx, g)?);
    }
    let mut df_dp = SMatrix::<T, 6, N_PARAMS>::zeros();
    for j in 0..N_PARAMS {
        let idx = P_OFFSET + j;
        let h = fd_step * (T::one() + x[idx].abs());
        df_dp.set_column(j, &central_difference(x, idx, h, ctx, g)?);
    }
    Ok(Jacobians {
        df_dv,
        df_dtau_a,
        df_dp,
    })
}

/// Continuous-time system matrix of the augmented model.
pub fn system_matrix<T: Real>(j: &Jacobians<T>) -> StateMatrix<T> {
    let mut a = StateMatrix::zeros();
    a.fixed_view_mut::<6, 6>(0, V_OFFSET).copy_from(&j.df_dv);
    a.fixed_view_mut::<6, N_TAU_A>(0, TAU_OFFSET)
        .copy_from(&j.df_dtau_a);
    a.fixed_view_mut::<6, N_PARAMS>(0, P_OFFSET)
        .copy_from(&j.df_dp);
    a.fixed_view_mut::<N_TAU_A, N_TAU_A>(TAU_OFFSET, TAU_OFFSET)
        .copy_from(&tau_a_transition());
    a
}

/// `O = [C; CA; …; CA^{n−1}]` with every block row scaled to unit Frobenius
/// norm before it is propagated, and the singular values of the result
/// (descending).
pub fn balanced_observability<T: Real>(a: &DMatrix<T>, c: &DMatrix<T>) -> (DMatrix<T>, Vec<T>) {
    let n = a.nrows();
    let p = c.nrows();
    let mut o = DMatrix::<T>::zeros(p * n, n);
    let mut block = c.clone();
    for k in 0..n {
        let norm = block.norm();
        if norm > T::zero() {
            block /= norm;
        }
        o.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    let mut sv: Vec<T> = o.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    (o, sv)
}

/// Balanced observability matrix of the augmented model at `x` with `C = [I₆ 0 0]`.
pub fn observability_matrix<T: Real>(
    x: &StateVector<T>,
    ctx: &ProcessContext<T>,
    fd_step: T,
    g: T,
) -> Result<(DMatrix<T>, Vec<T>), DynamicsError> {
    let j = jacobians(x, ctx, fd_step, g)?;
    Ok(observability_from_jacobians(&j))
}

pub fn observability_from_jacobians<T: Real>(j: &Jacobians<T>) -> (DMatrix<T>, Vec<T>) {
    let a = system_matrix(j);
    let a = DMatrix::from_column_slice(N_STATE, N_STATE, a.as_slice());
    let mut c = DMatrix::<T>::zeros(6, N_STATE);
    for i in 0..6 {
        c[(i, V_OFFSET + i)] = T::one();
    }
    balanced_observability(&a, &c)
}

/// Number of singular values above `tol · σ_max`.
pub fn numerical_rank<T: Real>(sv: &[T], tol: T) -> usize {
    let top = sv.iter().fold(T::zero(), |a, &b| a.max(b));
    sv.iter().filter(|&&s| s > tol * top).count()
}

/// Adaptive noise update
/// `Q' = αQ + (1−α)K d dᵀKᵀ`, `R' = αR + (1−α)(εεᵀ + H P⁻ Hᵀ)`,
/// both symmetrised; `R'` eigenvalues floored at `r_floor`.
#[allow(clippy::too_many_arguments)]
pub fn adapt_covariances<T: Real>(
    q: &StateMatrix<T>,
    r: &Mat6<T>,
    k: &SMatrix<T, N_STATE, 6>,
    d: &Vec6<T>,
    eps_res: &Vec6<T>,
    hph: &Mat6<T>,
    alpha: T,
    r_floor: T,
) -> (StateMatrix<T>, Mat6<T>) {
    let half = lit::<T>(0.5);
    let one_minus = T::one() - alpha;
    let kd = k * d;
    let q_new = q * alpha + kd * kd.transpose() * one_minus;
    let r_new = r * alpha + (eps_res * eps_res.transpose() + hph) * one_minus;
    let q_new = (q_new + q_new.transpose()) * half;
    let r_new = (r_new + r_new.transpose()) * half;
    (q_new, floor_eigenvalues(&r_new, r_floor))
}

fn floor_eigenvalues<T: Real>(m: &Mat6<T>, floor: T) -> Mat6<T> {
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&e| e >= floor) {
        return *m;
    }
    let clipped = eig.eigenvalues.map(|e| e.max(floor));
    let out = eig.eigenvectors * Mat6::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (out + out.transpose()) * lit::<T>(0.5)
}

/// Filter output after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutput<T: Real> {
    pub x_hat: AugmentedState<T>,
    pub p_cov: StateMatrix<T>,
    /// `y − h(x̂⁻)`
    pub innovation: Vec6<T>,
    /// `y − h(x̂⁺)`
    pub residual: Vec6<T>,
    /// Squared Mahalanobis distance of the innovation.
    pub mahalanobis: T,
    pub rejected: bool,
    pub obs_singular_values: Option<Vec<T>>,
}

/// Event counters for telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterEvents {
    pub rejected_measurements: usize,
    pub parameter_projections: usize,
    pub jitter_applications: usize,
    pub resets: usize,
}

/// Joint augmented unscented Kalman filter.
#[derive(Debug, Clone)]
pub struct JointUkf<T: Real> {
    pub cfg: UkfConfig<T>,
    pub x: StateVector<T>,
    pub p_cov: StateMatrix<T>,
    pub q: StateMatrix<T>,
    pub r: Mat6<T>,
    pub events: FilterEvents,
    pub steps: usize,
    p_init: StateMatrix<T>,
}

/// Prior mean and covariance after a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Real> {
    pub x: StateVector<T>,
    pub p_cov: StateMatrix<T>,
}

impl<T: Real> JointUkf<T> {
    pub fn new(
        cfg: UkfConfig<T>,
        x0: AugmentedState<T>,
        p0: StateMatrix<T>,
    ) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        Ok(Self {
            q: cfg.q0,
            r: cfg.r0,
            x: x0.to_vector(),
            p_cov: p0,
            p_init: p0,
            cfg,
            events: FilterEvents::default(),
            steps: 0,
        })
    }

    pub fn state(&self) -> AugmentedState<T> {
        AugmentedState::from_vector(&self.x)
    }

    fn project_point(&mut self, x: &mut StateVector<T>) {
        let p = InertialParams::from_slice(x.fixed_rows::<N_PARAMS>(P_OFFSET).as_slice());
        let (mut q, mut changed) = p.project_valid(self.cfg.mass_floor, self.cfg.inertia_floor);
        if mass_matrix_unchecked(&q).cholesky().is_none() {
            q.rho = Vec3::zeros();
            changed = true;
        }
        if changed {
            x.fixed_rows_mut::<N_PARAMS>(P_OFFSET)
                .copy_from(&q.to_vector());
            self.events.parameter_projections += 1;
        }
    }

    fn sigma(&mut self, mean: &StateVector<T>, cov: &StateMatrix<T>) -> SigmaPoints<T> {
        match sigma_points(mean, cov, self.cfg.kappa) {
            Ok(s) => {
                if s.jitter > T::zero() {
                    self.events.jitter_applications += 1;
                }
                s
            }
            Err(_) => {
                // Fall back to the initial covariance around the current mean.
                self.events.resets += 1;
                self.p_cov = self.p_init;
                sigma_points(mean, &self.p_init, self.cfg.kappa)
                    .expect("initial covariance is factorable")
            }
        }
    }

    /// Propagates every sigma point through one RK4 step of the process model.
    pub fn predict(
        &mut self,
        dt: T,
        ctx: &ProcessContext<T>,
    ) -> Result<Prediction<T>, EstimatorError> {
        let (x0, p0) = (self.x, self.p_cov);
        let mut sp = self.sigma(&x0, &p0);
        let g = self.cfg.g;
        for x in sp.points.iter_mut() {
            self.project_point(x);
            *x = rk4(x, T::zero(), dt, |_, s| process_rhs(s, ctx, g))?;
        }
        let (mean, cov) = sigma_moments(&sp.points, &sp.weights);
        if !mean.iter().chain(cov.iter()).all(|x| x.is_finite()) {
            return Err(EstimatorError::NonFinite("predicted state or covariance"));
        }
        let cov = cov + self.q;
        self.x = mean;
        self.p_cov = (cov + cov.transpose()) * lit::<T>(0.5);
        Ok(Prediction {
            x: self.x,
            p_cov: self.p_cov,
        })
    }

    /// Unscented measurement update with `h(x) = v`, followed by covariance
    /// adaptation when enabled.
    pub fn update(&mut self, y: &Vec6<T>) -> EstimateOutput<T> {
        let prior_x = self.x;
        let prior_p = self.p_cov;
        let sp = self.sigma(&prior_x, &prior_p);
        let z: Vec<Vec6<T>> = sp
            .points
            .iter()
            .map(|x| x.fixed_rows::<6>(V_OFFSET).into_owned())
            .collect();
        let (z_mean, pzz) = sigma_moments(&z, &sp.weights);
        let mut x_mean = StateVector::zeros();
        for (x, &w) in sp.points.iter().zip(&sp.weights) {
            x_mean += x * w;
        }
        let mut pxz = SMatrix::<T, N_STATE, 6>::zeros();
        for ((x, zi), &w) in sp.points.iter().zip(&z).zip(&sp.weights) {
            pxz += (x - x_mean) * (zi - z_mean).transpose() * w;
        }
        let s = pzz + self.r;
        let innovation = y - z_mean;
        let s_inv = s.cholesky().map(|c| c.inverse()).unwrap_or_else(|| {
            s.pseudo_inverse(T::default_epsilon())
                .unwrap_or(Mat6::zeros())
        });
        let mahalanobis = (innovation.transpose() * s_inv * innovation)[0];
        if mahalanobis > self.cfg.gate {
            self.events.rejected_measurements += 1;
            self.steps += 1;
            return EstimateOutput {
                x_hat: self.state(),
                p_cov: self.p_cov,
                innovation,
                residual: innovation,
                mahalanobis,
                rejected: true,
                obs_singular_values: None,
            };
        }
        let k = pxz * s_inv;
        let mut x_post = prior_x + k * innovation;
        self.project_point(&mut x_post);
        let p_post = prior_p - k * s * k.transpose();
        self.x = x_post;
        self.p_cov = (p_post + p_post.transpose()) * lit::<T>(0.5);
        let residual = y - x_post.fixed_rows::<6>(V_OFFSET);
        let alpha = self.cfg.alpha_forget;
        if alpha < T::one() {
            let hph = prior_p.fixed_view::<6, 6>(V_OFFSET, V_OFFSET).into_owned();
            let (q_new, r_new) = adapt_covariances(
                &self.q,
                &self.r,
                &k,
                &innovation,
                &residual,
                &hph,
                alpha,
                self.cfg.r_floor,
            );
            if self.cfg.adapt_process_noise {
                self.q = q_new;
            }
            if self.cfg.adapt_measurement_noise {
                self.r = r_new;
            }
        }
        self.steps += 1;
        EstimateOutput {
            x_hat: self.state(),
            p_cov: self.p_cov,
            innovation,
            residual,
            mahalanobis,
            rejected: false,
            obs_singular_values: None,
        }
    }

    /// Predict, update and, every `obs_check_period` steps, score observability.
    pub fn step(
        &mut self,
        y: &Vec6<T>,
        dt: T,
        ctx: &ProcessContext<T>,
    ) -> Result<EstimateOutput<T>, EstimatorError> {
        if !y.iter().all(|x| x.is_finite()) {
            return Err(EstimatorError::NonFinite("measurement"));
        }
        self.predict(dt, ctx)?;
        let mut out = self.update(y);
        let period = self.cfg.obs_check_period;
        if period > 0 && (self.steps - 1).is_multiple_of(period) {
            let (_, sv) = observability_matrix(&self.x, ctx, self.cfg.fd_step, self.cfg.g)?;
            out.obs_singular_values = Some(sv);
        }
        Ok(out)
    }

    pub fn min_covariance_eigenvalue(&self) -> f64 {
        self.p_cov
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &e| a.min(to_f64(e)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> InertialParams<f64> {
        InertialParams {
            m: 1.5566,
            ixx: 1.229,
            iyy: 5.812,
            izz: 6.770,
            ixz: 0.1066,
            iyz: 0.0,
            ixy: 0.0,
            rho: Vec3::new(0.01, 0.0, 0.002),
        }
    }

    fn ctx() -> ProcessContext<f64> {
        ProcessContext {
            euler: Vec3::new(0.05, 0.07, 0.0),
            tau_r: Vec6::new(0.5, 0.0, -1.0, 0.0, 0.2, 0.0),
        }
    }

    fn config() -> UkfConfig<f64> {
        UkfConfig {
            kappa: 0.0,
            q0: StateMatrix::identity() * 1e-8,
            r0: Mat6::identity() * 1e-4,
            alpha_forget: 1.0,
            fd_step: 1e-6,
            obs_check_period: 0,
            gate: 1e12,
            r_floor: 1e-10,
            adapt_process_noise: false,
            adapt_measurement_noise: false,
            mass_floor: 0.1,
            inertia_floor: 0.01,
            g: 32.174,
        }
    }

    #[test]
    fn unit_covariance_offsets() {
        let mean = StateVector::<f64>::zeros();
        let sp = sigma_points(&mean, &StateMatrix::identity(), 0.0).unwrap();
        assert_eq!(sp.points.len(), 69);
        let r = 34f64.sqrt();
        for i in 0..34 {
            let mut e = StateVector::zeros();
            e[i] = r;
            assert!((sp.points[1 + i] - e).amax() < 1e-15);
            assert!((sp.points[35 + i] + e).amax() < 1e-15);
        }
        let total: f64 = sp.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert_eq!(sp.weights[0], 0.0);
    }

    proptest! {
        #[test]
        fn sigma_points_reproduce_moments(seed in prop::collection::vec(-1.0f64..1.0, 34 * 34 + 34)) {
            let mean = StateVector::from_column_slice(&seed[..34]);
            let a = StateMatrix::from_column_slice(&seed[34..]);
            let cov = a * a.transpose() + StateMatrix::identity() * 1e-3;
            let sp = sigma_points(&mean, &cov, 0.0).unwrap();
            let (m, c) = sigma_moments(&sp.points, &sp.weights);
            prop_assert!((m - mean).amax() < 1e-12);
            prop_assert!((c - cov).amax() < 1e-10);
        }
    }

    #[test]
    fn indefinite_covariance_gets_jitter_or_fails() {
        let mut cov = StateMatrix::<f64>::identity();
        cov[(0, 0)] = 0.0;
        let sp = sigma_points(&StateVector::zeros(), &cov, 0.0).unwrap();
        assert!(sp.jitter > 0.0);
        cov[(0, 0)] = -1.0;
        assert!(matches!(
            sigma_points(&StateVector::zeros(), &cov, 0.0),
            Err(EstimatorError::CovarianceNotFactorable)
        ));
    }

    #[test]
    fn unscented_transform_is_exact_on_linear_maps() {
        let mean = StateVector::from_fn(|i, _| (i as f64 * 0.37).sin());
        let a = StateMatrix::from_fn(|i, j| ((i * 7 + j * 3) as f64).cos() * 0.1);
        let cov = a * a.transpose() + StateMatrix::identity() * 0.01;
        let sp = sigma_points(&mean, &cov, 0.0).unwrap();
        let h = SMatrix::<f64, 6, N_STATE>::from_fn(|i, j| ((i + 2 * j) as f64).sin());
        let z: Vec<Vec6<f64>> = sp.points.iter().map(|x| h * x).collect();
        let (zm, zc) = sigma_moments(&z, &sp.weights);
        assert!((zm - h * mean).amax() < 1e-10);
        assert!((zc - h * cov * h.transpose()).amax() < 1e-10);
    }

    #[test]
    fn shift_matrix_integrates_constant_jerk() {
        let a = tau_a_transition::<f64>();
        let mut tau_a = SVector::<f64, 18>::zeros();
        tau_a[12 + 2] = 3.0;
        let dt = 0.01;
        let next = rk4(
            &tau_a,
            0.0,
            dt,
            |_, x| -> Result<_, std::convert::Infallible> { Ok(a * x) },
        )
        .unwrap();
        assert!((next[2] - 0.5 * 3.0 * dt * dt).abs() < 1e-15);
        assert!((next[8] - 3.0 * dt).abs() < 1e-15);
        assert_eq!(next[12 + 2], 3.0);
    }

    #[test]
    fn prediction_without_drift_keeps_tau() {
        let mut cfg = config();
        cfg.q0 = StateMatrix::zeros();
        let tau = Vec6::new(1.0, 2.0, 3.0, 0.1, 0.2, 0.3);
        let x0 = AugmentedState::new(Vec6::new(120.0, 0.0, 8.0, 0.0, 0.0, 0.0), tau, params());
        let mut f = JointUkf::new(cfg, x0, StateMatrix::identity() * 1e-6).unwrap();
        f.predict(0.005, &ctx()).unwrap();
        assert!((f.state().tau() - tau).amax() < 1e-12);
    }

    #[test]
    fn tau_block_of_jacobian_is_inverse_mass() {
        let x = AugmentedState::new(
            Vec6::new(100.0, 1.0, 5.0, 0.1, 0.2, 0.3),
            Vec6::zeros(),
            params(),
        )
        .to_vector();
        let j = jacobians(&x, &ctx(), 1e-6, 32.174).unwrap();
        let minv = mass_matrix_unchecked(&params())
            .cholesky()
            .unwrap()
            .inverse();
        assert_eq!(j.df_dtau_a.fixed_view::<6, 6>(0, 0).into_owned(), minv);
        assert_eq!(
            j.df_dtau_a.fixed_view::<6, 12>(0, 6).into_owned(),
            SMatrix::<f64, 6, 12>::zeros()
        );
    }

    #[test]
    fn velocity_jacobian_vanishes_at_rest_without_offset() {
        let mut p = params();
        p.rho = Vec3::zeros();
        let x = AugmentedState::new(Vec6::zeros(), Vec6::zeros(), p).to_vector();
        let j = jacobians(&x, &ctx(), 1e-6, 32.174).unwrap();
        assert!(j.df_dv.amax() < 1e-9, "{}", j.df_dv);
    }

    #[test]
    fn parameter_jacobian_converges_at_second_order() {
        let x = AugmentedState::new(
            Vec6::new(110.0, 3.0, 9.0, 0.2, -0.1, 0.15),
            Vec6::new(5.0, -1.0, -40.0, 0.5, 2.0, -0.3),
            params(),
        )
        .to_vector();
        let d = |h: f64| jacobians(&x, &ctx(), h, 32.174).unwrap().df_dp;
        let (d1, d2, d3) = (d(4e-2), d(2e-2), d(1e-2));
        let ratio = (d1 - d2).norm() / (d2 - d3).norm();
        assert!((ratio - 4.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn chain_of_integrators_is_observable() {
        let a = tau_a_transition::<f64>();
        let a = DMatrix::from_column_slice(18, 18, a.as_slice());
        let mut c = DMatrix::zeros(6, 18);
        for i in 0..6 {
            c[(i, i)] = 1.0;
        }
        let (_, sv) = balanced_observability(&a, &c);
        assert_eq!(sv.len(), 18);
        assert!(sv.iter().all(|&s| s > 1e-3), "{sv:?}");
    }

    #[test]
    fn removing_parameter_sensitivity_drops_rank() {
        let x = AugmentedState::new(
            Vec6::new(110.0, 3.0, 9.0, 0.2, -0.1, 0.15),
            Vec6::new(5.0, -1.0, -40.0, 0.5, 2.0, -0.3),
            params(),
        )
        .to_vector();
        let mut j = jacobians(&x, &ctx(), 1e-6, 32.174).unwrap();
        j.df_dp = SMatrix::zeros();
        let (o, sv) = observability_from_jacobians(&j);
        assert_eq!(o.nrows(), N_OBS_ROWS);
        assert!(*sv.last().unwrap() < 1e-12);
        assert!(numerical_rank(&sv, 1e-10) < 34);
    }

    #[test]
    fn parameter_columns_alias_force_columns() {
        // A·e_p = [∂v̇/∂p; 0; 0] and A·e_τ = [M⁻¹; 0; 0], so every parameter
        // direction maps onto the force-moment direction M·∂v̇/∂p and the
        // observability matrix cannot separate the two.
        let x = AugmentedState::new(
            Vec6::new(110.0, 3.0, 9.0, 0.2, -0.1, 0.15),
            Vec6::new(5.0, -1.0, -40.0, 0.5, 2.0, -0.3),
            params(),
        )
        .to_vector();
        let j = jacobians(&x, &ctx(), 1e-6, 32.174).unwrap();
        let mass = mass_matrix_unchecked(&params());
        let a = system_matrix(&j);
        for k in 0..N_PARAMS {
            let w = mass * j.df_dp.column(k);
            let mut e = StateVector::zeros();
            e[P_OFFSET + k] = 1.0;
            let mut alias = StateVector::zeros();
            alias.fixed_rows_mut::<6>(TAU_OFFSET).copy_from(&w);
            let diff = a * (e - alias);
            assert!(diff.amax() < 1e-9 * (1.0 + w.amax()));
        }
        let (_, sv) = observability_from_jacobians(&j);
        assert!(numerical_rank(&sv, 1e-9) <= 24);
    }

    #[test]
    fn adaptation_identities() {
        let q = StateMatrix::<f64>::identity() * 0.3;
        let r = Mat6::identity() * 0.2;
        let k = SMatrix::<f64, 34, 6>::from_fn(|i, j| (i + j) as f64 * 0.01);
        let d = Vec6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        let e = Vec6::new(0.1, 0.0, 0.2, 0.0, 0.3, 0.0);
        let hph = Mat6::identity() * 0.5;
        let (q1, r1) = adapt_covariances(&q, &r, &k, &d, &e, &hph, 1.0, 1e-12);
        assert_eq!(q1, q);
        assert_eq!(r1, r);
        let (q0, r0) =
            adapt_covariances(&q, &r, &k, &Vec6::zeros(), &Vec6::zeros(), &hph, 0.0, 1e-12);
        assert_eq!(q0, StateMatrix::zeros());
        assert_eq!(r0, hph);
        let (_, rf) = adapt_covariances(&q, &r, &k, &d, &e, &Mat6::zeros(), 0.0, 0.05);
        assert!(rf
            .symmetric_eigenvalues()
            .iter()
            .all(|&x| x >= 0.05 - 1e-12));
    }

    #[test]
    fn exact_measurement_shrinks_covariance_only() {
        let mut cfg = config();
        cfg.r0 = Mat6::identity() * 1e-12;
        let x0 = AugmentedState::new(
            Vec6::new(120.0, 0.0, 8.0, 0.0, 0.0, 0.0),
            Vec6::zeros(),
            params(),
        );
        let mut f = JointUkf::new(cfg, x0, StateMatrix::identity() * 1e-2).unwrap();
        let before = f.x;
        let trace_before = f.p_cov.trace();
        let out = f.update(&before.fixed_rows::<6>(0).into_owned());
        assert!((f.x - before).amax() < 1e-12);
        assert!(f.p_cov.trace() < trace_before);
        assert!(!out.rejected);
    }

    #[test]
    fn gate_rejects_outliers() {
        let mut cfg = config();
        cfg.gate = 25.0;
        let x0 = AugmentedState::new(
            Vec6::new(120.0, 0.0, 8.0, 0.0, 0.0, 0.0),
            Vec6::zeros(),
            params(),
        );
        let mut f = JointUkf::new(cfg, x0, StateMatrix::identity() * 1e-4).unwrap();
        let before = f.x;
        let out = f.update(&Vec6::new(220.0, 0.0, 8.0, 0.0, 0.0, 0.0));
        assert!(out.rejected);
        assert_eq!(f.x, before);
        assert_eq!(f.events.rejected_measurements, 1);
    }

    #[test]
    fn invalid_sigma_parameters_are_projected() {
        let mut p = params();
        p.m = 0.05;
        let x0 = AugmentedState::new(Vec6::new(100.0, 0.0, 5.0, 0.0, 0.0, 0.0), Vec6::zeros(), p);
        let mut f = JointUkf::new(config(), x0, StateMatrix::identity() * 1e-4).unwrap();
        f.predict(0.005, &ctx()).unwrap();
        assert!(f.events.parameter_projections > 0);
        assert!(f.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_validation() {
        let mut c = config();
        c.alpha_forget = 0.0;
        assert!(c.validate().is_err());
        let mut c = config();
        c.r0 = Mat6::zeros();
        assert!(c.validate().is_err());
    }
}
