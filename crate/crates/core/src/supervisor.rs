//! Decision factor supervision: convex blending of model-based and estimated
//! dynamics, windowed rollout cost, steepest descent on λ, rate-limited and
//! lag-gated motion of the applied λ, and manual override.

use std::collections::VecDeque;

use nalgebra::SVector;
use thiserror::Error;

use crate::controller::{
    allocate, control_wrench, saturate, ActuatorLimits, ControllerGains, DesiredMotion,
    ExcitationInjection,
};
use crate::dynamics::{
    acceleration, coriolis_matrix, gravity_wrench, mass_matrix_unchecked, GeneralizedVelocity,
    InertialParams, Mat6, Mat6x4, RegressorSet, Vec3, Vec4, Vec6,
};
use crate::integrate::rk4;
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupervisorError {
    #[error("decision factor {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("model-side mass matrix is not positive definite")]
    ModelNotPositiveDefinite,
    #[error("invalid cost configuration: {0}")]
    BadCostConfig(&'static str),
}

/// Dynamics seen by the controller at decision factor `lambda_used`.
///
/// Mass, inertia and the first mass moment `mρ` are blended linearly, which
/// makes `M`, `C(v)` and `G(η)` exact convex combinations of their model and
/// estimated counterparts while keeping `C` skew-symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendedModel<T: Real> {
    pub params: InertialParams<T>,
    pub mass: Mat6<T>,
    pub b: Mat6x4<T>,
    pub d: Mat6<T>,
    pub tau0: Vec6<T>,
    pub tau_r: Vec6<T>,
    pub g: T,
    pub lambda_used: T,
    /// Requested λ had to be lowered to keep `M` positive definite.
    pub clamped: bool,
}

impl<T: Real> BlendedModel<T> {
    pub fn coriolis(&self, v: &GeneralizedVelocity<T>) -> Mat6<T> {
        coriolis_matrix(v, &self.params)
    }

    pub fn gravity(&self, euler: &Vec3<T>) -> Vec6<T> {
        gravity_wrench(euler, &self.params, self.g)
    }

    pub fn regressors(&self) -> RegressorSet<T> {
        RegressorSet {
            b: self.b,
            d: self.d,
            tau0: self.tau0,
            tau_r: self.tau_r,
            b_negative: None,
        }
    }
}

fn mix<T: Real>(a: T, b: T, lambda: T) -> T {
    (T::one() - lambda) * a + lambda * b
}

fn mixed_params<T: Real>(
    a: &InertialParams<T>,
    b: &InertialParams<T>,
    lambda: T,
) -> InertialParams<T> {
    let m = mix(a.m, b.m, lambda);
    let first_moment = (a.rho * a.m) * (T::one() - lambda) + (b.rho * b.m) * lambda;
    InertialParams {
        m,
        ixx: mix(a.ixx, b.ixx, lambda),
        iyy: mix(a.iyy, b.iyy, lambda),
        izz: mix(a.izz, b.izz, lambda),
        ixz: mix(a.ixz, b.ixz, lambda),
        iyz: mix(a.iyz, b.iyz, lambda),
        ixy: mix(a.ixy, b.ixy, lambda),
        rho: first_moment / m,
    }
}

fn assemble<T: Real>(
    params: InertialParams<T>,
    aero: &RegressorSet<T>,
    tau_r: Vec6<T>,
    lambda: T,
    clamped: bool,
) -> Option<BlendedModel<T>> {
    let mass = mass_matrix_unchecked(&params);
    if !(params.m > T::zero()) || mass.cholesky().is_none() {
        return None;
    }
    Some(BlendedModel {
        params,
        mass,
        b: aero.b,
        d: aero.d,
        tau0: aero.tau0,
        tau_r,
        g: lit(crate::scalar::GRAVITY_FT_S2),
        lambda_used: lambda,
        clamped,
    })
}

/// Convex combination of the model side (λ = 0) and the estimate side (λ = 1).
/// The residual force-moment `τ_r` is taken from the model side. When the
/// blend is not positive definite λ is halved toward the model side.
pub fn blend<T: Real>(
    model_params: &InertialParams<T>,
    model_aero: &RegressorSet<T>,
    est_params: &InertialParams<T>,
    est_aero: &RegressorSet<T>,
    lambda: T,
) -> Result<BlendedModel<T>, SupervisorError> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(SupervisorError::LambdaOutOfRange(to_f64(lambda)));
    }
    let tau_r = model_aero.tau_r;
    let mut l = lambda;
    let mut clamped = false;
    for _ in 0..40 {
        let candidate = if l == T::zero() {
            assemble(*model_params, model_aero, tau_r, l, clamped)
        } else if l == T::one() {
            assemble(*est_params, est_aero, tau_r, l, clamped)
        } else {
            let aero = RegressorSet {
                b: model_aero.b * (T::one() - l) + est_aero.b * l,
                d: model_aero.d * (T::one() - l) + est_aero.d * l,
                tau0: model_aero.tau0 * (T::one() - l) + est_aero.tau0 * l,
                tau_r,
                b_negative: None,
            };
            assemble(
                mixed_params(model_params, est_params, l),
                &aero,
                tau_r,
                l,
                clamped,
            )
        };
        if let Some(m) = candidate {
            return Ok(m);
        }
        clamped = true;
        l *= lit(0.5);
    }
    assemble(*model_params, model_aero, tau_r, T::zero(), true)
        .ok_or(SupervisorError::ModelNotPositiveDefinite)
}

/// Weights and timing of the decision factor optimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConfig<T: Real> {
    /// Terminal weight.
    pub h: Mat6<T>,
    /// Transient weight.
    pub q: Mat6<T>,
    /// Window length, s.
    pub t_p: T,
    /// Descent step on λ.
    pub gamma_step: T,
    /// Maximum |λ̇|, 1/s.
    pub rate_limit: T,
    /// Delay between estimator convergence (or a mode switch) and λ motion, s.
    pub lag: T,
    /// Finite-difference probe spacing on λ.
    pub fd_step: T,
    /// Gradients below `grad_tol_abs + grad_tol_rel·J` leave λ* unchanged.
    pub grad_tol_abs: T,
    pub grad_tol_rel: T,
}

impl<T: Real> CostConfig<T> {
    /// `t_p` = 2 s, γ = 0.05, |λ̇| ≤ 0.25/s, lag = 1.5 × estimator window, `H = Q = I`.
    pub fn default_for(estimator_window_s: T) -> Self {
        Self {
            h: Mat6::identity(),
            q: Mat6::identity(),
            t_p: lit(2.0),
            gamma_step: lit(0.05),
            rate_limit: lit(0.25),
            lag: estimator_window_s * lit(1.5),
            fd_step: lit(0.02),
            grad_tol_abs: lit(1e-9),
            grad_tol_rel: lit(1e-3),
        }
    }

    pub fn validate(&self) -> Result<(), SupervisorError> {
        let psd = |m: &Mat6<T>| {
            (m - m.transpose()).amax() <= lit::<T>(1e-12)
                && m.symmetric_eigenvalues()
                    .iter()
                    .all(|&e| e >= lit::<T>(-1e-12))
        };
        if !psd(&self.h) {
            return Err(SupervisorError::BadCostConfig(
                "terminal weight must be PSD",
            ));
        }
        if !psd(&self.q) {
            return Err(SupervisorError::BadCostConfig(
                "transient weight must be PSD",
            ));
        }
        if !(self.t_p > T::zero()) {
            return Err(SupervisorError::BadCostConfig(
                "window length must be positive",
            ));
        }
        if !(self.rate_limit > T::zero()) {
            return Err(SupervisorError::BadCostConfig(
                "rate limit must be positive",
            ));
        }
        if !(self.fd_step > T::zero() && self.fd_step < lit(0.5)) {
            return Err(SupervisorError::BadCostConfig(
                "probe spacing must lie in (0, 0.5)",
            ));
        }
        Ok(())
    }
}

/// `½ṽ(t₀)ᵀHṽ(t₀) + ½∫ṽᵀQṽ dt` over uniformly spaced error samples ending at `t₀`,
/// integral by the trapezoid rule.
pub fn quadratic_cost<T: Real>(errors: &[Vec6<T>], dt: T, cfg: &CostConfig<T>) -> T {
    let half = lit::<T>(0.5);
    let Some(last) = errors.last() else {
        return T::zero();
    };
    let terminal = half * (last.transpose() * cfg.h * last)[0];
    let w: Vec<T> = errors
        .iter()
        .map(|e| (e.transpose() * cfg.q * e)[0])
        .collect();
    let mut integral = T::zero();
    for k in 1..w.len() {
        integral += (w[k - 1] + w[k]) * half * dt;
    }
    terminal + half * integral
}

/// One recorded step of the closed loop, replayed by the rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSample<T: Real> {
    pub desired: DesiredMotion<T>,
    pub euler: Vec3<T>,
    pub excitation: Vec4<T>,
}

/// Everything needed to re-simulate the last window under a trial λ: the
/// recorded references and excitation, the initial velocity estimate, both
/// model sides, and the controller settings. The plant of the rollout is the
/// estimate side (identified inertial parameters and force-moment regressors).
#[derive(Debug, Clone)]
pub struct RolloutWindow<'a, T: Real> {
    pub samples: &'a [WindowSample<T>],
    pub v0: GeneralizedVelocity<T>,
    pub delta0: Vec4<T>,
    pub dt: T,
    pub model_params: &'a InertialParams<T>,
    pub model_aero: &'a RegressorSet<T>,
    pub est_params: &'a InertialParams<T>,
    pub est_aero: &'a RegressorSet<T>,
    pub gains: &'a ControllerGains<T>,
    pub eps_delta: T,
    pub limits: &'a ActuatorLimits<T>,
    pub injection: ExcitationInjection,
}

impl<T: Real> RolloutWindow<'_, T> {
    /// Tracking errors along the replayed window, or `None` if the rollout diverges
    /// or the allocation becomes singular.
    pub fn errors(&self, lambda: T) -> Option<Vec<Vec6<T>>> {
        let model = blend(
            self.model_params,
            self.model_aero,
            self.est_params,
            self.est_aero,
            lambda,
        )
        .ok()?;
        let plant = self.est_aero;
        let limit = lit::<T>(1e6);
        let mut v = self.v0;
        let mut prev = self.delta0;
        let mut out = Vec::with_capacity(self.samples.len());
        for s in self.samples {
            out.push(v - s.desired.v_d);
            let mut tau_c = control_wrench(&v, &s.euler, &s.desired, &model, self.gains);
            if self.injection == ExcitationInjection::PreAllocation {
                tau_c += model.b * s.excitation;
            }
            let alloc = allocate(&tau_c, &model.b, self.eps_delta, &prev).ok()?;
            let mut cmd = alloc.delta;
            if self.injection == ExcitationInjection::PostAllocation {
                cmd += s.excitation;
            }
            let (delta, _) = saturate(&cmd, self.limits);
            prev = alloc.delta;
            let rhs = |_: T, x: &SVector<T, 6>| {
                let tau = plant.force(&delta, x);
                acceleration(x, &s.euler, &tau, self.est_params, &plant.tau_r, model.g)
            };
            v = rk4(&v, T::zero(), self.dt, rhs).ok()?;
            if !v.iter().all(|x| x.is_finite() && x.abs() < limit) {
                return None;
            }
        }
        Some(out)
    }
}

/// Windowed cost of a trial λ; unstable rollouts cost +∞.
pub fn window_cost<T: Real>(window: &RolloutWindow<'_, T>, lambda: T, cfg: &CostConfig<T>) -> T {
    match window.errors(lambda) {
        Some(e) => quadratic_cost(&e, window.dt, cfg),
        None => T::max_value().unwrap_or_else(|| lit(f64::MAX)),
    }
}

/// Probe values and the resulting descent step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentStep<T: Real> {
    pub lambda_star: T,
    pub lambda_lo: T,
    pub lambda_hi: T,
    pub j_lo: T,
    pub j_hi: T,
    pub gradient: T,
    pub moved: bool,
}

/// `λ* ← clamp(λ* − γ·∇J/|∇J|)` with `∇J` from a central difference (one-sided at
/// the bounds). Non-finite or overflowing costs count as +∞.
pub fn descend<T: Real, F: FnMut(T) -> T>(
    lambda_prev: T,
    mut cost: F,
    cfg: &CostConfig<T>,
) -> DescentStep<T> {
    let h = cfg.fd_step;
    let lo = (lambda_prev - h).max(T::zero());
    let hi = (lambda_prev + h).min(T::one());
    let big = T::max_value().unwrap_or_else(|| lit(f64::MAX));
    let mut probe = |l: T| {
        let j = cost(l);
        if j.is_finite() && j < big {
            Some(j)
        } else {
            None
        }
    };
    let (j_lo, j_hi) = (probe(lo), probe(hi));
    let infinity = T::max_value().unwrap_or_else(|| lit(f64::MAX));
    let mut step = DescentStep {
        lambda_star: lambda_prev,
        lambda_lo: lo,
        lambda_hi: hi,
        j_lo: j_lo.unwrap_or(infinity),
        j_hi: j_hi.unwrap_or(infinity),
        gradient: T::zero(),
        moved: false,
    };
    let direction = match (j_lo, j_hi) {
        (None, None) => return step,
        (Some(_), None) => T::one(),
        (None, Some(_)) => -T::one(),
        (Some(a), Some(b)) => {
            let grad = (b - a) / (hi - lo);
            step.gradient = grad;
            let scale = a.abs().min(b.abs());
            if grad.abs() < cfg.grad_tol_abs + cfg.grad_tol_rel * scale {
                return step;
            }
            grad.signum()
        }
    };
    if direction != T::zero() {
        step.lambda_star = (lambda_prev - cfg.gamma_step * direction)
            .max(T::zero())
            .min(T::one());
        step.moved = step.lambda_star != lambda_prev;
    }
    step
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionMode {
    Auto,
    Manual,
}

/// Applied, optimal and pilot-selected decision factors with the timing needed
/// for the lag gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionState<T: Real> {
    pub lambda_actual: T,
    pub lambda_opt: T,
    pub lambda_sel: Option<T>,
    pub mode: DecisionMode,
    pub last_update_t: T,
    /// Time the estimator convergence flag last rose; `None` while not converged.
    pub converged_since: Option<T>,
    pub last_switch_t: Option<T>,
}

impl<T: Real> DecisionState<T> {
    pub fn new(lambda0: T) -> Self {
        Self {
            lambda_actual: lambda0,
            lambda_opt: lambda0,
            lambda_sel: None,
            mode: DecisionMode::Auto,
            last_update_t: T::zero(),
            converged_since: None,
            last_switch_t: None,
        }
    }

    pub fn target(&self) -> T {
        match (self.mode, self.lambda_sel) {
            (DecisionMode::Manual, Some(sel)) => sel,
            _ => self.lambda_opt,
        }
    }

    /// Tracks the rising edge of the estimator convergence flag.
    pub fn note_convergence(&mut self, converged: bool, t: T) {
        match (converged, self.converged_since) {
            (true, None) => self.converged_since = Some(t),
            (false, Some(_)) => self.converged_since = None,
            _ => {}
        }
    }

    /// Whether λ may move at time `t`. Manual targets wait only for the lag
    /// after the mode switch; automatic targets additionally need a converged
    /// estimator for at least the lag.
    pub fn gate_open(&self, t: T, lag: T) -> bool {
        let since_switch = self.last_switch_t.is_none_or(|s| t - s >= lag);
        match self.mode {
            DecisionMode::Manual => since_switch,
            DecisionMode::Auto => {
                since_switch && self.converged_since.is_some_and(|c| t - c >= lag)
            }
        }
    }
}

/// Moves `lambda_actual` toward the current target by at most `rate_limit·dt`,
/// provided the lag gate is open. The bound holds exactly on the stored values.
pub fn advance_lambda<T: Real>(
    state: &DecisionState<T>,
    t: T,
    dt: T,
    cfg: &CostConfig<T>,
) -> DecisionState<T> {
    let mut next = *state;
    next.last_update_t = t;
    if !state.gate_open(t, cfg.lag) {
        return next;
    }
    let max_step = cfg.rate_limit * dt;
    let old = state.lambda_actual;
    let target = state.target().max(T::zero()).min(T::one());
    let mut delta = (target - old).max(-max_step).min(max_step);
    let shrink = T::one() - T::default_epsilon() * lit(4.0);
    let mut new = old + delta;
    while (new - old).abs() > max_step {
        delta *= shrink;
        new = old + delta;
    }
    next.lambda_actual = new.max(T::zero()).min(T::one());
    next
}

/// Pilot selection of λ (`Some`) or release back to automatic (`None`).
pub fn manual_override<T: Real>(
    state: &DecisionState<T>,
    selection: Option<T>,
    t: T,
) -> Result<DecisionState<T>, SupervisorError> {
    let mut next = *state;
    match selection {
        Some(sel) => {
            if !(sel >= T::zero() && sel <= T::one()) {
                return Err(SupervisorError::LambdaOutOfRange(to_f64(sel)));
            }
            next.mode = DecisionMode::Manual;
            next.lambda_sel = Some(sel);
        }
        None => {
            next.mode = DecisionMode::Auto;
            next.lambda_sel = None;
        }
    }
    next.last_switch_t = Some(t);
    Ok(next)
}

/// Declares the estimator converged once the moving average of the innovation
/// norm has stayed below a threshold for a hold period.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor<T: Real> {
    pub threshold: T,
    pub average_len: usize,
    pub hold_len: usize,
    buffer: VecDeque<T>,
    sum: T,
    pushes: usize,
    below: usize,
}

impl<T: Real> ConvergenceMonitor<T> {
    pub fn new(threshold: T, average_len: usize, hold_len: usize) -> Self {
        Self {
            threshold,
            average_len: average_len.max(1),
            hold_len,
            buffer: VecDeque::new(),
            sum: T::zero(),
            pushes: 0,
            below: 0,
        }
    }

    pub fn average(&self) -> T {
        if self.buffer.is_empty() {
            T::zero()
        } else {
            self.sum / lit(self.buffer.len() as f64)
        }
    }

    pub fn update(&mut self, innovation_norm: T) -> bool {
        self.buffer.push_back(innovation_norm);
        self.sum += innovation_norm;
        self.pushes += 1;
        if self.buffer.len() > self.average_len {
            if let Some(old) = self.buffer.pop_front() {
                self.sum -= old;
            }
        }
        // Re-sum periodically so the running total does not drift.
        if self.pushes.is_multiple_of(1024) {
            self.sum = self.buffer.iter().fold(T::zero(), |a, &b| a + b);
        }
        let full = self.buffer.len() == self.average_len;
        if full && self.average() < self.threshold {
            self.below += 1;
        } else {
            self.below = 0;
        }
        self.converged()
    }

    pub fn converged(&self) -> bool {
        self.below >= self.hold_len.max(1)
    }
}
