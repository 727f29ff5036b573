//! Closed-loop orchestration: measure, estimate, identify, supervise λ,
//! control, allocate, saturate and integrate the truth plant.

use std::collections::VecDeque;

use dac_core::controller::{
    allocate, control_wrench, saturate, DesiredMotion, Excitation, ExcitationInjection,
    SaturationMonitor,
};
use dac_core::dynamics::{
    apply_damage, Airframe, InertialParams, PlantState, Pose, RegressorSet, Vec3, Vec4, Vec6,
    N_ACTUATORS,
};
use dac_core::estimator::{AugmentedState, JointUkf, ProcessContext, P_OFFSET};
use dac_core::identifier::{
    fit_window, rls_update, RegressorEstimate, RlsState, Sample, SampleWindow,
};
use dac_core::supervisor::{
    advance_lambda, blend, descend, manual_override, window_cost, ConvergenceMonitor,
    DecisionState, RolloutWindow, WindowSample,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{EventKind, Scenario};
use crate::record::{FiredEvent, FitRow, ObservabilityRow, Row, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Model-based control: λ held at zero.
    Mbc,
    /// Decision-based adaptive control.
    Dac,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Mbc => "mbc",
            Mode::Dac => "dac",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mbc" => Ok(Mode::Mbc),
            "dac" => Ok(Mode::Dac),
            other => Err(format!("unknown mode `{other}` (expected mbc or dac)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    /// Non-finite or out-of-envelope state; `partial` holds everything recorded
    /// up to the abort.
    #[error("run aborted at t = {t}: {reason}")]
    Diverged {
        t: f64,
        reason: String,
        partial: Box<RunRecord>,
    },
    #[error("setup failed: {0}")]
    Setup(String),
}

/// Velocity reference: trim, scripted setpoint ramps and sinusoidal overlays.
struct Reference {
    from: Vec6<f64>,
    to: Vec6<f64>,
    ramp_start: f64,
    ramp_time: f64,
    overlays: Vec<(usize, f64, f64)>,
}

impl Reference {
    fn ramp(&self, t: f64) -> (Vec6<f64>, Vec6<f64>) {
        let s = t - self.ramp_start;
        if !(s > 0.0) {
            (self.from, Vec6::zeros())
        } else if s >= self.ramp_time {
            (self.to, Vec6::zeros())
        } else {
            let slope = (self.to - self.from) / self.ramp_time;
            (self.from + slope * s, slope)
        }
    }

    fn at(&self, t: f64) -> DesiredMotion<f64> {
        let (mut v_d, mut vdot_d) = self.ramp(t);
        for &(ch, amp, w) in &self.overlays {
            v_d[ch] += amp * (w * t).sin();
            vdot_d[ch] += amp * w * (w * t).cos();
        }
        DesiredMotion { v_d, vdot_d }
    }

    fn retarget(&mut self, t: f64, v_d: Vec6<f64>, ramp_time: f64) {
        self.from = self.ramp(t).0;
        self.to = v_d;
        self.ramp_start = t;
        self.ramp_time = ramp_time.max(f64::MIN_POSITIVE);
    }
}

/// Replay buffer for the λ rollout: the window sample plus the filter velocity
/// and allocated command at that step.
#[derive(Clone, Copy)]
struct History {
    sample: WindowSample<f64>,
    v_hat: Vec6<f64>,
    delta_alloc: Vec4<f64>,
}

fn arr6(v: &Vec6<f64>) -> [f64; 6] {
    [v[0], v[1], v[2], v[3], v[4], v[5]]
}

fn arr4(v: &Vec4<f64>) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

fn mask(bits: impl IntoIterator<Item = usize>) -> u8 {
    bits.into_iter().fold(0u8, |m, j| m | (1 << j))
}

fn diverged(t: f64, reason: impl ToString, record: &RunRecord) -> RunError {
    RunError::Diverged {
        t,
        reason: reason.to_string(),
        partial: Box::new(record.clone()),
    }
}

/// Runs a scenario to completion. Identical inputs produce identical records.
pub fn run(sc: &Scenario, mode: Mode) -> Result<RunRecord, RunError> {
    let f = &sc.file;
    let dt = f.dt;
    let n_steps = (f.duration / dt).round() as usize;
    let cost_cfg = sc.cost;

    // truth plant
    let mut truth = Airframe::new(sc.params, sc.aero.clone());
    truth.gravity = sc.gravity;
    truth.airspeed_ceiling = sc.airspeed_ceiling;
    let mut state = PlantState {
        v: sc.v_trim,
        pose: Pose::new(Vec3::new(0.0, 0.0, -sc.altitude), sc.euler_trim),
    };

    // model side (pre-damage knowledge) and estimate side
    let model_params: InertialParams<f64> = sc.params;
    let model_aero: RegressorSet<f64> = sc.aero.clone();
    let mut est_aero = model_aero.clone();

    let mut ukf = JointUkf::new(
        sc.ukf.clone(),
        AugmentedState::new(
            sc.v_trim,
            sc.aero.force(&sc.delta_trim, &sc.v_trim),
            sc.params,
        ),
        sc.p0,
    )
    .map_err(|e| RunError::Setup(e.to_string()))?;
    let id_cfg = &f.identifier;
    let mut window = SampleWindow::new(id_cfg.window);
    let mut rls = RlsState::new(id_cfg.rls_initial_covariance, id_cfg.rls_forgetting);
    let seed_rls = RegressorEstimate::from_regressor_set(&model_aero);
    rls.theta = seed_rls.p_hat.transpose();

    let conv = &f.estimator.convergence;
    let mut monitor = ConvergenceMonitor::new(
        conv.threshold,
        ((conv.average_s / dt).round() as usize).max(1),
        ((conv.hold_s / dt).round() as usize).max(1),
    );
    let mut decision = DecisionState::new(match mode {
        Mode::Dac => f.decision.initial_lambda,
        Mode::Mbc => 0.0,
    });
    let rollout_len = ((cost_cfg.t_p / dt).round() as usize).max(2);
    let mut history: VecDeque<History> = VecDeque::with_capacity(rollout_len + 1);

    let mut excitation =
        Excitation::new(sc.excitation.clone()).map_err(|e| RunError::Setup(e.to_string()))?;
    let injection = sc.excitation.injection;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(f.seed ^ 0x5eed_5e75_0000_0001);
    let noise_v =
        Normal::new(0.0, f.sensors.sigma_v).map_err(|e| RunError::Setup(e.to_string()))?;
    let noise_w =
        Normal::new(0.0, f.sensors.sigma_omega).map_err(|e| RunError::Setup(e.to_string()))?;
    let mut saturation = SaturationMonitor::new(f.controller.saturation_hold_steps);

    let mut reference = Reference {
        from: sc.v_trim,
        to: sc.v_trim,
        ramp_start: f64::INFINITY,
        ramp_time: 1.0,
        overlays: f
            .reference_overlay
            .iter()
            .map(|o| (o.channel, o.amplitude, o.frequency))
            .collect(),
    };
    let range = sc.limits.range();
    let mut pulse: Option<(f64, Vec4<f64>)> = None;

    let mut record = RunRecord {
        mode: mode.label().into(),
        dt,
        rate_limit: cost_cfg.rate_limit,
        rows: Vec::with_capacity(n_steps + 1),
        ..Default::default()
    };
    let mut next_event = 0usize;
    let mut delta_applied = sc.delta_trim;
    let mut delta_alloc = sc.delta_trim;
    let mut euler_prev = state.pose.euler;
    let mut probes = (f64::NAN, f64::NAN);

    for k in 0..=n_steps {
        let t = k as f64 * dt;

        // events: first step with t ≥ scheduled time, once each, in listed order
        while next_event < sc.events.len() && sc.events[next_event].time <= t + dt * 1e-9 {
            let ev = &sc.events[next_event];
            next_event += 1;
            let label = match &ev.kind {
                EventKind::Disturbance {
                    duration,
                    fractions,
                } => {
                    let amp = Vec4::from(*fractions).component_mul(&range);
                    pulse = Some((t + duration, amp));
                    "disturbance".to_string()
                }
                EventKind::Damage { id } => {
                    let case = &sc.damage[id];
                    truth.params =
                        apply_damage(&truth.params, case).map_err(|e| diverged(t, e, &record))?;
                    truth.aero = case.apply_to_regressors(&truth.aero);
                    format!("damage:{id}")
                }
                EventKind::ExtraTermOn => {
                    let mut extra = sc.extra;
                    extra.activation_time = t;
                    truth.extra = Some(extra);
                    "extra_term_on".to_string()
                }
                EventKind::ManualLambda { value } => {
                    if mode == Mode::Dac {
                        decision = manual_override(&decision, *value, t)
                            .map_err(|e| RunError::Setup(e.to_string()))?;
                    }
                    match value {
                        Some(v) => format!("manual_lambda:{v}"),
                        None => "manual_lambda:release".to_string(),
                    }
                }
                EventKind::SetpointChange { v_d, ramp_time } => {
                    reference.retarget(t, Vec6::from(*v_d), *ramp_time);
                    "setpoint_change".to_string()
                }
            };
            record.events.push(FiredEvent {
                scheduled: ev.time,
                fired: t,
                label,
            });
        }

        // measurement
        let mut y = state.v;
        for i in 0..3 {
            y[i] += noise_v.sample(&mut noise_rng);
            y[i + 3] += noise_w.sample(&mut noise_rng);
        }

        // estimation
        let ctx = ProcessContext {
            euler: euler_prev,
            tau_r: model_aero.tau_r,
        };
        let est = if k == 0 {
            ukf.update(&y)
        } else {
            ukf.step(&y, dt, &ctx)
                .map_err(|e| diverged(t, e, &record))?
        };
        if let Some(sv) = est.obs_singular_values.clone() {
            record.observability.push(ObservabilityRow {
                t,
                singular_values: sv,
            });
        }
        let x_hat = est.x_hat;
        let v_hat = x_hat.v;
        let tau_hat = x_hat.tau();
        let innovation_norm = est.innovation.norm();

        // identification on (τ̂ₖ, δₖ₋₁, v̂ₖ)
        let sample = Sample {
            tau_hat: if id_cfg.truth_pseudo_observations {
                truth.wrench(&state, &delta_applied, t)
            } else {
                tau_hat
            },
            delta: delta_applied,
            v: v_hat,
            t,
        };
        let (next_rls, rls_err) = rls_update(&rls, &sample);
        rls = next_rls;
        window.push(sample);
        if k % id_cfg.fit_period == 0 && window.is_full() {
            match fit_window(&window, &sc.ridge) {
                Ok(fit) => {
                    let set = fit.to_regressor_set(model_aero.tau_r);
                    record.fits.push(FitRow {
                        t,
                        condition_number: fit.condition_number,
                        ridge: fit.ridge,
                        residual_rms: fit.fit_residual_rms,
                        accepted: true,
                        b_column_norms: arr4(&set.column_norms()),
                    });
                    est_aero = set;
                }
                Err(_) => record.fits.push(FitRow {
                    t,
                    condition_number: f64::INFINITY,
                    ridge: 0.0,
                    residual_rms: f64::NAN,
                    accepted: false,
                    b_column_norms: arr4(&est_aero.column_norms()),
                }),
            }
        }

        // supervision
        let converged = monitor.update(innovation_norm);
        let desired = reference.at(t);
        if mode == Mode::Dac {
            decision.note_convergence(converged, t);
            if k % f.decision.descent_period == 0
                && history.len() >= rollout_len
                && !record.fits.is_empty()
            {
                let start = history.len() - rollout_len;
                let samples: Vec<WindowSample<f64>> =
                    history.iter().skip(start).map(|h| h.sample).collect();
                let first = history[start];
                let rollout = RolloutWindow {
                    samples: &samples,
                    v0: first.v_hat,
                    delta0: first.delta_alloc,
                    dt,
                    model_params: &model_params,
                    model_aero: &model_aero,
                    est_params: &x_hat.p,
                    est_aero: &est_aero,
                    gains: &sc.gains,
                    eps_delta: sc.eps_delta,
                    limits: &sc.limits,
                    injection,
                };
                let step = descend(
                    decision.lambda_opt,
                    |l| window_cost(&rollout, l, &cost_cfg),
                    &cost_cfg,
                );
                decision.lambda_opt = step.lambda_star;
                probes = (step.j_lo, step.j_hi);
            }
            decision = advance_lambda(&decision, t, dt, &cost_cfg);
        }
        let lambda = decision.lambda_actual;

        // control
        let model = blend(&model_params, &model_aero, &x_hat.p, &est_aero, lambda)
            .map_err(|e| diverged(t, e, &record))?;
        let mut tau_c = control_wrench(&v_hat, &state.pose.euler, &desired, &model, &sc.gains);
        let ex = excitation.sample(t);
        if injection == ExcitationInjection::PreAllocation {
            tau_c += model.b * ex;
        }
        let mut fallback = false;
        let alloc = match allocate(&tau_c, &model.b, sc.eps_delta, &delta_alloc) {
            Ok(a) => a,
            Err(_) => {
                fallback = true;
                decision.lambda_opt *= 0.5;
                allocate(&tau_c, &model_aero.b, sc.eps_delta, &delta_alloc).unwrap_or(
                    dac_core::controller::Allocation {
                        delta: delta_alloc,
                        redacted: (0..N_ACTUATORS).collect(),
                    },
                )
            }
        };
        delta_alloc = alloc.delta;
        let mut cmd = alloc.delta;
        if injection == ExcitationInjection::PostAllocation {
            cmd += ex;
        }
        if let Some((until, amp)) = pulse {
            if t < until {
                cmd += amp;
            } else {
                pulse = None;
            }
        }
        let (delta, hit) = saturate(&cmd, &sc.limits);
        saturation.record(hit);

        history.push_back(History {
            sample: WindowSample {
                desired,
                euler: state.pose.euler,
                excitation: ex,
            },
            v_hat,
            delta_alloc: alloc.delta,
        });
        if history.len() > rollout_len {
            history.pop_front();
        }

        let tau_truth = truth.wrench(&state, &delta_applied, t);
        let p_hat = x_hat.p.to_vector();
        let row = Row {
            t,
            v: arr6(&state.v),
            v_hat: arr6(&v_hat),
            v_d: arr6(&desired.v_d),
            err: arr6(&(state.v - desired.v_d)),
            delta: arr4(&delta),
            tau: arr6(&tau_truth),
            tau_hat: arr6(&tau_hat),
            lambda_actual: lambda,
            lambda_opt: decision.lambda_opt,
            lambda_sel: decision.lambda_sel.unwrap_or(f64::NAN),
            j_lo: probes.0,
            j_hi: probes.1,
            p_hat: std::array::from_fn(|i| p_hat[i]),
            var_m: est.p_cov[(P_OFFSET, P_OFFSET)],
            var_iyy: est.p_cov[(P_OFFSET + 2, P_OFFSET + 2)],
            m_true: truth.params.m,
            iyy_true: truth.params.iyy,
            rls_err: arr6(&rls_err),
            innovation_norm,
            converged,
            rejected: est.rejected,
            manual: decision.lambda_sel.is_some(),
            redacted: mask(alloc.redacted.iter().copied()),
            saturated: mask((0..N_ACTUATORS).filter(|&j| hit[j])),
            clamped: model.clamped,
            fallback,
        };
        let finite = state.is_finite()
            && v_hat.iter().chain(tau_hat.iter()).all(|x| x.is_finite())
            && delta.iter().all(|x| x.is_finite());
        record.rows.push(row);
        if !finite {
            return Err(diverged(t, "non-finite value", &record));
        }
        if k == n_steps {
            break;
        }

        // truth integration
        euler_prev = state.pose.euler;
        state = truth
            .step(&state, &delta, t, dt)
            .map_err(|e| diverged(t, e, &record))?;
        delta_applied = delta;
    }

    record.filter_rejections = ukf.events.rejected_measurements;
    record.filter_projections = ukf.events.parameter_projections;
    record.filter_resets = ukf.events.resets;
    record.filter_jitter = ukf.events.jitter_applications;
    record.saturation_events = saturation.events;
    Ok(record)
}
