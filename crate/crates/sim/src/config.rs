//! Scenario files: JSON schema, defaults, validation and resolution into the
//! runtime objects of the core crate.

use std::path::Path;

use dac_core::controller::{
    ActuatorLimits, ControllerGains, ExcitationConfig, ExcitationInjection, Tone,
};
use dac_core::dynamics::{
    self, trim_tau0, DamageCase, ExtraTermSpec, InertialParams, Mat6, Mat6x4, RegressorSet, Vec3,
    Vec4, Vec6, N_ACTUATORS,
};
use dac_core::estimator::{StateMatrix, UkfConfig};
use dac_core::identifier::RidgePolicy;
use dac_core::supervisor::CostConfig;
use dac_core::{GRAVITY_FT_S2, LBM_PER_SLUG};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("field `{field}`: {constraint}")]
    Invalid { field: String, constraint: String },
}

fn invalid(field: &str, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        constraint: constraint.into(),
    }
}

/// Mass given either as a bare number of slugs or with an explicit unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MassSpec {
    Slug(f64),
    Tagged { value: f64, unit: MassUnit },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassUnit {
    Slug,
    Lbm,
}

impl MassSpec {
    pub fn slugs(&self) -> f64 {
        match *self {
            MassSpec::Slug(v) => v,
            MassSpec::Tagged {
                value,
                unit: MassUnit::Slug,
            } => value,
            MassSpec::Tagged {
                value,
                unit: MassUnit::Lbm,
            } => value / LBM_PER_SLUG,
        }
    }
}

/// Inertia tensor entries (slug·ft²); products enter the tensor with a minus sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InertiaSpec {
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    #[serde(default)]
    pub ixz: f64,
    #[serde(default)]
    pub iyz: f64,
    #[serde(default)]
    pub ixy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

/// Truth airframe at the reference flight condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AirframeSpec {
    pub mass: MassSpec,
    pub inertia: InertiaSpec,
    /// Centre-of-mass offset from the body reference point, ft.
    pub rho: [f64; 3],
    /// Control derivatives, six rows of [thrust, rudder, aileron, elevator].
    pub b: [[f64; 4]; 6],
    /// Damping derivatives, six rows.
    pub d: [[f64; 6]; 6],
    /// Residual force-moment of the reference flight.
    pub tau_r: [f64; 6],
    pub limits: LimitsSpec,
    /// ft/s
    pub airspeed_ceiling: f64,
    pub gravity: f64,
}

impl Default for AirframeSpec {
    fn default() -> Self {
        let mut b = [[0.0; 4]; 6];
        b[0][0] = 20.0;
        b[4][0] = 0.5;
        b[1][1] = 20.1;
        b[5][1] = -57.9;
        b[3][1] = 7.2;
        b[3][2] = 57.9;
        b[5][2] = -7.2;
        b[0][3] = -2.0;
        b[2][3] = -42.3;
        b[4][3] = -154.7;
        let mut d = [[0.0; 6]; 6];
        d[0][0] = -0.0834;
        d[0][2] = 0.125;
        d[2][0] = -0.584;
        d[2][2] = -4.63;
        d[2][4] = -3.05;
        d[4][2] = -0.916;
        d[4][4] = -10.49;
        d[1][1] = -0.668;
        d[1][5] = 1.14;
        d[3][1] = -0.572;
        d[3][3] = -8.81;
        d[3][5] = 2.35;
        d[5][1] = 0.686;
        d[5][3] = -0.587;
        d[5][5] = -3.91;
        Self {
            mass: MassSpec::Tagged {
                value: 1.5566,
                unit: MassUnit::Slug,
            },
            inertia: InertiaSpec {
                ixx: 1.229,
                iyy: 5.812,
                izz: 6.770,
                ixz: 0.1066,
                iyz: 0.0,
                ixy: 0.0,
            },
            rho: [0.0; 3],
            b,
            d,
            tau_r: [0.5, 0.0, -1.0, 0.0, 0.2, 0.0],
            limits: LimitsSpec {
                lower: [0.0, -0.52, -0.52, -0.52],
                upper: [1.0, 0.52, 0.52, 0.52],
            },
            airspeed_ceiling: 500.0,
            gravity: GRAVITY_FT_S2,
        }
    }
}

/// Trimmed reference flight; the static force-moment τ₀ is solved from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrimSpec {
    /// ft/s
    pub airspeed: f64,
    pub alpha_deg: f64,
    pub euler_deg: [f64; 3],
    pub delta: [f64; 4],
    /// ft
    pub altitude: f64,
}

impl Default for TrimSpec {
    fn default() -> Self {
        Self {
            airspeed: 126.6,
            alpha_deg: 4.0,
            euler_deg: [0.0, 4.0, 0.0],
            delta: [0.4, 0.0, 0.0, -0.03],
            altitude: 800.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageSpec {
    pub delta_mass: MassSpec,
    /// `[ΔIxx, ΔIyy, ΔIzz, ΔIxz, ΔIyz, ΔIxy]`
    pub delta_inertia: [f64; 6],
    /// Centre-of-mass offset after the damage, ft.
    pub rho: [f64; 3],
    /// Actuators whose control column is lost.
    #[serde(default)]
    pub dead_actuators: Vec<Actuator>,
    /// Additional control-derivative change, six rows of four.
    #[serde(default)]
    pub delta_b: Option<[[f64; 4]; 6]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actuator {
    Thrust,
    Rudder,
    Aileron,
    Elevator,
}

impl Actuator {
    pub fn index(self) -> usize {
        match self {
            Actuator::Thrust => dynamics::THRUST,
            Actuator::Rudder => dynamics::RUDDER,
            Actuator::Aileron => dynamics::AILERON,
            Actuator::Elevator => dynamics::ELEVATOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtraTermConfig {
    /// lbf·ft
    pub amplitude: f64,
    pub frequency_gain: f64,
    /// Zero-based generalized-force row (5 = yaw moment).
    pub target_row: usize,
    pub ramp_time_constant: f64,
}

impl Default for ExtraTermConfig {
    fn default() -> Self {
        Self {
            amplitude: 5.0,
            frequency_gain: 10.0,
            target_row: dynamics::YAW_ROW,
            ramp_time_constant: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneSpec {
    pub channel: usize,
    /// Fraction of the channel's actuator range.
    pub amplitude_fraction: f64,
    /// rad/s
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationSpec {
    /// Explicit tones; when absent every channel gets the default tone set.
    pub tones: Option<Vec<ToneSpec>>,
    /// Uniform noise half-width as a fraction of actuator range.
    pub noise_fraction: f64,
    pub injection: Injection,
    pub enabled: bool,
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        Self {
            tones: None,
            noise_fraction: 0.002,
            injection: Injection::PostAllocation,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    PostAllocation,
    PreAllocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSpec {
    pub gamma: [f64; 6],
    /// Explicit per-channel bound; resolved from `chi_scale·‖τ₀‖` when absent.
    pub chi: Option<[f64; 6]>,
    pub chi_scale: f64,
    pub epsilon: f64,
    /// Absolute redaction threshold; resolved from `eps_delta_scale` when absent.
    pub eps_delta: Option<f64>,
    /// Multiple of the largest baseline control column norm.
    pub eps_delta_scale: f64,
    pub excitation: ExcitationSpec,
    /// Consecutive saturated steps that raise the sustained-saturation flag.
    pub saturation_hold_steps: usize,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            gamma: [2.0, 2.0, 2.0, 4.0, 4.0, 4.0],
            chi: None,
            chi_scale: 0.1,
            epsilon: 0.05,
            eps_delta: None,
            eps_delta_scale: 1e-4,
            excitation: ExcitationSpec::default(),
            saturation_hold_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    /// ft/s
    pub sigma_v: f64,
    /// rad/s
    pub sigma_omega: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            sigma_v: 0.05,
            sigma_omega: 0.002,
        }
    }
}

/// Standard deviations per state block; squared onto the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSigma {
    pub v: [f64; 6],
    pub tau: [f64; 6],
    pub zeta1: [f64; 6],
    pub zeta2: [f64; 6],
    /// `[m, Ixx, Iyy, Izz, Ixz, Iyz, Ixy, ρx, ρy, ρz]`
    pub params: [f64; 10],
}

impl BlockSigma {
    pub fn covariance(&self) -> StateMatrix<f64> {
        let mut diag = Vec::with_capacity(34);
        for block in [
            &self.v[..],
            &self.tau,
            &self.zeta1,
            &self.zeta2,
            &self.params,
        ] {
            diag.extend(block.iter().map(|s| s * s));
        }
        StateMatrix::from_diagonal(&dac_core::estimator::StateVector::from_column_slice(&diag))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSpec {
    /// Innovation-norm moving-average threshold.
    pub threshold: f64,
    /// Moving-average length, s.
    pub average_s: f64,
    /// Time the average must stay below the threshold, s.
    pub hold_s: f64,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            threshold: 0.15,
            average_s: 1.0,
            hold_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSpec {
    pub kappa: f64,
    pub alpha_forget: f64,
    pub adapt_process_noise: bool,
    pub adapt_measurement_noise: bool,
    /// Process noise per step.
    pub process_sigma: BlockSigma,
    /// Initial estimate spread.
    pub initial_sigma: BlockSigma,
    /// Measurement noise assumed initially; defaults to the sensor model.
    pub measurement_sigma: Option<[f64; 6]>,
    pub r_floor: f64,
    /// Squared Mahalanobis gate on the innovation.
    pub gate: f64,
    pub fd_step: f64,
    pub obs_check_period: usize,
    pub convergence: ConvergenceSpec,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            kappa: 0.0,
            alpha_forget: 0.98,
            adapt_process_noise: true,
            adapt_measurement_noise: true,
            process_sigma: BlockSigma {
                v: [1e-4; 6],
                tau: [1e-3; 6],
                zeta1: [1e-2; 6],
                zeta2: [1e-1; 6],
                params: [1e-7; 10],
            },
            initial_sigma: BlockSigma {
                v: [0.05, 0.05, 0.05, 0.002, 0.002, 0.002],
                tau: [1.0; 6],
                zeta1: [1.0; 6],
                zeta2: [1.0; 6],
                params: [
                    0.01, 0.01, 0.05, 0.05, 0.01, 0.01, 0.01, 0.002, 0.002, 0.002,
                ],
            },
            measurement_sigma: None,
            r_floor: 1e-8,
            gate: 1e6,
            fd_step: 1e-6,
            obs_check_period: 50,
            convergence: ConvergenceSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifierSpec {
    /// Samples per batch window.
    pub window: usize,
    /// Steps between batch fits.
    pub fit_period: usize,
    pub ridge_threshold: f64,
    pub ridge_scale: f64,
    pub ridge_ceiling: f64,
    pub rls_forgetting: f64,
    pub rls_initial_covariance: f64,
    /// Diagnostic only: feed the identifiers the truth force-moment instead of
    /// the filter estimate.
    pub truth_pseudo_observations: bool,
}

impl Default for IdentifierSpec {
    fn default() -> Self {
        Self {
            window: 400,
            fit_period: 20,
            ridge_threshold: 1e8,
            ridge_scale: 1e-8,
            ridge_ceiling: 1e14,
            rls_forgetting: 0.995,
            rls_initial_covariance: 1e4,
            truth_pseudo_observations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionSpec {
    pub t_p: f64,
    pub gamma_step: f64,
    pub rate_limit: f64,
    /// Resolved to 1.5 × the convergence averaging window when absent.
    pub lag: Option<f64>,
    pub h_diag: [f64; 6],
    pub q_diag: [f64; 6],
    pub fd_step: f64,
    pub grad_tol_abs: f64,
    pub grad_tol_rel: f64,
    /// Steps between descent iterations.
    pub descent_period: usize,
    pub initial_lambda: f64,
}

impl Default for DecisionSpec {
    fn default() -> Self {
        Self {
            t_p: 2.0,
            gamma_step: 0.05,
            rate_limit: 0.25,
            lag: None,
            h_diag: [1.0; 6],
            q_diag: [1.0; 6],
            fd_step: 0.02,
            grad_tol_abs: 1e-9,
            grad_tol_rel: 1e-3,
            descent_period: 20,
            initial_lambda: 0.0,
        }
    }
}

/// Sinusoid added to one channel of the velocity reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlaySpec {
    pub channel: usize,
    pub amplitude: f64,
    /// rad/s
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    /// Additive pulse on the actuator commands, as fractions of actuator range.
    Disturbance {
        duration: f64,
        fractions: [f64; 4],
    },
    Damage {
        id: String,
    },
    ExtraTermOn,
    /// `null` releases the override.
    ManualLambda {
        value: Option<f64>,
    },
    /// New velocity reference reached by a linear ramp.
    SetpointChange {
        v_d: [f64; 6],
        ramp_time: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub trim: TrimSpec,
    pub airframe: AirframeSpec,
    pub damage_cases: std::collections::BTreeMap<String, DamageSpec>,
    pub extra_term: ExtraTermConfig,
    pub events: Vec<EventSpec>,
    pub controller: ControllerSpec,
    pub sensors: SensorSpec,
    pub estimator: EstimatorSpec,
    pub identifier: IdentifierSpec,
    pub decision: DecisionSpec,
    pub reference_overlay: Vec<OverlaySpec>,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            duration: 60.0,
            dt: 0.005,
            seed: 0,
            trim: TrimSpec::default(),
            airframe: AirframeSpec::default(),
            damage_cases: Default::default(),
            extra_term: ExtraTermConfig::default(),
            events: Vec::new(),
            controller: ControllerSpec::default(),
            sensors: SensorSpec::default(),
            estimator: EstimatorSpec::default(),
            identifier: IdentifierSpec::default(),
            decision: DecisionSpec::default(),
            reference_overlay: Vec::new(),
        }
    }
}

fn mat6x4(rows: &[[f64; 4]; 6]) -> Mat6x4<f64> {
    Mat6x4::from_fn(|i, j| rows[i][j])
}

fn mat6(rows: &[[f64; 6]; 6]) -> Mat6<f64> {
    Mat6::from_fn(|i, j| rows[i][j])
}

/// Everything the run loop needs, in core-crate types.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub params: InertialParams<f64>,
    pub aero: RegressorSet<f64>,
    pub limits: ActuatorLimits<f64>,
    pub gravity: f64,
    pub airspeed_ceiling: f64,
    pub v_trim: Vec6<f64>,
    pub euler_trim: Vec3<f64>,
    pub delta_trim: Vec4<f64>,
    pub altitude: f64,
    pub gains: ControllerGains<f64>,
    pub eps_delta: f64,
    pub excitation: ExcitationConfig<f64>,
    pub ukf: UkfConfig<f64>,
    pub p0: StateMatrix<f64>,
    pub ridge: RidgePolicy<f64>,
    pub cost: CostConfig<f64>,
    pub damage: std::collections::BTreeMap<String, DamageCase<f64>>,
    pub extra: ExtraTermSpec<f64>,
    /// Events in firing order (stable by time).
    pub events: Vec<EventSpec>,
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let file: ScenarioFile = serde_json::from_str(text)?;
    resolve(file)
}

fn check(cond: bool, field: &str, constraint: &str) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(invalid(field, constraint))
    }
}

fn finite_all(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Applies defaults, checks invariants and builds runtime objects.
pub fn resolve(mut file: ScenarioFile) -> Result<Scenario, ConfigError> {
    check(
        file.duration > 0.0 && file.duration.is_finite(),
        "duration",
        "must be positive",
    )?;
    check(
        file.dt > 0.0 && file.dt < file.duration,
        "dt",
        "must be positive and below duration",
    )?;

    let af = &file.airframe;
    let params = InertialParams {
        m: af.mass.slugs(),
        ixx: af.inertia.ixx,
        iyy: af.inertia.iyy,
        izz: af.inertia.izz,
        ixz: af.inertia.ixz,
        iyz: af.inertia.iyz,
        ixy: af.inertia.ixy,
        rho: Vec3::from(af.rho),
    };
    params
        .validate()
        .map_err(|e| invalid("airframe.inertia", e.to_string()))?;
    dynamics::mass_matrix(&params).map_err(|e| invalid("airframe", e.to_string()))?;
    check(
        finite_all(af.b.as_flattened()) && finite_all(af.d.as_flattened()),
        "airframe.b",
        "derivatives must be finite",
    )?;
    for j in 0..N_ACTUATORS {
        check(
            af.limits.lower[j] < af.limits.upper[j],
            "airframe.limits",
            "lower must be below upper on every channel",
        )?;
    }
    check(
        af.airspeed_ceiling > 0.0,
        "airframe.airspeed_ceiling",
        "must be positive",
    )?;
    check(af.gravity > 0.0, "airframe.gravity", "must be positive")?;
    let limits = ActuatorLimits {
        lower: Vec4::from(af.limits.lower),
        upper: Vec4::from(af.limits.upper),
    };

    let trim = &file.trim;
    check(trim.airspeed > 0.0, "trim.airspeed", "must be positive")?;
    let alpha = trim.alpha_deg.to_radians();
    let v_trim = Vec6::new(
        trim.airspeed * alpha.cos(),
        0.0,
        trim.airspeed * alpha.sin(),
        0.0,
        0.0,
        0.0,
    );
    let euler_trim = Vec3::from(trim.euler_deg.map(f64::to_radians));
    check(
        euler_trim.y.abs() < std::f64::consts::FRAC_PI_2 - dynamics::GIMBAL_MARGIN,
        "trim.euler_deg",
        "pitch must stay clear of ±90°",
    )?;
    let delta_trim = Vec4::from(trim.delta);
    for j in 0..N_ACTUATORS {
        check(
            delta_trim[j] >= limits.lower[j] && delta_trim[j] <= limits.upper[j],
            "trim.delta",
            "must lie within the actuator limits",
        )?;
    }
    let mut aero = RegressorSet {
        b: mat6x4(&af.b),
        d: mat6(&af.d),
        tau0: Vec6::zeros(),
        tau_r: Vec6::from(af.tau_r),
        b_negative: None,
    };
    aero.tau0 = trim_tau0(
        &v_trim,
        &euler_trim,
        &delta_trim,
        &params,
        &aero,
        af.gravity,
    );

    // controller
    let c = &mut file.controller;
    check(
        c.gamma.iter().all(|&g| g > 0.0),
        "controller.gamma",
        "entries must be positive",
    )?;
    check(c.epsilon > 0.0, "controller.epsilon", "must be positive")?;
    let chi = *c.chi.get_or_insert([aero.tau0.norm() * c.chi_scale; 6]);
    check(
        chi.iter().all(|&x| x >= 0.0),
        "controller.chi",
        "entries must be nonnegative",
    )?;
    let max_col = aero.column_norms().max();
    let eps_delta = *c.eps_delta.get_or_insert(c.eps_delta_scale * max_col);
    check(
        eps_delta >= 0.0,
        "controller.eps_delta",
        "must be nonnegative",
    )?;
    let gains = ControllerGains {
        gamma: Vec6::from(c.gamma),
        chi: Vec6::from(chi),
        epsilon: c.epsilon,
    };
    let range = limits.range();
    let ex = &mut c.excitation;
    if ex.tones.is_none() {
        let defaults = ExcitationConfig::default_for(&limits, 0);
        ex.tones = Some(
            defaults
                .tones
                .iter()
                .map(|t| ToneSpec {
                    channel: t.channel,
                    amplitude_fraction: t.amplitude / range[t.channel],
                    frequency: t.frequency,
                    phase: t.phase,
                })
                .collect(),
        );
    }
    let tones = ex.tones.as_deref().unwrap_or(&[]);
    check(
        tones.iter().all(|t| t.channel < N_ACTUATORS),
        "controller.excitation.tones",
        "channel must be 0..3",
    )?;
    let excitation = if ex.enabled {
        ExcitationConfig {
            tones: tones
                .iter()
                .map(|t| Tone {
                    channel: t.channel,
                    amplitude: t.amplitude_fraction * range[t.channel],
                    frequency: t.frequency,
                    phase: t.phase,
                })
                .collect(),
            noise: range * ex.noise_fraction,
            seed: file.seed,
            injection: match ex.injection {
                Injection::PostAllocation => ExcitationInjection::PostAllocation,
                Injection::PreAllocation => ExcitationInjection::PreAllocation,
            },
        }
    } else {
        ExcitationConfig {
            seed: file.seed,
            ..ExcitationConfig::silent()
        }
    };

    // sensors and estimator
    let s = &file.sensors;
    check(
        s.sigma_v >= 0.0 && s.sigma_omega >= 0.0,
        "sensors",
        "noise levels must be nonnegative",
    )?;
    let e = &mut file.estimator;
    let meas = *e.measurement_sigma.get_or_insert([
        s.sigma_v.max(1e-4),
        s.sigma_v.max(1e-4),
        s.sigma_v.max(1e-4),
        s.sigma_omega.max(1e-5),
        s.sigma_omega.max(1e-5),
        s.sigma_omega.max(1e-5),
    ]);
    check(
        meas.iter().all(|&x| x > 0.0),
        "estimator.measurement_sigma",
        "must be positive",
    )?;
    let ukf = UkfConfig {
        kappa: e.kappa,
        q0: e.process_sigma.covariance(),
        r0: Mat6::from_diagonal(&Vec6::from(meas.map(|x| x * x))),
        alpha_forget: e.alpha_forget,
        fd_step: e.fd_step,
        obs_check_period: e.obs_check_period,
        gate: e.gate,
        r_floor: e.r_floor,
        adapt_process_noise: e.adapt_process_noise,
        adapt_measurement_noise: e.adapt_measurement_noise,
        mass_floor: params.m * 0.05,
        inertia_floor: params.ixx.min(params.iyy).min(params.izz) * 0.05,
        g: af.gravity,
    };
    ukf.validate()
        .map_err(|err| invalid("estimator", err.to_string()))?;
    let p0 = e.initial_sigma.covariance();
    check(
        p0.diagonal().iter().all(|&x| x > 0.0),
        "estimator.initial_sigma",
        "entries must be positive",
    )?;
    check(
        e.convergence.threshold > 0.0,
        "estimator.convergence.threshold",
        "must be positive",
    )?;

    // identifier
    let id = &file.identifier;
    check(
        id.window >= 11,
        "identifier.window",
        "must hold at least 11 samples",
    )?;
    check(
        id.fit_period >= 1,
        "identifier.fit_period",
        "must be at least 1",
    )?;
    check(
        id.rls_forgetting > 0.0 && id.rls_forgetting <= 1.0,
        "identifier.rls_forgetting",
        "must lie in (0, 1]",
    )?;
    check(
        id.rls_initial_covariance > 0.0,
        "identifier.rls_initial_covariance",
        "must be positive",
    )?;
    let ridge = RidgePolicy {
        threshold: id.ridge_threshold,
        scale: id.ridge_scale,
        ceiling: id.ridge_ceiling,
    };

    // decision
    let dcs = &mut file.decision;
    let lag = *dcs
        .lag
        .get_or_insert(1.5 * file.estimator.convergence.average_s);
    check(lag >= 0.0, "decision.lag", "must be nonnegative")?;
    check(
        (0.0..=1.0).contains(&dcs.initial_lambda),
        "decision.initial_lambda",
        "must lie in [0, 1]",
    )?;
    check(
        dcs.descent_period >= 1,
        "decision.descent_period",
        "must be at least 1",
    )?;
    let cost = CostConfig {
        h: Mat6::from_diagonal(&Vec6::from(dcs.h_diag)),
        q: Mat6::from_diagonal(&Vec6::from(dcs.q_diag)),
        t_p: dcs.t_p,
        gamma_step: dcs.gamma_step,
        rate_limit: dcs.rate_limit,
        lag,
        fd_step: dcs.fd_step,
        grad_tol_abs: dcs.grad_tol_abs,
        grad_tol_rel: dcs.grad_tol_rel,
    };
    cost.validate()
        .map_err(|err| invalid("decision", err.to_string()))?;
    check(
        dcs.t_p >= file.dt * 2.0,
        "decision.t_p",
        "must span at least two steps",
    )?;

    // damage cases
    let mut damage = std::collections::BTreeMap::new();
    for (id, d) in &file.damage_cases {
        let mut delta_b = d.delta_b.as_ref().map(mat6x4).unwrap_or_else(Mat6x4::zeros);
        for a in &d.dead_actuators {
            let j = a.index();
            let col = -(aero.b.column(j) + delta_b.column(j));
            let current = delta_b.column(j).into_owned();
            delta_b.set_column(j, &(current + col));
        }
        let case = DamageCase {
            delta_m: d.delta_mass.slugs(),
            delta_inertia: d.delta_inertia,
            new_rho: Vec3::from(d.rho),
            delta_b: Some(delta_b),
        };
        dynamics::apply_damage(&params, &case)
            .map_err(|err| invalid(&format!("damage_cases.{id}"), err.to_string()))?;
        damage.insert(id.clone(), case);
    }

    let x = &file.extra_term;
    check(x.target_row < 6, "extra_term.target_row", "must be 0..5")?;
    check(
        x.ramp_time_constant > 0.0,
        "extra_term.ramp_time_constant",
        "must be positive",
    )?;
    let extra = ExtraTermSpec {
        amplitude: x.amplitude,
        frequency_gain: x.frequency_gain,
        target_row: x.target_row,
        ramp_time_constant: x.ramp_time_constant,
        activation_time: f64::INFINITY,
    };

    for (i, ov) in file.reference_overlay.iter().enumerate() {
        check(
            ov.channel < 6,
            &format!("reference_overlay[{i}].channel"),
            "must be 0..5",
        )?;
    }

    for (i, ev) in file.events.iter().enumerate() {
        let field = format!("events[{i}]");
        check(
            ev.time.is_finite() && ev.time >= 0.0,
            &field,
            "time must be finite and nonnegative",
        )?;
        match &ev.kind {
            EventKind::Damage { id } => check(
                damage.contains_key(id),
                &field,
                "damage id not among damage_cases",
            )?,
            EventKind::ManualLambda { value: Some(v) } => check(
                (0.0..=1.0).contains(v),
                &field,
                "manual λ must lie in [0, 1]",
            )?,
            EventKind::Disturbance { duration, .. } => {
                check(*duration > 0.0, &field, "duration must be positive")?
            }
            EventKind::SetpointChange { ramp_time, v_d } => {
                check(*ramp_time >= 0.0, &field, "ramp_time must be nonnegative")?;
                check(finite_all(v_d), &field, "v_d must be finite")?;
            }
            _ => {}
        }
    }
    let mut events = file.events.clone();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));

    Ok(Scenario {
        params,
        aero,
        limits,
        gravity: af.gravity,
        airspeed_ceiling: af.airspeed_ceiling,
        v_trim,
        euler_trim,
        delta_trim,
        altitude: file.trim.altitude,
        gains,
        eps_delta,
        excitation,
        ukf,
        p0,
        ridge,
        cost,
        damage,
        extra,
        events,
        file,
    })
}

impl Scenario {
    /// Effective configuration, with every derived default written out.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("scenario serialises")
    }

    pub fn with_duration(mut self, duration: f64) -> Result<Self, ConfigError> {
        self.file.duration = duration;
        resolve(self.file)
    }

    pub fn with_seed(mut self, seed: u64) -> Result<Self, ConfigError> {
        self.file.seed = seed;
        resolve(self.file)
    }
}

/// Scenario files shipped with the crate.
pub mod bundled {
    pub const PAPER_DAMAGE1: &str = include_str!("../scenarios/paper_damage1.json");
    pub const NOMINAL: &str = include_str!("../scenarios/nominal.json");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "paper_damage1" => Some(PAPER_DAMAGE1),
            "nominal" => Some(NOMINAL),
            _ => None,
        }
    }
}
