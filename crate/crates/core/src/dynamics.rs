//! Rigid-body airframe dynamics with a displaced centre of mass.
//!
//! The equations of motion are written about a body reference point that need
//! not coincide with the centre of mass:
//!
//! ```text
//! M v̇ + C(v) v + G(η) = τ + τ_r
//! ```
//!
//! with `v = [V; ω]` the body-axis generalized velocity, `M` the 6×6
//! mass-inertia matrix, `C(v)` the Coriolis/centrifugal matrix (assembled in
//! its skew-symmetric form), and `G(η)` the gravity wrench. The truth
//! force-moment model is linear-affine in actuator deflection and velocity:
//! `τ = τ₀ + B(δ)δ + Dv (+ E)`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4, Vector6};
use thiserror::Error;

use crate::integrate::rk4;
use crate::scalar::{lit, to_f64, Real};

pub type Vec3<T> = Vector3<T>;
pub type Vec4<T> = Vector4<T>;
pub type Vec6<T> = Vector6<T>;
pub type Mat3<T> = Matrix3<T>;
pub type Mat6<T> = SMatrix<T, 6, 6>;
pub type Mat6x4<T> = SMatrix<T, 6, 4>;

/// Body-axis generalized velocity `[u, v, w, p, q, r]` (ft/s, rad/s).
pub type GeneralizedVelocity<T> = Vec6<T>;

/// Body-axis force (lbf) and moment (lbf·ft) `[X, Y, Z, L, M, N]`.
pub type GeneralizedForce<T> = Vec6<T>;

/// Number of actuator channels: thrust, rudder, aileron, elevator.
pub const N_ACTUATORS: usize = 4;
pub const THRUST: usize = 0;
pub const RUDDER: usize = 1;
pub const AILERON: usize = 2;
pub const ELEVATOR: usize = 3;

/// Row of the yaw moment in a generalized force.
pub const YAW_ROW: usize = 5;

/// Pitch-angle margin kept from ±π/2 before the Euler kinematics are refused.
pub const GIMBAL_MARGIN: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("inertia tensor is not positive definite")]
    InertiaNotPositiveDefinite,
    #[error("mass matrix is not positive definite")]
    MassMatrixNotPositiveDefinite,
    #[error("pitch angle {0} rad is within the gimbal guard of ±π/2")]
    GimbalLock(f64),
    #[error("airspeed {speed} ft/s exceeds ceiling {ceiling} ft/s")]
    AirspeedCeiling { speed: f64, ceiling: f64 },
    #[error("non-finite state at t = {t}: {dump}")]
    NonFinite { t: f64, dump: String },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
}

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew<T: Real>(a: &Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    Matrix3::new(z, -a.z, a.y, a.z, z, -a.x, -a.y, a.x, z)
}

/// Position and Euler orientation (roll Φ, pitch Θ, yaw Ψ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub position: Vec3<T>,
    pub euler: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(position: Vec3<T>, euler: Vec3<T>) -> Self {
        Self { position, euler }
    }

    pub fn level() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    /// Roll and yaw wrapped to (−π, π]; pitch is left alone (it is guarded, not wrapped).
    pub fn wrapped(mut self) -> Self {
        self.euler.x = wrap_angle(self.euler.x);
        self.euler.z = wrap_angle(self.euler.z);
        self
    }

    pub fn check_gimbal(&self) -> Result<(), DynamicsError> {
        let limit = T::frac_pi_2() - lit(GIMBAL_MARGIN);
        if self.euler.y.abs() >= limit {
            return Err(DynamicsError::GimbalLock(to_f64(self.euler.y)));
        }
        Ok(())
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut w = a % two_pi;
    if w > T::pi() {
        w -= two_pi;
    } else if w <= -T::pi() {
        w += two_pi;
    }
    w
}

/// Mass, inertia tensor entries and centre-of-mass offset from the body reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertialParams<T: Real> {
    /// slug
    pub m: T,
    /// slug·ft²
    pub ixx: T,
    pub iyy: T,
    pub izz: T,
    pub ixz: T,
    pub iyz: T,
    pub ixy: T,
    /// ft, body axes
    pub rho: Vec3<T>,
}

/// Length of the flattened parameter vector `[m, Ixx, Iyy, Izz, Ixz, Iyz, Ixy, ρx, ρy, ρz]`.
pub const N_PARAMS: usize = 10;

impl<T: Real> InertialParams<T> {
    /// Inertia tensor with products of inertia entering with a negative sign.
    pub fn inertia_tensor(&self) -> Mat3<T> {
        Matrix3::new(
            self.ixx, -self.ixy, -self.ixz, -self.ixy, self.iyy, -self.iyz, -self.ixz, -self.iyz,
            self.izz,
        )
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.m > T::zero()) {
            return Err(DynamicsError::NonPositiveMass(to_f64(self.m)));
        }
        if self.inertia_tensor().cholesky().is_none() {
            return Err(DynamicsError::InertiaNotPositiveDefinite);
        }
        Ok(())
    }

    pub fn to_vector(&self) -> SVector<T, N_PARAMS> {
        SVector::<T, N_PARAMS>::from_column_slice(&[
            self.m, self.ixx, self.iyy, self.izz, self.ixz, self.iyz, self.ixy, self.rho.x,
            self.rho.y, self.rho.z,
        ])
    }

    pub fn from_slice(p: &[T]) -> Self {
        assert!(p.len() >= N_PARAMS, "parameter slice too short");
        Self {
            m: p[0],
            ixx: p[1],
            iyy: p[2],
            izz: p[3],
            ixz: p[4],
            iyz: p[5],
            ixy: p[6],
            rho: Vec3::new(p[7], p[8], p[9]),
        }
    }

    /// Nearest physically valid parameter set: mass and principal moments are
    /// floored and the products of inertia shrunk until the tensor is positive
    /// definite. Returns the projected set and whether anything changed.
    pub fn project_valid(&self, mass_floor: T, inertia_floor: T) -> (Self, bool) {
        let mut p = *self;
        let mut changed = false;
        if !(p.m >= mass_floor) {
            p.m = mass_floor;
            changed = true;
        }
        for i in [&mut p.ixx, &mut p.iyy, &mut p.izz] {
            if !(*i >= inertia_floor) {
                *i = inertia_floor;
                changed = true;
            }
        }
        let mut shrink = 0;
        while p.inertia_tensor().cholesky().is_none() && shrink < 60 {
            let half = lit::<T>(0.5);
            p.ixz *= half;
            p.iyz *= half;
            p.ixy *= half;
            changed = true;
            shrink += 1;
        }
        if shrink == 60 {
            p.ixz = T::zero();
            p.iyz = T::zero();
            p.ixy = T::zero();
        }
        (p, changed)
    }
}

/// Weight vector in body axes, `W = mg[−sinΘ, cosΘ sinΦ, cosΘ cosΦ]`.
pub fn weight_vector<T: Real>(euler: &Vec3<T>, m: T, g: T) -> Vec3<T> {
    let (sphi, cphi) = euler.x.sin_cos();
    let (sth, cth) = euler.y.sin_cos();
    let mg = m * g;
    Vec3::new(-mg * sth, mg * cth * sphi, mg * cth * cphi)
}

/// Gravity wrench `G(η) = [−W; −S(ρ)W]`.
pub fn gravity_wrench<T: Real>(euler: &Vec3<T>, p: &InertialParams<T>, g: T) -> Vec6<T> {
    let w = weight_vector(euler, p.m, g);
    let moment = skew(&p.rho) * w;
    Vec6::new(-w.x, -w.y, -w.z, -moment.x, -moment.y, -moment.z)
}

/// Mass matrix without the positive-definiteness check.
pub fn mass_matrix_unchecked<T: Real>(p: &InertialParams<T>) -> Mat6<T> {
    let m_s_rho = skew(&p.rho) * p.m;
    let mut mm = Mat6::zeros();
    mm.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Mat3::identity() * p.m));
    mm.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-m_s_rho));
    mm.fixed_view_mut::<3, 3>(3, 0).copy_from(&m_s_rho);
    mm.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&p.inertia_tensor());
    mm
}

/// `M = [[mI, −mS(ρ)], [mS(ρ), I_M]]`, rejected unless positive definite.
pub fn mass_matrix<T: Real>(p: &InertialParams<T>) -> Result<Mat6<T>, DynamicsError> {
    let mm = mass_matrix_unchecked(p);
    if mm.cholesky().is_none() {
        return Err(DynamicsError::MassMatrixNotPositiveDefinite);
    }
    Ok(mm)
}

/// Coriolis and centrifugal matrix in skew-symmetric form.
pub fn coriolis_matrix<T: Real>(v: &GeneralizedVelocity<T>, p: &InertialParams<T>) -> Mat6<T> {
    let lin = v.fixed_rows::<3>(0).into_owned();
    let ang = v.fixed_rows::<3>(3).into_owned();
    let s_w_rho = skew(&(skew(&ang) * p.rho)) * p.m;
    let mut c = Mat6::zeros();
    c.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(skew(&ang) * p.m));
    c.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-s_w_rho));
    c.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-s_w_rho));
    let lower = -skew(&(p.inertia_tensor() * ang)) + skew(&(skew(&lin) * p.rho)) * p.m;
    c.fixed_view_mut::<3, 3>(3, 3).copy_from(&lower);
    c
}

/// Static, control and damping derivatives of the force-moment model plus the
/// residual force-moment `τ_r` of the reference flight.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSet<T: Real> {
    pub b: Mat6x4<T>,
    pub d: Mat6<T>,
    pub tau0: Vec6<T>,
    pub tau_r: Vec6<T>,
    /// Columns used instead of `b` when the matching command is negative.
    pub b_negative: Option<Mat6x4<T>>,
}

impl<T: Real> RegressorSet<T> {
    /// Effective control matrix for the sign pattern of `delta`.
    pub fn control_matrix(&self, delta: &Vec4<T>) -> Mat6x4<T> {
        match &self.b_negative {
            None => self.b,
            Some(neg) => {
                let mut b = self.b;
                for j in 0..N_ACTUATORS {
                    if delta[j] < T::zero() {
                        b.set_column(j, &neg.column(j));
                    }
                }
                b
            }
        }
    }

    /// `τ₀ + B(δ)δ + Dv`
    pub fn force(&self, delta: &Vec4<T>, v: &GeneralizedVelocity<T>) -> GeneralizedForce<T> {
        self.tau0 + self.control_matrix(delta) * delta + self.d * v
    }

    pub fn column_norms(&self) -> Vec4<T> {
        Vec4::from_fn(|j, _| self.b.column(j).norm())
    }
}

/// High-frequency nonlinear term `a·sin(k·r)·δ_ru` injected on one row of τ,
/// faded in as `1 − exp(−(t − t_on)/τ_ramp)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtraTermSpec<T: Real> {
    /// lbf·ft
    pub amplitude: T,
    /// rad⁻¹ applied to the yaw rate
    pub frequency_gain: T,
    /// zero-based row of the generalized force (5 = yaw moment)
    pub target_row: usize,
    pub ramp_time_constant: T,
    pub activation_time: T,
}

impl<T: Real> ExtraTermSpec<T> {
    pub fn ramp(&self, t: T) -> T {
        if t < self.activation_time {
            T::zero()
        } else {
            T::one() - (-(t - self.activation_time) / self.ramp_time_constant).exp()
        }
    }

    pub fn value(&self, t: T, v: &GeneralizedVelocity<T>, delta: &Vec4<T>) -> Vec6<T> {
        let mut e = Vec6::zeros();
        let ramp = self.ramp(t);
        if ramp > T::zero() {
            e[self.target_row] =
                ramp * self.amplitude * (self.frequency_gain * v[5]).sin() * delta[RUDDER];
        }
        e
    }
}

/// `τ = τ₀ + B(δ)δ + Dv + E(t)`.
pub fn generalized_force<T: Real>(
    delta: &Vec4<T>,
    v: &GeneralizedVelocity<T>,
    t: T,
    truth: &RegressorSet<T>,
    extra: Option<&ExtraTermSpec<T>>,
) -> GeneralizedForce<T> {
    let mut tau = truth.force(delta, v);
    if let Some(e) = extra {
        tau += e.value(t, v, delta);
    }
    tau
}

/// Euler-angle kinematics: earth-frame position rate and Euler angle rates.
pub fn pose_rate<T: Real>(v: &GeneralizedVelocity<T>, euler: &Vec3<T>) -> Vec6<T> {
    let (sphi, cphi) = euler.x.sin_cos();
    let (sth, cth) = euler.y.sin_cos();
    let (spsi, cpsi) = euler.z.sin_cos();
    let body_to_earth = Matrix3::new(
        cth * cpsi,
        sphi * sth * cpsi - cphi * spsi,
        cphi * sth * cpsi + sphi * spsi,
        cth * spsi,
        sphi * sth * spsi + cphi * cpsi,
        cphi * sth * spsi - sphi * cpsi,
        -sth,
        sphi * cth,
        cphi * cth,
    );
    let lin = v.fixed_rows::<3>(0).into_owned();
    let (p, q, r) = (v[3], v[4], v[5]);
    let pos = body_to_earth * lin;
    let tth = sth / cth;
    let phi_dot = p + tth * (q * sphi + r * cphi);
    let theta_dot = q * cphi - r * sphi;
    let psi_dot = (q * sphi + r * cphi) / cth;
    Vec6::new(pos.x, pos.y, pos.z, phi_dot, theta_dot, psi_dot)
}

/// Solves `M v̇ = τ + τ_r − C(v)v − G(η)` and evaluates the pose kinematics.
pub fn dynamics_rhs<T: Real>(
    v: &GeneralizedVelocity<T>,
    pose: &Pose<T>,
    tau: &GeneralizedForce<T>,
    p: &InertialParams<T>,
    tau_r: &Vec6<T>,
    g: T,
) -> Result<(Vec6<T>, Vec6<T>), DynamicsError> {
    let vdot = acceleration(v, &pose.euler, tau, p, tau_r, g)?;
    Ok((vdot, pose_rate(v, &pose.euler)))
}

/// Generalized acceleration only; the attitude enters through gravity.
pub fn acceleration<T: Real>(
    v: &GeneralizedVelocity<T>,
    euler: &Vec3<T>,
    tau: &GeneralizedForce<T>,
    p: &InertialParams<T>,
    tau_r: &Vec6<T>,
    g: T,
) -> Result<Vec6<T>, DynamicsError> {
    let chol = mass_matrix_unchecked(p)
        .cholesky()
        .ok_or(DynamicsError::MassMatrixNotPositiveDefinite)?;
    let rhs = tau + tau_r - coriolis_matrix(v, p) * v - gravity_wrench(euler, p, g);
    Ok(chol.solve(&rhs))
}

/// Mass, inertia and centre-of-mass change describing a damage event.
#[derive(Debug, Clone, PartialEq)]
pub struct DamageCase<T: Real> {
    /// slug
    pub delta_m: T,
    /// `[ΔIxx, ΔIyy, ΔIzz, ΔIxz, ΔIyz, ΔIxy]`, slug·ft²
    pub delta_inertia: [T; 6],
    pub new_rho: Vec3<T>,
    pub delta_b: Option<Mat6x4<T>>,
}

impl<T: Real> DamageCase<T> {
    pub fn none(rho: Vec3<T>) -> Self {
        Self {
            delta_m: T::zero(),
            delta_inertia: [T::zero(); 6],
            new_rho: rho,
            delta_b: None,
        }
    }

    /// The control-derivative part of the damage applied to a regressor set.
    pub fn apply_to_regressors(&self, r: &RegressorSet<T>) -> RegressorSet<T> {
        let mut out = r.clone();
        if let Some(db) = &self.delta_b {
            out.b += db;
            if let Some(neg) = out.b_negative.as_mut() {
                *neg += db;
            }
        }
        out
    }
}

/// Additive mass and inertia deltas; the centre-of-mass offset is replaced.
pub fn apply_damage<T: Real>(
    p: &InertialParams<T>,
    d: &DamageCase<T>,
) -> Result<InertialParams<T>, DynamicsError> {
    let di = &d.delta_inertia;
    let out = InertialParams {
        m: p.m + d.delta_m,
        ixx: p.ixx + di[0],
        iyy: p.iyy + di[1],
        izz: p.izz + di[2],
        ixz: p.ixz + di[3],
        iyz: p.iyz + di[4],
        ixy: p.ixy + di[5],
        rho: d.new_rho,
    };
    out.validate()?;
    mass_matrix(&out)?;
    Ok(out)
}

/// Truth-plant state: generalized velocity and pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState<T: Real> {
    pub v: GeneralizedVelocity<T>,
    pub pose: Pose<T>,
}

impl<T: Real> PlantState<T> {
    fn pack(&self) -> SVector<T, 12> {
        let mut x = SVector::<T, 12>::zeros();
        x.fixed_rows_mut::<6>(0).copy_from(&self.v);
        x.fixed_rows_mut::<3>(6).copy_from(&self.pose.position);
        x.fixed_rows_mut::<3>(9).copy_from(&self.pose.euler);
        x
    }

    fn unpack(x: &SVector<T, 12>) -> Self {
        Self {
            v: x.fixed_rows::<6>(0).into_owned(),
            pose: Pose::new(
                x.fixed_rows::<3>(6).into_owned(),
                x.fixed_rows::<3>(9).into_owned(),
            ),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|x| x.is_finite())
            && self.pose.position.iter().all(|x| x.is_finite())
            && self.pose.euler.iter().all(|x| x.is_finite())
    }
}

/// Ground-truth airframe: inertial parameters, force-moment regressors and an
/// optional nonlinear extra term.
#[derive(Debug, Clone)]
pub struct Airframe<T: Real> {
    pub params: InertialParams<T>,
    pub aero: RegressorSet<T>,
    pub extra: Option<ExtraTermSpec<T>>,
    pub gravity: T,
    /// Sanity guard on ‖V‖, ft/s.
    pub airspeed_ceiling: T,
}

impl<T: Real> Airframe<T> {
    pub fn new(params: InertialParams<T>, aero: RegressorSet<T>) -> Self {
        Self {
            params,
            aero,
            extra: None,
            gravity: lit(crate::scalar::GRAVITY_FT_S2),
            airspeed_ceiling: lit(500.0),
        }
    }

    pub fn wrench(&self, state: &PlantState<T>, delta: &Vec4<T>, t: T) -> GeneralizedForce<T> {
        generalized_force(delta, &state.v, t, &self.aero, self.extra.as_ref())
    }

    pub fn derivative(
        &self,
        state: &PlantState<T>,
        delta: &Vec4<T>,
        t: T,
    ) -> Result<(Vec6<T>, Vec6<T>), DynamicsError> {
        let tau = self.wrench(state, delta, t);
        dynamics_rhs(
            &state.v,
            &state.pose,
            &tau,
            &self.params,
            &self.aero.tau_r,
            self.gravity,
        )
    }

    /// One fixed RK4 step with the command held over the interval.
    pub fn step(
        &self,
        state: &PlantState<T>,
        delta: &Vec4<T>,
        t: T,
        dt: T,
    ) -> Result<PlantState<T>, DynamicsError> {
        let rhs = |tt: T, x: &SVector<T, 12>| -> Result<SVector<T, 12>, DynamicsError> {
            let s = PlantState::unpack(x);
            let (vdot, posedot) = self.derivative(&s, delta, tt)?;
            let mut dx = SVector::<T, 12>::zeros();
            dx.fixed_rows_mut::<6>(0).copy_from(&vdot);
            dx.fixed_rows_mut::<6>(6).copy_from(&posedot);
            Ok(dx)
        };
        let next = step(state, t, dt, rhs)?;
        let speed = next.v.fixed_rows::<3>(0).norm();
        if speed > self.airspeed_ceiling {
            return Err(DynamicsError::AirspeedCeiling {
                speed: to_f64(speed),
                ceiling: to_f64(self.airspeed_ceiling),
            });
        }
        Ok(next)
    }
}

/// Fixed-step RK4 propagation of a plant state under an arbitrary right-hand side.
pub fn step<T, F>(
    state: &PlantState<T>,
    t: T,
    dt: T,
    rhs: F,
) -> Result<PlantState<T>, DynamicsError>
where
    T: Real,
    F: FnMut(T, &SVector<T, 12>) -> Result<SVector<T, 12>, DynamicsError>,
{
    if !(dt > T::zero()) {
        return Err(DynamicsError::BadTimeStep(to_f64(dt)));
    }
    if !state.is_finite() {
        return Err(non_finite(t, state));
    }
    let x = rk4(&state.pack(), t, dt, rhs)?;
    let next = PlantState::unpack(&x);
    if !next.is_finite() {
        return Err(non_finite(t + dt, &next));
    }
    let next = PlantState {
        v: next.v,
        pose: next.pose.wrapped(),
    };
    next.pose.check_gimbal()?;
    Ok(next)
}

fn non_finite<T: Real>(t: T, s: &PlantState<T>) -> DynamicsError {
    DynamicsError::NonFinite {
        t: to_f64(t),
        dump: format!(
            "v={:?} position={:?} euler={:?}",
            s.v.as_slice(),
            s.pose.position.as_slice(),
            s.pose.euler.as_slice()
        ),
    }
}

/// Static force-moment `τ₀` that makes `(v, pose, δ)` an equilibrium of the
/// given plant: `τ₀ = G + C(v)v − τ_r − B(δ)δ − Dv`.
pub fn trim_tau0<T: Real>(
    v: &GeneralizedVelocity<T>,
    euler: &Vec3<T>,
    delta: &Vec4<T>,
    p: &InertialParams<T>,
    aero: &RegressorSet<T>,
    g: T,
) -> Vec6<T> {
    gravity_wrench(euler, p, g) + coriolis_matrix(v, p) * v
        - aero.tau_r
        - aero.control_matrix(delta) * delta
        - aero.d * v
}
