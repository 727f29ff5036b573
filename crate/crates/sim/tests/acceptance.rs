//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 after printing every line; with `ACCEPTANCE_STRICT=1` any FAIL
//! makes the process exit 1.

use std::time::{Duration, Instant};

use dac_core::controller::{control_wrench, decay_rate_bound, ControllerGains, DesiredMotion};
use dac_core::dynamics::{
    acceleration, coriolis_matrix, mass_matrix, pose_rate, InertialParams, Mat6, Mat6x4,
    PlantState, Pose, RegressorSet, Vec3, Vec4, Vec6,
};
use dac_core::estimator::{
    jacobians, numerical_rank, observability_from_jacobians, AugmentedState, JointUkf,
    ProcessContext, StateMatrix, UkfConfig, N_STATE, P_OFFSET, TAU_OFFSET, V_OFFSET,
};
use dac_core::identifier::{
    koopman_fit, rls_update, stacks_from, RegressorMatrix, RidgePolicy, RlsState, Sample,
};
use dac_core::integrate::rk4;
use dac_core::supervisor::blend;
use dac_sim::config::bundled;
use dac_sim::metrics::{residual_windows, settling_time, window_rms};
use dac_sim::record::write_rows;
use dac_sim::{parse_scenario, run, Mode, RunError, RunRecord, Scenario};
use nalgebra::{DMatrix, Matrix2, SVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Relative tolerance for the numerical rank of the observability matrix.
const RANK_TOL: f64 = 1e-12;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn verdict(
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit_s: f64,
) -> Verdict {
    let in_time = elapsed.as_secs_f64() < limit_s;
    let detail = if in_time {
        detail
    } else {
        format!(
            "{detail}; runtime {:.1} s over {limit_s} s",
            elapsed.as_secs_f64()
        )
    };
    Verdict {
        id,
        name,
        pass: pass && in_time,
        detail,
        elapsed,
    }
}

/// A run that may have aborted; `aborted` holds the abort time and reason.
struct Outcome {
    record: RunRecord,
    aborted: Option<(f64, String)>,
    elapsed: Duration,
}

fn execute(sc: &Scenario, mode: Mode) -> Outcome {
    let start = Instant::now();
    let (record, aborted) = match run(sc, mode) {
        Ok(r) => (r, None),
        Err(RunError::Diverged { t, reason, partial }) => (*partial, Some((t, reason))),
        Err(e) => panic!("{} run failed to start: {e}", mode.label()),
    };
    Outcome {
        record,
        aborted,
        elapsed: start.elapsed(),
    }
}

fn abort_note(o: &Outcome) -> String {
    match &o.aborted {
        Some((t, reason)) => format!("aborted at t = {t:.3} s ({reason})"),
        None => "completed".to_string(),
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> InertialParams<f64> {
    let ixx: f64 = rng.random_range(0.5..3.0);
    let iyy = rng.random_range(2.0..8.0);
    let izz = rng.random_range(ixx.max(iyy)..(ixx + iyy));
    InertialParams {
        m: rng.random_range(1.0..3.0),
        ixx,
        iyy,
        izz,
        ixz: rng.random_range(-0.1..0.1),
        iyz: rng.random_range(-0.05..0.05),
        ixy: rng.random_range(-0.05..0.05),
        rho: Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2)),
    }
}

fn c1_structure() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut skew_max, mut sym_max, mut power_max) = (0.0f64, 0.0f64, 0.0f64);
    let mut drawn = 0;
    while drawn < 1000 {
        let p = random_params(&mut rng);
        let Ok(m) = mass_matrix(&p) else { continue };
        drawn += 1;
        let v = Vec6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let c = coriolis_matrix(&v, &p);
        skew_max = skew_max.max((c + c.transpose()).abs().max());
        sym_max = sym_max.max((m - m.transpose()).abs().max());
        power_max = power_max.max(v.dot(&(c * v)).abs());
    }
    let pass = skew_max < 1e-12 && sym_max == 0.0 && power_max < 1e-12;
    verdict(
        1,
        "structural invariants",
        pass,
        format!(
            "1000 draws: max ‖C+Cᵀ‖∞ = {skew_max:e}, max ‖M−Mᵀ‖∞ = {sym_max:e}, max |vᵀCv| = {power_max:e}"
        ),
        start.elapsed(),
        1.0,
    )
}

fn c2_energy() -> Verdict {
    let start = Instant::now();
    let p = InertialParams {
        m: 1.5566,
        ixx: 1.229,
        iyy: 5.812,
        izz: 6.770,
        ixz: 0.1179,
        iyz: 0.0,
        ixy: 0.0,
        rho: Vec3::new(0.05, -0.02, 0.03),
    };
    let m = mass_matrix(&p).expect("positive definite");
    let euler = Vec3::zeros();
    let zero = Vec6::zeros();
    let energy = |v: &Vec6<f64>| 0.5 * v.dot(&(m * v));
    let mut v = Vec6::new(3.0, -1.0, 2.0, 0.8, -0.5, 0.6);
    let e0 = energy(&v);
    let dt = 1e-3;
    let mut worst = 0.0f64;
    for k in 0..10_000 {
        v = rk4(&v, k as f64 * dt, dt, |_, x| {
            acceleration(x, &euler, &zero, &p, &zero, 0.0)
        })
        .expect("finite");
        worst = worst.max((energy(&v) - e0).abs() / e0);
    }
    verdict(
        2,
        "energy conservation",
        worst < 1e-6,
        format!("max relative drift of ½vᵀMv over 10 s = {worst:e}"),
        start.elapsed(),
        5.0,
    )
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    num / den
}

/// The commanded wrench is applied to the plant directly, so the closed loop
/// is `Mṽ̇ = −Cṽ − Γṽ` with full six-axis authority.
fn c3_lyapunov(sc: &Scenario) -> Verdict {
    let start = Instant::now();
    let p = sc.params;
    let aero = sc.aero.clone();
    let model = blend(&p, &aero, &p, &aero, 0.0).expect("nominal model");
    let gains = ControllerGains {
        chi: Vec6::zeros(),
        ..sc.gains
    };
    let desired = DesiredMotion::hold(sc.v_trim);
    let m = model.mass;
    let dt: f64 = 0.005;
    let mut state = PlantState {
        v: sc.v_trim + Vec6::new(5.0, -3.0, 2.0, 0.2, -0.1, 0.15),
        pose: Pose::new(Vec3::zeros(), sc.euler_trim),
    };
    let lyapunov = |s: &PlantState<f64>| {
        let e = s.v - sc.v_trim;
        0.5 * e.dot(&(m * e))
    };
    let mut points = Vec::new();
    let steps = (5.0 / dt).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * dt;
        if t >= 0.5 - 1e-9 {
            points.push((t, lyapunov(&state).ln()));
        }
        if k == steps {
            break;
        }
        state = dac_core::dynamics::step(&state, t, dt, |_, x| {
            let v: Vec6<f64> = x.fixed_rows::<6>(0).into_owned();
            let euler: Vec3<f64> = x.fixed_rows::<3>(9).into_owned();
            let tau_c = control_wrench(&v, &euler, &desired, &model, &gains);
            let tau = aero.force(&Vec4::zeros(), &v) + tau_c;
            let vdot = acceleration(&v, &euler, &tau, &p, &aero.tau_r, sc.gravity)?;
            let mut dx = SVector::<f64, 12>::zeros();
            dx.fixed_rows_mut::<6>(0).copy_from(&vdot);
            dx.fixed_rows_mut::<6>(6).copy_from(&pose_rate(&v, &euler));
            Ok(dx)
        })
        .expect("closed loop stays finite");
    }
    let slope = least_squares_slope(&points);
    let bound = -1.8 * decay_rate_bound(&gains, &m);
    verdict(
        3,
        "Lyapunov regulation",
        slope <= bound,
        format!("ln V slope over [0.5, 5] s = {slope:.4}, required ≤ {bound:.4}"),
        start.elapsed(),
        10.0,
    )
}

/// Surge-only reduction of the joint filter: every state except `u` and `τ_u`
/// is pinned by a negligible covariance, so the filter is linear in the pair.
fn c4_ukf_oracle() -> Verdict {
    let start = Instant::now();
    let dt = 0.02;
    let p = InertialParams {
        m: 2.0,
        ixx: 1.2,
        iyy: 5.8,
        izz: 6.8,
        ixz: 0.0,
        iyz: 0.0,
        ixy: 0.0,
        rho: Vec3::zeros(),
    };
    let tiny = 1e-40;
    let (q_u, q_tau, r_u) = (1e-4, 1e-2, 0.0025);
    let (p_u, p_tau) = (0.5, 4.0);
    let u_idx = V_OFFSET;
    let tau_idx = TAU_OFFSET;
    let mut q0 = StateMatrix::<f64>::from_diagonal_element(tiny);
    q0[(u_idx, u_idx)] = q_u;
    q0[(tau_idx, tau_idx)] = q_tau;
    let mut p0 = StateMatrix::<f64>::from_diagonal_element(tiny);
    p0[(u_idx, u_idx)] = p_u;
    p0[(tau_idx, tau_idx)] = p_tau;
    let mut r0 = Mat6::<f64>::identity();
    r0[(0, 0)] = r_u;
    let cfg = UkfConfig {
        kappa: 0.0,
        q0,
        r0,
        alpha_forget: 1.0,
        fd_step: 1e-6,
        obs_check_period: 0,
        gate: f64::INFINITY,
        r_floor: 1e-12,
        adapt_process_noise: false,
        adapt_measurement_noise: false,
        mass_floor: 1e-3,
        inertia_floor: 1e-3,
        g: 0.0,
    };
    let (u0, tau0) = (10.0, 0.5);
    let mut ukf = JointUkf::new(
        cfg,
        AugmentedState::new(
            Vec6::new(u0, 0.0, 0.0, 0.0, 0.0, 0.0),
            Vec6::new(tau0, 0.0, 0.0, 0.0, 0.0, 0.0),
            p,
        ),
        p0,
    )
    .expect("valid filter");
    let ctx = ProcessContext {
        euler: Vec3::zeros(),
        tau_r: Vec6::zeros(),
    };

    let f = Matrix2::new(1.0, dt / p.m, 0.0, 1.0);
    let q = Matrix2::new(q_u, 0.0, 0.0, q_tau);
    let mut x = Vector2::new(u0, tau0);
    let mut cov = Matrix2::new(p_u, 0.0, 0.0, p_tau);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, r_u.sqrt()).expect("valid sigma");
    let mut truth = Vector2::new(10.3, 0.8);
    let (mut mean_err, mut cov_err, mut pinned) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..100 {
        truth = f * truth + Vector2::new(0.0, 0.05 * (0.3 * k as f64).sin());
        let y_u = truth[0] + noise.sample(&mut rng);

        x = f * x;
        cov = f * cov * f.transpose() + q;
        let s = cov[(0, 0)] + r_u;
        let gain = cov.column(0) / s;
        x += gain * (y_u - x[0]);
        cov -= gain * gain.transpose() * s;

        let y = Vec6::new(y_u, 0.0, 0.0, 0.0, 0.0, 0.0);
        ukf.step(&y, dt, &ctx).expect("filter step");
        let idx = [u_idx, tau_idx];
        for a in 0..2 {
            mean_err = mean_err.max((ukf.x[idx[a]] - x[a]).abs());
            for b in 0..2 {
                cov_err = cov_err.max((ukf.p_cov[(idx[a], idx[b])] - cov[(a, b)]).abs());
            }
        }
        pinned = pinned.max(
            (0..N_STATE)
                .filter(|i| !idx.contains(i) && !(P_OFFSET..N_STATE).contains(i))
                .map(|i| ukf.x[i].abs())
                .fold(0.0, f64::max),
        );
    }
    verdict(
        4,
        "UKF oracle equivalence",
        mean_err < 1e-8 && cov_err < 1e-8,
        format!(
            "100 steps: max |mean diff| = {mean_err:e}, max |cov diff| = {cov_err:e}, pinned states ≤ {pinned:e}"
        ),
        start.elapsed(),
        1.0,
    )
}

fn c5_parameters(sc: &Scenario, dac: &Outcome, mbc: &Outcome) -> Verdict {
    let t_d = sc
        .events
        .iter()
        .find(|e| matches!(e.kind, dac_sim::config::EventKind::Damage { .. }))
        .map_or(10.0, |e| e.time);
    let settle = |o: &Outcome| {
        let rows = &o.record.rows;
        let covered = rows.last().is_some_and(|r| r.t >= t_d + 15.0);
        let end = rows.last().map_or(t_d, |r| r.t + o.record.dt);
        let m = settling_time(rows, t_d, end, 0.02, |r| (r.p_hat[0], r.m_true));
        let iyy = settling_time(rows, t_d, end, 0.05, |r| (r.p_hat[2], r.iyy_true));
        let last = rows
            .last()
            .map(|r| (r.p_hat[0] / r.m_true - 1.0, r.p_hat[2] / r.iyy_true - 1.0));
        let ok = covered && m.is_some_and(|s| s <= 15.0) && iyy.is_some_and(|s| s <= 15.0);
        (ok, m, iyy, last)
    };
    let fmt = |s: Option<f64>| s.map_or("never".to_string(), |s| format!("{s:.2} s"));
    let (ok, m, iyy, last) = settle(dac);
    let (_, mm, mi, _) = settle(mbc);
    let last = last.map_or(String::new(), |(a, b)| {
        format!(", final relative errors m̂ {:+.3} Îyy {:+.3}", a, b)
    });
    verdict(
        5,
        "parameter recovery",
        ok,
        format!(
            "DAC {}: m̂ settles after {}, Îyy after {}{last}; MBC for reference: {}, {}",
            abort_note(dac),
            fmt(m),
            fmt(iyy),
            fmt(mm),
            fmt(mi)
        ),
        dac.elapsed,
        60.0,
    )
}

fn c6_koopman_exact() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let truth = RegressorSet {
        b: Mat6x4::from_fn(|_, _| rng.random_range(-60.0..60.0)),
        d: Mat6::from_fn(|_, _| rng.random_range(-5.0..5.0)),
        tau0: Vec6::from_fn(|_, _| rng.random_range(-20.0..20.0)),
        tau_r: Vec6::zeros(),
        b_negative: None,
    };
    let mut p_true = RegressorMatrix::<f64>::zeros();
    p_true.fixed_view_mut::<6, 4>(0, 0).copy_from(&truth.b);
    p_true.fixed_view_mut::<6, 6>(0, 4).copy_from(&truth.d);
    p_true.set_column(10, &truth.tau0);
    let samples: Vec<Sample<f64>> = (0..200)
        .map(|i| {
            let t = i as f64 * 0.02;
            let delta = Vec4::from_fn(|j, _| {
                0.1 * (2.0 * (j as f64 + 1.3) * t).sin() + rng.random_range(-0.05..0.05)
            });
            let v = Vec6::from_fn(|j, _| {
                let scale = if j < 3 { 5.0 } else { 0.3 };
                scale * ((1.7 * j as f64 + 0.9) * t).cos() + rng.random_range(-0.1..0.1) * scale
            });
            Sample {
                tau_hat: truth.force(&delta, &v),
                delta,
                v,
                t,
            }
        })
        .collect();
    let (t_hat, y) = stacks_from(samples.iter()).expect("stacks");
    let fit = koopman_fit(&t_hat, &y, &RidgePolicy::default()).expect("well posed");
    let rel = (fit.p_hat - p_true).norm() / p_true.norm();

    let mut rls = RlsState::new(1e10, 1.0);
    for s in &samples {
        rls = rls_update(&rls, s).0;
    }
    let rls_p = DMatrix::from_column_slice(6, 11, rls.estimate().p_hat.as_slice());
    let batch_p = DMatrix::from_column_slice(6, 11, fit.p_hat.as_slice());
    let rls_diff = (rls_p - &batch_p).norm() / batch_p.norm();
    verdict(
        6,
        "Koopman exact recovery",
        rel < 1e-8 && rls_diff < 1e-6,
        format!("m = 200: batch relative error = {rel:e}, RLS vs batch relative difference = {rls_diff:e}"),
        start.elapsed(),
        2.0,
    )
}

fn c7_residuals(sc: &Scenario, mbc: &Outcome) -> Verdict {
    let rows = &mbc.record.rows;
    let end = rows.last().map_or(0.0, |r| r.t + mbc.record.dt);
    let windows = residual_windows(rows, 32.0, end, 2.0, &sc.ridge);
    let wins = windows
        .iter()
        .filter(|w| w.batch_rms <= w.recursive_rms)
        .count();
    let frac = if windows.is_empty() {
        0.0
    } else {
        wins as f64 / windows.len() as f64
    };
    verdict(
        7,
        "Koopman vs RLS under the extra term",
        !windows.is_empty() && frac >= 0.9,
        format!(
            "MBC run ({}): batch ≤ recursive in {wins}/{} windows ({:.0}%)",
            abort_note(mbc),
            windows.len(),
            100.0 * frac
        ),
        mbc.elapsed,
        60.0,
    )
}

fn c8_dac_vs_mbc(
    dac: &Outcome,
    mbc: &Outcome,
    nominal_dac: &Outcome,
    nominal_mbc: &Outcome,
) -> Verdict {
    let covers = |o: &Outcome, t: f64| o.record.rows.last().is_some_and(|r| r.t >= t - o.record.dt);
    let r_dac = window_rms(&dac.record.rows, 20.0, 30.0);
    let r_mbc = window_rms(&mbc.record.rows, 20.0, 30.0);
    let ratio = r_dac / r_mbc;
    let damaged_ok = covers(dac, 30.0) && covers(mbc, 30.0) && ratio < 0.3;
    let end = |o: &Outcome| o.record.rows.last().map_or(0.0, |r| r.t + o.record.dt);
    let n_dac = window_rms(&nominal_dac.record.rows, 0.0, end(nominal_dac));
    let n_mbc = window_rms(&nominal_mbc.record.rows, 0.0, end(nominal_mbc));
    let n_diff = (n_dac - n_mbc).abs() / n_mbc;
    let nominal_ok = nominal_dac.aborted.is_none() && nominal_mbc.aborted.is_none() && n_diff < 0.1;
    let total = dac.elapsed + mbc.elapsed + nominal_dac.elapsed + nominal_mbc.elapsed;
    verdict(
        8,
        "DAC vs MBC",
        damaged_ok && nominal_ok,
        format!(
            "damaged: RMS(ṽ) on [20, 30] s DAC {r_dac:.4} / MBC {r_mbc:.4} = {ratio:.3} (DAC {}, MBC {}); \
             no fault: DAC {n_dac:.4} vs MBC {n_mbc:.4}, difference {:.1}% (DAC {}, MBC {})",
            abort_note(dac),
            abort_note(mbc),
            100.0 * n_diff,
            abort_note(nominal_dac),
            abort_note(nominal_mbc)
        ),
        total,
        120.0,
    )
}

fn c9_observability(sc: &Scenario, dac: &Outcome) -> Verdict {
    let start = Instant::now();
    let obs = &dac.record.observability;
    let ranks: Vec<usize> = obs
        .iter()
        .map(|o| numerical_rank(&o.singular_values, RANK_TOL))
        .collect();
    let min_rank = ranks.iter().copied().min().unwrap_or(0);
    let all_full = !obs.is_empty() && min_rank == N_STATE;
    let min_sv = obs
        .iter()
        .flat_map(|o| o.singular_values.iter().copied())
        .fold(f64::INFINITY, f64::min);

    let x = AugmentedState::new(
        sc.v_trim,
        sc.aero.force(&sc.delta_trim, &sc.v_trim),
        sc.params,
    )
    .to_vector();
    let ctx = ProcessContext {
        euler: sc.euler_trim,
        tau_r: sc.aero.tau_r,
    };
    let mut j = jacobians(&x, &ctx, sc.ukf.fd_step, sc.gravity).expect("jacobians at trim");
    let (_, sv_full) = observability_from_jacobians(&j);
    let rank_full = numerical_rank(&sv_full, RANK_TOL);
    j.df_dp.fill(0.0);
    let (_, sv_cut) = observability_from_jacobians(&j);
    let rank_cut = numerical_rank(&sv_cut, RANK_TOL);
    verdict(
        9,
        "observability",
        all_full && rank_cut < N_STATE,
        format!(
            "{} in-run checks: minimum numerical rank {min_rank}/34, smallest singular value {min_sv:e}; \
             at trim rank {rank_full} with ∂f/∂p and {rank_cut} without",
            obs.len()
        ),
        dac.elapsed + start.elapsed(),
        30.0,
    )
}

/// `[start, end)` of the first interval after `from` over which λ keeps moving.
fn ramp_after(rows: &[dac_sim::Row], from: f64) -> Option<(f64, f64)> {
    let moving = |w: &[dac_sim::Row]| (w[1].lambda_actual - w[0].lambda_actual).abs() > 0.0;
    let mut it = rows.windows(2).skip_while(|w| w[0].t < from);
    let first = it.find(|w| moving(w))?;
    let start = first[0].t;
    let end = it.find(|w| !moving(w)).map_or(rows.last()?.t, |w| w[0].t);
    Some((start, end))
}

fn c10_transitions(sc: &Scenario, dac: &Outcome) -> Verdict {
    let rows = &dac.record.rows;
    let bound = dac.record.rate_limit * dac.record.dt;
    let max_step = rows
        .windows(2)
        .map(|w| (w[1].lambda_actual - w[0].lambda_actual).abs())
        .fold(0.0, f64::max);
    let rate_ok = max_step <= bound + 4.0 * f64::EPSILON;

    let manual: Vec<f64> = sc
        .events
        .iter()
        .filter(|e| matches!(e.kind, dac_sim::config::EventKind::ManualLambda { .. }))
        .map(|e| e.time)
        .collect();
    let t_d = sc
        .events
        .iter()
        .find(|e| matches!(e.kind, dac_sim::config::EventKind::Damage { .. }))
        .map_or(10.0, |e| e.time);
    let mut notes = Vec::new();
    let mut ramps_ok = true;
    for (label, from) in
        std::iter::once(("auto rise", t_d)).chain(manual.iter().map(|&t| ("manual", t)))
    {
        match ramp_after(rows, from) {
            Some((s, e)) if from == t_d || s < from + 1.0 => {
                let pre = window_rms(rows, s - 2.0, s);
                let mut worst = 0.0f64;
                let mut t = s;
                while t < e {
                    worst = worst.max(window_rms(rows, t, (t + 1.0).min(e.max(t + dac.record.dt))));
                    t += 1.0;
                }
                let ratio = worst / pre;
                ramps_ok &= ratio < 5.0;
                notes.push(format!(
                    "{label} ramp [{s:.2}, {e:.2}] s peak/pre = {ratio:.2}"
                ));
            }
            _ => {
                ramps_ok = false;
                notes.push(format!("{label} ramp after {from} s not observed"));
            }
        }
    }
    verdict(
        10,
        "λ-transition safety",
        rate_ok && ramps_ok,
        format!(
            "DAC {}: max |Δλ| = {max_step:e} vs bound {bound:e}; {}",
            abort_note(dac),
            notes.join("; ")
        ),
        dac.elapsed,
        120.0,
    )
}

fn csv_bytes(record: &RunRecord) -> Vec<u8> {
    let mut buf = Vec::new();
    write_rows(&record.rows, &mut buf).expect("in-memory write");
    buf
}

fn c11_determinism(sc: &Scenario, dac: &Outcome, mbc: &Outcome) -> Verdict {
    let start = Instant::now();
    let dac2 = execute(sc, Mode::Dac);
    let mbc2 = execute(sc, Mode::Mbc);
    let same_dac = csv_bytes(&dac.record) == csv_bytes(&dac2.record);
    let same_mbc = csv_bytes(&mbc.record) == csv_bytes(&mbc2.record);
    verdict(
        11,
        "determinism",
        same_dac && same_mbc,
        format!("run.csv identical on repeat: DAC {same_dac}, MBC {same_mbc}"),
        start.elapsed(),
        120.0,
    )
}

fn main() {
    let damaged = parse_scenario(bundled::PAPER_DAMAGE1).expect("bundled scenario");
    let nominal = parse_scenario(bundled::NOMINAL).expect("bundled scenario");

    let mut verdicts = vec![
        c1_structure(),
        c2_energy(),
        c3_lyapunov(&nominal),
        c4_ukf_oracle(),
    ];
    let dac = execute(&damaged, Mode::Dac);
    let mbc = execute(&damaged, Mode::Mbc);
    let nominal_dac = execute(&nominal, Mode::Dac);
    let nominal_mbc = execute(&nominal, Mode::Mbc);
    verdicts.push(c5_parameters(&damaged, &dac, &mbc));
    verdicts.push(c6_koopman_exact());
    verdicts.push(c7_residuals(&damaged, &mbc));
    verdicts.push(c8_dac_vs_mbc(&dac, &mbc, &nominal_dac, &nominal_mbc));
    verdicts.push(c9_observability(&damaged, &dac));
    verdicts.push(c10_transitions(&damaged, &dac));
    verdicts.push(c11_determinism(&damaged, &dac, &mbc));

    for v in &verdicts {
        println!(
            "criterion {:>2} {:<36} {} [{:.2} s] {}",
            v.id,
            v.name,
            if v.pass { "PASS" } else { "FAIL" },
            v.elapsed.as_secs_f64(),
            v.detail
        );
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        verdicts.len() - failed
    );
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|s| s == "1") {
        std::process::exit(1);
    }
}
