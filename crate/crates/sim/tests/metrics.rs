use dac_core::identifier::RidgePolicy;
use dac_sim::metrics::{phase_bounds, settling_time, summarize, to_kv, window_rms};
use dac_sim::record::{header, FiredEvent};
use dac_sim::{Row, RunRecord};

fn row(t: f64) -> Row {
    Row {
        t,
        v: [0.0; 6],
        v_hat: [0.0; 6],
        v_d: [0.0; 6],
        err: [0.0; 6],
        delta: [0.0; 4],
        tau: [0.0; 6],
        tau_hat: [0.0; 6],
        lambda_actual: 0.0,
        lambda_opt: 0.0,
        lambda_sel: f64::NAN,
        j_lo: f64::NAN,
        j_hi: f64::NAN,
        p_hat: [1.0; 10],
        var_m: 0.0,
        var_iyy: 0.0,
        m_true: 1.0,
        iyy_true: 1.0,
        rls_err: [0.0; 6],
        innovation_norm: 0.0,
        converged: false,
        rejected: false,
        manual: false,
        redacted: 0,
        saturated: 0,
        clamped: false,
        fallback: false,
    }
}

fn sine_rows(n: usize, dt: f64) -> Vec<Row> {
    (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let mut r = row(t);
            r.err[2] = (2.0 * std::f64::consts::PI * t).sin();
            r
        })
        .collect()
}

#[test]
fn rms_of_unit_sine_over_whole_periods() {
    let rows = sine_rows(10_000, 1e-3);
    let rms = window_rms(&rows, 0.0, 10.0);
    assert!(
        (rms - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6,
        "{rms}"
    );
}

#[test]
fn rms_of_zero_error_and_of_empty_window() {
    let rows: Vec<Row> = (0..100).map(|k| row(k as f64 * 0.01)).collect();
    assert_eq!(window_rms(&rows, 0.0, 1.0), 0.0);
    assert_eq!(window_rms(&rows, 5.0, 6.0), 0.0);
}

#[test]
fn settling_time_is_measured_from_window_start() {
    let rows: Vec<Row> = (0..1000)
        .map(|k| {
            let t = k as f64 * 0.01;
            let mut r = row(t);
            r.p_hat[0] = 1.0 + (-t).exp();
            r
        })
        .collect();
    // 1 + e^{-t} within 2 % of 1 once t ≥ ln 50
    let s = settling_time(&rows, 0.0, 10.0, 0.02, |r| (r.p_hat[0], r.m_true)).unwrap();
    assert!((s - 50f64.ln()).abs() < 0.011, "{s}");
    assert!(settling_time(&rows, 0.0, 1.0, 0.02, |r| (r.p_hat[0], r.m_true)).is_none());
}

#[test]
fn phases_split_at_fired_events() {
    let record = RunRecord {
        dt: 0.01,
        rows: (0..=1000).map(|k| row(k as f64 * 0.01)).collect(),
        events: vec![
            FiredEvent {
                scheduled: 2.0,
                fired: 2.0,
                label: "disturbance".into(),
            },
            FiredEvent {
                scheduled: 5.0,
                fired: 5.0,
                label: "damage:d1".into(),
            },
        ],
        ..Default::default()
    };
    let bounds = phase_bounds(&record);
    assert_eq!(bounds.len(), 4);
    assert_eq!(&bounds[..3], &[0.0, 2.0, 5.0]);
    assert!((bounds[3] - 10.01).abs() < 1e-12);
    let m = summarize(&record, &RidgePolicy::default());
    assert_eq!(m["phase2.rms_err"], 0.0);
    assert_eq!(m["damage_d1.m_hat_convergence_s"], 0.0);
    let kv = to_kv(&m);
    let keys: Vec<&str> = kv.lines().map(|l| l.split('=').next().unwrap()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn empty_record_has_no_metrics() {
    assert!(summarize(&RunRecord::default(), &RidgePolicy::default()).is_empty());
}

#[test]
fn csv_rows_match_header_width() {
    assert_eq!(row(0.0).fields().len(), header().len());
}
