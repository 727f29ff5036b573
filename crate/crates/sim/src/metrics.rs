//! Summary statistics of a run record and the `metrics.kv` file.

use std::collections::BTreeMap;

use dac_core::dynamics::{Vec4, Vec6};
use dac_core::identifier::{fit_window, RidgePolicy, Sample, SampleWindow};

use crate::record::{Row, RunRecord};

/// RMS of the tracking-error norm over rows with `t0 ≤ t < t1`; zero when empty.
pub fn window_rms(rows: &[Row], t0: f64, t1: f64) -> f64 {
    let (sum, n) = rows
        .iter()
        .filter(|r| r.t >= t0 && r.t < t1)
        .fold((0.0, 0usize), |(s, n), r| (s + r.err_norm().powi(2), n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Per-channel RMS of the tracking error over rows with `t0 ≤ t < t1`.
pub fn channel_window_rms(rows: &[Row], t0: f64, t1: f64) -> [f64; 6] {
    let mut acc = [0.0; 6];
    let mut n = 0usize;
    for r in rows.iter().filter(|r| r.t >= t0 && r.t < t1) {
        for (a, e) in acc.iter_mut().zip(r.err) {
            *a += e * e;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a = (*a / n as f64).sqrt());
    }
    acc
}

/// Earliest time in `[t0, t1)` after which `|x(t) − x_true(t)| ≤ tol·|x_true(t)|`
/// holds for every remaining row of the interval, measured from `t0`.
pub fn settling_time(
    rows: &[Row],
    t0: f64,
    t1: f64,
    tol: f64,
    value: impl Fn(&Row) -> (f64, f64),
) -> Option<f64> {
    let mut since = None;
    for r in rows.iter().filter(|r| r.t >= t0 && r.t < t1) {
        let (est, truth) = value(r);
        if (est - truth).abs() <= tol * truth.abs() {
            since.get_or_insert(r.t);
        } else {
            since = None;
        }
    }
    since.map(|s| s - t0)
}

/// Batch and recursive identifier residuals over consecutive windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualWindow {
    pub t0: f64,
    pub t1: f64,
    /// In-window RMS of `‖τ̂ − P̂y‖` for a batch fit on the window itself.
    pub batch_rms: f64,
    /// RMS of the norm of the recursive identifier's a-priori errors inside the window.
    pub recursive_rms: f64,
}

/// Identifier samples `(τ̂ₖ, δₖ₋₁, v̂ₖ)` rebuilt from the record.
pub fn samples(rows: &[Row]) -> Vec<Sample<f64>> {
    rows.windows(2)
        .map(|w| Sample {
            tau_hat: Vec6::from(w[1].tau_hat),
            delta: Vec4::from(w[0].delta),
            v: Vec6::from(w[1].v_hat),
            t: w[1].t,
        })
        .collect()
}

/// Splits `[start, end)` into windows of `len` seconds and scores both identifiers.
pub fn residual_windows(
    rows: &[Row],
    start: f64,
    end: f64,
    len: f64,
    policy: &RidgePolicy<f64>,
) -> Vec<ResidualWindow> {
    let all = samples(rows);
    let rls_by_t: BTreeMap<u64, [f64; 6]> =
        rows.iter().map(|r| (r.t.to_bits(), r.rls_err)).collect();
    let mut out = Vec::new();
    let mut t0 = start;
    while t0 + len <= end + 1e-9 {
        let t1 = t0 + len;
        let inside: Vec<&Sample<f64>> = all.iter().filter(|s| s.t >= t0 && s.t < t1).collect();
        if inside.len() > 11 {
            let mut w = SampleWindow::new(inside.len());
            inside.iter().for_each(|s| {
                w.push(**s);
            });
            let batch_rms = fit_window(&w, policy)
                .map(|f| f.fit_residual_rms)
                .unwrap_or(f64::INFINITY);
            let (sum, n) = inside.iter().fold((0.0, 0usize), |(acc, n), s| {
                let e = rls_by_t.get(&s.t.to_bits()).copied().unwrap_or([0.0; 6]);
                (acc + e.iter().map(|x| x * x).sum::<f64>(), n + 1)
            });
            out.push(ResidualWindow {
                t0,
                t1,
                batch_rms,
                recursive_rms: (sum / n as f64).sqrt(),
            });
        }
        t0 = t1;
    }
    out
}

/// Named scalar metrics, written sorted by key.
pub type Metrics = BTreeMap<String, f64>;

/// Phase boundaries: the start, every fired event time and the end.
pub fn phase_bounds(record: &RunRecord) -> Vec<f64> {
    let end = record.rows.last().map_or(0.0, |r| r.t + record.dt);
    let mut b = vec![0.0];
    for e in &record.events {
        if e.fired > *b.last().unwrap_or(&0.0) && e.fired < end {
            b.push(e.fired);
        }
    }
    b.push(end);
    b
}

pub fn summarize(record: &RunRecord, policy: &RidgePolicy<f64>) -> Metrics {
    let mut m = Metrics::new();
    let rows = &record.rows;
    if rows.is_empty() {
        return m;
    }
    let bounds = phase_bounds(record);
    for (i, w) in bounds.windows(2).enumerate() {
        m.insert(format!("phase{i}.t_start"), w[0]);
        m.insert(format!("phase{i}.t_end"), w[1]);
        m.insert(format!("phase{i}.rms_err"), window_rms(rows, w[0], w[1]));
        let ch = channel_window_rms(rows, w[0], w[1]);
        for (j, name) in ["u", "v", "w", "p", "q", "r"].iter().enumerate() {
            m.insert(format!("phase{i}.rms_err_{name}"), ch[j]);
        }
    }
    let end = *bounds.last().unwrap_or(&0.0);
    m.insert("rms_err.total".into(), window_rms(rows, 0.0, end));

    for e in record
        .events
        .iter()
        .filter(|e| e.label.starts_with("damage"))
    {
        let next = bounds.iter().copied().find(|&b| b > e.fired).unwrap_or(end);
        let key = e.label.replace(':', "_");
        let m_time = settling_time(rows, e.fired, next, 0.02, |r| (r.p_hat[0], r.m_true));
        let iyy_time = settling_time(rows, e.fired, next, 0.05, |r| (r.p_hat[2], r.iyy_true));
        m.insert(
            format!("{key}.m_hat_convergence_s"),
            m_time.unwrap_or(f64::NAN),
        );
        m.insert(
            format!("{key}.iyy_hat_convergence_s"),
            iyy_time.unwrap_or(f64::NAN),
        );
        let steady0 = (e.fired + 10.0).min(next);
        m.insert(
            format!("{key}.steady_rms_err"),
            window_rms(rows, steady0, next),
        );
    }

    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda_actual).collect();
    let n = lambdas.len() as f64;
    m.insert("lambda.mean".into(), lambdas.iter().sum::<f64>() / n);
    m.insert(
        "lambda.max".into(),
        lambdas.iter().copied().fold(f64::MIN, f64::max),
    );
    m.insert(
        "lambda.min".into(),
        lambdas.iter().copied().fold(f64::MAX, f64::min),
    );
    m.insert("lambda.final".into(), *lambdas.last().unwrap_or(&0.0));
    let max_step = lambdas
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    m.insert("lambda.max_step".into(), max_step);
    m.insert("lambda.step_bound".into(), record.rate_limit * record.dt);

    if let Some(on) = record.events.iter().find(|e| e.label == "extra_term_on") {
        let windows = residual_windows(rows, on.fired + 2.0, end, 2.0, policy);
        let wins = windows
            .iter()
            .filter(|w| w.batch_rms <= w.recursive_rms)
            .count();
        m.insert("identifier.windows".into(), windows.len() as f64);
        if !windows.is_empty() {
            m.insert(
                "identifier.batch_not_worse_fraction".into(),
                wins as f64 / windows.len() as f64,
            );
            let mean = |f: fn(&ResidualWindow) -> f64| {
                windows.iter().map(f).sum::<f64>() / windows.len() as f64
            };
            m.insert("identifier.batch_rms_mean".into(), mean(|w| w.batch_rms));
            m.insert(
                "identifier.recursive_rms_mean".into(),
                mean(|w| w.recursive_rms),
            );
        }
    }
    if let Some(last) = record.observability.last() {
        let min_sv = record
            .observability
            .iter()
            .flat_map(|o| o.singular_values.iter().copied())
            .fold(f64::INFINITY, f64::min);
        m.insert("observability.min_singular_value".into(), min_sv);
        m.insert(
            "observability.final_min_singular_value".into(),
            last.singular_values
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        );
    }
    let accepted = record.fits.iter().filter(|f| f.accepted).count();
    m.insert("identifier.fits_accepted".into(), accepted as f64);
    m.insert(
        "identifier.fits_rejected".into(),
        (record.fits.len() - accepted) as f64,
    );
    m.insert(
        "filter.rejected_measurements".into(),
        record.filter_rejections as f64,
    );
    m.insert(
        "filter.parameter_projections".into(),
        record.filter_projections as f64,
    );
    m.insert("filter.resets".into(), record.filter_resets as f64);
    m.insert(
        "filter.jitter_applications".into(),
        record.filter_jitter as f64,
    );
    m.insert(
        "controller.saturation_events".into(),
        record.saturation_events as f64,
    );
    m.insert(
        "controller.allocation_fallbacks".into(),
        rows.iter().filter(|r| r.fallback).count() as f64,
    );
    m
}

/// `key=value` lines sorted by key.
pub fn to_kv(metrics: &Metrics) -> String {
    metrics.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
