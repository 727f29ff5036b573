//! Static SVG line charts of a run record.

use std::path::{Path, PathBuf};

use dac_core::identifier::RidgePolicy;
use plotters::prelude::*;

use crate::metrics::residual_windows;
use crate::record::RunRecord;

type Series = (String, Vec<(f64, f64)>);

const MAX_POINTS: usize = 3000;

fn decimate<T>(items: &[T]) -> impl Iterator<Item = &T> {
    let stride = items.len().div_ceil(MAX_POINTS).max(1);
    items.iter().step_by(stride)
}

fn line_chart(path: &Path, title: &str, y_label: &str, series: &[Series]) -> Result<(), String> {
    let pts = series
        .iter()
        .flat_map(|(_, p)| p.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        return Err(format!("{title}: no finite points"));
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let root = SVGBackend::new(path, (1000, 600)).into_drawing_area();
    let err = |e: &dyn std::fmt::Display| format!("{title}: {e}");
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc(y_label)
        .draw()
        .map_err(|e| err(&e))?;
    for (i, (name, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let finite = points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        chart
            .draw_series(LineSeries::new(finite, color.stroke_width(1)))
            .map_err(|e| err(&e))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    if series.len() <= 12 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| err(&e))?;
    }
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Writes one SVG per figure into `outdir`. An empty record writes nothing and
/// returns a warning instead.
pub fn emit_plots(
    record: &RunRecord,
    outdir: &Path,
    policy: &RidgePolicy<f64>,
) -> Result<Vec<PathBuf>, String> {
    if record.rows.is_empty() {
        return Err("empty record: no plots written".into());
    }
    std::fs::create_dir_all(outdir).map_err(|e| e.to_string())?;
    let rows: Vec<_> = decimate(&record.rows).collect();
    let mut written = Vec::new();
    let mut emit = |name: &str, title: &str, y_label: &str, series: Vec<Series>| {
        let path = outdir.join(name);
        line_chart(&path, title, y_label, &series).map(|_| written.push(path))
    };

    let axes = ["u", "v", "w", "p", "q", "r"];
    emit(
        "tracking_error.svg",
        "Tracking error",
        "v - v_d",
        (0..6)
            .map(|j| {
                (
                    format!("err_{}", axes[j]),
                    rows.iter().map(|r| (r.t, r.err[j])).collect(),
                )
            })
            .collect(),
    )?;
    emit(
        "lambda.svg",
        "Decision factor",
        "lambda",
        vec![
            (
                "actual".into(),
                rows.iter().map(|r| (r.t, r.lambda_actual)).collect(),
            ),
            (
                "optimal".into(),
                rows.iter().map(|r| (r.t, r.lambda_opt)).collect(),
            ),
            (
                "selected".into(),
                rows.iter().map(|r| (r.t, r.lambda_sel)).collect(),
            ),
        ],
    )?;
    let act = ["thrust", "rudder", "aileron", "elevator"];
    emit(
        "actuators.svg",
        "Actuator commands",
        "delta",
        (0..4)
            .map(|j| {
                (
                    act[j].to_string(),
                    rows.iter().map(|r| (r.t, r.delta[j])).collect(),
                )
            })
            .collect(),
    )?;
    emit(
        "estimation_error.svg",
        "Relative inertial parameter error",
        "(estimate - truth) / truth",
        vec![
            (
                "mass".into(),
                rows.iter()
                    .map(|r| (r.t, (r.p_hat[0] - r.m_true) / r.m_true))
                    .collect(),
            ),
            (
                "Iyy".into(),
                rows.iter()
                    .map(|r| (r.t, (r.p_hat[2] - r.iyy_true) / r.iyy_true))
                    .collect(),
            ),
        ],
    )?;
    if let Some(first) = record.observability.first() {
        let n = first.singular_values.len();
        emit(
            "observability.svg",
            "Observability singular values",
            "log10(sigma)",
            (0..n)
                .map(|i| {
                    (
                        format!("sv_{}", i + 1),
                        record
                            .observability
                            .iter()
                            .map(|o| (o.t, o.singular_values[i].max(1e-300).log10()))
                            .collect(),
                    )
                })
                .collect(),
        )?;
    }
    if let Some(on) = record.events.iter().find(|e| e.label == "extra_term_on") {
        let end = record.rows.last().map_or(0.0, |r| r.t + record.dt);
        let windows = residual_windows(&record.rows, on.fired + 2.0, end, 2.0, policy);
        if !windows.is_empty() {
            emit(
                "identifier_residuals.svg",
                "Batch vs recursive identifier residual",
                "RMS residual",
                vec![
                    (
                        "batch".into(),
                        windows.iter().map(|w| (w.t1, w.batch_rms)).collect(),
                    ),
                    (
                        "recursive".into(),
                        windows.iter().map(|w| (w.t1, w.recursive_rms)).collect(),
                    ),
                ],
            )?;
        }
    }
    Ok(written)
}
