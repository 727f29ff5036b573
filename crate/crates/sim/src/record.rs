//! Per-step run record and its CSV form.

use std::io::Write;

/// One closed-loop step. Angles in rad, velocities in ft/s and rad/s, forces
/// in lbf and lbf·ft.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t: f64,
    /// Truth generalized velocity.
    pub v: [f64; 6],
    /// Filter estimate of the generalized velocity.
    pub v_hat: [f64; 6],
    pub v_d: [f64; 6],
    /// Tracking error `v − v_d` on the truth state.
    pub err: [f64; 6],
    /// Actuator command applied over `[t, t + dt)`.
    pub delta: [f64; 4],
    /// Truth force-moment at `t` under the previous command.
    pub tau: [f64; 6],
    pub tau_hat: [f64; 6],
    pub lambda_actual: f64,
    pub lambda_opt: f64,
    /// NaN while no manual selection is active.
    pub lambda_sel: f64,
    /// Window costs at the lower and upper λ probes of the latest descent step;
    /// NaN before the first step.
    pub j_lo: f64,
    pub j_hi: f64,
    /// `[m, Ixx, Iyy, Izz, Ixz, Iyz, Ixy, ρx, ρy, ρz]` as estimated.
    pub p_hat: [f64; 10],
    /// Filter variances of the mass and pitch inertia estimates.
    pub var_m: f64,
    pub var_iyy: f64,
    pub m_true: f64,
    pub iyy_true: f64,
    /// A-priori error of the recursive least-squares identifier.
    pub rls_err: [f64; 6],
    pub innovation_norm: f64,
    pub converged: bool,
    pub rejected: bool,
    pub manual: bool,
    /// Bit j set when actuator j was redacted by the allocator.
    pub redacted: u8,
    /// Bit j set when actuator j hit a limit.
    pub saturated: u8,
    /// The blended model was not positive definite at the requested λ.
    pub clamped: bool,
    /// Allocation fell back to the model-side control matrix.
    pub fallback: bool,
}

const AXES: [&str; 6] = ["u", "v", "w", "p", "q", "r"];
const ACTUATORS: [&str; 4] = ["thrust", "rudder", "aileron", "elevator"];
const PARAMS: [&str; 10] = [
    "m", "ixx", "iyy", "izz", "ixz", "iyz", "ixy", "rho_x", "rho_y", "rho_z",
];

/// Column names of `run.csv`, in order.
pub fn header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    let six = |prefix: &'static str| AXES.iter().map(move |a| format!("{prefix}_{a}"));
    h.extend(six("v"));
    h.extend(six("v_hat"));
    h.extend(six("v_d"));
    h.extend(six("err"));
    h.extend(ACTUATORS.iter().map(|a| format!("delta_{a}")));
    h.extend(six("tau"));
    h.extend(six("tau_hat"));
    h.extend(["lambda_actual", "lambda_opt", "lambda_sel", "j_lo", "j_hi"].map(String::from));
    h.extend(PARAMS.iter().map(|p| format!("{p}_hat")));
    h.extend(["var_m", "var_iyy", "m_true", "iyy_true"].map(String::from));
    h.extend(six("rls_err"));
    h.extend(
        [
            "innovation_norm",
            "converged",
            "rejected",
            "manual",
            "redacted_mask",
            "saturated_mask",
            "clamped",
            "fallback",
        ]
        .map(String::from),
    );
    h
}

impl Row {
    pub fn fields(&self) -> Vec<String> {
        let mut f = Vec::with_capacity(90);
        let mut num = |x: f64| f.push(format!("{x}"));
        num(self.t);
        for block in [&self.v, &self.v_hat, &self.v_d, &self.err] {
            block.iter().for_each(|&x| num(x));
        }
        self.delta.iter().for_each(|&x| num(x));
        self.tau.iter().for_each(|&x| num(x));
        self.tau_hat.iter().for_each(|&x| num(x));
        num(self.lambda_actual);
        num(self.lambda_opt);
        num(self.lambda_sel);
        num(self.j_lo);
        num(self.j_hi);
        self.p_hat.iter().for_each(|&x| num(x));
        num(self.var_m);
        num(self.var_iyy);
        num(self.m_true);
        num(self.iyy_true);
        self.rls_err.iter().for_each(|&x| num(x));
        num(self.innovation_norm);
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        f.push(flag(self.converged));
        f.push(flag(self.rejected));
        f.push(flag(self.manual));
        f.push(self.redacted.to_string());
        f.push(self.saturated.to_string());
        f.push(flag(self.clamped));
        f.push(flag(self.fallback));
        f
    }

    pub fn err_norm(&self) -> f64 {
        self.err.iter().map(|e| e * e).sum::<f64>().sqrt()
    }
}

/// Observability score taken every few filter steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityRow {
    pub t: f64,
    /// Singular values of the row-balanced observability matrix, descending.
    pub singular_values: Vec<f64>,
}

/// Outcome of one batch identifier fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub t: f64,
    pub condition_number: f64,
    pub ridge: f64,
    pub residual_rms: f64,
    pub accepted: bool,
    /// Column norms of the identified control matrix.
    pub b_column_norms: [f64; 4],
}

/// Discrete event as it actually fired.
#[derive(Debug, Clone, PartialEq)]
pub struct FiredEvent {
    pub scheduled: f64,
    pub fired: f64,
    pub label: String,
}

/// Complete output of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub mode: String,
    pub dt: f64,
    pub rows: Vec<Row>,
    pub observability: Vec<ObservabilityRow>,
    pub fits: Vec<FitRow>,
    pub events: Vec<FiredEvent>,
    pub rate_limit: f64,
    pub filter_rejections: usize,
    pub filter_projections: usize,
    pub filter_resets: usize,
    pub filter_jitter: usize,
    pub saturation_events: usize,
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

pub fn write_rows<W: Write>(rows: &[Row], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header()).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_observability<W: Write>(rows: &[ObservabilityRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |r| r.singular_values.len());
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("sv_{i}")));
    w.write_record(&h).map_err(csv_err)?;
    for r in rows {
        let mut f = vec![format!("{}", r.t)];
        f.extend(r.singular_values.iter().map(|x| format!("{x}")));
        w.write_record(&f).map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_fits<W: Write>(rows: &[FitRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t",
        "condition_number",
        "ridge",
        "residual_rms",
        "accepted",
        "b_norm_thrust",
        "b_norm_rudder",
        "b_norm_aileron",
        "b_norm_elevator",
    ])
    .map_err(csv_err)?;
    for r in rows {
        let mut f = vec![
            format!("{}", r.t),
            format!("{}", r.condition_number),
            format!("{}", r.ridge),
            format!("{}", r.residual_rms),
            (r.accepted as u8).to_string(),
        ];
        f.extend(r.b_column_norms.iter().map(|x| format!("{x}")));
        w.write_record(&f).map_err(csv_err)?;
    }
    w.flush()
}
