//! Output directory layout: `run.csv`, `observability.csv`, `fits.csv`,
//! `metrics.kv`, `config.resolved` and `plots/*.svg`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::config::Scenario;
use crate::metrics::{summarize, to_kv, Metrics};
use crate::plots::emit_plots;
use crate::record::{write_fits, write_observability, write_rows, Row, RunRecord};

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_config(sc: &Scenario, outdir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(outdir)?;
    std::fs::write(outdir.join("config.resolved"), sc.resolved_json())
}

/// Writes every artifact of a finished run and returns its metrics.
/// Plot failures are reported as warnings on stderr.
pub fn write_run(
    sc: &Scenario,
    record: &RunRecord,
    outdir: &Path,
    plots: bool,
) -> std::io::Result<Metrics> {
    std::fs::create_dir_all(outdir)?;
    write_config(sc, outdir)?;
    write_rows(&record.rows, create(&outdir.join("run.csv"))?)?;
    write_observability(
        &record.observability,
        create(&outdir.join("observability.csv"))?,
    )?;
    write_fits(&record.fits, create(&outdir.join("fits.csv"))?)?;
    let metrics = summarize(record, &sc.ridge);
    std::fs::write(outdir.join("metrics.kv"), to_kv(&metrics))?;
    if plots {
        if let Err(w) = emit_plots(record, &outdir.join("plots"), &sc.ridge) {
            eprintln!("warning: {w}");
        }
    }
    Ok(metrics)
}

/// Rows kept in `abort_dump.csv`.
pub const DUMP_ROWS: usize = 100;

/// Last rows before an abort, in the `run.csv` schema.
pub fn write_dump(rows: &[Row], outdir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(outdir)?;
    let start = rows.len().saturating_sub(DUMP_ROWS);
    write_rows(&rows[start..], create(&outdir.join("abort_dump.csv"))?)
}
