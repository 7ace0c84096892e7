use std::io::Write;
use std::path::Path;

use crate::error::{Result, SimError};
use crate::harness::SimulationReport;

pub const REPORT_HEADER: [&str; 11] = [
    "reported_mean",
    "true_mean",
    "across_gap",
    "within_gap",
    "strategy",
    "design",
    "mean",
    "q90",
    "capped_fraction",
    "reps",
    "seed",
];

/// Writes `reports` as CSV, one row per report in the order given.
pub fn write_reports<W: Write>(reports: &[SimulationReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        let s = &r.summary;
        w.write_record([
            r.reported_mean.to_string(),
            r.true_mean.to_string(),
            r.across_gap.to_string(),
            r.within_gap.to_string(),
            r.strategy.clone(),
            r.design.as_str().to_string(),
            s.mean.to_string(),
            s.q90.to_string(),
            s.capped_fraction.to_string(),
            s.reps.to_string(),
            s.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn table_emit(reports: &[SimulationReport], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_reports(reports, file).map_err(|source| SimError::Csv {
        path: path.to_path_buf(),
        source,
    })
}
