//! JSON and CSV output for [`EstimateReport`].
//!
//! The JSON form is the full serde representation. The CSV form has one row
//! per trial:
//!
//! ```text
//! trial,seed,dv,nwj,ldr,final_train_loss,parameter_norm,xyz_dv,xyz_nwj,xyz_ldr,xz_dv,xz_nwj,xz_ldr
//! ```
//!
//! The six MI-Diff term columns are empty for isolated k-NN runs. Where a
//! run trained two classifiers, loss and norm columns hold the `;`-joined
//! values in `(x,y,z)`, `(x,z)` order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::estimator::EstimateReport;

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json_string(report: &EstimateReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<W: Write>(report: &EstimateReport, mut writer: W) -> Result<()> {
    writer.write_all(to_json_string(report)?.as_bytes())?;
    Ok(())
}

pub fn save_json(report: &EstimateReport, path: &Path) -> Result<()> {
    write_json(report, BufWriter::new(File::create(path)?))
}

pub fn load_json(path: &Path) -> Result<EstimateReport> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

pub const TRIAL_CSV_HEADER: [&str; 13] = [
    "trial",
    "seed",
    "dv",
    "nwj",
    "ldr",
    "final_train_loss",
    "parameter_norm",
    "xyz_dv",
    "xyz_nwj",
    "xyz_ldr",
    "xz_dv",
    "xz_nwj",
    "xz_ldr",
];

pub fn write_trials_csv<W: Write>(report: &EstimateReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIAL_CSV_HEADER)?;
    for t in &report.per_trial {
        let mut row = vec![
            t.trial.to_string(),
            t.seed.to_string(),
            t.estimates.dv.to_string(),
            t.estimates.nwj.to_string(),
            t.estimates.ldr.to_string(),
            join(&t.final_train_loss),
            join(&t.parameter_norm),
        ];
        match &t.midiff {
            Some(m) => {
                for e in [m.xyz, m.xz] {
                    row.extend([e.dv.to_string(), e.nwj.to_string(), e.ldr.to_string()]);
                }
            }
            None => row.extend(std::iter::repeat(String::new()).take(6)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trials_csv(report: &EstimateReport, path: &Path) -> Result<()> {
    write_trials_csv(report, BufWriter::new(File::create(path)?))
}
