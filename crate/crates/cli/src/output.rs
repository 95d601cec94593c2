//! CSV and JSON serialisation of experiment results.

use std::io::Write;

use nestmc::harness::RunReport;
use nestmc::WidthDiagnostic;

pub const ESTIMATES_HEADER: [&str; 8] = [
    "problem",
    "scenario",
    "method",
    "m",
    "N",
    "replication",
    "estimate",
    "seed_path",
];

pub const SUMMARY_HEADER: [&str; 10] = [
    "problem",
    "scenario",
    "method",
    "m",
    "N",
    "mse",
    "mse_stderr",
    "truth_or_ref",
    "ref_stderr",
    "slope",
];

pub const DIAGNOSE_HEADER: [&str; 6] = ["d", "k", "W_dk", "lemma_lhs", "lemma_rhs", "satisfied"];

/// 17 significant digits, enough to round-trip any double.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn fmt_seed_path(path: &[u64]) -> String {
    path.iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(":")
}

pub fn write_estimates<W: Write>(report: &RunReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATES_HEADER)?;
    for cell in &report.cells {
        for (i, (est, path)) in cell.estimates.iter().zip(&cell.seed_paths).enumerate() {
            w.write_record([
                report.problem.as_str(),
                report.scenario.as_str(),
                cell.method.name(),
                &cell.m.to_string(),
                &cell.samples_used.to_string(),
                &i.to_string(),
                &fmt_f64(*est),
                &fmt_seed_path(path),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(report: &RunReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for cell in &report.cells {
        let slope = report.slope(cell.method).map(fmt_f64).unwrap_or_default();
        w.write_record([
            report.problem.as_str(),
            report.scenario.as_str(),
            cell.method.name(),
            &cell.m.to_string(),
            &cell.samples_used.to_string(),
            &fmt_f64(cell.mse),
            &fmt_f64(cell.mse_stderr),
            &fmt_f64(report.reference.value),
            &fmt_f64(report.reference.stderr),
            &slope,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics<W: Write>(levels: &[WidthDiagnostic], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DIAGNOSE_HEADER)?;
    for diag in levels {
        for (k, &width) in diag.w_per_dim.iter().enumerate() {
            let ok = diag.lemma_satisfied() && diag.width_satisfied(k);
            w.write_record([
                diag.level.to_string(),
                (k + 1).to_string(),
                fmt_f64(width),
                fmt_f64(diag.lemma_lhs),
                fmt_f64(diag.lemma_rhs),
                ok.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            123456789.12345679,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn seed_paths_join() {
        assert_eq!(fmt_seed_path(&[1, 22, 333]), "1:22:333");
    }
}
