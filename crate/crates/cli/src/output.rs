//! Result-file writers. All floats print as `{:.8e}` so result files are
//! byte-reproducible across runs; integer columns print plainly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use arraycal_core::ErrorSummary;

/// One per-CPP calibration error: the angle between the estimated and true
/// steering vectors after accumulating `symbols` symbols in group `group`.
pub struct CalibrationRow {
    pub k_factor_db: f64,
    pub symbols: usize,
    pub method: &'static str,
    pub group: usize,
    pub cpp: usize,
    pub theta_deg: f64,
    pub alpha_deg: f64,
}

/// One DOA Monte-Carlo trial under a given manifold source.
pub struct DoaRow {
    pub k_factor_db: f64,
    pub manifold: String,
    pub trial: usize,
    pub theta_true_deg: f64,
    pub theta_est_deg: f64,
    pub error_deg: f64,
}

/// Per-bin signed bias of the DOA error.
pub struct BiasRow {
    pub k_factor_db: f64,
    pub manifold: String,
    pub bin_lo_deg: f64,
    pub bin_hi_deg: f64,
    pub count: usize,
    pub mean_error_deg: f64,
}

fn create(path: &Path) -> arraycal_core::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| arraycal_core::Error::io(path.display().to_string(), e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> arraycal_core::Result<()> {
    w.flush()
        .map_err(|e| arraycal_core::Error::io(path.display().to_string(), e))
}

macro_rules! wline {
    ($w:expr, $path:expr, $($arg:tt)*) => {
        writeln!($w, $($arg)*)
            .map_err(|e| arraycal_core::Error::io($path.display().to_string(), e))?
    };
}

pub fn write_calibration_errors(path: &Path, rows: &[CalibrationRow]) -> arraycal_core::Result<()> {
    let mut w = create(path)?;
    wline!(w, path, "k_factor_db,symbols,method,group,cpp,theta_deg,alpha_deg");
    for r in rows {
        wline!(
            w,
            path,
            "{:.8e},{},{},{},{},{:.8e},{:.8e}",
            r.k_factor_db,
            r.symbols,
            r.method,
            r.group,
            r.cpp,
            r.theta_deg,
            r.alpha_deg
        );
    }
    finish(w, path)
}

pub fn write_calibration_summary(
    path: &Path,
    rows: &[(f64, usize, &'static str, ErrorSummary)],
) -> arraycal_core::Result<()> {
    let mut w = create(path)?;
    wline!(
        w,
        path,
        "k_factor_db,symbols,method,count,min_deg,q1_deg,median_deg,q3_deg,max_deg,p68_deg,p80_deg,p90_deg,mean_deg,std_deg"
    );
    for (k, q, method, s) in rows {
        wline!(
            w,
            path,
            "{:.8e},{},{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            k,
            q,
            method,
            s.count,
            s.q0,
            s.q1,
            s.q2,
            s.q3,
            s.q4,
            s.p68,
            s.p80,
            s.p90,
            s.mean,
            s.std
        );
    }
    finish(w, path)
}

pub fn write_doa_errors(path: &Path, rows: &[DoaRow]) -> arraycal_core::Result<()> {
    let mut w = create(path)?;
    wline!(w, path, "k_factor_db,manifold,trial,theta_true_deg,theta_est_deg,error_deg");
    for r in rows {
        wline!(
            w,
            path,
            "{:.8e},{},{},{:.8e},{:.8e},{:.8e}",
            r.k_factor_db,
            r.manifold,
            r.trial,
            r.theta_true_deg,
            r.theta_est_deg,
            r.error_deg
        );
    }
    finish(w, path)
}

pub fn write_doa_summary(
    path: &Path,
    rows: &[(f64, String, ErrorSummary)],
) -> arraycal_core::Result<()> {
    let mut w = create(path)?;
    wline!(
        w,
        path,
        "k_factor_db,manifold,count,min_deg,q1_deg,median_deg,q3_deg,max_deg,p68_deg,p80_deg,p90_deg,mean_deg,std_deg"
    );
    for (k, manifold, s) in rows {
        wline!(
            w,
            path,
            "{:.8e},{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            k,
            manifold,
            s.count,
            s.q0,
            s.q1,
            s.q2,
            s.q3,
            s.q4,
            s.p68,
            s.p80,
            s.p90,
            s.mean,
            s.std
        );
    }
    finish(w, path)
}

pub fn write_doa_bias(path: &Path, rows: &[BiasRow]) -> arraycal_core::Result<()> {
    let mut w = create(path)?;
    wline!(w, path, "k_factor_db,manifold,bin_lo_deg,bin_hi_deg,count,mean_error_deg");
    for r in rows {
        wline!(
            w,
            path,
            "{:.8e},{},{:.8e},{:.8e},{},{:.8e}",
            r.k_factor_db,
            r.manifold,
            r.bin_lo_deg,
            r.bin_hi_deg,
            r.count,
            r.mean_error_deg
        );
    }
    finish(w, path)
}

/// K-factors appear in filenames trimmed of a trailing `.0` (so `3.0 → k3`).
pub fn k_label(k_factor_db: f64) -> String {
    let s = format!("{k_factor_db}");
    s.strip_suffix(".0").unwrap_or(&s).replace('-', "m").replace('.', "p")
}

pub fn manifold_path(dir: &Path, method: &str, k_factor_db: f64) -> PathBuf {
    dir.join(format!("manifold_{method}_k{}.csv", k_label(k_factor_db)))
}

pub fn doa_cdf_path(dir: &Path, manifold: &str, k_factor_db: f64) -> PathBuf {
    dir.join(format!("doa_cdf_{manifold}_k{}.csv", k_label(k_factor_db)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_labels_are_filename_safe() {
        assert_eq!(k_label(3.0), "3");
        assert_eq!(k_label(0.0), "0");
        assert_eq!(k_label(7.0), "7");
        assert_eq!(k_label(-2.5), "m2p5");
    }

    #[test]
    fn calibration_rows_round_trip_header_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("errors.csv");
        let rows = vec![CalibrationRow {
            k_factor_db: 3.0,
            symbols: 4,
            method: "em",
            group: 0,
            cpp: 12,
            theta_deg: 0.0,
            alpha_deg: 0.25,
        }];
        write_calibration_errors(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k_factor_db,symbols,method,group,cpp,theta_deg,alpha_deg"
        );
        assert_eq!(
            lines.next().unwrap(),
            "3.00000000e0,4,em,0,12,0.00000000e0,2.50000000e-1"
        );
        assert!(lines.next().is_none());
    }
}
