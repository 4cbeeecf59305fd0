//! CSV and JSON output.
//!
//! Every CSV is UTF-8 with LF line endings and `.` as decimal separator.
//! Reals are written with 17 significant digits so they read back exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Distribution;
use crate::metrics::{LorenzCurve, MetricsRecord};

pub const SNAPSHOT_HEADER: &str = "w,density";
pub const METRICS_HEADER: &str = "t,S,S_W_integral,C,G,zeta,N0,norm,mean";
pub const LORENZ_HEADER: &str = "x,L";
pub const ENSEMBLE_HEADER: &str = "agent_id,wealth";

/// Full-precision rendering of a real.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_lines<F>(path: &Path, header: &str, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let res = writeln!(out, "{header}")
        .and_then(|_| body(&mut out))
        .and_then(|_| out.flush());
    res.map_err(|e| Error::io(path, e))
}

/// One row per bin center. Bin 0 carries the condensate.
pub fn write_snapshot(path: &Path, dist: &Distribution) -> Result<()> {
    write_lines(path, SNAPSHOT_HEADER, |out| {
        for (i, w) in dist.grid().centers().enumerate() {
            writeln!(out, "{},{}", fmt_real(w), fmt_real(dist.bin_density(i)))?;
        }
        Ok(())
    })
}

pub fn metrics_row(r: &MetricsRecord) -> String {
    let zeta = r.zeta.map(fmt_real).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.t,
        fmt_real(r.entropy),
        fmt_real(r.theil_integral),
        fmt_real(r.liquidity),
        fmt_real(r.gini),
        zeta,
        fmt_real(r.misery),
        fmt_real(r.norm),
        fmt_real(r.mean)
    )
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_lines(path, METRICS_HEADER, |out| {
        for r in records {
            writeln!(out, "{}", metrics_row(r))?;
        }
        Ok(())
    })
}

pub fn write_lorenz(path: &Path, curve: &LorenzCurve) -> Result<()> {
    write_lines(path, LORENZ_HEADER, |out| {
        for &(x, l) in &curve.points {
            writeln!(out, "{},{}", fmt_real(x), fmt_real(l))?;
        }
        Ok(())
    })
}

pub fn write_ensemble(path: &Path, wealths: &[f64]) -> Result<()> {
    write_lines(path, ENSEMBLE_HEADER, |out| {
        for (i, w) in wealths.iter().enumerate() {
            writeln!(out, "{i},{}", fmt_real(*w))?;
        }
        Ok(())
    })
}

/// Parse a metrics CSV written by [`write_metrics`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Domain(format!("{}: unexpected header", path.display())));
    }
    let bad = |n: usize| Error::Domain(format!("{}: malformed row {n}", path.display()));
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(n + 1));
            }
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad(n + 1));
            Ok(MetricsRecord {
                t: f[0].parse().map_err(|_| bad(n + 1))?,
                entropy: real(f[1])?,
                theil_integral: real(f[2])?,
                liquidity: real(f[3])?,
                gini: real(f[4])?,
                zeta: if f[5].is_empty() { None } else { Some(real(f[5])?) },
                misery: real(f[6])?,
                norm: real(f[7])?,
                mean: real(f[8])?,
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Domain(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::WealthGrid;

    #[test]
    fn real_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, 0.0] {
            assert_eq!(fmt_real(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_real(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let recs = vec![
            MetricsRecord {
                t: 100,
                entropy: 0.7,
                theil_integral: -0.2,
                liquidity: 0.2,
                gini: 1.0 / 3.0,
                zeta: Some(1.5),
                misery: 0.005,
                norm: 1.0,
                mean: 1.0,
            },
            MetricsRecord {
                t: 200,
                zeta: None,
                ..MetricsRecord::default()
            },
        ];
        write_metrics(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,S,S_W_integral,C,G,zeta,N0,norm,mean\n"));
        assert!(!text.contains('\r'));
        assert!(text.lines().nth(2).unwrap().split(',').nth(5).unwrap().is_empty());
        assert_eq!(read_metrics(&path).unwrap(), recs);
    }

    #[test]
    fn snapshot_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let dist = Distribution::uniform(WealthGrid::new(0.01, 400).unwrap()).unwrap();
        write_snapshot(&path, &dist).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SNAPSHOT_HEADER);
        assert_eq!(lines.len(), 401);
        let row: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(row, vec![0.005, 0.5]);
    }
}
