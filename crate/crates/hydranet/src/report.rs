//! Evaluation report files and the cross-run comparison table.
//!
//! An evaluation directory holds `report.csv` (`month_id,task,metric,model,baseline`,
//! `NA` for undefined metrics), `means.csv` and `meta.json`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use hydranet_core::metrics::{EvalReport, EvalRow, MeanRow, Metric, Task};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.csv";
pub const MEANS_FILE: &str = "means.csv";
pub const META_FILE: &str = "meta.json";
pub const REPORT_HEADER: [&str; 5] = ["month_id", "task", "metric", "model", "baseline"];
pub const MEANS_HEADER: [&str; 6] = ["task", "metric", "model", "baseline", "months_used", "months_excluded"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub mask_name: String,
    pub masked_cells: usize,
    pub total_cells: usize,
    pub first_forecast_month_id: u32,
    pub months: usize,
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    File::create(path).and_then(|mut f| f.write_all(text.as_bytes())).map_err(|e| Error::io(path, e))
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = REPORT_HEADER.join(",") + "\n";
    for r in &report.rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.month_id, r.task, r.metric, fmt_value(r.model), fmt_value(r.baseline));
    }
    out
}

pub fn means_csv(means: &[MeanRow]) -> String {
    let mut out = MEANS_HEADER.join(",") + "\n";
    for m in means {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.task,
            m.metric,
            fmt_value(m.model),
            fmt_value(m.baseline),
            m.months_used,
            m.months_excluded
        );
    }
    out
}

pub fn write_report(dir: &Path, report: &EvalReport, meta: &ReportMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join(REPORT_FILE), &report_csv(report))?;
    write_text(&dir.join(MEANS_FILE), &means_csv(&report.means()))?;
    let meta_json = serde_json::to_string_pretty(meta).expect("meta serializes");
    write_text(&dir.join(META_FILE), &meta_json)
}

fn parse_value(field: &str) -> std::result::Result<Option<f64>, String> {
    if field == "NA" {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
        _ => Err(format!("expected a non-negative number or NA, got {field:?}")),
    }
}

/// Reads `report.csv`, checking the header, every field and that the
/// month × task × metric grid is complete with no duplicates.
pub fn read_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, message: String| Error::Parse { path: path.clone(), line: line as u64, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split(',').eq(REPORT_HEADER) => {}
        other => return Err(bad(1, format!("expected header {}, got {:?}", REPORT_HEADER.join(","), other.map(|l| l.1)))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n, format!("expected 5 fields, got {}", f.len())));
        }
        let month_id = f[0].parse().map_err(|_| bad(n, format!("bad month_id {:?}", f[0])))?;
        let task = Task::parse(f[1]).ok_or_else(|| bad(n, format!("unknown task {:?}", f[1])))?;
        let metric = Metric::parse(f[2]).ok_or_else(|| bad(n, format!("unknown metric {:?}", f[2])))?;
        let model = parse_value(f[3]).map_err(|m| bad(n, m))?;
        let baseline = parse_value(f[4]).map_err(|m| bad(n, m))?;
        rows.push(EvalRow { month_id, task, metric, model, baseline });
    }
    let report = EvalReport { rows, masked_cells: 0 };
    let months = report.month_ids();
    if months.is_empty() {
        return Err(bad(1, "report has no rows".into()));
    }
    if report.rows.len() != months.len() * Task::ALL.len() * Metric::ALL.len() {
        return Err(bad(0, format!("{} rows do not form a complete month x task x metric grid", report.rows.len())));
    }
    for &m in &months {
        for t in Task::ALL {
            for k in Metric::ALL {
                if report.rows.iter().filter(|r| r.month_id == m && r.task == t && r.metric == k).count() != 1 {
                    return Err(bad(0, format!("month {m} {t} {k} must appear exactly once")));
                }
            }
        }
    }
    let meta = read_meta(dir)?;
    Ok(EvalReport { masked_cells: meta.masked_cells, ..report })
}

pub fn read_meta(dir: &Path) -> Result<ReportMeta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path, line: e.line() as u64, message: e.to_string() })
}

/// Over-month means per run, side by side, with the first run's baseline as the last column.
pub fn comparison_table(dirs: &[PathBuf]) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::Config(vec!["at least one evaluation directory is required".into()]));
    }
    let runs: Vec<Vec<MeanRow>> = dirs.iter().map(|d| read_report(d).map(|r| r.means())).collect::<Result<_>>()?;
    let mut out = String::from("task,metric");
    for d in dirs {
        let label = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
        let _ = write!(out, ",{label}");
    }
    out.push_str(",baseline\n");
    for (i, m) in runs[0].iter().enumerate() {
        let _ = write!(out, "{},{}", m.task, m.metric);
        for run in &runs {
            let _ = write!(out, ",{}", fmt_value(run[i].model));
        }
        let _ = writeln!(out, ",{}", fmt_value(m.baseline));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(months: &[u32], value: f64) -> EvalReport {
        let mut rows = Vec::new();
        for &month_id in months {
            for task in Task::ALL {
                for metric in Metric::ALL {
                    let model = (metric != Metric::Ap || month_id != months[0]).then_some(value);
                    rows.push(EvalRow { month_id, task, metric, model, baseline: model.map(|_| 0.5) });
                }
            }
        }
        EvalReport { rows, masked_cells: 7 }
    }

    fn meta() -> ReportMeta {
        ReportMeta { mask_name: "all".into(), masked_cells: 7, total_cells: 9, first_forecast_month_id: 3, months: 2 }
    }

    #[test]
    fn round_trip_and_means() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(&[3, 4], 0.25);
        write_report(dir.path(), &r, &meta()).unwrap();
        assert_eq!(read_report(dir.path()).unwrap(), r);
        let means = std::fs::read_to_string(dir.path().join(MEANS_FILE)).unwrap();
        assert!(means.contains("sb,ap,0.25,0.5,1,1"), "{means}");
        assert!(means.contains("os,brier,0.25,0.5,2,0"), "{means}");
    }

    #[test]
    fn schema_violations_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &report(&[3, 4], 0.25), &meta()).unwrap();
        let path = dir.path().join(REPORT_FILE);
        let good = std::fs::read_to_string(&path).unwrap();
        for broken in [
            good.replacen("month_id", "month", 1),
            good.replacen(",sb,", ",xx,", 1),
            good.replacen("0.25", "-1", 1),
            good.lines().take(10).collect::<Vec<_>>().join("\n"),
        ] {
            std::fs::write(&path, broken).unwrap();
            assert!(read_report(dir.path()).is_err());
        }
    }

    #[test]
    fn comparison_has_one_column_per_run() {
        let root = tempfile::tempdir().unwrap();
        let (a, b) = (root.path().join("a"), root.path().join("b"));
        write_report(&a, &report(&[3], 0.25), &meta()).unwrap();
        write_report(&b, &report(&[3], 0.75), &meta()).unwrap();
        let table = comparison_table(&[a.clone(), b]).unwrap();
        assert!(table.starts_with("task,metric,a,b,baseline\n"));
        assert!(table.contains("ns,mse,0.25,0.75,0.5"), "{table}");
        assert!(table.contains("sb,ap,NA,NA,NA"), "{table}");
        assert_eq!(table.lines().count(), 13);
        assert!(comparison_table(&[a, root.path().join("missing")]).is_err());
    }
}
