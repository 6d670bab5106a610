use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rqe_core::stats;

use crate::output::format_float;

/// Per-file result of `summarize`.
#[derive(Debug, Clone, PartialEq)]
pub struct FileSummary {
    pub path: PathBuf,
    pub column: String,
    pub rows: usize,
    pub last: f64,
    pub final_window_mean: f64,
    pub window_clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub window: usize,
    pub files: Vec<FileSummary>,
    pub median_last: f64,
    pub iqr_last: f64,
    pub median_window_mean: f64,
    pub iqr_window_mean: f64,
}

/// Reads one numeric column; the last column when `column` is `None`.
/// Empty fields are skipped.
pub fn read_column(path: &Path, column: Option<&str>) -> Result<(String, Vec<f64>), String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = rdr.headers().map_err(|e| format!("{}:1: {e}", path.display()))?.clone();
    let idx = match column {
        Some(c) => header.iter().position(|h| h == c).ok_or_else(|| {
            format!("{}:1: no column `{c}` (have {})", path.display(), header.iter().collect::<Vec<_>>().join(", "))
        })?,
        None => header.len().checked_sub(1).ok_or_else(|| format!("{}:1: empty header", path.display()))?,
    };
    let name = header[idx].to_string();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            format!("{}:{line}: {e}", path.display())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = rec.get(idx).ok_or_else(|| format!("{}:{line}: missing column `{name}`", path.display()))?;
        if field.trim().is_empty() {
            continue;
        }
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| format!("{}:{line}: `{field}` in column `{name}` is not a number", path.display()))?;
        values.push(v);
    }
    Ok((name, values))
}

pub fn summarize(files: &[PathBuf], column: Option<&str>, window: usize) -> Result<Summary, String> {
    if files.is_empty() {
        return Err("no trajectory files given".into());
    }
    let mut out = Vec::new();
    for path in files {
        let (name, values) = read_column(path, column)?;
        let (fwm, clipped) = stats::final_window_mean(&values, window)
            .ok_or_else(|| format!("{}: column `{name}` has no values", path.display()))?;
        out.push(FileSummary {
            path: path.clone(),
            column: name,
            rows: values.len(),
            last: *values.last().expect("non-empty"),
            final_window_mean: fwm,
            window_clipped: clipped,
        });
    }
    let lasts: Vec<f64> = out.iter().map(|f| f.last).collect();
    let means: Vec<f64> = out.iter().map(|f| f.final_window_mean).collect();
    Ok(Summary {
        window,
        median_last: stats::median(&lasts).expect("non-empty"),
        iqr_last: stats::iqr(&lasts).expect("non-empty"),
        median_window_mean: stats::median(&means).expect("non-empty"),
        iqr_window_mean: stats::iqr(&means).expect("non-empty"),
        files: out,
    })
}

impl Summary {
    /// One row per file, then `median` and `iqr` rows across files.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("file,column,rows,window,window_clipped,final,final_window_mean\n");
        let quote = |p: &Path| {
            let t = p.display().to_string();
            if t.contains([',', '"', '\n']) {
                format!("\"{}\"", t.replace('"', "\"\""))
            } else {
                t
            }
        };
        for f in &self.files {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                quote(&f.path),
                f.column,
                f.rows,
                self.window,
                f.window_clipped,
                format_float(f.last),
                format_float(f.final_window_mean)
            );
        }
        let _ = writeln!(
            s,
            "median,,,{},,{},{}",
            self.window,
            format_float(self.median_last),
            format_float(self.median_window_mean)
        );
        let _ = writeln!(
            s,
            "iqr,,,{},,{},{}",
            self.window,
            format_float(self.iqr_last),
            format_float(self.iqr_window_mean)
        );
        s
    }

    /// gnuplot script drawing each file's column against its first column.
    pub fn gnuplot(&self, image: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set terminal pngcairo size 1000,600");
        let _ = writeln!(s, "set output '{}'", image.replace('\'', "''"));
        let _ = writeln!(s, "set key outside right");
        let _ = writeln!(s, "set grid");
        let plots: Vec<String> = self
            .files
            .iter()
            .map(|f| {
                let path = f.path.display().to_string().replace('\'', "''");
                let stem = f.path.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
                format!("'{path}' using 1:'{}' with lines title '{}'", f.column, stem.replace('_', "\\_"))
            })
            .collect();
        let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
        s
    }
}
