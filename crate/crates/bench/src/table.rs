use std::fmt::Write as _;

use crate::BenchError;

pub const CSV_HEADER: &str = "p,wall_seconds,epochs,accuracy,bytes,speedup";

/// One timed sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub p: usize,
    pub wall_seconds: f64,
    pub epochs: usize,
    /// Final test accuracy; absent when no test split exists.
    pub accuracy: Option<f64>,
    /// Payload bytes sent by all ranks inside sync allreduces.
    pub bytes: u64,
    /// `wall_seconds` at the baseline divided by this row's.
    pub speedup: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TableFormat {
    #[default]
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            _ => Err(BenchError::Config(format!("unknown table format {s:?}"))),
        }
    }
}

/// Renders records. CSV floats use the shortest text that parses back to
/// the same value, so [`parse_csv`] inverts it exactly.
pub fn emit_table(records: &[BenchRecord], format: TableFormat) -> String {
    let acc = |a: Option<f64>| a.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in records {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.p,
                    r.wall_seconds,
                    r.epochs,
                    acc(r.accuracy),
                    r.bytes,
                    r.speedup
                );
            }
        }
        TableFormat::Markdown => {
            out.push_str("| p | wall_seconds | epochs | accuracy | bytes | speedup |\n");
            out.push_str("|---:|---:|---:|---:|---:|---:|\n");
            for r in records {
                let _ = writeln!(
                    out,
                    "| {} | {:.3} | {} | {} | {} | {:.2}x |",
                    r.p,
                    r.wall_seconds,
                    r.epochs,
                    r.accuracy
                        .map(|a| format!("{a:.4}"))
                        .unwrap_or_else(|| "-".into()),
                    r.bytes,
                    r.speedup
                );
            }
        }
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>, BenchError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(BenchError::Parse {
                line: 1,
                message: format!("expected header {CSV_HEADER:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| BenchError::Parse {
            line: i + 1,
            message: m,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(err(format!("{} fields, expected 6", f.len())));
        }
        fn num<N: std::str::FromStr>(s: &str, name: &str) -> Result<N, String> {
            s.trim().parse().map_err(|_| format!("bad {name} {s:?}"))
        }
        let accuracy = if f[3].trim().is_empty() {
            None
        } else {
            Some(num(f[3], "accuracy").map_err(err)?)
        };
        out.push(BenchRecord {
            p: num(f[0], "p").map_err(err)?,
            wall_seconds: num(f[1], "wall_seconds").map_err(err)?,
            epochs: num(f[2], "epochs").map_err(err)?,
            accuracy,
            bytes: num(f[4], "bytes").map_err(err)?,
            speedup: num(f[5], "speedup").map_err(err)?,
        });
    }
    Ok(out)
}
