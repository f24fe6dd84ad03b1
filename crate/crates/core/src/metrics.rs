//! Versioned per-epoch CSV output.
//!
//! ```text
//! # schema=asysvrg-metrics/1
//! # key=value header lines
//! epoch,effective_passes,objective,gap,wall_seconds,updates,max_delay
//! 0,0,0.6931471805599453,0.4,0,0,0
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const SCHEMA: &str = "asysvrg-metrics/1";
pub const COLUMNS: [&str; 7] = [
    "epoch",
    "effective_passes",
    "objective",
    "gap",
    "wall_seconds",
    "updates",
    "max_delay",
];

/// Gaps below this are a sign of a bad reference optimum.
pub const GAP_SLACK: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub effective_passes: f64,
    pub objective: f64,
    pub gap: f64,
    pub wall_seconds: f64,
    /// Cumulative.
    pub updates: u64,
    pub max_delay: u64,
}

impl MetricsRow {
    fn write(&self, out: &mut String) {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.effective_passes,
            self.objective,
            self.gap,
            self.wall_seconds,
            self.updates,
            self.max_delay
        )
        .unwrap();
    }

    fn parse(fields: &[&str], line: usize) -> Result<Self> {
        if fields.len() != COLUMNS.len() {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} fields, got {}", COLUMNS.len(), fields.len()),
            });
        }
        fn get<T: std::str::FromStr>(s: &str, name: &str, line: usize) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            s.trim().parse().map_err(|e| Error::Parse {
                line,
                reason: format!("bad {name} '{s}': {e}"),
            })
        }
        Ok(MetricsRow {
            epoch: get(fields[0], COLUMNS[0], line)?,
            effective_passes: get(fields[1], COLUMNS[1], line)?,
            objective: get(fields[2], COLUMNS[2], line)?,
            gap: get(fields[3], COLUMNS[3], line)?,
            wall_seconds: get(fields[4], COLUMNS[4], line)?,
            updates: get(fields[5], COLUMNS[5], line)?,
            max_delay: get(fields[6], COLUMNS[6], line)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    /// Ordered `key=value` pairs written as `#` lines.
    pub header: Vec<(String, String)>,
    pub rows: Vec<MetricsRow>,
}

impl RunMetrics {
    /// Rows for `w_0 … w_T`; the first row is the starting point.
    pub fn from_trajectory(traj: &Trajectory, f_star: f64) -> Self {
        let mut rows = vec![MetricsRow {
            epoch: 0,
            effective_passes: 0.0,
            objective: traj.initial_objective,
            gap: traj.initial_objective - f_star,
            wall_seconds: 0.0,
            updates: 0,
            max_delay: 0,
        }];
        let mut updates = 0;
        for e in &traj.epochs {
            updates += e.updates;
            rows.push(MetricsRow {
                epoch: e.epoch,
                effective_passes: e.effective_passes,
                objective: e.objective,
                gap: e.objective - f_star,
                wall_seconds: e.wall_seconds,
                updates,
                max_delay: e.max_delay,
            });
        }
        RunMetrics {
            header: Vec::new(),
            rows,
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.push_header(key, value);
        self
    }

    pub fn push_header(&mut self, key: impl Into<String>, value: impl ToString) {
        let value = value.to_string().replace(['\n', '\r'], " ");
        self.header.push((key.into(), value));
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Zeroes every wall-clock field, for byte-identical reruns.
    pub fn without_timing(mut self) -> Self {
        for r in &mut self.rows {
            r.wall_seconds = 0.0;
        }
        self
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.rows.last().map(|r| r.gap)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# schema={SCHEMA}\n");
        for (k, v) in &self.header {
            writeln!(out, "# {k}={v}").unwrap();
        }
        out.push_str(&COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            r.write(&mut out);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut metrics = RunMetrics::default();
        let mut saw_schema = false;
        let mut saw_columns = false;
        for (k, line) in text.lines().enumerate() {
            let line_no = k + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest.trim().split_once('=').ok_or_else(|| Error::Parse {
                    line: line_no,
                    reason: "header line without '='".into(),
                })?;
                if key == "schema" {
                    if value != SCHEMA {
                        return Err(Error::Parse {
                            line: line_no,
                            reason: format!("unsupported schema '{value}'"),
                        });
                    }
                    saw_schema = true;
                } else {
                    metrics.header.push((key.to_string(), value.to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if !saw_columns {
                if fields != COLUMNS {
                    return Err(Error::Parse {
                        line: line_no,
                        reason: format!("unexpected columns '{line}'"),
                    });
                }
                saw_columns = true;
                continue;
            }
            metrics.rows.push(MetricsRow::parse(&fields, line_no)?);
        }
        if !saw_schema || !saw_columns {
            return Err(Error::Parse {
                line: 1,
                reason: "missing schema or column line".into(),
            });
        }
        Ok(metrics)
    }

    /// Gap floor and monotone effective passes.
    pub fn check_invariants(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            if w[1].effective_passes < w[0].effective_passes {
                return Err(Error::Config(format!(
                    "effective passes decrease at epoch {}",
                    w[1].epoch
                )));
            }
        }
        if let Some(r) = self.rows.iter().find(|r| r.gap < -GAP_SLACK) {
            return Err(Error::Config(format!(
                "gap {} at epoch {} is below the reference optimum",
                r.gap, r.epoch
            )));
        }
        Ok(())
    }
}

/// Several labelled runs in one table with a leading `config` column.
pub fn compare_csv(header: &[(String, String)], runs: &[(String, RunMetrics)]) -> String {
    let mut out = format!("# schema={SCHEMA}\n");
    for (k, v) in header {
        writeln!(out, "# {k}={v}").unwrap();
    }
    writeln!(out, "config,{}", COLUMNS.join(",")).unwrap();
    for (label, m) in runs {
        for r in &m.rows {
            out.push_str(label);
            out.push(',');
            r.write(&mut out);
        }
    }
    out
}

/// One line of a speedup sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupRow {
    pub workers: usize,
    /// Median over converged seeds; `None` if any seed failed.
    pub median_seconds: Option<f64>,
    pub speedup: Option<f64>,
    pub converged: usize,
    pub seeds: usize,
}

pub fn speedup_csv(header: &[(String, String)], rows: &[SpeedupRow]) -> String {
    let mut out = format!("# schema={SCHEMA}\n");
    for (k, v) in header {
        writeln!(out, "# {k}={v}").unwrap();
    }
    out.push_str("workers,median_seconds,speedup,converged,seeds,flag\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let flag = if r.converged == r.seeds { "ok" } else { "not_converged" };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.workers,
            opt(r.median_seconds),
            opt(r.speedup),
            r.converged,
            r.seeds,
            flag
        )
        .unwrap();
    }
    out
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[k]
    } else {
        0.5 * (values[k - 1] + values[k])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunMetrics {
        RunMetrics {
            header: vec![("algorithm".into(), "asysvrg".into()), ("n".into(), "1000".into())],
            rows: vec![
                MetricsRow {
                    epoch: 0,
                    effective_passes: 0.0,
                    objective: std::f64::consts::LN_2,
                    gap: 0.4,
                    wall_seconds: 0.0,
                    updates: 0,
                    max_delay: 0,
                },
                MetricsRow {
                    epoch: 1,
                    effective_passes: 3.0,
                    objective: 0.31,
                    gap: 1e-3,
                    wall_seconds: 0.0125,
                    updates: 2000,
                    max_delay: 4,
                },
            ],
        }
    }

    #[test]
    fn round_trips() {
        let m = sample();
        let text = m.to_csv();
        assert!(text.starts_with("# schema=asysvrg-metrics/1\n"));
        assert!(text.contains("\nepoch,effective_passes,objective,gap,wall_seconds,updates,max_delay\n"));
        assert_eq!(RunMetrics::from_csv(&text).unwrap(), m);
        assert_eq!(m.header_value("n"), Some("1000"));
    }

    #[test]
    fn rejects_foreign_schema_and_short_rows() {
        let text = sample().to_csv().replace("metrics/1", "metrics/9");
        assert!(RunMetrics::from_csv(&text).is_err());
        let text = sample().to_csv() + "2,3\n";
        assert!(matches!(RunMetrics::from_csv(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn invariants() {
        let mut m = sample();
        assert!(m.check_invariants().is_ok());
        m.rows[1].gap = -1e-9;
        assert!(m.check_invariants().is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
