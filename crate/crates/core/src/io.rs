//! CSV ingestion, JSON reports, config files and the quasar workflow.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowIssue};
use crate::families::{Family, Theta};
use crate::goftest::{run_test, BootstrapConfig, Multiplier, TestOptions, TestResult};
use crate::kernelgram::{CrossMoment, GridRule};
use crate::schemes::{ObservedSample, Row, Scheme};

/// Environment variable pointing at the quasar CSV.
pub const QUASAR_ENV: &str = "ORTHOFIT_QUASAR_DATA";
pub const QUASAR_DEFAULT_PATH: &str = "data/quasars.csv";
pub const QUASAR_RECIPE: &str = "export the Quasars object of the R package DTDA to CSV with \
columns x,u,v (adjusted log luminosity, lower and upper truncation limits), e.g. \
Rscript -e 'library(DTDA); data(Quasars); q <- as.data.frame(Quasars); \
write.csv(data.frame(x = q[[1]], u = q[[2]], v = q[[3]]), \"data/quasars.csv\", row.names = FALSE)'; \
see docs/quasar.md";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingData {
                path: path.display().to_string(),
                hint: "file not found".into(),
            }
        } else {
            Error::Io(e)
        }
    })
}

fn parse_bit(field: &str) -> std::result::Result<bool, String> {
    match field.trim() {
        "0" | "0.0" => Ok(false),
        "1" | "1.0" => Ok(true),
        other => Err(format!("delta must be 0 or 1, got '{other}'")),
    }
}

/// Read a sample from any reader with the scheme's header layout.
pub fn read_sample<R: Read>(reader: R, scheme: Scheme) -> Result<ObservedSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = Vec::new();
    let mut issues = Vec::new();
    for col in scheme.columns() {
        match headers.iter().position(|h| h == *col) {
            Some(i) => idx.push(i),
            None => issues.push(RowIssue {
                row: 0,
                message: format!(
                    "missing column '{col}'; {} files need headers {}",
                    scheme,
                    scheme.columns().join(",")
                ),
            }),
        }
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let num = |k: usize| -> std::result::Result<f64, String> {
            let f = field(k);
            f.parse::<f64>()
                .map_err(|_| format!("column '{}': '{f}' is not a number", scheme.columns()[k]))
        };
        let parsed = match scheme {
            Scheme::Complete | Scheme::CompleteHazard => num(0).map(|x| Row::Exact { x }),
            Scheme::Ltrc => (|| {
                Ok(Row::Ltrc {
                    y: num(0)?,
                    u: num(1)?,
                    delta: parse_bit(field(2))?,
                })
            })(),
            Scheme::DoubleTrunc => (|| {
                Ok(Row::DoubleTrunc {
                    x: num(0)?,
                    u: num(1)?,
                    v: num(2)?,
                })
            })(),
            Scheme::CurrentStatus => (|| {
                Ok(Row::CurrentStatus {
                    delta: parse_bit(field(0))?,
                    c: num(1)?,
                })
            })(),
        };
        match parsed {
            Ok(r) => rows.push((line, r)),
            Err(message) => issues.push(RowIssue { row: line, message }),
        }
    }

    let lines: Vec<usize> = rows.iter().map(|(l, _)| *l).collect();
    let rows: Vec<Row> = rows.into_iter().map(|(_, r)| r).collect();
    match ObservedSample::new(scheme, rows) {
        Ok(s) if issues.is_empty() => Ok(s),
        Ok(_) => Err(Error::Validation(issues)),
        Err(Error::Validation(more)) => {
            // map positions among parsed rows back to file rows
            issues.extend(more.into_iter().map(|mut m| {
                if m.row > 0 {
                    m.row = lines[m.row - 1];
                }
                m
            }));
            issues.sort_by_key(|i| i.row);
            Err(Error::Validation(issues))
        }
        Err(e) => Err(e),
    }
}

pub fn ingest_csv(path: &Path, scheme: Scheme) -> Result<ObservedSample> {
    read_sample(open(path)?, scheme)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootQuantiles {
    #[serde(rename = "0.90")]
    pub q90: f64,
    #[serde(rename = "0.95")]
    pub q95: f64,
    #[serde(rename = "0.99")]
    pub q99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub loglik: f64,
}

/// JSON report for one test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scheme: Scheme,
    pub family: Family,
    pub n: usize,
    pub theta_hat: Theta,
    #[serde(rename = "stat_nQ")]
    pub stat_nq: f64,
    pub p_value: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub multiplier: Multiplier,
    pub boot_quantiles: BootQuantiles,
    pub alpha: f64,
    pub reject: bool,
    pub grid_rule: GridRule,
    pub grid_refine: bool,
    pub grid_nodes: usize,
    pub simple_null: bool,
    pub cross_moment: CrossMoment,
    pub cs_weight: bool,
    pub comparison_stat: f64,
    pub fit: Option<FitSummary>,
}

impl Report {
    pub fn new(result: &TestResult, alpha: f64, opts: &TestOptions) -> Self {
        Report {
            scheme: result.scheme,
            family: result.family,
            n: result.n,
            theta_hat: result.theta_hat.clone(),
            stat_nq: result.stat_nq,
            p_value: result.p_value,
            b: result.bootstrap.b,
            seed: result.bootstrap.seed,
            grid_size: result.grid.m,
            multiplier: result.bootstrap.multiplier,
            boot_quantiles: BootQuantiles {
                q90: result.boot_quantile(0.90),
                q95: result.boot_quantile(0.95),
                q99: result.boot_quantile(0.99),
            },
            alpha,
            reject: result.reject(alpha),
            grid_rule: result.grid.rule,
            grid_refine: result.grid.refine,
            grid_nodes: result.grid_nodes,
            simple_null: result.fit.is_none(),
            cross_moment: opts.cross_moment,
            cs_weight: opts.cs_weight,
            comparison_stat: result.comparison_stat,
            fit: result.fit.as_ref().map(|f| FitSummary {
                converged: f.converged,
                iterations: f.iterations,
                grad_norm: f.grad_norm,
                loglik: f.loglik,
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// One bootstrap draw per line under a `stat_nQ_star` header.
pub fn write_boot_draws(path: &Path, draws: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stat_nQ_star"])?;
    for d in draws {
        w.write_record([d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse `key = value` lines into flag arguments (`--key value`).
/// Blank lines and `#` comments are ignored; `true`/`false` values become
/// bare flags or are dropped.
pub fn config_args(text: &str) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "config line {}: expected key=value, got '{line}'",
                i + 1
            )));
        };
        let (k, v) = (k.trim().trim_start_matches("--"), v.trim());
        match v {
            "true" => args.push(format!("--{k}")),
            "false" => {}
            _ => {
                args.push(format!("--{k}"));
                args.push(v.to_string());
            }
        }
    }
    Ok(args)
}

pub fn read_config(path: &Path) -> Result<Vec<String>> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s)?;
    config_args(&s)
}

/// Quasar luminosity triples, shifted so the smallest observed `x` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasarDataset {
    pub sample: ObservedSample,
    pub shift: f64,
}

impl QuasarDataset {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = match ingest_csv(path, Scheme::DoubleTrunc) {
            Err(Error::MissingData { path, .. }) => {
                return Err(Error::MissingData {
                    path,
                    hint: QUASAR_RECIPE.into(),
                })
            }
            other => other?,
        };
        Self::from_raw(&raw)
    }

    pub fn from_raw(raw: &ObservedSample) -> Result<Self> {
        let shift = raw
            .rows()
            .iter()
            .map(Row::outcome)
            .fold(f64::INFINITY, f64::min);
        let rows = raw
            .rows()
            .iter()
            .map(|r| match *r {
                Row::DoubleTrunc { x, u, v } => Ok(Row::DoubleTrunc {
                    x: x - shift,
                    u: u - shift,
                    v: v - shift,
                }),
                _ => Err(Error::Config("quasar data must be (x, u, v) triples".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuasarDataset {
            sample: ObservedSample::new(Scheme::DoubleTrunc, rows)?,
            shift,
        })
    }

    /// Path from `ORTHOFIT_QUASAR_DATA`, else the default location.
    pub fn default_path() -> PathBuf {
        std::env::var_os(QUASAR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(QUASAR_DEFAULT_PATH))
    }
}

/// Exponential double-truncation test on the shifted quasar data.
pub fn quasar_test(data: &QuasarDataset, boot: &BootstrapConfig, opts: &TestOptions) -> Result<TestResult> {
    run_test(&data.sample, Family::Exponential, boot, opts)
}

/// Outputs written by [`quasar_workflow`].
#[derive(Debug, Clone, Default)]
pub struct QuasarOutputs {
    pub report: Option<PathBuf>,
    pub boot_draws: Option<PathBuf>,
    /// Columns `x, ecdf, fitted_cdf` at each observed (shifted) x.
    pub cdf: Option<PathBuf>,
}

pub fn quasar_workflow(
    path: &Path,
    boot: &BootstrapConfig,
    opts: &TestOptions,
    alpha: f64,
    out: &QuasarOutputs,
) -> Result<(TestResult, Report)> {
    let data = QuasarDataset::load(path)?;
    let result = quasar_test(&data, boot, opts)?;
    let report = Report::new(&result, alpha, opts);
    if let Some(p) = &out.report {
        report.write(p)?;
    }
    if let Some(p) = &out.boot_draws {
        write_boot_draws(p, &result.boot_draws)?;
    }
    if let Some(p) = &out.cdf {
        let model = Family::Exponential.at(&result.theta_hat)?;
        let mut xs: Vec<f64> = data.sample.rows().iter().map(Row::outcome).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["x", "ecdf", "fitted_cdf"])?;
        for (i, x) in xs.iter().enumerate() {
            w.write_record([
                x.to_string(),
                ((i + 1) as f64 / n).to_string(),
                model.cdf(*x).to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok((result, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_complete_file() {
        let s = read_sample("x\n1.5\n2\n0.25\n".as_bytes(), Scheme::Complete).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn dt_violation_names_row() {
        let csv = "x,u,v\n1,0,2\n0.5,0.9,3\n";
        match read_sample(csv.as_bytes(), Scheme::DoubleTrunc) {
            Err(Error::Validation(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].row, 2);
                assert!(issues[0].message.contains("exceeds"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ltrc_bad_delta_rejected() {
        let csv = "y,u,delta\n1,0,1\n2,0.5,2\n3,1,0\n";
        match read_sample(csv.as_bytes(), Scheme::Ltrc) {
            Err(e @ Error::Validation(_)) => {
                assert!(e.to_string().contains("row 2"));
                assert_eq!(e.exit_code(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn row_numbers_survive_parse_failures() {
        // row 1 fails parsing, row 3 fails validation
        let csv = "x,u,v\nabc,0,1\n1,0,2\n3,0,2\n";
        match read_sample(csv.as_bytes(), Scheme::DoubleTrunc) {
            Err(Error::Validation(issues)) => {
                let rows: Vec<usize> = issues.iter().map(|i| i.row).collect();
                assert_eq!(rows, vec![1, 3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_columns_required() {
        let err = read_sample("a,b\n1,2\n3,4\n".as_bytes(), Scheme::CurrentStatus).unwrap_err();
        assert!(err.to_string().contains("missing column 'delta'"));
    }

    #[test]
    fn missing_file_maps_to_exit_4() {
        let err = ingest_csv(Path::new("/nonexistent/file.csv"), Scheme::Complete).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let err = QuasarDataset::load(Path::new("/nonexistent/q.csv")).unwrap_err();
        assert!(err.to_string().contains("DTDA"));
    }

    #[test]
    fn config_lines_become_flags() {
        let args = config_args("# comment\nscheme = dt\nB=99\nrefine=false\nemit=true\n").unwrap();
        assert_eq!(args, vec!["--scheme", "dt", "--B", "99", "--emit"]);
        assert!(config_args("nonsense").is_err());
    }

    #[test]
    fn quasar_shift_puts_min_at_zero() {
        let raw = ObservedSample::new(
            Scheme::DoubleTrunc,
            vec![
                Row::DoubleTrunc { x: -1.0, u: -2.0, v: 0.5 },
                Row::DoubleTrunc { x: 0.5, u: -0.5, v: 2.0 },
            ],
        )
        .unwrap();
        let q = QuasarDataset::from_raw(&raw).unwrap();
        assert_eq!(q.shift, -1.0);
        let xs: Vec<f64> = q.sample.rows().iter().map(Row::outcome).collect();
        assert_eq!(xs, vec![0.0, 1.5]);
    }
}
