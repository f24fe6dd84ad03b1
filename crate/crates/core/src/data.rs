//! LibSVM ingestion and seeded synthetic problems.
//!
//! Accepted line grammar (one instance per line):
//!
//! ```text
//! <label> <idx>:<val> <idx>:<val> ... [# comment]
//! ```
//!
//! Labels must be `+1`/`1` or `-1` (any numeric spelling of ±1 is accepted,
//! `0` is rejected). Indices are 1-based and strictly increasing within a line;
//! they are stored 0-based. Blank lines and lines starting with `#` are skipped.
//! Rows are not normalized on ingest.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Dataset, Label, SparseExample};

/// Summary counts for a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub nnz: usize,
    pub max_row_norm_sq: f64,
    pub source: String,
}

pub fn dataset_stats(data: &Dataset, source: impl Into<String>) -> DatasetMeta {
    DatasetMeta {
        n: data.len(),
        d: data.dim(),
        nnz: data.nnz(),
        max_row_norm_sq: data.max_row_norm_sq(),
        source: source.into(),
    }
}

fn parse_label(tok: &str) -> std::result::Result<Label, String> {
    match tok {
        "+1" | "1" => return Ok(Label::Positive),
        "-1" => return Ok(Label::Negative),
        _ => {}
    }
    match tok.parse::<f64>() {
        Ok(1.0) => Ok(Label::Positive),
        Ok(-1.0) => Ok(Label::Negative),
        _ => Err(format!("label must be +1 or -1, got '{tok}'")),
    }
}

fn parse_line(body: &str, dim: Option<usize>) -> std::result::Result<(SparseExample, u32), String> {
    let mut tokens = body.split_whitespace();
    let label = parse_label(tokens.next().ok_or("missing label")?)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| format!("malformed feature token '{tok}'"))?;
        let idx: u32 = idx.parse().map_err(|_| format!("malformed feature index in '{tok}'"))?;
        if idx == 0 {
            return Err(format!("feature index must be >= 1 in '{tok}'"));
        }
        let val: f64 = val.parse().map_err(|_| format!("malformed feature value in '{tok}'"))?;
        if !val.is_finite() {
            return Err(format!("non-finite feature value in '{tok}'"));
        }
        if let Some(&prev) = indices.last() {
            if idx - 1 <= prev {
                return Err(format!(
                    "feature indices must be strictly increasing ({} after {})",
                    idx,
                    prev + 1
                ));
            }
        }
        if let Some(d) = dim {
            if idx as usize > d {
                return Err(format!("feature index {idx} exceeds dimension {d}"));
            }
        }
        indices.push(idx - 1);
        values.push(val);
    }
    let max = indices.last().map_or(0, |&m| m + 1);
    let ex = SparseExample::new(indices, values, label).map_err(|e| e.to_string())?;
    Ok((ex, max))
}

/// Parses a LibSVM text stream. `dim` pins the feature dimension; by default it
/// is the largest index observed (at least 1).
pub fn parse_libsvm<R: BufRead>(reader: R, dim: Option<usize>) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut max_seen = 0u32;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (ex, max) = parse_line(body, dim).map_err(|reason| Error::Parse {
            line: lineno + 1,
            reason,
        })?;
        max_seen = max_seen.max(max);
        examples.push(ex);
    }
    let d = dim.unwrap_or((max_seen as usize).max(1));
    Dataset::new(examples, d)
}

/// Reads a LibSVM file from disk, transparently decompressing gzip input.
pub fn load_libsvm(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Dataset> {
    let mut file = File::open(path.as_ref())?;
    let mut magic = [0u8; 2];
    let got = file.read(&mut magic)?;
    let file = File::open(path.as_ref())?;
    if got == 2 && magic == [0x1f, 0x8b] {
        parse_libsvm(BufReader::new(MultiGzDecoder::new(file)), dim)
    } else {
        parse_libsvm(BufReader::new(file), dim)
    }
}

/// Writes a dataset back in LibSVM format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn serialize_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    for ex in data.examples() {
        write_line(&mut out, ex);
    }
    out
}

fn write_line(out: &mut String, ex: &SparseExample) {
    use fmt::Write;
    out.push_str(match ex.label() {
        Label::Positive => "+1",
        Label::Negative => "-1",
    });
    for (j, v) in ex.iter() {
        let _ = write!(out, " {}:{}", j + 1, v);
    }
    out.push('\n');
}

/// Parameters of a synthetic problem; serialized as a one-line header so a
/// generated file records how to regenerate it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Scale applied to the planted margin before the logistic label noise;
    /// `f64::INFINITY` turns the noise off.
    pub separation: f64,
}

/// The desk-scale problem used throughout the tests and the CLI default.
pub const FIXTURE: SyntheticSpec = SyntheticSpec {
    n: 1000,
    d: 20,
    seed: 1,
    separation: 4.0,
};

impl SyntheticSpec {
    pub fn generate(&self) -> Result<Dataset> {
        generate_synthetic(self.n, self.d, self.seed, self.separation)
    }

    pub fn header(&self) -> String {
        format!(
            "# synthetic n={} d={} seed={} separation={}",
            self.n, self.d, self.seed, self.separation
        )
    }

    /// Finds and parses a header written by [`SyntheticSpec::header`].
    pub fn from_text(text: &str) -> Option<Self> {
        text.lines()
            .take_while(|l| l.starts_with('#'))
            .find_map(|l| l.strip_prefix("# synthetic ")?.parse().ok())
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} d={} seed={} separation={}",
            self.n, self.d, self.seed, self.separation
        )
    }
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SyntheticSpec {
            separation: FIXTURE.separation,
            ..FIXTURE
        };
        let bad = |what: &str| Error::Config(format!("bad synthetic descriptor field '{what}'"));
        for kv in s
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(kv))?;
            match k {
                "n" => spec.n = v.parse().map_err(|_| bad(kv))?,
                "d" => spec.d = v.parse().map_err(|_| bad(kv))?,
                "seed" => spec.seed = v.parse().map_err(|_| bad(kv))?,
                "separation" => spec.separation = v.parse().map_err(|_| bad(kv))?,
                _ => return Err(bad(kv)),
            }
        }
        Ok(spec)
    }
}

/// Draws a planted unit vector and `n` unit-norm Gaussian rows; labels are
/// `+1` with probability `σ(separation · planted·x)`.
pub fn generate_synthetic(n: usize, d: usize, seed: u64, separation: f64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Config("synthetic problem needs n, d >= 1".into()));
    }
    if separation.is_nan() || separation < 0.0 {
        return Err(Error::Config("separation must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted = unit_gaussian(&mut rng, d);
    let examples = (0..n)
        .map(|_| {
            let x = unit_gaussian(&mut rng, d);
            let z: f64 = x.iter().zip(&planted).map(|(a, b)| a * b).sum();
            let positive = if separation.is_infinite() {
                z >= 0.0
            } else {
                rng.random::<f64>() < crate::model::sigmoid(separation * z)
            };
            let label = if positive { Label::Positive } else { Label::Negative };
            SparseExample::new((0..d as u32).collect(), x, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples, d)
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Planted direction of a synthetic problem (re-drawn from the seed).
pub fn planted_vector(spec: &SyntheticSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    unit_gaussian(&mut rng, spec.d)
}
