//! Text persistence: the MVSTACK data format and JSON model files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! what was written recovers every value bit for bit.

use crate::bfa::ComponentParams;
use crate::error::{Error, Result};
use crate::family::{Family, Theta};
use crate::model::MixtureModel;
use crate::sample::MatrixSample;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const MVSTACK_MAGIC: &str = "MVSTACK";
pub const MVSTACK_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A sample of matrices with optional labels (0 = unlabelled, otherwise `1..=G`).
#[derive(Debug, Clone, PartialEq)]
pub struct MvStack {
    pub sample: MatrixSample,
    pub labels: Option<Vec<usize>>,
}

impl MvStack {
    /// Layout:
    ///
    /// ```text
    /// MVSTACK 1
    /// N n p L
    /// <N blocks of n lines × p values, blank line between blocks>
    /// <N integer labels when L = 1>
    /// ```
    pub fn to_text(&self) -> String {
        let (n, p) = self.sample.dims();
        let flag = self.labels.is_some() as u8;
        let mut out = format!("{MVSTACK_MAGIC} {MVSTACK_VERSION}\n{} {n} {p} {flag}\n", self.sample.len());
        for x in self.sample.obs() {
            out.push('\n');
            for i in 0..n {
                let row: Vec<String> = (0..p).map(|j| format!("{:?}", x[(i, j)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        if let Some(labels) = &self.labels {
            out.push('\n');
            for chunk in labels.chunks(20) {
                let line: Vec<String> = chunk.iter().map(|l| l.to_string()).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| tokens.next().ok_or_else(|| Error::Parse(format!("unexpected end of input reading {what}")));
        let magic = next("magic")?;
        if magic != MVSTACK_MAGIC {
            return Err(Error::Parse(format!("bad magic {magic:?}")));
        }
        let version: u32 = parse_token(next("version")?, "version")?;
        if version != MVSTACK_VERSION {
            return Err(Error::Parse(format!("unsupported MVSTACK version {version}")));
        }
        let count: usize = parse_token(next("N")?, "N")?;
        let n: usize = parse_token(next("n")?, "n")?;
        let p: usize = parse_token(next("p")?, "p")?;
        let flag: u8 = parse_token(next("label flag")?, "label flag")?;
        if flag > 1 {
            return Err(Error::Parse(format!("label flag must be 0 or 1, got {flag}")));
        }
        let mut obs = Vec::with_capacity(count);
        for k in 0..count {
            let mut values = Vec::with_capacity(n * p);
            for _ in 0..n * p {
                values.push(parse_token::<f64>(next(&format!("observation {k}"))?, "value")?);
            }
            obs.push(DMatrix::from_row_slice(n, p, &values));
        }
        let labels = if flag == 1 {
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                labels.push(parse_token::<usize>(next("labels")?, "label")?);
            }
            Some(labels)
        } else {
            None
        };
        if let Some(extra) = tokens.next() {
            return Err(Error::Parse(format!("trailing content starting at {extra:?}")));
        }
        Ok(Self {
            sample: MatrixSample::new(obs).map_err(|e| Error::Parse(e.to_string()))?,
            labels,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

fn parse_token<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse(format!("invalid {what} {tok:?}")))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{what} is not {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub pi: f64,
    pub m: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub sigma_diag: Vec<f64>,
    pub delta: Vec<Vec<f64>>,
    pub psi_diag: Vec<f64>,
    pub theta: Theta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub final_loglik: f64,
    pub bic: f64,
    pub rho: usize,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub family: Family,
    #[serde(rename = "G")]
    pub g: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub components: Vec<ComponentRecord>,
    pub fit: Option<FitMetadata>,
}

impl ModelFile {
    pub fn from_model(model: &MixtureModel, fit: Option<FitMetadata>) -> Self {
        let (n, p) = model.dims();
        let components = model
            .components
            .iter()
            .map(|c| ComponentRecord {
                pi: c.pi,
                m: rows(&c.m),
                a: rows(&c.a),
                lambda: rows(&c.lambda),
                sigma_diag: c.sigma_diag.iter().copied().collect(),
                delta: rows(&c.delta),
                psi_diag: c.psi_diag.iter().copied().collect(),
                theta: c.theta,
            })
            .collect();
        Self {
            format_version: MODEL_FORMAT_VERSION,
            family: model.family,
            g: model.g(),
            n,
            p,
            q: model.q(),
            r: model.r(),
            components,
            fit,
        }
    }

    pub fn to_model(&self) -> Result<MixtureModel> {
        if self.components.len() != self.g {
            return Err(Error::Parse(format!("G = {} but {} components", self.g, self.components.len())));
        }
        let (n, p, q, r) = (self.n, self.p, self.q, self.r);
        let components = self
            .components
            .iter()
            .enumerate()
            .map(|(g, c)| {
                let diag = |v: &[f64], len: usize, what: &str| {
                    if v.len() == len {
                        Ok(DVector::from_column_slice(v))
                    } else {
                        Err(Error::Parse(format!("component {g}: {what} has length {}, expected {len}", v.len())))
                    }
                };
                Ok(ComponentParams {
                    pi: c.pi,
                    m: from_rows(&c.m, n, p, "M")?,
                    a: from_rows(&c.a, n, p, "A")?,
                    lambda: from_rows(&c.lambda, n, q, "Lambda")?,
                    sigma_diag: diag(&c.sigma_diag, n, "Sigma diagonal")?,
                    delta: from_rows(&c.delta, p, r, "Delta")?,
                    psi_diag: diag(&c.psi_diag, p, "Psi diagonal")?,
                    theta: c.theta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureModel::new(self.family, components)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported model format version {}", file.format_version)));
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()? + "\n")?)
    }
}
