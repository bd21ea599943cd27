//! Offline (risk factor, loss) datasets and their CSV persistence.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::sim::{LossMode, Market};
use crate::rng::StreamId;
use crate::TOOL_VERSION;

/// n pairs of (risk factors at the monitoring time, loss at the risk
/// horizon). Features are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    d: usize,
    x: Vec<f64>,
    loss: Vec<f64>,
    seed: u64,
}

/// Sidecar written next to a dataset CSV; ties the file to the exact
/// generating configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub config_sha256: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub m_inner: usize,
    pub loss_mode: LossMode,
    pub tool_version: String,
}

impl OfflineDataset {
    pub fn from_parts(d: usize, x: Vec<f64>, loss: Vec<f64>, seed: u64) -> Result<Self> {
        if loss.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if x.len() != loss.len() * d {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix has {} values, expected {} rows x {} columns",
                x.len(),
                loss.len(),
                d
            )));
        }
        Ok(OfflineDataset { d, x, loss, seed })
    }

    pub fn n(&self) -> usize {
        self.loss.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn feature(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.d + f]
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn losses(&self) -> &[f64] {
        &self.loss
    }

    /// Copy the given rows into a new dataset (used for train/calibration
    /// splits).
    pub fn subset(&self, indices: &[usize]) -> Result<OfflineDataset> {
        let mut x = Vec::with_capacity(indices.len() * self.d);
        let mut loss = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            loss.push(self.loss[i]);
        }
        OfflineDataset::from_parts(self.d, x, loss, self.seed)
    }

    /// Write as CSV with header `x1,...,xd,loss`. Floats use the shortest
    /// round-trip representation, so re-reading reproduces the exact bits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        for f in 0..self.d {
            write!(out, "x{},", f + 1)?;
        }
        writeln!(out, "loss")?;
        for i in 0..self.n() {
            for f in 0..self.d {
                write!(out, "{},", self.feature(i, f))?;
            }
            writeln!(out, "{}", self.loss[i])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<OfflineDataset> {
        let path = path.as_ref();
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                message: "empty file".into(),
            })??;
        let columns: Vec<&str> = header.split(',').collect();
        if columns.len() < 2 || columns.last() != Some(&"loss") {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: "expected header `x1,...,xd,loss`".into(),
            });
        }
        let d = columns.len() - 1;
        let mut x = Vec::new();
        let mut loss = Vec::new();
        for (line_no, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    message: format!("line {}: expected {} fields", line_no + 2, d + 1),
                });
            }
            for (col, field) in fields.iter().enumerate() {
                let value: f64 = field.parse().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    message: format!("line {}: bad number `{}`", line_no + 2, field),
                })?;
                if col < d {
                    x.push(value);
                } else {
                    loss.push(value);
                }
            }
        }
        OfflineDataset::from_parts(d, x, loss, 0)
    }

    pub fn write_metadata(
        &self,
        path: impl AsRef<Path>,
        market: &Market,
        m_inner: usize,
        loss_mode: LossMode,
    ) -> Result<()> {
        let meta = DatasetMetadata {
            config_sha256: market.config().content_hash(),
            seed: self.seed,
            n: self.n(),
            d: self.d,
            m_inner,
            loss_mode,
            tool_version: TOOL_VERSION.to_string(),
        };
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &meta)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }
}

/// Generate `n` independent (X(u), L(tau)) pairs.
///
/// Outer path `i` owns the sub-streams `("outer", i)` (the path to the risk
/// horizon) and `("inner", i)` (its nested inner paths), so the outer draws
/// are identical whether losses are nested or closed-form and for any
/// `m_inner`. Parallel over paths; results are independent of thread count.
pub fn generate_offline_dataset(
    market: &Market,
    n: usize,
    m_inner: usize,
    loss_mode: LossMode,
    seed: u64,
) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::invalid_config("n", "sample count must be >= 1"));
    }
    if loss_mode == LossMode::Nested && m_inner == 0 {
        return Err(Error::invalid_config("m_inner", "inner paths must be >= 1"));
    }
    let d = market.config().d;
    let outer = StreamId::root(seed).label("outer");
    let inner = StreamId::root(seed).label("inner");
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut outer_rng = outer.index(i as u64).rng();
            let (x_u, s_tau) = market.simulate_to_horizon(&mut outer_rng);
            let loss = match loss_mode {
                LossMode::Nested => {
                    let mut inner_rng = inner.index(i as u64).rng();
                    market.loss_nested(&s_tau, m_inner, &mut inner_rng)
                }
                LossMode::ClosedForm => market.loss_closed_form(&s_tau),
            };
            (x_u, loss)
        })
        .collect();

    let mut x = Vec::with_capacity(n * d);
    let mut loss = Vec::with_capacity(n);
    for (row, l) in rows {
        x.extend_from_slice(&row);
        loss.push(l);
    }
    OfflineDataset::from_parts(d, x, loss, seed)
}
