//! Versioned on-disk model files for the online stage.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "RTVF"
//! version u8       1
//! flags   u8       bit 0: calibration block present
//! alpha   f64      default query level
//! d       u32      feature dimension
//! n       u32      training sample size
//! y       n x f64  training responses
//! b       u32      tree count
//! trees   b x tree (preorder)
//!   internal: 0u8, feature u32, threshold f64, left subtree, right subtree
//!   leaf:     1u8, count u32, count x u32 member indices
//! calibration (if flagged):
//!   mode   u8      0 plain, 1 finite-sample
//!   offset f64
//!   k      u32     score count
//!   scores k x f64
//! ```
//!
//! The file carries exactly what prediction needs; fitting hyperparameters
//! live in the run manifest. A load/save round trip reproduces every
//! prediction bit for bit.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::conformal::CorrectionMode;
use crate::error::{Error, Result};
use crate::qrf::{FittedTree, Forest, ForestConfig, TreeNode};

const MAGIC: [u8; 4] = *b"RTVF";
const FORMAT_VERSION: u8 = 1;
const FLAG_CALIBRATED: u8 = 0b0000_0001;

/// Split-conformal calibration artifacts stored with a forest.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBlock {
    pub offset: f64,
    pub mode: CorrectionMode,
    pub scores: Vec<f64>,
}

/// A trained model as persisted for the online stage: the forest, its
/// default query level, and optional calibration.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub forest: Forest,
    pub alpha: f64,
    pub calibration: Option<CalibrationBlock>,
}

impl SavedModel {
    /// Base (uncalibrated) quantile estimate at an arbitrary level.
    pub fn predict_base(&self, query: &[f64], alpha: f64) -> Result<f64> {
        if query.len() != self.forest.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.forest.dim(),
                actual: query.len(),
            });
        }
        Ok(self.forest.predict_quantile(query, alpha))
    }

    /// Calibrated estimate at the stored level, when calibration exists.
    pub fn predict_calibrated(&self, query: &[f64]) -> Result<Option<f64>> {
        match &self.calibration {
            None => Ok(None),
            Some(block) => Ok(Some(self.predict_base(query, self.alpha)? + block.offset)),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        out.write_all(&MAGIC)?;
        out.write_all(&[FORMAT_VERSION])?;
        let flags = if self.calibration.is_some() {
            FLAG_CALIBRATED
        } else {
            0
        };
        out.write_all(&[flags])?;
        out.write_all(&self.alpha.to_le_bytes())?;
        out.write_all(&(self.forest.dim() as u32).to_le_bytes())?;
        out.write_all(&(self.forest.n_training() as u32).to_le_bytes())?;
        for &y in self.forest.responses() {
            out.write_all(&y.to_le_bytes())?;
        }
        out.write_all(&(self.forest.n_trees() as u32).to_le_bytes())?;
        for tree in self.forest.trees() {
            write_node(&mut out, &tree.root)?;
        }
        if let Some(block) = &self.calibration {
            let mode = match block.mode {
                CorrectionMode::Plain => 0u8,
                CorrectionMode::FiniteSample => 1u8,
            };
            out.write_all(&[mode])?;
            out.write_all(&block.offset.to_le_bytes())?;
            out.write_all(&(block.scores.len() as u32).to_le_bytes())?;
            for &s in &block.scores {
                out.write_all(&s.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SavedModel> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::ModelFormat("bad magic bytes; not a model file".into()));
        }
        let version = read_u8(&mut reader)?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let flags = read_u8(&mut reader)?;
        let alpha = read_f64(&mut reader)?;
        let d = read_u32(&mut reader)? as usize;
        let n = read_u32(&mut reader)? as usize;
        let mut responses = Vec::with_capacity(n);
        for _ in 0..n {
            responses.push(read_f64(&mut reader)?);
        }
        let n_trees = read_u32(&mut reader)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            trees.push(FittedTree {
                root: read_node(&mut reader, n, d)?,
                honest_split: None,
            });
        }
        let calibration = if flags & FLAG_CALIBRATED != 0 {
            let mode = match read_u8(&mut reader)? {
                0 => CorrectionMode::Plain,
                1 => CorrectionMode::FiniteSample,
                other => {
                    return Err(Error::ModelFormat(format!(
                        "unknown correction mode byte {other}"
                    )))
                }
            };
            let offset = read_f64(&mut reader)?;
            let k = read_u32(&mut reader)? as usize;
            let mut scores = Vec::with_capacity(k);
            for _ in 0..k {
                scores.push(read_f64(&mut reader)?);
            }
            Some(CalibrationBlock {
                offset,
                mode,
                scores,
            })
        } else {
            None
        };
        let config = ForestConfig {
            n_trees,
            ..ForestConfig::default()
        };
        Ok(SavedModel {
            forest: Forest::from_parts(d, responses, trees, config),
            alpha,
            calibration,
        })
    }
}

fn write_node(out: &mut impl Write, node: &TreeNode) -> Result<()> {
    match node {
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            out.write_all(&[0u8])?;
            out.write_all(&(*feature as u32).to_le_bytes())?;
            out.write_all(&threshold.to_le_bytes())?;
            write_node(out, left)?;
            write_node(out, right)?;
        }
        TreeNode::Leaf { members } => {
            out.write_all(&[1u8])?;
            out.write_all(&(members.len() as u32).to_le_bytes())?;
            for &m in members {
                out.write_all(&m.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_node(reader: &mut impl Read, n: usize, d: usize) -> Result<TreeNode> {
    match read_u8(reader)? {
        0 => {
            let feature = read_u32(reader)? as usize;
            if feature >= d {
                return Err(Error::ModelFormat(format!(
                    "split feature {feature} out of range for dimension {d}"
                )));
            }
            let threshold = read_f64(reader)?;
            let left = read_node(reader, n, d)?;
            let right = read_node(reader, n, d)?;
            Ok(TreeNode::Internal {
                feature,
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        1 => {
            let count = read_u32(reader)? as usize;
            if count == 0 {
                return Err(Error::ModelFormat("empty leaf in model file".into()));
            }
            let mut members = Vec::with_capacity(count);
            for _ in 0..count {
                let m = read_u32(reader)?;
                if m as usize >= n {
                    return Err(Error::ModelFormat(format!(
                        "leaf member {m} out of range for sample size {n}"
                    )));
                }
                members.push(m);
            }
            Ok(TreeNode::Leaf { members })
        }
        other => Err(Error::ModelFormat(format!("unknown node tag {other}"))),
    }
}

fn read_u8(reader: &mut impl Read) -> Result<u8> {
    let mut buf = [0u8; 1];
    reader.read_exact(&mut buf)?;
    Ok(buf[0])
}

fn read_u32(reader: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(reader: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
