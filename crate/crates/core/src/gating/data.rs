//! Gate training data: per-sentence feature rows and frozen expert
//! probabilities, with a TSV dump format so gate training can run without
//! the experts loaded.
//!
//! Dump layout: a header line
//! `#sentence<TAB>t<TAB>x0 ... x{D-1}<TAB>p_nn<TAB>p_ng`, then one row per
//! prediction step, sentences in order, `t` counting from 1.

use std::io::{BufRead, Write};

use ndarray::{s, Array2};

use super::normalize::FeatureNormalizer;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GateSequence {
    /// steps × dim
    pub features: Array2<f64>,
    /// P_nn(w_t | c) per step
    pub p_nn: Vec<f64>,
    /// P_ng(w_t | c) per step
    pub p_ng: Vec<f64>,
}

impl GateSequence {
    pub fn len(&self) -> usize {
        self.p_nn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_nn.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateData {
    pub dim: usize,
    pub sequences: Vec<GateSequence>,
}

impl GateData {
    pub fn new(dim: usize, sequences: Vec<GateSequence>) -> Result<Self> {
        for s in &sequences {
            if s.features.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.features.ncols(),
                });
            }
            if s.features.nrows() != s.p_nn.len() || s.p_nn.len() != s.p_ng.len() {
                return Err(Error::invalid(
                    "feature rows and probabilities disagree in length",
                ));
            }
        }
        Ok(GateData { dim, sequences })
    }

    pub fn num_steps(&self) -> usize {
        self.sequences.iter().map(GateSequence::len).sum()
    }

    /// Every expert probability must be in (0, 1] for the mixture log to exist.
    pub fn check_probabilities(&self) -> Result<()> {
        for (si, s) in self.sequences.iter().enumerate() {
            for (t, (&a, &b)) in s.p_nn.iter().zip(&s.p_ng).enumerate() {
                for p in [a, b] {
                    if !(p > 0.0 && p <= 1.0) {
                        return Err(Error::invalid(format!(
                            "expert probability {p} at sentence {si}, step {} is outside (0, 1]",
                            t + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Keeps the first `n` feature columns.
    pub fn leading_columns(&self, n: usize) -> Result<Self> {
        if n > self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: n,
            });
        }
        Ok(GateData {
            dim: n,
            sequences: self
                .sequences
                .iter()
                .map(|s| GateSequence {
                    features: s.features.slice(s![.., ..n]).to_owned(),
                    p_nn: s.p_nn.clone(),
                    p_ng: s.p_ng.clone(),
                })
                .collect(),
        })
    }

    pub fn normalized(&self, norm: &FeatureNormalizer) -> Result<Self> {
        let mut out = self.clone();
        for s in &mut out.sequences {
            norm.apply_rows(&mut s.features)?;
        }
        Ok(out)
    }

    /// All feature rows stacked, steps × dim.
    pub fn stacked_features(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.num_steps(), self.dim));
        let mut r = 0;
        for s in &self.sequences {
            m.slice_mut(s![r..r + s.len(), ..]).assign(&s.features);
            r += s.len();
        }
        m
    }

    pub fn p_nn(&self) -> Vec<f64> {
        self.sequences
            .iter()
            .flat_map(|s| s.p_nn.iter().copied())
            .collect()
    }

    pub fn p_ng(&self) -> Vec<f64> {
        self.sequences
            .iter()
            .flat_map(|s| s.p_ng.iter().copied())
            .collect()
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "#sentence\tt")?;
        for j in 0..self.dim {
            write!(out, "\tx{j}")?;
        }
        writeln!(out, "\tp_nn\tp_ng")?;
        for (si, s) in self.sequences.iter().enumerate() {
            for t in 0..s.len() {
                write!(out, "{si}\t{}", t + 1)?;
                for v in s.features.row(t) {
                    write!(out, "\t{v}")?;
                }
                writeln!(out, "\t{}\t{}", s.p_nn[t], s.p_ng[t])?;
            }
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::invalid("empty feature dump"))?;
        let cols = header.split('\t').count();
        if !header.starts_with("#sentence") || cols < 4 {
            return Err(Error::invalid("feature dump lacks its header line"));
        }
        let dim = cols - 4;
        let mut sequences: Vec<GateSequence> = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        let (mut p_nn, mut p_ng) = (Vec::new(), Vec::new());
        let mut current: Option<usize> = None;
        let flush = |rows: &mut Vec<f64>,
                     p_nn: &mut Vec<f64>,
                     p_ng: &mut Vec<f64>,
                     seqs: &mut Vec<GateSequence>| {
            let n = p_nn.len();
            let features =
                Array2::from_shape_vec((n, dim), std::mem::take(rows)).expect("row width checked");
            seqs.push(GateSequence {
                features,
                p_nn: std::mem::take(p_nn),
                p_ng: std::mem::take(p_ng),
            });
        };
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let bad = |m: String| Error::invalid(format!("feature dump line {lineno}: {m}"));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != cols {
                return Err(bad(format!(
                    "expected {cols} columns, found {}",
                    fields.len()
                )));
            }
            let sid: usize = fields[0]
                .parse()
                .map_err(|_| bad("bad sentence index".into()))?;
            let t: usize = fields[1].parse().map_err(|_| bad("bad position".into()))?;
            if current != Some(sid) {
                if current.is_some() {
                    flush(&mut rows, &mut p_nn, &mut p_ng, &mut sequences);
                }
                if sid != sequences.len() {
                    return Err(bad(format!("sentence {sid} out of order")));
                }
                current = Some(sid);
            }
            if t != p_nn.len() + 1 {
                return Err(bad(format!("position {t} out of order")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("non-numeric field `{s}`")))
            };
            for f in &fields[2..2 + dim] {
                rows.push(num(f)?);
            }
            p_nn.push(num(fields[2 + dim])?);
            p_ng.push(num(fields[3 + dim])?);
        }
        if current.is_some() {
            flush(&mut rows, &mut p_nn, &mut p_ng, &mut sequences);
        }
        GateData::new(dim, sequences)
    }
}
