//! Latent interaction graphs: `K` stacked `N×N` edge-weight matrices.
//!
//! Row `i` holds the weights agent `i` places on every other agent as a message sender.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound kept off 0 and 1 when editing sigmoid graphs.
pub const SIGMOID_EDIT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// per-layer softmax over each row's neighbours
    Multiplex,
    /// softmax across layers for each edge
    EdgeType,
    /// independent logistic weight per entry
    Sigmoid,
}

impl FromStr for LatentMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplex" => Ok(Self::Multiplex),
            "edge_type" | "edge-type" => Ok(Self::EdgeType),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(Error::Config(format!("unknown latent mode '{other}'"))),
        }
    }
}

impl fmt::Display for LatentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Multiplex => "multiplex",
            Self::EdgeType => "edge_type",
            Self::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGraph {
    pub mode: LatentMode,
    pub layers: usize,
    pub n: usize,
    /// `weights[(k·N + i)·N + j]`; diagonal entries are 0
    pub weights: Vec<f64>,
}

/// Replace row `row` of layer `layer` with a one-hot row at `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowEdit {
    pub layer: usize,
    pub row: usize,
    pub target: usize,
}

impl FromStr for RowEdit {
    type Err = Error;

    /// Parses `"k:i->j"` with 0-based indices.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed edit '{s}', expected k:i->j"));
        let (layer, rest) = s.split_once(':').ok_or_else(bad)?;
        let (row, target) = rest.split_once("->").ok_or_else(bad)?;
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        let edit = Self {
            layer: num(layer)?,
            row: num(row)?,
            target: num(target)?,
        };
        if edit.row == edit.target {
            return Err(Error::Config(format!("edit '{s}' would create a self-edge")));
        }
        Ok(edit)
    }
}

impl fmt::Display for RowEdit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}->{}", self.layer, self.row, self.target)
    }
}

impl LatentGraph {
    pub fn new(mode: LatentMode, layers: usize, n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != layers * n * n {
            return Err(Error::dim(
                "latent graph",
                format!("{} weights for {layers}x{n}x{n}", weights.len()),
            ));
        }
        Ok(Self {
            mode,
            layers,
            n,
            weights,
        })
    }

    pub fn zeros(mode: LatentMode, layers: usize, n: usize) -> Self {
        Self {
            mode,
            layers,
            n,
            weights: vec![0.0; layers * n * n],
        }
    }

    fn offset(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.n + i) * self.n + j
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.weights[self.offset(k, i, j)]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, w: f64) {
        let o = self.offset(k, i, j);
        self.weights[o] = w;
    }

    pub fn layer(&self, k: usize) -> &[f64] {
        &self.weights[k * self.n * self.n..(k + 1) * self.n * self.n]
    }

    pub fn row(&self, k: usize, i: usize) -> &[f64] {
        let start = self.offset(k, i, 0);
        &self.weights[start..start + self.n]
    }

    /// Checks the mode contract on layers `< active`; layers from `active` on must be zero.
    pub fn check_invariants(&self, active: usize, tol: f64) -> Result<()> {
        let n = self.n;
        let fail = |msg: String| Err(Error::Invariant(format!("latent graph: {msg}")));
        for k in 0..self.layers {
            for i in 0..n {
                if self.get(k, i, i) != 0.0 {
                    return fail(format!("diagonal ({k},{i}) is {}", self.get(k, i, i)));
                }
                if k >= active {
                    if self.row(k, i).iter().any(|&w| w != 0.0) {
                        return fail(format!("inactive layer {k} row {i} is nonzero"));
                    }
                    continue;
                }
                for j in (0..n).filter(|&j| j != i) {
                    let w = self.get(k, i, j);
                    if !w.is_finite() || w < 0.0 {
                        return fail(format!("weight ({k},{i},{j}) = {w}"));
                    }
                    if self.mode == LatentMode::Sigmoid && !(w > 0.0 && w < 1.0) {
                        return fail(format!("sigmoid weight ({k},{i},{j}) = {w}"));
                    }
                }
                if self.mode == LatentMode::Multiplex {
                    let s: f64 = self.row(k, i).iter().sum();
                    if (s - 1.0).abs() > tol {
                        return fail(format!("layer {k} row {i} sums to {s}"));
                    }
                }
            }
        }
        if self.mode == LatentMode::EdgeType {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let s: f64 = (0..active).map(|k| self.get(k, i, j)).sum();
                    if (s - 1.0).abs() > tol {
                        return fail(format!("edge ({i},{j}) sums to {s} across layers"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies a row edit while keeping the mode's normalisation.
    pub fn apply_edit(&mut self, edit: &RowEdit) -> Result<()> {
        let RowEdit { layer, row, target } = *edit;
        if layer >= self.layers || row >= self.n || target >= self.n || row == target {
            return Err(Error::Config(format!(
                "edit {edit} invalid for {} layers of {} agents",
                self.layers, self.n
            )));
        }
        let n = self.n;
        for j in (0..n).filter(|&j| j != row) {
            let hot = j == target;
            match self.mode {
                LatentMode::Multiplex => self.set(layer, row, j, if hot { 1.0 } else { 0.0 }),
                LatentMode::EdgeType => {
                    if self.layers < 2 {
                        return Err(Error::Config(
                            "edge-type edits need at least two layers".into(),
                        ));
                    }
                    let rest = 1.0 / (self.layers - 1) as f64;
                    for k in 0..self.layers {
                        let w = match (k == layer, hot) {
                            (true, true) => 1.0,
                            (true, false) => 0.0,
                            (false, true) => 0.0,
                            (false, false) => rest,
                        };
                        self.set(k, row, j, w);
                    }
                }
                LatentMode::Sigmoid => {
                    let w = if hot {
                        1.0 - SIGMOID_EDIT_EPS
                    } else {
                        SIGMOID_EDIT_EPS
                    };
                    self.set(layer, row, j, w);
                }
            }
        }
        Ok(())
    }

    /// Relabels agents: agent `a` of `self` becomes agent `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.mode, self.layers, self.n);
        for k in 0..self.layers {
            for i in 0..self.n {
                for j in 0..self.n {
                    out.set(k, perm[i], perm[j], self.get(k, i, j));
                }
            }
        }
        out
    }

    /// Column of the largest off-diagonal weight in row `i`; ties go to the lowest index.
    pub fn row_argmax(&self, k: usize, i: usize) -> usize {
        let mut best = usize::MAX;
        let mut best_w = f64::NEG_INFINITY;
        for (j, &w) in self.row(k, i).iter().enumerate() {
            if j != i && w > best_w {
                best = j;
                best_w = w;
            }
        }
        best
    }
}
