//! Parameter and multiply-accumulate accounting.
//!
//! Everything here walks the model structure; nothing is computed from a
//! per-preset formula. One MAC is one multiply-accumulate: a convolution costs
//! `out_elems * k_h * k_w * in_channels / groups`, a linear layer
//! `tokens * d_in * d_out`, and attention adds `2 * heads * L^2 * head_dim` for
//! its two matmuls. Norms, activations, pooling, softmax and residual adds are
//! counted as zero.

use std::fmt::Write as _;

use serde::Serialize;

use crate::blocks::{FeatureShape, Mode};
use crate::error::{Error, Result};
use crate::zoo::Model;

/// Cost of one layer for a single image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub kind: String,
    pub params: u64,
    pub macs: u64,
}

impl CostRow {
    pub fn new(name: String, kind: &str, params: u64, macs: u64) -> Self {
        Self {
            name,
            kind: kind.to_string(),
            params,
            macs,
        }
    }

    /// Path of the block owning this row, e.g. `stages.2.blocks.0.mixer`.
    pub fn block(&self) -> &str {
        block_of(&self.name)
    }
}

pub fn block_of(name: &str) -> &str {
    let parts: Vec<&str> = name.split('.').collect();
    let depth = match parts.as_slice() {
        ["stages", _, "blocks", _, ..] => 5,
        ["stages", _, ..] => 3,
        _ => 1,
    };
    let end: usize = parts.iter().take(depth).map(|p| p.len() + 1).sum::<usize>() - 1;
    &name[..end.min(name.len())]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub mode: Mode,
    pub input_hw: (usize, usize),
    pub rows: Vec<CostRow>,
    #[serde(rename = "params")]
    pub total_params: u64,
    #[serde(rename = "macs")]
    pub total_macs: u64,
}

impl CostReport {
    /// Params and MACs summed per block, in execution order.
    pub fn by_block(&self) -> Vec<(String, u64, u64)> {
        let mut out: Vec<(String, u64, u64)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(last) if last.0 == r.block() => {
                    last.1 += r.params;
                    last.2 += r.macs;
                }
                _ => out.push((r.block().to_string(), r.params, r.macs)),
            }
        }
        out
    }

    /// Params and MACs per coarse group: stem, each stage, head.
    pub fn by_stage(&self) -> Vec<(String, u64, u64)> {
        let mut out: Vec<(String, u64, u64)> = Vec::new();
        for r in &self.rows {
            let group = match r.name.split('.').collect::<Vec<_>>().as_slice() {
                ["stages", i, ..] => format!("stage{}", i.parse::<usize>().map(|v| v + 1).unwrap_or(0)),
                [first, ..] => first.to_string(),
                [] => String::new(),
            };
            match out.last_mut() {
                Some(last) if last.0 == group => {
                    last.1 += r.params;
                    last.2 += r.macs;
                }
                _ => out.push((group, r.params, r.macs)),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable per-layer table followed by per-stage subtotals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} ({:?}) at {}x{}",
            self.model, self.mode, self.input_hw.0, self.input_hw.1
        );
        let _ = writeln!(s, "{:<48} {:<18} {:>12} {:>16}", "layer", "kind", "params", "macs");
        for r in &self.rows {
            let _ = writeln!(s, "{:<48} {:<18} {:>12} {:>16}", r.name, r.kind, r.params, r.macs);
        }
        let _ = writeln!(s);
        for (g, p, m) in self.by_stage() {
            let _ = writeln!(s, "{g:<48} {:<18} {p:>12} {m:>16}", "");
        }
        let _ = writeln!(
            s,
            "{:<48} {:<18} {:>12} {:>16}",
            "total", "", self.total_params, self.total_macs
        );
        let _ = writeln!(
            s,
            "params {:.3} M, MACs {:.3} G",
            self.total_params as f64 / 1e6,
            self.total_macs as f64 / 1e9
        );
        s
    }
}

/// Per-layer report of the model in its current structure.
pub fn cost_report(model: &Model, input_hw: (usize, usize)) -> Result<CostReport> {
    model.check_input([1, model.config.in_channels, input_hw.0, input_hw.1])?;
    let mut rows = Vec::new();
    let mut shape = FeatureShape::new(model.config.in_channels, input_hw.0, input_hw.1);
    for (name, block) in model.blocks() {
        shape = block.cost(&name, shape, &mut rows)?;
    }
    rows.push(CostRow::new("head.pool".into(), "global_avg_pool", 0, 0));
    let head = &model.head;
    rows.push(CostRow::new(
        "head.fc".into(),
        "linear",
        head.param_count() as u64,
        (head.in_channels * head.out_channels) as u64,
    ));
    debug_assert_eq!(shape.channels, head.in_channels);
    let total_params = rows.iter().map(|r| r.params).sum();
    let total_macs = rows.iter().map(|r| r.macs).sum();
    Ok(CostReport {
        model: model.config.name.clone(),
        mode: model.mode,
        input_hw,
        rows,
        total_params,
        total_macs,
    })
}

/// Exact number of stored values (weights, biases, norm parameters and
/// statistics) in the requested structure.
///
/// Asking an inference model for its train-structure count is an error: the
/// branches it was fused from no longer exist.
pub fn count_params(model: &Model, mode: Mode) -> Result<u64> {
    match (model.mode, mode) {
        (a, b) if a == b => Ok(model.param_count() as u64),
        (Mode::Train, Mode::Inference) => Ok(model.reparameterize()?.param_count() as u64),
        _ => Err(Error::config(
            "train-structure parameter count requested from an already fused model",
        )),
    }
}

/// MACs of one forward pass of a single image in the current structure.
pub fn count_macs(model: &Model, input_hw: (usize, usize)) -> Result<u64> {
    Ok(cost_report(model, input_hw)?.total_macs)
}
