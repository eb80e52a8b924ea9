use std::fmt;

use serde::Serialize;

use super::{Layer, Model};
use crate::error::Result;
use crate::tensor::{ImageShape, Scalar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerRow {
    pub name: String,
    pub kind: String,
    pub params: usize,
    /// Multiply-accumulates for one sample.
    pub macs: u64,
    pub out_shape: ImageShape,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamLedger {
    pub rows: Vec<LedgerRow>,
}

impl ParamLedger {
    pub fn new(rows: Vec<LedgerRow>) -> Self {
        Self { rows }
    }

    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn row(&self, name: &str) -> Option<&LedgerRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Ledger of a built model for a single sample of `input`.
    pub fn of_model<T: Scalar>(model: &Model<T>, input: ImageShape) -> Result<Self> {
        let mut shape = input.batch(1)?;
        let mut rows = Vec::with_capacity(model.nodes().len());
        for node in model.nodes() {
            let out = node.layer.output_shape(shape).map_err(|e| e.in_layer(&node.name))?;
            let macs = match &node.layer {
                Layer::Conv(c) => {
                    let k = c.params.kernel() as u64;
                    (out.c * out.h * out.w) as u64 * c.params.c_in() as u64 * k * k
                }
                Layer::Dense(d) => (d.params.in_features() * d.params.out_features()) as u64,
                _ => 0,
            };
            rows.push(LedgerRow {
                name: node.name.clone(),
                kind: node.layer.kind().to_string(),
                params: node.layer.param_count(),
                macs,
                out_shape: out.into(),
            });
            shape = out;
        }
        Ok(Self { rows })
    }
}

pub fn count_params<T: Scalar>(model: &Model<T>) -> Result<ParamLedger> {
    ParamLedger::of_model(model, model.input_shape())
}

pub fn count_macs<T: Scalar>(model: &Model<T>, input: ImageShape) -> Result<ParamLedger> {
    ParamLedger::of_model(model, input)
}

impl fmt::Display for ParamLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:<8} {:>12} {:>16}  out", "layer", "kind", "params", "macs")?;
        for r in &self.rows {
            writeln!(f, "{:<12} {:<8} {:>12} {:>16}  {}", r.name, r.kind, r.params, r.macs, r.out_shape)?;
        }
        write!(f, "{:<12} {:<8} {:>12} {:>16}", "total", "", self.total_params(), self.total_macs())
    }
}
