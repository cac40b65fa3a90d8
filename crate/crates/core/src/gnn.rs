//! Two-layer graph networks: plain GCN and a simplified adaptive channel
//! mixing (ACM) variant.
//!
//! The ACM layer filters its input through three channels (low-pass `Â`,
//! high-pass `I − Â` and identity), scores each channel per node with a
//! learned vector plus bias, and mixes the channels with the row-softmax of
//! those scores.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, Graph};
use crate::tensor::{DenseMatrix, Parameter, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    Gcn,
    Acm,
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Backbone::Gcn),
            "acm" => Ok(Backbone::Acm),
            other => Err(Error::Config(format!("unknown backbone `{other}` (expected gcn|acm)"))),
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Gcn => "gcn",
            Backbone::Acm => "acm",
        })
    }
}

/// Ordered parameter list of one model. The order is fixed by construction
/// and aggregation relies on it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub backbone: Backbone,
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub params: Vec<Parameter>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
}

/// Parameters per ACM layer: `W_low, W_high, W_id, a_low, a_high, a_id, b`.
const ACM_LAYER_PARAMS: usize = 7;

impl ModelParams {
    pub fn new(backbone: Backbone, input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        match backbone {
            Backbone::Gcn => {
                params.push(Parameter::new(glorot(input_dim, hidden, &mut rng)));
                params.push(Parameter::new(glorot(hidden, classes, &mut rng)));
            }
            Backbone::Acm => {
                for (fan_in, fan_out) in [(input_dim, hidden), (hidden, classes)] {
                    for _ in 0..3 {
                        params.push(Parameter::new(glorot(fan_in, fan_out, &mut rng)));
                    }
                    for _ in 0..3 {
                        params.push(Parameter::new(glorot(fan_out, 1, &mut rng)));
                    }
                    params.push(Parameter::new(DenseMatrix::zeros(1, 3)));
                }
            }
        }
        Self {
            backbone,
            input_dim,
            hidden,
            classes,
            params,
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.as_slice().iter().copied()).collect()
    }

    pub fn flat_gradients(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.gradient.as_slice().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::invalid(format!(
                "flat vector of length {} for {} parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let len = p.value.len();
            p.value.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.backbone == other.backbone
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.value.shape() == b.value.shape())
    }

    /// Records every parameter as a differentiable leaf, in order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }
}

/// Graph-dependent operators precomputed once per (client, backbone).
#[derive(Clone, Debug)]
pub struct GraphOperators {
    pub a_hat: DenseMatrix,
    /// `I − Â`, only for the ACM backbone.
    pub high_pass: Option<DenseMatrix>,
    pub features: DenseMatrix,
}

impl GraphOperators {
    pub fn new(g: &Graph, backbone: Backbone) -> Self {
        let a_hat = normalized_adjacency(g, true);
        let high_pass = (backbone == Backbone::Acm)
            .then(|| DenseMatrix::identity(g.num_nodes()).sub(&a_hat).expect("square"));
        Self {
            a_hat,
            high_pass,
            features: g.features().clone(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub hidden: DenseMatrix,
    pub logits: DenseMatrix,
}

/// Handles of one forward pass on a tape.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub params: Vec<Var>,
    pub hidden: Var,
    pub logits: Var,
}

pub fn forward_on_tape(tape: &mut Tape, model: &ModelParams, ops: &GraphOperators) -> Result<ForwardVars> {
    if ops.features.cols() != model.input_dim {
        return Err(Error::Dimension {
            op: "forward",
            left: ops.features.shape(),
            right: (model.input_dim, model.hidden),
        });
    }
    let params = model.leaves(tape);
    let x = tape.constant(ops.features.clone());
    let a_hat = tape.constant(ops.a_hat.clone());
    let (hidden, logits) = match model.backbone {
        Backbone::Gcn => {
            let xw = tape.matmul(x, params[0])?;
            let pre = tape.matmul(a_hat, xw)?;
            let h1 = tape.relu(pre)?;
            let hw = tape.matmul(h1, params[1])?;
            (h1, tape.matmul(a_hat, hw)?)
        }
        Backbone::Acm => {
            let high = ops
                .high_pass
                .clone()
                .ok_or_else(|| Error::invalid("ACM forward needs the high-pass operator"))?;
            let high = tape.constant(high);
            let layer1 = &params[..ACM_LAYER_PARAMS];
            let layer2 = &params[ACM_LAYER_PARAMS..];
            let mixed = acm_layer(tape, x, a_hat, high, layer1)?;
            let h1 = tape.relu(mixed)?;
            (h1, acm_layer(tape, h1, a_hat, high, layer2)?)
        }
    };
    Ok(ForwardVars { params, hidden, logits })
}

fn acm_layer(tape: &mut Tape, input: Var, low: Var, high: Var, p: &[Var]) -> Result<Var> {
    let xw_low = tape.matmul(input, p[0])?;
    let y_low = tape.matmul(low, xw_low)?;
    let xw_high = tape.matmul(input, p[1])?;
    let y_high = tape.matmul(high, xw_high)?;
    let y_id = tape.matmul(input, p[2])?;
    let channels = [y_low, y_high, y_id];
    let mut scores = Vec::with_capacity(3);
    for (c, &y) in channels.iter().enumerate() {
        scores.push(tape.matmul(y, p[3 + c])?);
    }
    let stacked = tape.concat_cols(&scores)?;
    let biased = tape.add_row_broadcast(stacked, p[6])?;
    let mix = tape.softmax_rows(biased)?;
    let mut out: Option<Var> = None;
    for (c, &y) in channels.iter().enumerate() {
        let w = tape.column(mix, c)?;
        let part = tape.scale_rows(y, w)?;
        out = Some(match out {
            None => part,
            Some(acc) => tape.add(acc, part)?,
        });
    }
    Ok(out.expect("three channels"))
}

pub fn forward(model: &ModelParams, ops: &GraphOperators) -> Result<ModelOutput> {
    let mut tape = Tape::new();
    let vars = forward_on_tape(&mut tape, model, ops)?;
    Ok(ModelOutput {
        hidden: tape.value(vars.hidden).clone(),
        logits: tape.value(vars.logits).clone(),
    })
}

pub fn gcn_forward(model: &ModelParams, g: &Graph) -> Result<ModelOutput> {
    if model.backbone != Backbone::Gcn {
        return Err(Error::invalid("gcn_forward called with a non-GCN model"));
    }
    forward(model, &GraphOperators::new(g, Backbone::Gcn))
}

pub fn acm_forward(model: &ModelParams, g: &Graph) -> Result<ModelOutput> {
    if model.backbone != Backbone::Acm {
        return Err(Error::invalid("acm_forward called with a non-ACM model"));
    }
    forward(model, &GraphOperators::new(g, Backbone::Acm))
}

/// Index of the largest logit per row (lowest index on ties).
pub fn predict(logits: &DenseMatrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
