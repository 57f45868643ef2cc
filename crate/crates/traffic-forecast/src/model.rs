//! Shared model machinery: the named parameter store every architecture
//! uses, the model-kind enum, and initialization helpers.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// All learnable weights and biases of a network, addressable by name.
/// Iteration order is the sorted name order, so the optimizer and the
/// checkpoint format see parameters in a stable order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    entries: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn value_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.entries
    }

    pub fn from_map(entries: BTreeMap<String, Tensor>) -> Self {
        ModelParams { entries }
    }

    /// Register every parameter as a leaf on the tape; the returned map
    /// lets the trainer pull gradients back out by name.
    pub fn leaves(&self, tape: &mut Tape) -> BTreeMap<String, NodeId> {
        self.entries
            .iter()
            .map(|(name, value)| (name.clone(), tape.leaf(value.clone())))
            .collect()
    }
}

/// The architectures the evaluation harness can run interchangeably.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    ConvLstm,
    Mlp,
    Cnn,
    Cnn3d,
    Lstm,
    Persistence,
}

impl ModelKind {
    pub fn is_trainable(self) -> bool {
        self != ModelKind::Persistence
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ConvLstm => "convlstm",
            ModelKind::Mlp => "mlp",
            ModelKind::Cnn => "cnn",
            ModelKind::Cnn3d => "cnn3d",
            ModelKind::Lstm => "lstm",
            ModelKind::Persistence => "persistence",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convlstm" => Ok(ModelKind::ConvLstm),
            "mlp" => Ok(ModelKind::Mlp),
            "cnn" => Ok(ModelKind::Cnn),
            "cnn3d" => Ok(ModelKind::Cnn3d),
            "lstm" => Ok(ModelKind::Lstm),
            "persistence" => Ok(ModelKind::Persistence),
            other => Err(Error::contract(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Serializable description of any model, embedded in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelConfig {
    ConvLstm(crate::convlstm::S2SConfig),
    Baseline(crate::baselines::BaselineConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::ConvLstm(_) => ModelKind::ConvLstm,
            ModelConfig::Baseline(b) => b.kind,
        }
    }

    pub fn t_in(&self) -> usize {
        match self {
            ModelConfig::ConvLstm(c) => c.t_in,
            ModelConfig::Baseline(b) => b.t_in,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ModelConfig::ConvLstm(c) => c.horizon,
            ModelConfig::Baseline(b) => b.horizon,
        }
    }

    pub fn teacher_forcing(&self) -> f64 {
        match self {
            ModelConfig::ConvLstm(c) => c.teacher_forcing,
            ModelConfig::Baseline(b) => b.teacher_forcing,
        }
    }
}

/// Any forecaster behind the uniform contract: input `[T_in,|S|,Hg,Wg]`,
/// output `[K,|S|,Hg,Wg]`. The training loop and the evaluation harness
/// treat every variant interchangeably.
#[derive(Clone, Debug)]
pub enum AnyModel {
    ConvLstm(crate::convlstm::ConvLstm),
    Baseline(crate::baselines::Baseline),
}

impl AnyModel {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        match config {
            ModelConfig::ConvLstm(c) => {
                Ok(AnyModel::ConvLstm(crate::convlstm::ConvLstm::init(c.clone())?))
            }
            ModelConfig::Baseline(c) => {
                Ok(AnyModel::Baseline(crate::baselines::Baseline::init(c.clone())?))
            }
        }
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            AnyModel::ConvLstm(m) => ModelConfig::ConvLstm(m.config.clone()),
            AnyModel::Baseline(m) => ModelConfig::Baseline(m.config.clone()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind()
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            AnyModel::ConvLstm(m) => &m.params,
            AnyModel::Baseline(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        match self {
            AnyModel::ConvLstm(m) => &mut m.params,
            AnyModel::Baseline(m) => &mut m.params,
        }
    }

    /// Non-learnable state (running standardization statistics), exposed
    /// as named tensors for checkpointing.
    pub fn buffers(&self) -> ModelParams {
        let mut out = ModelParams::new();
        if let AnyModel::Baseline(m) = self {
            for (l, st) in m.bn_stats.iter().enumerate() {
                out.insert(
                    format!("bn{l}.running_mean"),
                    Tensor::new(vec![st.mean.len()], st.mean.clone()).expect("stats shape"),
                );
                out.insert(
                    format!("bn{l}.running_var"),
                    Tensor::new(vec![st.var.len()], st.var.clone()).expect("stats shape"),
                );
            }
        }
        out
    }

    pub fn set_buffers(&mut self, buffers: &ModelParams) -> Result<()> {
        if let AnyModel::Baseline(m) = self {
            for l in 0..m.bn_stats.len() {
                let mean = buffers.get(&format!("bn{l}.running_mean"))?;
                let var = buffers.get(&format!("bn{l}.running_var"))?;
                if mean.len() != m.bn_stats[l].mean.len() || var.len() != m.bn_stats[l].var.len() {
                    return Err(Error::contract("running statistics length mismatch"));
                }
                m.bn_stats[l].mean = mean.data().to_vec();
                m.bn_stats[l].var = var.data().to_vec();
            }
        }
        Ok(())
    }

    /// Deterministic inference for one window.
    pub fn forecast(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            AnyModel::ConvLstm(m) => m.forecast(input),
            AnyModel::Baseline(m) => m.forecast(input),
        }
    }

    /// Build the training graph for one window and return the scalar MSE
    /// loss node (mean over all predicted elements).
    pub fn build_loss(
        &mut self,
        tape: &mut Tape,
        nodes: &std::collections::BTreeMap<String, NodeId>,
        input: &Tensor,
        targets: &Tensor,
        tf_prob: f64,
        rng: &mut impl rand::Rng,
        update_stats: bool,
    ) -> Result<NodeId> {
        let horizon = self.config().horizon();
        let steps: Vec<NodeId> = match self {
            AnyModel::ConvLstm(m) => {
                m.forward_graph(tape, nodes, input, Some(targets), tf_prob, rng)?
            }
            AnyModel::Baseline(m) => {
                let out = m.forward_graph(
                    tape,
                    nodes,
                    input,
                    Some(targets),
                    tf_prob,
                    rng,
                    update_stats,
                )?;
                match out {
                    crate::baselines::GraphOutput::Stacked(id) => {
                        let tgt = tape.leaf(targets.clone());
                        return tape.mse_loss(id, tgt);
                    }
                    crate::baselines::GraphOutput::Steps(ids) => ids,
                }
            }
        };
        // per-step MSE averaged over the horizon equals the MSE over the
        // whole stack (steps are equally sized)
        let mut acc: Option<NodeId> = None;
        for (k, &pred) in steps.iter().enumerate() {
            let tgt = tape.leaf(targets.slice0(k)?);
            let l = tape.mse_loss(pred, tgt)?;
            acc = Some(match acc {
                None => l,
                Some(a) => tape.add(a, l)?,
            });
        }
        Ok(tape.scale(acc.expect("horizon >= 1"), 1.0 / horizon as f64))
    }
}

/// Glorot-uniform tensor: entries uniform in ±sqrt(6/(fan_in+fan_out)).
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape")
}
