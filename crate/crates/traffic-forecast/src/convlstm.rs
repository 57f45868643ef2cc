//! Sequence-to-sequence ConvLSTM forecaster.
//!
//! Peephole ConvLSTM cells (gate order i, f, C, o, H) stacked into an
//! encoder–decoder. Snapshots enter through a convolutional input embedding
//! (k×k convolution followed by tanh) and predictions leave through a
//! linear convolutional output embedding. The decoder starts from the
//! encoder's final states; its first input is the last observed snapshot,
//! and later inputs are either the previous prediction (inference) or the
//! shifted ground truth under teacher forcing (training).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{glorot_uniform, ModelParams};
use crate::tensor::Tensor;

/// Architecture and rollout settings for the S2S ConvLSTM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct S2SConfig {
    pub grid_height: usize,
    pub grid_width: usize,
    /// Number of services |S| (input channels).
    pub services: usize,
    pub embed_channels: usize,
    /// Hidden channels per stacked ConvLSTM layer.
    pub hidden_channels: Vec<usize>,
    pub kernel_size: usize,
    pub t_in: usize,
    pub horizon: usize,
    pub teacher_forcing: f64,
    pub seed: u64,
}

impl S2SConfig {
    /// Desk-scale defaults: 2 stacked layers of 32 hidden channels, 3×3
    /// kernels, 32 embedding channels, T_in = K = 12, teacher forcing 0.5.
    pub fn desk(grid_height: usize, grid_width: usize, services: usize, seed: u64) -> Self {
        S2SConfig {
            grid_height,
            grid_width,
            services,
            embed_channels: 32,
            hidden_channels: vec![32, 32],
            kernel_size: 3,
            t_in: 12,
            horizon: 12,
            teacher_forcing: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_in < 1 || self.horizon < 1 {
            return Err(Error::contract("T_in and K must be >= 1"));
        }
        if self.hidden_channels.is_empty() {
            return Err(Error::contract("need at least one ConvLSTM layer"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::contract("kernel size must be odd"));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(Error::contract("teacher forcing probability must be in [0,1]"));
        }
        if self.grid_height == 0 || self.grid_width == 0 || self.services == 0 || self.embed_channels == 0
        {
            return Err(Error::contract("grid dims, services and channels must be positive"));
        }
        Ok(())
    }

    pub fn snapshot_shape(&self) -> [usize; 3] {
        [self.services, self.grid_height, self.grid_width]
    }
}

/// Node ids of one cell's parameters on a tape.
struct CellNodes {
    w_xi: NodeId,
    w_hi: NodeId,
    w_xf: NodeId,
    w_hf: NodeId,
    w_xc: NodeId,
    w_hc: NodeId,
    w_xo: NodeId,
    w_ho: NodeId,
    w_ci: NodeId,
    w_cf: NodeId,
    w_co: NodeId,
    b_i: NodeId,
    b_f: NodeId,
    b_c: NodeId,
    b_o: NodeId,
}

impl CellNodes {
    fn lookup(nodes: &BTreeMap<String, NodeId>, prefix: &str) -> Result<CellNodes> {
        let get = |field: &str| -> Result<NodeId> {
            nodes
                .get(&format!("{prefix}.{field}"))
                .copied()
                .ok_or_else(|| Error::contract(format!("missing parameter {prefix}.{field}")))
        };
        Ok(CellNodes {
            w_xi: get("w_xi")?,
            w_hi: get("w_hi")?,
            w_xf: get("w_xf")?,
            w_hf: get("w_hf")?,
            w_xc: get("w_xc")?,
            w_hc: get("w_hc")?,
            w_xo: get("w_xo")?,
            w_ho: get("w_ho")?,
            w_ci: get("w_ci")?,
            w_cf: get("w_cf")?,
            w_co: get("w_co")?,
            b_i: get("b_i")?,
            b_f: get("b_f")?,
            b_c: get("b_c")?,
            b_o: get("b_o")?,
        })
    }
}

/// One ConvLSTM step, the five gate equations in order i, f, C, o, H.
fn cell_step_nodes(
    tape: &mut Tape,
    p: &CellNodes,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    // i_t = sigma(W_xi * x + W_hi * h + W_ci ⊙ c + b_i)
    let xi = tape.conv2d(x, p.w_xi, Some(p.b_i))?;
    let hi = tape.conv2d(h_prev, p.w_hi, None)?;
    let ci = tape.hadamard(p.w_ci, c_prev)?;
    let pre_i = tape.add(xi, hi)?;
    let pre_i = tape.add(pre_i, ci)?;
    let i = tape.sigmoid(pre_i);

    // f_t = sigma(W_xf * x + W_hf * h + W_cf ⊙ c + b_f)
    let xf = tape.conv2d(x, p.w_xf, Some(p.b_f))?;
    let hf = tape.conv2d(h_prev, p.w_hf, None)?;
    let cf = tape.hadamard(p.w_cf, c_prev)?;
    let pre_f = tape.add(xf, hf)?;
    let pre_f = tape.add(pre_f, cf)?;
    let f = tape.sigmoid(pre_f);

    // C_t = f ⊙ c + i ⊙ tanh(W_xc * x + W_hc * h + b_c)
    let xc = tape.conv2d(x, p.w_xc, Some(p.b_c))?;
    let hc = tape.conv2d(h_prev, p.w_hc, None)?;
    let pre_c = tape.add(xc, hc)?;
    let g = tape.tanh(pre_c);
    let fc = tape.hadamard(f, c_prev)?;
    let ig = tape.hadamard(i, g)?;
    let c = tape.add(fc, ig)?;

    // o_t = sigma(W_xo * x + W_ho * h + W_co ⊙ C_t + b_o)
    let xo = tape.conv2d(x, p.w_xo, Some(p.b_o))?;
    let ho = tape.conv2d(h_prev, p.w_ho, None)?;
    let co = tape.hadamard(p.w_co, c)?;
    let pre_o = tape.add(xo, ho)?;
    let pre_o = tape.add(pre_o, co)?;
    let o = tape.sigmoid(pre_o);

    // H_t = o ⊙ tanh(C_t)
    let tc = tape.tanh(c);
    let h = tape.hadamard(o, tc)?;
    Ok((h, c))
}

/// Hidden and cell state of one layer.
#[derive(Clone, Copy)]
pub struct CellStateNodes {
    pub h: NodeId,
    pub c: NodeId,
}

/// The model: config plus learnable parameters.
#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub config: S2SConfig,
    pub params: ModelParams,
}

impl ConvLstm {
    /// Glorot kernels, zero peepholes, zero biases except forget-gate
    /// bias 1.0. Deterministic given the config seed.
    pub fn init(config: S2SConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ModelParams::new();
        let k = config.kernel_size;
        let (hg, wg) = (config.grid_height, config.grid_width);

        let conv_init = |cout: usize, cin: usize, rng: &mut ChaCha8Rng| {
            glorot_uniform(&[cout, cin, k, k], cin * k * k, cout * k * k, rng)
        };

        params.insert(
            "embed_in.kernel",
            conv_init(config.embed_channels, config.services, &mut rng),
        );
        params.insert("embed_in.bias", Tensor::zeros(&[config.embed_channels]));

        for (side, _) in [("enc", 0), ("dec", 1)] {
            let mut in_ch = config.embed_channels;
            for (l, &hid) in config.hidden_channels.iter().enumerate() {
                let prefix = format!("{side}{l}");
                for gate in ["i", "f", "c", "o"] {
                    params.insert(format!("{prefix}.w_x{gate}"), conv_init(hid, in_ch, &mut rng));
                    params.insert(format!("{prefix}.w_h{gate}"), conv_init(hid, hid, &mut rng));
                }
                for peep in ["w_ci", "w_cf", "w_co"] {
                    params.insert(format!("{prefix}.{peep}"), Tensor::zeros(&[hid, hg, wg]));
                }
                params.insert(format!("{prefix}.b_i"), Tensor::zeros(&[hid]));
                params.insert(format!("{prefix}.b_f"), Tensor::filled(&[hid], 1.0));
                params.insert(format!("{prefix}.b_c"), Tensor::zeros(&[hid]));
                params.insert(format!("{prefix}.b_o"), Tensor::zeros(&[hid]));
                in_ch = hid;
            }
        }

        let last_hid = *config.hidden_channels.last().unwrap();
        params.insert("embed_out.kernel", conv_init(config.services, last_hid, &mut rng));
        params.insert("embed_out.bias", Tensor::zeros(&[config.services]));

        Ok(ConvLstm { config, params })
    }

    fn embed_in(
        &self,
        tape: &mut Tape,
        nodes: &BTreeMap<String, NodeId>,
        x: NodeId,
    ) -> Result<NodeId> {
        let kernel = nodes["embed_in.kernel"];
        let bias = nodes["embed_in.bias"];
        let conv = tape.conv2d(x, kernel, Some(bias))?;
        Ok(tape.tanh(conv))
    }

    fn embed_out(
        &self,
        tape: &mut Tape,
        nodes: &BTreeMap<String, NodeId>,
        h: NodeId,
    ) -> Result<NodeId> {
        let kernel = nodes["embed_out.kernel"];
        let bias = nodes["embed_out.bias"];
        tape.conv2d(h, kernel, Some(bias))
    }

    fn zero_states(&self, tape: &mut Tape) -> Vec<CellStateNodes> {
        self.config
            .hidden_channels
            .iter()
            .map(|&hid| {
                let shape = [hid, self.config.grid_height, self.config.grid_width];
                CellStateNodes {
                    h: tape.leaf(Tensor::zeros(&shape)),
                    c: tape.leaf(Tensor::zeros(&shape)),
                }
            })
            .collect()
    }

    fn run_stack(
        &self,
        tape: &mut Tape,
        nodes: &BTreeMap<String, NodeId>,
        side: &str,
        states: &mut [CellStateNodes],
        embedded: NodeId,
    ) -> Result<NodeId> {
        let mut x = embedded;
        for l in 0..self.config.hidden_channels.len() {
            let cell = CellNodes::lookup(nodes, &format!("{side}{l}"))?;
            let (h, c) = cell_step_nodes(tape, &cell, x, states[l].h, states[l].c)?;
            states[l] = CellStateNodes { h, c };
            x = h;
        }
        Ok(x)
    }

    /// Run the encoder over `T_in` snapshot nodes; returns final states per
    /// layer, zero-initialized at t=0.
    pub fn encode(
        &self,
        tape: &mut Tape,
        nodes: &BTreeMap<String, NodeId>,
        inputs: &[NodeId],
    ) -> Result<Vec<CellStateNodes>> {
        if inputs.len() != self.config.t_in {
            return Err(Error::contract(format!(
                "encoder expects {} snapshots, got {}",
                self.config.t_in,
                inputs.len()
            )));
        }
        let mut states = self.zero_states(tape);
        for &snapshot in inputs {
            let embedded = self.embed_in(tape, nodes, snapshot)?;
            self.run_stack(tape, nodes, "enc", &mut states, embedded)?;
        }
        Ok(states)
    }

    /// Decoder rollout producing `K` prediction nodes. At step k > 0 the
    /// input is the ground-truth snapshot for step k-1 with probability
    /// `tf_prob`, else the previous prediction.
    pub fn decode(
        &self,
        tape: &mut Tape,
        nodes: &BTreeMap<String, NodeId>,
        init_states: &[CellStateNodes],
        first_input: NodeId,
        targets: Option<&[NodeId]>,
        tf_prob: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<NodeId>> {
        if tf_prob > 0.0 && targets.is_none() {
            return Err(Error::contract("teacher forcing requires targets"));
        }
        let mut states = init_states.to_vec();
        let mut predictions = Vec::with_capacity(self.config.horizon);
        let mut input = first_input;
        for k in 0..self.config.horizon {
            if k > 0 {
                let use_truth = tf_prob > 0.0 && rng.gen::<f64>() < tf_prob;
                input = if use_truth {
                    targets.unwrap()[k - 1]
                } else {
                    predictions[k - 1]
                };
            }
            let embedded = self.embed_in(tape, nodes, input)?;
            let top = self.run_stack(tape, nodes, "dec", &mut states, embedded)?;
            predictions.push(self.embed_out(tape, nodes, top)?);
        }
        Ok(predictions)
    }

    /// Build the full forward graph for one window. `input` is
    /// `[T_in,|S|,Hg,Wg]`; `targets`, when given, is `[K,|S|,Hg,Wg]`.
    pub fn forward_graph(
        &self,
        tape: &mut Tape,
        nodes: &BTreeMap<String, NodeId>,
        input: &Tensor,
        targets: Option<&Tensor>,
        tf_prob: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<NodeId>> {
        let snap = self.config.snapshot_shape();
        let expect = [self.config.t_in, snap[0], snap[1], snap[2]];
        if input.shape() != expect {
            return Err(Error::contract(format!(
                "input shape {:?}, expected {expect:?}",
                input.shape()
            )));
        }
        let input_nodes: Vec<NodeId> = (0..self.config.t_in)
            .map(|t| Ok(tape.leaf(input.slice0(t)?)))
            .collect::<Result<_>>()?;
        let target_nodes: Option<Vec<NodeId>> = match targets {
            Some(t) => Some(
                (0..self.config.horizon)
                    .map(|k| Ok(tape.leaf(t.slice0(k)?)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let states = self.encode(tape, nodes, &input_nodes)?;
        let last_observed = *input_nodes.last().unwrap();
        self.decode(
            tape,
            nodes,
            &states,
            last_observed,
            target_nodes.as_deref(),
            tf_prob,
            rng,
        )
    }

    /// Inference: encode then decode autoregressively (tf_prob = 0).
    /// Output `[K,|S|,Hg,Wg]` in normalized units.
    pub fn forecast(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let nodes = self.params.leaves(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let preds = self.forward_graph(&mut tape, &nodes, input, None, 0.0, &mut rng)?;
        let values: Vec<Tensor> = preds.iter().map(|&p| tape.value(p).clone()).collect();
        Tensor::stack(&values)
    }
}
