//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every forward operation as a [`Node`]; node ids are
//! topologically ordered by construction (inputs always have smaller ids),
//! so [`Tape::backward`] is a single reverse sweep that accumulates the
//! gradient of a scalar loss into every node of the graph.
//!
//! The operation set is exactly what the forecasting models need: 2-D and
//! 3-D "same"-padded convolution, Hadamard product, element-wise add,
//! sigmoid/tanh, dense matmul, per-channel standardization, reshape, sum
//! and MSE loss. There is no broadcasting except the per-channel bias in
//! convolutions; everything else requires exact shape equality, which keeps
//! the gradient code auditable.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Matmul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
    },
    Conv3d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
    },
    /// Per-channel `gamma * (x - mean) * inv_std + beta` with frozen
    /// statistics (the running-statistics path of batch normalization).
    ChannelNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(NodeId),
    Sum(NodeId),
    Scale(NodeId, f64),
    MseLoss(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of a scalar loss with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }
}

/// A dynamic computation graph, rebuilt per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Record an input (parameter or constant) node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), value)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), value))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = matmul_forward(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    /// "Same"-padded 2-D convolution: input `[C_in,H,W]`, kernel
    /// `[C_out,C_in,kH,kW]` with odd kH/kW, optional bias `[C_out]`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let value = conv2d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
        )?;
        Ok(self.push(Op::Conv2d { input, kernel, bias }, value))
    }

    /// "Same"-padded 3-D convolution: input `[C_in,T,H,W]`, kernel
    /// `[C_out,C_in,kT,kH,kW]` with odd extents, optional bias `[C_out]`.
    pub fn conv3d(&mut self, input: NodeId, kernel: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let value = conv3d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
        )?;
        Ok(self.push(Op::Conv3d { input, kernel, bias }, value))
    }

    /// Per-channel standardization with frozen statistics; `mean` and `var`
    /// are captured as constants, `gamma`/`beta` are learnable `[C]` leaves.
    pub fn channel_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let g = self.value(gamma);
        let b = self.value(beta);
        if x.rank() < 1 {
            return Err(Error::dim("channel_norm needs channel-major input"));
        }
        let channels = x.shape()[0];
        if g.shape() != [channels] || b.shape() != [channels] {
            return Err(Error::dim(format!(
                "channel_norm scale/shift must be [{channels}], got {:?}/{:?}",
                g.shape(),
                b.shape()
            )));
        }
        if mean.len() != channels || var.len() != channels {
            return Err(Error::dim("channel_norm statistics length mismatch"));
        }
        let plane: usize = x.shape()[1..].iter().product();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; x.len()];
        for c in 0..channels {
            let gc = g.at(c);
            let bc = b.at(c);
            for i in 0..plane {
                let idx = c * plane + i;
                out[idx] = gc * (x.at(idx) - mean[c]) * inv_std[c] + bc;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            Op::ChannelNorm {
                input,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
            value,
        ))
    }

    /// Mean of squared differences, a scalar `[1]` node.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(Error::dim(format!(
                "mse_loss shapes {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let n = p.len() as f64;
        let sum: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let value = Tensor::scalar(sum / n);
        Ok(self.push(Op::MseLoss(pred, target), value))
    }

    /// Reverse-mode sweep from a scalar loss node. Returns the gradient of
    /// the loss with respect to every node (zero for nodes the loss does
    /// not depend on).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for id in (0..=loss.0).rev() {
            if grads[id].data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[id].clone();
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    grads[a.0].add_assign(&g)?;
                    grads[b.0].add_assign(&g)?;
                }
                Op::Hadamard(a, b) => {
                    let da = g.zip_map(self.value(*b), |gi, bi| gi * bi)?;
                    let db = g.zip_map(self.value(*a), |gi, ai| gi * ai)?;
                    grads[a.0].add_assign(&da)?;
                    grads[b.0].add_assign(&db)?;
                }
                Op::Sigmoid(a) => {
                    let da = g.zip_map(&node.value, |gi, y| gi * y * (1.0 - y))?;
                    grads[a.0].add_assign(&da)?;
                }
                Op::Tanh(a) => {
                    let da = g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y))?;
                    grads[a.0].add_assign(&da)?;
                }
                Op::Scale(a, factor) => {
                    grads[a.0].add_assign(&g.scale(*factor))?;
                }
                Op::Reshape(a) => {
                    let da = g.reshape(self.value(*a).shape())?;
                    grads[a.0].add_assign(&da)?;
                }
                Op::Sum(a) => {
                    let g0 = g.at(0);
                    let da = Tensor::filled(self.value(*a).shape(), g0);
                    grads[a.0].add_assign(&da)?;
                }
                Op::Matmul(a, b) => {
                    let (da, db) = matmul_backward(self.value(*a), self.value(*b), &g)?;
                    grads[a.0].add_assign(&da)?;
                    grads[b.0].add_assign(&db)?;
                }
                Op::Conv2d { input, kernel, bias } => {
                    let (di, dk, db) =
                        conv2d_backward(self.value(*input), self.value(*kernel), &g)?;
                    grads[input.0].add_assign(&di)?;
                    grads[kernel.0].add_assign(&dk)?;
                    if let Some(b) = bias {
                        grads[b.0].add_assign(&db)?;
                    }
                }
                Op::Conv3d { input, kernel, bias } => {
                    let (di, dk, db) =
                        conv3d_backward(self.value(*input), self.value(*kernel), &g)?;
                    grads[input.0].add_assign(&di)?;
                    grads[kernel.0].add_assign(&dk)?;
                    if let Some(b) = bias {
                        grads[b.0].add_assign(&db)?;
                    }
                }
                Op::ChannelNorm {
                    input,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let x = self.value(*input);
                    let gam = self.value(*gamma);
                    let channels = x.shape()[0];
                    let plane: usize = x.shape()[1..].iter().product();
                    let mut di = Tensor::zeros(x.shape());
                    let mut dgamma = Tensor::zeros(&[channels]);
                    let mut dbeta = Tensor::zeros(&[channels]);
                    for c in 0..channels {
                        let gc = gam.at(c);
                        let mut sg = 0.0;
                        let mut sb = 0.0;
                        for i in 0..plane {
                            let idx = c * plane + i;
                            let gi = g.at(idx);
                            di.data_mut()[idx] = gi * gc * inv_std[c];
                            sg += gi * (x.at(idx) - mean[c]) * inv_std[c];
                            sb += gi;
                        }
                        dgamma.data_mut()[c] = sg;
                        dbeta.data_mut()[c] = sb;
                    }
                    grads[input.0].add_assign(&di)?;
                    grads[gamma.0].add_assign(&dgamma)?;
                    grads[beta.0].add_assign(&dbeta)?;
                }
                Op::MseLoss(pred, target) => {
                    let p = self.value(*pred);
                    let t = self.value(*target);
                    let n = p.len() as f64;
                    let factor = 2.0 * g.at(0) / n;
                    let dp = p.zip_map(t, |a, b| factor * (a - b))?;
                    let dt = dp.scale(-1.0);
                    grads[pred.0].add_assign(&dp)?;
                    grads[target.0].add_assign(&dt)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dim(format!(
            "matmul shapes {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    // dA = G * B^T, dB = A^T * G
    let mut da = vec![0.0; m * k];
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g.data()[i * n..(i + 1) * n];
        let arow = &a.data()[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b.data()[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (gv, bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            da[i * k + p] = acc;
            let av = arow[p];
            if av != 0.0 {
                let dbrow = &mut db[p * n..(p + 1) * n];
                for (d, gv) in dbrow.iter_mut().zip(grow) {
                    *d += av * gv;
                }
            }
        }
    }
    Ok((Tensor::new(vec![m, k], da)?, Tensor::new(vec![k, n], db)?))
}

fn check_conv2d_shapes(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<()> {
    if input.rank() != 3 || kernel.rank() != 4 {
        return Err(Error::dim(format!(
            "conv2d expects input [C_in,H,W] and kernel [C_out,C_in,kH,kW], got {:?} / {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    if kernel.shape()[1] != input.shape()[0] {
        return Err(Error::dim(format!(
            "conv2d kernel C_in {} vs input channels {}",
            kernel.shape()[1],
            input.shape()[0]
        )));
    }
    if kernel.shape()[2] % 2 == 0 || kernel.shape()[3] % 2 == 0 {
        return Err(Error::dim("conv2d kernel extents must be odd"));
    }
    if let Some(b) = bias {
        if b.shape() != [kernel.shape()[0]] {
            return Err(Error::dim(format!(
                "conv2d bias shape {:?} vs C_out {}",
                b.shape(),
                kernel.shape()[0]
            )));
        }
    }
    Ok(())
}

fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    check_conv2d_shapes(input, kernel, bias)?;
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; cout * h * w];
    for co in 0..cout {
        let plane = &mut out[co * h * w..(co + 1) * h * w];
        if let Some(b) = bias {
            plane.fill(b.at(co));
        }
        for ci in 0..cin {
            let in_plane = &input.data()[ci * h * w..(ci + 1) * h * w];
            for dy in 0..kh {
                for dx in 0..kw {
                    let kv = kernel.at(kernel.idx4(co, ci, dy, dx));
                    if kv == 0.0 {
                        continue;
                    }
                    accumulate_shifted(plane, in_plane, h, w, dy as isize - ph as isize, dx as isize - pw as isize, kv);
                }
            }
        }
    }
    Tensor::new(vec![cout, h, w], out)
}

/// `out[y][x] += k * src[y+oy][x+ox]` over the in-range region.
#[inline]
fn accumulate_shifted(out: &mut [f64], src: &[f64], h: usize, w: usize, oy: isize, ox: isize, k: f64) {
    let y0 = (-oy).max(0) as usize;
    let y1 = ((h as isize - oy).min(h as isize)).max(0) as usize;
    let x0 = (-ox).max(0) as usize;
    let x1 = ((w as isize - ox).min(w as isize)).max(0) as usize;
    for y in y0..y1 {
        let sy = (y as isize + oy) as usize;
        let orow = &mut out[y * w + x0..y * w + x1];
        let srow = &src[sy * w + (x0 as isize + ox) as usize..sy * w + (x1 as isize + ox - 1) as usize + 1];
        for (o, s) in orow.iter_mut().zip(srow) {
            *o += k * s;
        }
    }
}

/// `acc += Σ out_grad[y][x] * src[y+oy][x+ox]` over the in-range region.
#[inline]
fn dot_shifted(gplane: &[f64], src: &[f64], h: usize, w: usize, oy: isize, ox: isize) -> f64 {
    let y0 = (-oy).max(0) as usize;
    let y1 = ((h as isize - oy).min(h as isize)).max(0) as usize;
    let x0 = (-ox).max(0) as usize;
    let x1 = ((w as isize - ox).min(w as isize)).max(0) as usize;
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = (y as isize + oy) as usize;
        let grow = &gplane[y * w + x0..y * w + x1];
        let srow = &src[sy * w + (x0 as isize + ox) as usize..sy * w + (x1 as isize + ox - 1) as usize + 1];
        for (g, s) in grow.iter().zip(srow) {
            acc += g * s;
        }
    }
    acc
}

fn conv2d_backward(input: &Tensor, kernel: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut dinput = vec![0.0; cin * h * w];
    let mut dkernel = vec![0.0; kernel.len()];
    let mut dbias = vec![0.0; cout];
    for co in 0..cout {
        let gplane = &g.data()[co * h * w..(co + 1) * h * w];
        dbias[co] = gplane.iter().sum();
        for ci in 0..cin {
            let in_plane = &input.data()[ci * h * w..(ci + 1) * h * w];
            let din_plane_off = ci * h * w;
            for dy in 0..kh {
                for dx in 0..kw {
                    let oy = dy as isize - ph as isize;
                    let ox = dx as isize - pw as isize;
                    dkernel[kernel.idx4(co, ci, dy, dx)] += dot_shifted(gplane, in_plane, h, w, oy, ox);
                    let kv = kernel.at(kernel.idx4(co, ci, dy, dx));
                    if kv != 0.0 {
                        // dinput[ci][y+oy][x+ox] += kv * g[co][y][x]: same
                        // shifted walk with source/destination swapped.
                        accumulate_shifted(
                            &mut dinput[din_plane_off..din_plane_off + h * w],
                            gplane,
                            h,
                            w,
                            -oy,
                            -ox,
                            kv,
                        );
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![cin, h, w], dinput)?,
        Tensor::new(kernel.shape().to_vec(), dkernel)?,
        Tensor::new(vec![cout], dbias)?,
    ))
}

fn check_conv3d_shapes(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<()> {
    if input.rank() != 4 || kernel.rank() != 5 {
        return Err(Error::dim(format!(
            "conv3d expects input [C_in,T,H,W] and kernel [C_out,C_in,kT,kH,kW], got {:?} / {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    if kernel.shape()[1] != input.shape()[0] {
        return Err(Error::dim(format!(
            "conv3d kernel C_in {} vs input channels {}",
            kernel.shape()[1],
            input.shape()[0]
        )));
    }
    if kernel.shape()[2..].iter().any(|&k| k % 2 == 0) {
        return Err(Error::dim("conv3d kernel extents must be odd"));
    }
    if let Some(b) = bias {
        if b.shape() != [kernel.shape()[0]] {
            return Err(Error::dim(format!(
                "conv3d bias shape {:?} vs C_out {}",
                b.shape(),
                kernel.shape()[0]
            )));
        }
    }
    Ok(())
}

fn conv3d_forward(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    check_conv3d_shapes(input, kernel, bias)?;
    let (cin, t, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (cout, kt, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[2],
        kernel.shape()[3],
        kernel.shape()[4],
    );
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let vol = t * h * w;
    let mut out = vec![0.0; cout * vol];
    for co in 0..cout {
        let block = &mut out[co * vol..(co + 1) * vol];
        if let Some(b) = bias {
            block.fill(b.at(co));
        }
        for ci in 0..cin {
            let in_block = &input.data()[ci * vol..(ci + 1) * vol];
            for dt in 0..kt {
                let ot = dt as isize - pt as isize;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let kidx = (((co * cin + ci) * kt + dt) * kh + dy) * kw + dx;
                        let kv = kernel.at(kidx);
                        if kv == 0.0 {
                            continue;
                        }
                        for ti in 0..t {
                            let si = ti as isize + ot;
                            if si < 0 || si >= t as isize {
                                continue;
                            }
                            accumulate_shifted(
                                &mut block[ti * h * w..(ti + 1) * h * w],
                                &in_block[si as usize * h * w..(si as usize + 1) * h * w],
                                h,
                                w,
                                dy as isize - ph as isize,
                                dx as isize - pw as isize,
                                kv,
                            );
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, t, h, w], out)
}

fn conv3d_backward(input: &Tensor, kernel: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (cin, t, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (cout, kt, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[2],
        kernel.shape()[3],
        kernel.shape()[4],
    );
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let vol = t * h * w;
    let mut dinput = vec![0.0; cin * vol];
    let mut dkernel = vec![0.0; kernel.len()];
    let mut dbias = vec![0.0; cout];
    for co in 0..cout {
        let gblock = &g.data()[co * vol..(co + 1) * vol];
        dbias[co] = gblock.iter().sum();
        for ci in 0..cin {
            let in_block = &input.data()[ci * vol..(ci + 1) * vol];
            let di_off = ci * vol;
            for dt in 0..kt {
                let ot = dt as isize - pt as isize;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let oy = dy as isize - ph as isize;
                        let ox = dx as isize - pw as isize;
                        let kidx = (((co * cin + ci) * kt + dt) * kh + dy) * kw + dx;
                        let mut kgrad = 0.0;
                        for ti in 0..t {
                            let si = ti as isize + ot;
                            if si < 0 || si >= t as isize {
                                continue;
                            }
                            kgrad += dot_shifted(
                                &gblock[ti * h * w..(ti + 1) * h * w],
                                &in_block[si as usize * h * w..(si as usize + 1) * h * w],
                                h,
                                w,
                                oy,
                                ox,
                            );
                        }
                        dkernel[kidx] += kgrad;
                        let kv = kernel.at(kidx);
                        if kv != 0.0 {
                            for ti in 0..t {
                                let si = ti as isize + ot;
                                if si < 0 || si >= t as isize {
                                    continue;
                                }
                                let dst = di_off + si as usize * h * w;
                                accumulate_shifted(
                                    &mut dinput[dst..dst + h * w],
                                    &gblock[ti * h * w..(ti + 1) * h * w],
                                    h,
                                    w,
                                    -oy,
                                    -ox,
                                    kv,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![cin, t, h, w], dinput)?,
        Tensor::new(kernel.shape().to_vec(), dkernel)?,
        Tensor::new(vec![cout], dbias)?,
    ))
}

/// Central-difference gradient of a scalar function of named parameters.
/// The independent oracle used by all gradient-fidelity tests; it never
/// touches the tape.
pub fn finite_diff_gradient<F>(
    f: &mut F,
    params: &std::collections::BTreeMap<String, Tensor>,
    eps: f64,
) -> Result<std::collections::BTreeMap<String, Tensor>>
where
    F: FnMut(&std::collections::BTreeMap<String, Tensor>) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::contract("finite_diff_gradient needs eps > 0"));
    }
    let mut work = params.clone();
    let mut out = std::collections::BTreeMap::new();
    let names: Vec<String> = params.keys().cloned().collect();
    for name in names {
        let len = params[&name].len();
        let mut grad = Tensor::zeros(params[&name].shape());
        for i in 0..len {
            let orig = params[&name].at(i);
            work.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let up = f(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let down = f(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            grad.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// Relative error with the gradient-check denominator convention
/// `max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
