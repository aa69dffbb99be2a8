use std::cell::{Ref, RefCell};
use std::fmt;

use super::ops::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};

/// Backward rule for a user-supplied op: maps the upstream gradient to one
/// gradient buffer per input (same length as that input).
pub type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    Custom {
        inputs: Vec<usize>,
        backward: BackwardFn,
    },
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        dims: ConvDims,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Gap {
        input: usize,
        channels: usize,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: Option<usize>,
    },
    Softmax(usize),
    LogSoftmax(usize),
    LogSumExp(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBroadcast {
        input: usize,
        scalar: usize,
    },
    Dot(usize, usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    ScaleChannels {
        input: usize,
        gates: usize,
    },
    Gather {
        input: usize,
        channels: usize,
        taps: Vec<[(usize, f64); 4]>,
    },
    L2Normalize {
        input: usize,
        norm: f64,
    },
    Stack(Vec<usize>),
    Select {
        input: usize,
        index: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order so `backward` can replay them in
/// reverse. One tape per forward pass; drop it to release the intermediates.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf; it participates in differentiation iff the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&self, tensor: Tensor) -> Var<'_> {
        let rg = tensor.requires_grad();
        let mut value = tensor;
        value.clear_grad();
        self.push(value, Op::Leaf, rg)
    }

    pub fn param(&self, tensor: Tensor) -> Var<'_> {
        self.leaf(tensor.with_grad(true))
    }

    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        self.leaf(tensor.with_grad(false))
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Records an op whose backward rule is supplied by the caller.
    pub fn custom<'t>(&'t self, inputs: &[Var<'t>], value: Tensor, backward: BackwardFn) -> Var<'t> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let rg = self.any_rg(&ids);
        self.push(value, Op::Custom { inputs: ids, backward }, rg)
    }

    /// Concatenates the flattened values of `parts` into one vector.
    pub fn stack<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::dim("stack", "no inputs"));
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let data: Vec<f64> = {
            let nodes = self.nodes.borrow();
            ids.iter().flat_map(|&i| nodes[i].value.data().iter().copied()).collect()
        };
        let rg = self.any_rg(&ids);
        Ok(self.push(Tensor::vector(data), Op::Stack(ids), rg))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn any_rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let n = self.value(output.id).numel();
        if n != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                output.shape()
            )));
        }
        self.backward_with_seed(output, &[1.0])
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `output`.
    pub fn backward_with_seed(&self, output: Var<'_>, seed: &[f64]) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = output.id;
        if seed.len() != nodes[root].value.numel() {
            return Err(Error::Shape {
                op: "backward",
                left: nodes[root].value.shape().to_vec(),
                right: vec![seed.len()],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(seed.to_vec());

        for id in (0..=root).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (id, node) in nodes.iter().enumerate().take(root + 1) {
            if node.requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: &[f64]) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| nodes[i].value.data();
    let rg = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Custom { inputs, backward } => {
            let parts = backward(g);
            for (&i, d) in inputs.iter().zip(parts.iter()) {
                accumulate(grads, nodes, i, d);
            }
        }
        Op::Conv2d {
            input,
            kernel,
            bias,
            dims,
        } => {
            let (gi, gk, gb) =
                ops::conv2d_backward(val(*input), val(*kernel), g, dims, rg(*input), rg(*kernel));
            if rg(*input) {
                accumulate(grads, nodes, *input, &gi);
            }
            if rg(*kernel) {
                accumulate(grads, nodes, *kernel, &gk);
            }
            accumulate(grads, nodes, *bias, &gb);
        }
        Op::MaxPool { input, argmax } => {
            let mut gi = vec![0.0; nodes[*input].value.numel()];
            for (&a, &gv) in argmax.iter().zip(g) {
                gi[a] += gv;
            }
            accumulate(grads, nodes, *input, &gi);
        }
        Op::Relu(x) => {
            let gi: Vec<f64> = val(*x)
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *x, &gi);
        }
        Op::Sigmoid(x) => {
            let gi: Vec<f64> = out
                .data()
                .iter()
                .zip(g)
                .map(|(&y, &gv)| gv * y * (1.0 - y))
                .collect();
            accumulate(grads, nodes, *x, &gi);
        }
        Op::Softplus(x) => {
            let gi: Vec<f64> = val(*x)
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| gv * ops::sigmoid(xv))
                .collect();
            accumulate(grads, nodes, *x, &gi);
        }
        Op::Gap { input, channels } => {
            let n = nodes[*input].value.numel();
            let hw = (n / channels) as f64;
            let gi: Vec<f64> = (0..n).map(|i| g[i % channels] / hw).collect();
            accumulate(grads, nodes, *input, &gi);
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let x = val(*input);
            let w = val(*weight);
            let din = x.len();
            if rg(*input) {
                let mut gi = vec![0.0; din];
                for (o, &gv) in g.iter().enumerate() {
                    let row = &w[o * din..(o + 1) * din];
                    for (a, &wv) in gi.iter_mut().zip(row) {
                        *a += gv * wv;
                    }
                }
                accumulate(grads, nodes, *input, &gi);
            }
            if rg(*weight) {
                let mut gw = vec![0.0; w.len()];
                for (o, &gv) in g.iter().enumerate() {
                    for (a, &xv) in gw[o * din..(o + 1) * din].iter_mut().zip(x) {
                        *a = gv * xv;
                    }
                }
                accumulate(grads, nodes, *weight, &gw);
            }
            if let Some(b) = bias {
                accumulate(grads, nodes, *b, g);
            }
        }
        Op::Softmax(x) => {
            let y = out.data();
            let dotp: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
            let gi: Vec<f64> = y.iter().zip(g).map(|(&yv, &gv)| yv * (gv - dotp)).collect();
            accumulate(grads, nodes, *x, &gi);
        }
        Op::LogSoftmax(x) => {
            let p = ops::softmax(val(*x));
            let total: f64 = g.iter().sum();
            let gi: Vec<f64> = p.iter().zip(g).map(|(&pv, &gv)| gv - pv * total).collect();
            accumulate(grads, nodes, *x, &gi);
        }
        Op::LogSumExp(x) => {
            let p = ops::softmax(val(*x));
            let gi: Vec<f64> = p.iter().map(|&pv| pv * g[0]).collect();
            accumulate(grads, nodes, *x, &gi);
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g);
            accumulate(grads, nodes, *b, g);
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g);
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            accumulate(grads, nodes, *b, &neg);
        }
        Op::Mul(a, b) => {
            let ga: Vec<f64> = val(*b).iter().zip(g).map(|(x, y)| x * y).collect();
            let gb: Vec<f64> = val(*a).iter().zip(g).map(|(x, y)| x * y).collect();
            accumulate(grads, nodes, *a, &ga);
            accumulate(grads, nodes, *b, &gb);
        }
        Op::Scale(x, c) => {
            let gi: Vec<f64> = g.iter().map(|v| v * c).collect();
            accumulate(grads, nodes, *x, &gi);
        }
        Op::AddBroadcast { input, scalar } => {
            accumulate(grads, nodes, *input, g);
            let s: f64 = g.iter().sum();
            accumulate(grads, nodes, *scalar, &[s]);
        }
        Op::Dot(a, b) => {
            let ga: Vec<f64> = val(*b).iter().map(|x| x * g[0]).collect();
            let gb: Vec<f64> = val(*a).iter().map(|x| x * g[0]).collect();
            accumulate(grads, nodes, *a, &ga);
            accumulate(grads, nodes, *b, &gb);
        }
        Op::Sum(x) => {
            let gi = vec![g[0]; nodes[*x].value.numel()];
            accumulate(grads, nodes, *x, &gi);
        }
        Op::Mean(x) => {
            let n = nodes[*x].value.numel();
            let gi = vec![g[0] / n as f64; n];
            accumulate(grads, nodes, *x, &gi);
        }
        Op::Reshape(x) => accumulate(grads, nodes, *x, g),
        Op::ScaleChannels { input, gates } => {
            let f = val(*input);
            let a = val(*gates);
            let c = a.len();
            if rg(*input) {
                let gi: Vec<f64> = g.iter().enumerate().map(|(i, &gv)| gv * a[i % c]).collect();
                accumulate(grads, nodes, *input, &gi);
            }
            if rg(*gates) {
                let mut ga = vec![0.0; c];
                for (i, (&gv, &fv)) in g.iter().zip(f).enumerate() {
                    ga[i % c] += gv * fv;
                }
                accumulate(grads, nodes, *gates, &ga);
            }
        }
        Op::Gather {
            input,
            channels,
            taps,
        } => {
            let mut gi = vec![0.0; nodes[*input].value.numel()];
            for (o, cell_taps) in taps.iter().enumerate() {
                for &(cell, wgt) in cell_taps {
                    if wgt == 0.0 {
                        continue;
                    }
                    for ch in 0..*channels {
                        gi[cell * channels + ch] += wgt * g[o * channels + ch];
                    }
                }
            }
            accumulate(grads, nodes, *input, &gi);
        }
        Op::L2Normalize { input, norm } => {
            let y = out.data();
            let dotp: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
            let gi: Vec<f64> = y
                .iter()
                .zip(g)
                .map(|(&yv, &gv)| (gv - yv * dotp) / norm)
                .collect();
            accumulate(grads, nodes, *input, &gi);
        }
        Op::Stack(ids) => {
            let mut off = 0;
            for &i in ids {
                let n = nodes[i].value.numel();
                accumulate(grads, nodes, i, &g[off..off + n]);
                off += n;
            }
        }
        Op::Select { input, index } => {
            let mut gi = vec![0.0; nodes[*input].value.numel()];
            gi[*index] = g[0];
            accumulate(grads, nodes, *input, &gi);
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.value(self.id).numel()
    }

    /// A detached copy of the recorded value.
    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone().with_grad(false)
    }

    pub fn data(&self) -> Vec<f64> {
        self.tape.value(self.id).data().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.value(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.tape.value(self.id);
        Tensor::new(v.shape(), v.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    fn check_same_shape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        self.same_tape(other);
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::Shape {
                op,
                left: a,
                right: b,
            });
        }
        Ok(())
    }

    /// Valid (unpadded) 2-D convolution of an `H×W×Cin` map with a
    /// `k×k×Cin×Cout` kernel plus a per-channel bias.
    pub fn conv2d(&self, kernel: Var<'t>, bias: Var<'t>, stride: usize) -> Result<Var<'t>> {
        self.same_tape(&kernel);
        self.same_tape(&bias);
        let (xs, ks, bs) = (self.shape(), kernel.shape(), bias.shape());
        if xs.len() != 3 || ks.len() != 4 || ks[0] != ks[1] || ks[2] != xs[2] {
            return Err(Error::Shape {
                op: "conv2d",
                left: xs,
                right: ks,
            });
        }
        if bs.iter().product::<usize>() != ks[3] {
            return Err(Error::Shape {
                op: "conv2d bias",
                left: ks,
                right: bs,
            });
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        let k = ks[0];
        if xs[0] < k || xs[1] < k {
            return Err(Error::dim(
                "conv2d",
                format!("input {xs:?} smaller than kernel {ks:?}"),
            ));
        }
        let dims = ConvDims {
            w: xs[1],
            cin: xs[2],
            k,
            cout: ks[3],
            stride,
            ho: (xs[0] - k) / stride + 1,
            wo: (xs[1] - k) / stride + 1,
        };
        let out = {
            let t = self.tape;
            ops::conv2d_forward(
                t.value(self.id).data(),
                t.value(kernel.id).data(),
                t.value(bias.id).data(),
                &dims,
            )
        };
        let value = Tensor::new(&[dims.ho, dims.wo, dims.cout], out)?;
        let rg = self.tape.any_rg(&[self.id, kernel.id, bias.id]);
        Ok(self.tape.push(
            value,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                bias: bias.id,
                dims,
            },
            rg,
        ))
    }

    pub fn max_pool2d(&self, window: usize, stride: usize) -> Result<Var<'t>> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(Error::dim("max_pool2d", format!("expected H×W×C, got {xs:?}")));
        }
        if window == 0 || stride == 0 || window > xs[0] || window > xs[1] {
            return Err(Error::dim(
                "max_pool2d",
                format!("window {window} stride {stride} on {xs:?}"),
            ));
        }
        let (out, argmax, ho, wo) = ops::max_pool_forward(
            self.tape.value(self.id).data(),
            xs[0],
            xs[1],
            xs[2],
            window,
            stride,
        );
        let value = Tensor::new(&[ho, wo, xs[2]], out)?;
        Ok(self.unary(
            value,
            Op::MaxPool {
                input: self.id,
                argmax,
            },
        ))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.map(ops::sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<'t> {
        let v = self.map(ops::softplus);
        self.unary(v, Op::Softplus(self.id))
    }

    /// Channel-wise mean over all spatial positions: `H×W×C -> C`.
    pub fn global_avg_pool(&self) -> Result<Var<'t>> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(Error::dim("global_avg_pool", format!("expected H×W×C, got {xs:?}")));
        }
        let c = xs[2];
        let hw = (xs[0] * xs[1]) as f64;
        let mut out = vec![0.0; c];
        for (i, &v) in self.tape.value(self.id).data().iter().enumerate() {
            out[i % c] += v;
        }
        out.iter_mut().for_each(|v| *v /= hw);
        Ok(self.unary(
            Tensor::vector(out),
            Op::Gap {
                input: self.id,
                channels: c,
            },
        ))
    }

    /// `weight · self (+ bias)` with `weight` of shape `Dout×Din`.
    pub fn linear(&self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        self.same_tape(&weight);
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] {
            return Err(Error::Shape {
                op: "fully_connected",
                left: ws,
                right: xs,
            });
        }
        let (dout, din) = (ws[0], ws[1]);
        if let Some(b) = &bias {
            self.same_tape(b);
            if b.numel() != dout {
                return Err(Error::Shape {
                    op: "fully_connected bias",
                    left: vec![dout],
                    right: b.shape(),
                });
            }
        }
        let out: Vec<f64> = {
            let x = self.tape.value(self.id);
            let w = self.tape.value(weight.id);
            let bv = bias.map(|b| self.tape.value(b.id).data().to_vec());
            (0..dout)
                .map(|o| {
                    let row = &w.data()[o * din..(o + 1) * din];
                    let s: f64 = row.iter().zip(x.data()).map(|(a, b)| a * b).sum();
                    s + bv.as_ref().map_or(0.0, |b| b[o])
                })
                .collect()
        };
        let mut ids = vec![self.id, weight.id];
        if let Some(b) = &bias {
            ids.push(b.id);
        }
        let rg = self.tape.any_rg(&ids);
        Ok(self.tape.push(
            Tensor::vector(out),
            Op::Linear {
                input: self.id,
                weight: weight.id,
                bias: bias.map(|b| b.id),
            },
            rg,
        ))
    }

    pub fn fully_connected(&self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.linear(weight, Some(bias))
    }

    fn check_vector(&self, op: &'static str) -> Result<()> {
        let s = self.shape();
        if s.len() != 1 {
            return Err(Error::dim(op, format!("expected a vector, got {s:?}")));
        }
        Ok(())
    }

    pub fn softmax(&self) -> Result<Var<'t>> {
        self.check_vector("softmax")?;
        let v = Tensor::vector(ops::softmax(self.tape.value(self.id).data()));
        Ok(self.unary(v, Op::Softmax(self.id)))
    }

    pub fn log_softmax(&self) -> Result<Var<'t>> {
        self.check_vector("log_softmax")?;
        let v = {
            let x = self.tape.value(self.id);
            let lse = ops::log_sum_exp(x.data());
            Tensor::vector(x.data().iter().map(|&a| a - lse).collect())
        };
        Ok(self.unary(v, Op::LogSoftmax(self.id)))
    }

    /// `log Σ e^{x_i}` over all elements, max-shifted.
    pub fn log_sum_exp(&self) -> Var<'t> {
        let v = ops::log_sum_exp(self.tape.value(self.id).data());
        self.unary(Tensor::scalar(v), Op::LogSumExp(self.id))
    }

    fn zip_with(&self, other: &Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other, op)?;
        let a = self.tape.value(self.id);
        let b = self.tape.value(other.id);
        Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.any_rg(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(&other, "add", |a, b| a + b)?;
        Ok(self.binary(&other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(&other, "sub", |a, b| a - b)?;
        Ok(self.binary(&other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(&other, "mul", |a, b| a * b)?;
        Ok(self.binary(&other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.map(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Adds a one-element var to every element.
    pub fn add_scalar(&self, scalar: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&scalar);
        if scalar.numel() != 1 {
            return Err(Error::Shape {
                op: "add_scalar",
                left: self.shape(),
                right: scalar.shape(),
            });
        }
        let s = scalar.item();
        let v = self.map(|x| x + s);
        Ok(self.binary(
            &scalar,
            v,
            Op::AddBroadcast {
                input: self.id,
                scalar: scalar.id,
            },
        ))
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same_shape(&other, "dot")?;
        let s: f64 = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        Ok(self.binary(&other, Tensor::scalar(s), Op::Dot(self.id, other.id)))
    }

    pub fn sum(&self) -> Var<'t> {
        let s: f64 = self.tape.value(self.id).data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let v = self.tape.value(self.id);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        drop(v);
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Multiplies channel `l` of an `H×W×C` map by `gates[l]`.
    pub fn scale_channels(&self, gates: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&gates);
        let (fs, gs) = (self.shape(), gates.shape());
        if fs.len() != 3 || gs != [fs[2]] {
            return Err(Error::Shape {
                op: "scale_channels",
                left: fs,
                right: gs,
            });
        }
        let c = fs[2];
        let v = {
            let f = self.tape.value(self.id);
            let a = self.tape.value(gates.id);
            let data = f.data().iter().enumerate().map(|(i, &x)| x * a.data()[i % c]).collect();
            Tensor::new(&fs, data)?
        };
        Ok(self.binary(
            &gates,
            v,
            Op::ScaleChannels {
                input: self.id,
                gates: gates.id,
            },
        ))
    }

    /// Bilinear ROI-Align with one sample at each bin center.
    ///
    /// The box `[x0, x1) × [y0, y1)` is in continuous feature coordinates where
    /// cell `(r, c)` spans `[c, c+1) × [r, r+1)`, so its center sits at
    /// `(c + 0.5, r + 0.5)`. Samples falling past the outermost cell centers are
    /// clamped to the border.
    pub fn roi_align(&self, x0: f64, y0: f64, x1: f64, y1: f64, out_side: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::dim("roi_align", format!("expected H×W×C, got {s:?}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        if !(x1 > x0 && y1 > y0) || out_side == 0 {
            return Err(Error::contract(format!(
                "roi_align: degenerate box ({x0}, {y0})-({x1}, {y1})"
            )));
        }
        if x1 <= 0.0 || y1 <= 0.0 || x0 >= w as f64 || y0 >= h as f64 {
            return Err(Error::contract(format!(
                "roi_align: box ({x0}, {y0})-({x1}, {y1}) outside {h}×{w} grid"
            )));
        }
        let bw = (x1 - x0) / out_side as f64;
        let bh = (y1 - y0) / out_side as f64;
        let axis_taps = |center: f64, n: usize| -> [(usize, f64); 2] {
            let u = (center - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = (u.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let t = u - lo as f64;
            [(lo, 1.0 - t), (hi, t)]
        };
        let mut taps = Vec::with_capacity(out_side * out_side);
        for i in 0..out_side {
            let ry = axis_taps(y0 + (i as f64 + 0.5) * bh, h);
            for j in 0..out_side {
                let rx = axis_taps(x0 + (j as f64 + 0.5) * bw, w);
                taps.push([
                    (ry[0].0 * w + rx[0].0, ry[0].1 * rx[0].1),
                    (ry[0].0 * w + rx[1].0, ry[0].1 * rx[1].1),
                    (ry[1].0 * w + rx[0].0, ry[1].1 * rx[0].1),
                    (ry[1].0 * w + rx[1].0, ry[1].1 * rx[1].1),
                ]);
            }
        }
        let data = {
            let f = self.tape.value(self.id);
            let fd = f.data();
            let mut out = vec![0.0; out_side * out_side * c];
            for (o, cell_taps) in taps.iter().enumerate() {
                for &(cell, wgt) in cell_taps {
                    if wgt == 0.0 {
                        continue;
                    }
                    for ch in 0..c {
                        out[o * c + ch] += wgt * fd[cell * c + ch];
                    }
                }
            }
            out
        };
        let value = Tensor::new(&[out_side, out_side, c], data)?;
        Ok(self.unary(
            value,
            Op::Gather {
                input: self.id,
                channels: c,
                taps,
            },
        ))
    }

    /// Scales to unit Euclidean length; an all-zero input is a contract error.
    pub fn l2_normalize(&self) -> Result<Var<'t>> {
        let v = self.value();
        let norm = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::contract("cannot normalize a zero vector"));
        }
        let out = Tensor::new(v.shape(), v.data().iter().map(|x| x / norm).collect())?;
        Ok(self.unary(
            out,
            Op::L2Normalize {
                input: self.id,
                norm,
            },
        ))
    }

    /// One element of the flattened tensor, as a scalar.
    pub fn select(&self, index: usize) -> Result<Var<'t>> {
        let n = self.numel();
        if index >= n {
            return Err(Error::contract(format!("select index {index} out of range {n}")));
        }
        let v = self.tape.value(self.id).data()[index];
        Ok(self.unary(
            Tensor::scalar(v),
            Op::Select {
                input: self.id,
                index,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let g = tape.backward(w.sum()).unwrap();
        assert_eq!(g.get(w).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn self_dot_gradient_is_twice_input() {
        let tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![0.5, -1.5, 2.0]));
        let g = tape.backward(w.dot(w).unwrap()).unwrap();
        assert_eq!(g.get(w).unwrap(), &[1.0, -3.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(w.relu()), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_params_get_zero_grad() {
        let tape = Tape::new();
        let b = tape.param(Tensor::vector(vec![3.0]));
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let g = tape.backward(a.sum()).unwrap();
        assert_eq!(g.get(b).unwrap(), &[0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let w = tape.param(Tensor::vector(vec![3.0, 4.0]));
        let g = tape.backward(c.dot(w).unwrap()).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().data(), vec![0.0, 0.0, 2.0]);
        let z = tape.constant(Tensor::vector(vec![0.0, 3f64.ln()]));
        let s = z.sigmoid().data();
        assert_eq!(s[0], 0.5);
        assert!((s[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.0, 1.0]));
        let g = tape.backward(x.relu().sum()).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_closed_forms() {
        let tape = Tape::new();
        let u = tape.constant(Tensor::vector(vec![7.0; 4]));
        assert_eq!(u.softmax().unwrap().data(), vec![0.25; 4]);
        let x = tape.constant(Tensor::vector(vec![0.0, 3f64.ln()]));
        let p = x.softmax().unwrap().data();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn max_pool_picks_window_max() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(x.max_pool2d(2, 2).unwrap().data(), vec![4.0]);
        assert!(x.max_pool2d(3, 1).is_err());
    }

    #[test]
    fn max_pool_tie_routes_gradient_to_first_cell() {
        let tape = Tape::new();
        let x = tape.param(Tensor::full(&[2, 2, 1], 1.0));
        let y = x.max_pool2d(2, 2).unwrap();
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect();
        let x = tape.constant(Tensor::new(&[3, 4, 1], data.clone()).unwrap());
        let k = tape.constant(Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0]));
        assert_eq!(x.conv2d(k, b, 1).unwrap().data(), data);
    }

    #[test]
    fn conv_zero_input_passes_bias() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[4, 4, 2]));
        let k = tape.constant(Tensor::full(&[3, 3, 2, 3], 0.3));
        let b = tape.constant(Tensor::vector(vec![0.7; 3]));
        let y = x.conv2d(k, b, 1).unwrap();
        assert_eq!(y.shape(), vec![2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[4, 4, 2]));
        let k = tape.constant(Tensor::zeros(&[3, 3, 3, 1]));
        let b = tape.constant(Tensor::vector(vec![0.0]));
        let err = x.conv2d(k, b, 1).unwrap_err().to_string();
        assert!(err.contains("[4, 4, 2]") && err.contains("[3, 3, 3, 1]"), "{err}");
    }

    #[test]
    fn gap_of_single_cell_is_identity() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 3], vec![1.0, -2.0, 5.0]).unwrap());
        assert_eq!(x.global_avg_pool().unwrap().data(), vec![1.0, -2.0, 5.0]);
    }

    #[test]
    fn fully_connected_identity_and_bias() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let eye = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let zb = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(x.fully_connected(eye, zb).unwrap().data(), vec![1.0, 2.0]);
        let zw = tape.constant(Tensor::zeros(&[3, 2]));
        let b = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]));
        assert_eq!(x.fully_connected(zw, b).unwrap().data(), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn l2_normalize_rejects_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        assert!(x.l2_normalize().is_err());
    }

    #[test]
    fn roi_align_rejects_degenerate_box() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[4, 4, 1]));
        assert!(x.roi_align(1.0, 1.0, 1.0, 3.0, 2).is_err());
    }
}
