use super::{Result, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for reporting and for gradient fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Matmul,
    Transpose,
    Conv2d,
    LeakyRelu,
    Sigmoid,
    Softplus,
    Tanh,
    Mean,
    Sum,
    Reshape,
    Select,
    Upsample2x,
}

impl OpKind {
    /// Every differentiable primitive.
    pub const PRIMITIVES: [OpKind; 16] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Matmul,
        OpKind::Transpose,
        OpKind::Conv2d,
        OpKind::LeakyRelu,
        OpKind::Sigmoid,
        OpKind::Softplus,
        OpKind::Tanh,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::Reshape,
        OpKind::Select,
        OpKind::Upsample2x,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Matmul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Conv2d => "conv2d",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softplus => "softplus",
            OpKind::Tanh => "tanh",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::Reshape => "reshape",
            OpKind::Select => "select",
            OpKind::Upsample2x => "upsample2x",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::PRIMITIVES.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary { kind: Binary, a: usize, b: usize },
    Scale { x: usize, c: f64 },
    Matmul { a: usize, b: usize },
    Transpose { x: usize },
    Conv2d(ConvArgs),
    LeakyRelu { x: usize, slope: f64 },
    Sigmoid { x: usize },
    Softplus { x: usize },
    Tanh { x: usize },
    Mean { x: usize },
    Sum { x: usize },
    Reshape { x: usize },
    Select { x: usize, rows: Vec<usize>, cols: Option<Vec<usize>> },
    Upsample2x { x: usize },
}

#[derive(Debug, Clone, Copy)]
struct ConvArgs {
    input: usize,
    kernel: usize,
    bias: usize,
    stride: usize,
    pad: usize,
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Binary { kind: Binary::Add, .. } => OpKind::Add,
            Op::Binary { kind: Binary::Sub, .. } => OpKind::Sub,
            Op::Binary { kind: Binary::Mul, .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::Matmul { .. } => OpKind::Matmul,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Conv2d(_) => OpKind::Conv2d,
            Op::LeakyRelu { .. } => OpKind::LeakyRelu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Softplus { .. } => OpKind::Softplus,
            Op::Tanh { .. } => OpKind::Tanh,
            Op::Mean { .. } => OpKind::Mean,
            Op::Sum { .. } => OpKind::Sum,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Select { .. } => OpKind::Select,
            Op::Upsample2x { .. } => OpKind::Upsample2x,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation record. Nodes are appended in execution order, so the node
/// list is always a valid topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
    fault: Option<OpKind>,
}

fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if k > padded || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Output shape of an elementwise binary op. The smaller operand may be
/// broadcast across the leading (batch) extent of the larger one.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let fits = |big: &[usize], small: &[usize]| {
        !big.is_empty()
            && (small == &big[1..] || (small.len() == big.len() && small[0] == 1 && small[1..] == big[1..]))
    };
    if fits(a, b) {
        Ok(a.to_vec())
    } else if fits(b, a) {
        Ok(b.to_vec())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose backward pass doubles every gradient contribution of
    /// `kind`. Only used to prove the gradient checker catches faults.
    pub fn with_fault(kind: OpKind) -> Self {
        Self {
            fault: Some(kind),
            ..Self::default()
        }
    }

    pub fn fault(&self) -> Option<OpKind> {
        self.fault
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf. It takes part in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t, Op::Leaf, needs_grad)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        t.grad = None;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient left on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.grad.take()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    fn data(&self, v: usize) -> &[f64] {
        self.nodes[v].value.data()
    }

    fn binary(&mut self, kind: Binary, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let (ad, bd) = (self.data(a.0), self.data(b.0));
        let len: usize = shape.iter().product();
        let (na, nb) = (ad.len(), bd.len());
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let (x, y) = (ad[i % na], bd[i % nb]);
            out.push(match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            });
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Binary { kind, a: a.0, b: b.0 },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, "mul", a, b)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = &self.nodes[x.0].value;
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * c).collect()).unwrap();
        let needs = self.needs(x.0);
        self.push(out, Op::Scale { x: x.0, c }, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a.0), self.data(b.0), m, k, p);
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            Tensor::new(&[m, p], out)?,
            Op::Matmul { a: a.0, b: b.0 },
            needs,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("expected a matrix, got shape {s:?}"),
            });
        }
        let out = transpose_raw(self.data(x.0), s[0], s[1]);
        let needs = self.needs(x.0);
        Ok(self.push(Tensor::new(&[s[1], s[0]], out)?, Op::Transpose { x: x.0 }, needs))
    }

    /// 2-D cross-correlation over `[B, I, H, W]` with kernel `[O, I, k, k]`
    /// and per-output-channel bias `[O]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (si, sk, sb) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if si.len() != 4 || sk.len() != 4 || sk[2] != sk[3] {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("expected input [B,I,H,W] and kernel [O,I,k,k], got {si:?} and {sk:?}"),
            });
        }
        if si[1] != sk[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: si.to_vec(),
                rhs: sk.to_vec(),
            });
        }
        if sb != [sk[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: sk.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let k = sk[2];
        let (Some(oh), Some(ow)) = (
            conv_out_extent(si[2], k, stride, pad),
            conv_out_extent(si[3], k, stride, pad),
        ) else {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel {k} with stride {stride}, pad {pad} does not fit input {si:?}"),
            });
        };
        let geo = ConvGeometry {
            batch: si[0],
            cin: si[1],
            h: si[2],
            w: si[3],
            cout: sk[0],
            k,
            stride,
            pad,
            oh,
            ow,
        };
        let out = geo.forward(self.data(input.0), self.data(kernel.0), self.data(bias.0));
        let needs = self.needs(input.0) || self.needs(kernel.0) || self.needs(bias.0);
        Ok(self.push(
            Tensor::new(&[geo.batch, geo.cout, oh, ow], out)?,
            Op::Conv2d(ConvArgs {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                stride,
                pad,
            }),
            needs,
        ))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[x.0].value;
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).unwrap();
        let needs = self.needs(x.0);
        self.push(out, op, needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(TensorError::Invalid {
                op: "leaky_relu",
                msg: format!("slope {slope} outside [0, 1)"),
            });
        }
        Ok(self.unary(x, Op::LeakyRelu { x: x.0, slope }, |v| if v > 0.0 { v } else { slope * v }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid { x: x.0 }, sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus { x: x.0 }, softplus)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh { x: x.0 }, f64::tanh)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x.0);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let needs = self.needs(x.0);
        self.push(Tensor::scalar(m), Op::Mean { x: x.0 }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x.0).iter().sum::<f64>();
        let needs = self.needs(x.0);
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.nodes[x.0].value.clone();
        let mut out = t.reshape(shape)?;
        out.requires_grad = false;
        out.grad = None;
        let needs = self.needs(x.0);
        Ok(self.push(out, Op::Reshape { x: x.0 }, needs))
    }

    /// Selects entries along the first axis (and optionally the second).
    /// The result for `[A, B, ...]` is `[|rows|, |cols|, ...]`.
    pub fn select(&mut self, x: Var, rows: &[usize], cols: Option<&[usize]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if rows.is_empty() || cols.map_or(false, |c| c.is_empty()) {
            return Err(TensorError::Invalid {
                op: "select",
                msg: "empty selection".into(),
            });
        }
        if cols.is_some() && shape.len() < 2 {
            return Err(TensorError::Invalid {
                op: "select",
                msg: format!("column selection on shape {shape:?}"),
            });
        }
        for &r in rows {
            if r >= shape[0] {
                return Err(TensorError::IndexOutOfRange {
                    op: "select",
                    index: r,
                    extent: shape[0],
                });
            }
        }
        if let Some(cols) = cols {
            for &c in cols {
                if c >= shape[1] {
                    return Err(TensorError::IndexOutOfRange {
                        op: "select",
                        index: c,
                        extent: shape[1],
                    });
                }
            }
        }
        let src = self.data(x.0);
        let mut out_shape = shape.clone();
        out_shape[0] = rows.len();
        let data = match cols {
            None => {
                let row: usize = shape[1..].iter().product();
                let mut data = Vec::with_capacity(rows.len() * row);
                for &r in rows {
                    data.extend_from_slice(&src[r * row..(r + 1) * row]);
                }
                data
            }
            Some(cols) => {
                out_shape[1] = cols.len();
                let inner: usize = shape[2..].iter().product();
                let row = shape[1] * inner;
                let mut data = Vec::with_capacity(rows.len() * cols.len() * inner);
                for &r in rows {
                    for &c in cols {
                        let at = r * row + c * inner;
                        data.extend_from_slice(&src[at..at + inner]);
                    }
                }
                data
            }
        };
        let needs = self.needs(x.0);
        Ok(self.push(
            Tensor::new(&out_shape, data)?,
            Op::Select {
                x: x.0,
                rows: rows.to_vec(),
                cols: cols.map(<[usize]>::to_vec),
            },
            needs,
        ))
    }

    /// Nearest-neighbour 2x spatial upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TensorError::Invalid {
                op: "upsample2x",
                msg: format!("expected [B,C,H,W], got {s:?}"),
            });
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let src = self.data(x.0);
        let mut out = Vec::with_capacity(planes * 4 * h * w);
        for p in 0..planes {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out.push(plane[(y / 2) * w + xx / 2]);
                }
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(
            Tensor::new(&[s[0], s[1], 2 * h, 2 * w], out)?,
            Op::Upsample2x { x: x.0 },
            needs,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Leaves that require grad end up
    /// with their accumulated gradient; a graph supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        self.backward_with(loss, &[1.0])
    }

    /// Vector-Jacobian product: reverse sweep from `output` seeded with the
    /// cotangent `seed` (same length as `output`).
    pub fn backward_with(&mut self, output: Var, seed: &[f64]) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        let root = &self.nodes[output.0];
        if seed.len() != root.value.len() {
            return Err(TensorError::ShapeMismatch {
                op: "backward_with",
                lhs: root.value.shape().to_vec(),
                rhs: vec![seed.len()],
            });
        }
        if !root.needs_grad {
            return Err(TensorError::Detached);
        }
        self.backward_done = true;
        let loss = output;

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(seed.to_vec());
        let mut leaf_grads = Vec::new();

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(mut g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                leaf_grads.push((idx, g));
                continue;
            }
            if self.fault == Some(node.op.kind()) {
                g.iter_mut().for_each(|v| *v *= 2.0);
            }
            self.propagate(idx, &g, &mut grads);
        }

        for (idx, g) in leaf_grads {
            let t = &mut self.nodes[idx].value;
            match &mut t.grad {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, v)| *e += v),
                None => t.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => unreachable!(),
            &Op::Binary { kind, a, b } => {
                let (ad, bd) = (self.data(a), self.data(b));
                let (na, nb) = (ad.len(), bd.len());
                if self.needs(a) {
                    let mut ga = vec![0.0; na];
                    for (i, &gi) in g.iter().enumerate() {
                        ga[i % na] += match kind {
                            Binary::Add | Binary::Sub => gi,
                            Binary::Mul => gi * bd[i % nb],
                        };
                    }
                    accumulate(&mut grads[a], ga);
                }
                if self.needs(b) {
                    let mut gb = vec![0.0; nb];
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % nb] += match kind {
                            Binary::Add => gi,
                            Binary::Sub => -gi,
                            Binary::Mul => gi * ad[i % na],
                        };
                    }
                    accumulate(&mut grads[b], gb);
                }
            }
            &Op::Scale { x, c } => {
                accumulate(&mut grads[x], g.iter().map(|v| v * c).collect());
            }
            &Op::Matmul { a, b } => {
                let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
                let (m, k, p) = (sa[0], sa[1], sb[1]);
                if self.needs(a) {
                    // g [m x p] . b^T [p x k]
                    let bt = transpose_raw(self.data(b), k, p);
                    accumulate(&mut grads[a], matmul_raw(g, &bt, m, p, k));
                }
                if self.needs(b) {
                    // a^T [k x m] . g [m x p]
                    let at = transpose_raw(self.data(a), m, k);
                    accumulate(&mut grads[b], matmul_raw(&at, g, k, m, p));
                }
            }
            &Op::Transpose { x } => {
                let s = self.nodes[x].value.shape();
                accumulate(&mut grads[x], transpose_raw(g, s[1], s[0]));
            }
            Op::Conv2d(args) => {
                let si = self.nodes[args.input].value.shape();
                let sk = self.nodes[args.kernel].value.shape();
                let so = node.value.shape();
                let geo = ConvGeometry {
                    batch: si[0],
                    cin: si[1],
                    h: si[2],
                    w: si[3],
                    cout: sk[0],
                    k: sk[2],
                    stride: args.stride,
                    pad: args.pad,
                    oh: so[2],
                    ow: so[3],
                };
                let (gi, gk, gb) = geo.backward(
                    self.data(args.input),
                    self.data(args.kernel),
                    g,
                    self.needs(args.input),
                    self.needs(args.kernel),
                    self.needs(args.bias),
                );
                if let Some(gi) = gi {
                    accumulate(&mut grads[args.input], gi);
                }
                if let Some(gk) = gk {
                    accumulate(&mut grads[args.kernel], gk);
                }
                if let Some(gb) = gb {
                    accumulate(&mut grads[args.bias], gb);
                }
            }
            &Op::LeakyRelu { x, slope } => {
                let xd = self.data(x);
                let gx = g
                    .iter()
                    .zip(xd)
                    .map(|(&gi, &v)| if v > 0.0 { gi } else { slope * gi })
                    .collect();
                accumulate(&mut grads[x], gx);
            }
            &Op::Sigmoid { x } => {
                let y = node.value.data();
                let gx = g.iter().zip(y).map(|(&gi, &s)| gi * s * (1.0 - s)).collect();
                accumulate(&mut grads[x], gx);
            }
            &Op::Softplus { x } => {
                let xd = self.data(x);
                let gx = g.iter().zip(xd).map(|(&gi, &v)| gi * sigmoid(v)).collect();
                accumulate(&mut grads[x], gx);
            }
            &Op::Tanh { x } => {
                let y = node.value.data();
                let gx = g.iter().zip(y).map(|(&gi, &t)| gi * (1.0 - t * t)).collect();
                accumulate(&mut grads[x], gx);
            }
            &Op::Mean { x } => {
                let n = self.data(x).len();
                accumulate(&mut grads[x], vec![g[0] / n as f64; n]);
            }
            &Op::Sum { x } => {
                let n = self.data(x).len();
                accumulate(&mut grads[x], vec![g[0]; n]);
            }
            &Op::Reshape { x } => {
                accumulate(&mut grads[x], g.to_vec());
            }
            Op::Select { x, rows, cols } => {
                let shape = self.nodes[*x].value.shape();
                let mut gx = vec![0.0; self.data(*x).len()];
                match cols {
                    None => {
                        let row: usize = shape[1..].iter().product();
                        for (j, &r) in rows.iter().enumerate() {
                            for (dst, src) in gx[r * row..(r + 1) * row].iter_mut().zip(&g[j * row..]) {
                                *dst += src;
                            }
                        }
                    }
                    Some(cols) => {
                        let inner: usize = shape[2..].iter().product();
                        let row = shape[1] * inner;
                        let mut at_g = 0;
                        for &r in rows {
                            for &c in cols {
                                let at = r * row + c * inner;
                                for (dst, src) in gx[at..at + inner].iter_mut().zip(&g[at_g..at_g + inner]) {
                                    *dst += src;
                                }
                                at_g += inner;
                            }
                        }
                    }
                }
                accumulate(&mut grads[*x], gx);
            }
            &Op::Upsample2x { x } => {
                let s = self.nodes[x].value.shape();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    let gp = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            gx[p * h * w + (y / 2) * w + xx / 2] += gp[y * 2 * w + xx];
                        }
                    }
                }
                accumulate(&mut grads[x], gx);
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(v))` without overflow for large `|v|`.
pub(crate) fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn transpose_raw(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// `[m x k] . [k x p]`, accumulating over `k` in ascending order.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for l in 0..k {
            let av = a[i * k + l];
            let brow = &b[l * p..(l + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    /// Input coordinate for output position `o` and kernel tap `t`, if inside.
    #[inline]
    fn tap(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn forward(&self, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
        let g = *self;
        let mut out = Vec::with_capacity(g.batch * g.cout * g.oh * g.ow);
        for b in 0..g.batch {
            for o in 0..g.cout {
                for y in 0..g.oh {
                    for x in 0..g.ow {
                        let mut acc = 0.0;
                        for i in 0..g.cin {
                            let plane = &input[(b * g.cin + i) * g.h * g.w..];
                            let taps = &kernel[(o * g.cin + i) * g.k * g.k..];
                            for ky in 0..g.k {
                                let Some(iy) = g.tap(y, ky, g.h) else { continue };
                                for kx in 0..g.k {
                                    let Some(ix) = g.tap(x, kx, g.w) else { continue };
                                    acc += plane[iy * g.w + ix] * taps[ky * g.k + kx];
                                }
                            }
                        }
                        out.push(acc + bias[o]);
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::type_complexity)]
    fn backward(
        &self,
        input: &[f64],
        kernel: &[f64],
        grad_out: &[f64],
        want_input: bool,
        want_kernel: bool,
        want_bias: bool,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
        let g = *self;
        let mut gi = want_input.then(|| vec![0.0; input.len()]);
        let mut gk = want_kernel.then(|| vec![0.0; kernel.len()]);
        let mut gb = want_bias.then(|| vec![0.0; g.cout]);
        for b in 0..g.batch {
            for o in 0..g.cout {
                for y in 0..g.oh {
                    for x in 0..g.ow {
                        let go = grad_out[((b * g.cout + o) * g.oh + y) * g.ow + x];
                        if let Some(gb) = gb.as_mut() {
                            gb[o] += go;
                        }
                        for i in 0..g.cin {
                            let pbase = (b * g.cin + i) * g.h * g.w;
                            let kbase = (o * g.cin + i) * g.k * g.k;
                            for ky in 0..g.k {
                                let Some(iy) = g.tap(y, ky, g.h) else { continue };
                                for kx in 0..g.k {
                                    let Some(ix) = g.tap(x, kx, g.w) else { continue };
                                    let pi = pbase + iy * g.w + ix;
                                    let ki = kbase + ky * g.k + kx;
                                    if let Some(gk) = gk.as_mut() {
                                        gk[ki] += go * input[pi];
                                    }
                                    if let Some(gi) = gi.as_mut() {
                                        gi[pi] += go * kernel[ki];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (gi, gk, gb)
    }
}
