//! Computation record and reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every primitive appends one
//! node holding its output value plus whatever it needs for the backward
//! pass, so inputs always precede outputs and a single reverse sweep visits
//! each node exactly once.

use crate::error::{shape_err, Result, TensorError};
use crate::linalg::{gemm, ConvGeom, MatRef};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Relu,
    GlobalAvgPool,
    Mul,
    Add,
    Sub,
    Scale,
    Sum,
    Reshape,
    Linear,
    SoftmaxCrossEntropy,
    AttentionPool,
    L2NormalizeRows,
    NegEntropy,
    BatchHardTriplet,
}

#[derive(Debug, Clone, Copy)]
struct TripletPick {
    anchor: usize,
    positive: usize,
    negative: usize,
    d_pos: f64,
    d_neg: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Relu(Var),
    GlobalAvgPool(Var),
    Mul {
        a: Var,
        b: Var,
        channels: usize,
        broadcast: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    AttentionPool {
        features: Var,
        attention: Var,
    },
    L2NormalizeRows {
        input: Var,
        norms: Vec<f64>,
    },
    NegEntropy {
        input: Var,
        groups: usize,
        sums: Vec<f64>,
    },
    BatchHardTriplet {
        input: Var,
        picks: Vec<TripletPick>,
        anchors: usize,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(_) => OpKind::Relu,
            Op::GlobalAvgPool(_) => OpKind::GlobalAvgPool,
            Op::Mul { .. } => OpKind::Mul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Linear { .. } => OpKind::Linear,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::AttentionPool { .. } => OpKind::AttentionPool,
            Op::L2NormalizeRows { .. } => OpKind::L2NormalizeRows,
            Op::NegEntropy { .. } => OpKind::NegEntropy,
            Op::BatchHardTriplet { .. } => OpKind::BatchHardTriplet,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![input, weight, bias],
            Op::Relu(v)
            | Op::GlobalAvgPool(v)
            | Op::Scale(v, _)
            | Op::Sum(v)
            | Op::Reshape(v)
            | Op::L2NormalizeRows { input: v, .. }
            | Op::NegEntropy { input: v, .. }
            | Op::BatchHardTriplet { input: v, .. }
            | Op::SoftmaxCrossEntropy { logits: v, .. } => vec![v],
            Op::Mul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) => vec![a, b],
            Op::Linear { x, weight, bias } => vec![x, weight, bias],
            Op::AttentionPool {
                features,
                attention,
            } => vec![features, attention],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One entry of the computation record as seen from outside.
#[derive(Debug, Clone)]
pub struct RecordEntry {
    pub output: Var,
    pub kind: OpKind,
    pub inputs: Vec<Var>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf. It receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Copies the value of `v` into a new constant, cutting every gradient path through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).detached();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves a node's tensor (value and gradient) out, leaving an empty placeholder.
    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    pub fn record(&self) -> Vec<RecordEntry> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| RecordEntry {
                output: Var(i),
                kind: n.op.kind(),
                inputs: n.op.inputs(),
            })
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let inputs = op.inputs();
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        // Arithmetic ops may overflow on huge finite inputs.
        let arithmetic = matches!(
            op.kind(),
            OpKind::Conv2d
                | OpKind::Linear
                | OpKind::Mul
                | OpKind::Add
                | OpKind::Sub
                | OpKind::Scale
                | OpKind::Sum
                | OpKind::GlobalAvgPool
                | OpKind::AttentionPool
        );
        debug_assert!(
            arithmetic
                || !inputs.iter().all(|i| self.nodes[i.0].value.is_finite())
                || value.is_finite(),
            "{:?} produced non-finite output from finite inputs",
            op.kind()
        );
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    // ----- primitives -------------------------------------------------------

    /// 2-D cross-correlation over an `N×C×H×W` input with a `K×C×kh×kw` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err(
                "conv2d",
                format!("input {xs:?} and weight {ws:?} must both be rank 4"),
            );
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument(
                "conv2d stride must be positive".into(),
            ));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (k, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wc != c {
            return shape_err(
                "conv2d",
                format!("input has {c} channels (dim 1 of {xs:?}) but weight expects {wc} (dim 1 of {ws:?})"),
            );
        }
        if bs != [k] {
            return shape_err("conv2d", format!("bias shape {bs:?} must be [{k}]"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"),
            );
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let (q, p) = (geom.patch_len(), geom.out_len());
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let mut cols = vec![0.0; n * q * p];
        let mut out = vec![0.0; n * k * p];
        for s in 0..n {
            let col = &mut cols[s * q * p..(s + 1) * q * p];
            geom.im2col(&x[s * c * h * w..(s + 1) * c * h * w], col);
            let o = &mut out[s * k * p..(s + 1) * k * p];
            for (ki, row) in o.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = b[ki]);
            }
            gemm(MatRef::new(wt, k, q), MatRef::new(col, q, p), 1.0, o);
        }
        let value = Tensor::new(vec![n, k, geom.out_h, geom.out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu(x))
    }

    /// Per-channel spatial mean: `N×C×H×W → N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return shape_err("global_avg_pool", format!("expected N×C×H×W, got {s:?}"));
        }
        let hw = s[2] * s[3];
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(vec![s[0], s[1]], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    /// Hadamard product. `b` may equal `a`'s shape, or have size 1 on axis 1
    /// (a single map broadcast across all channels of `a`).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let broadcast = if sa == sb {
            false
        } else if sa.len() >= 2
            && sa.len() == sb.len()
            && sb[1] == 1
            && sa[0] == sb[0]
            && sa[2..] == sb[2..]
        {
            true
        } else {
            return shape_err("mul", format!("cannot broadcast {sb:?} onto {sa:?}"));
        };
        let channels = if broadcast { sa[1] } else { 1 };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = if broadcast {
            let inner: usize = sa[2..].iter().product();
            av.iter()
                .enumerate()
                .map(|(i, &x)| {
                    let n = i / (channels * inner);
                    x * bv[n * inner + i % inner]
                })
                .collect()
        } else {
            av.iter().zip(bv).map(|(x, y)| x * y).collect()
        };
        let value = Tensor::new(sa, data)?;
        Ok(self.push(
            value,
            Op::Mul {
                a,
                b,
                channels,
                broadcast,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(op, format!("{:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Affine map `x · weight + bias` with `x: N×D`, `weight: D×K`, `bias: K`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return shape_err(
                "linear",
                format!("input {xs:?} does not match weight {ws:?}"),
            );
        }
        if bs != [ws[1]] {
            return shape_err("linear", format!("bias {bs:?} must be [{}]", ws[1]));
        }
        let (n, d, k) = (xs[0], xs[1], ws[1]);
        let b = self.value(bias).data();
        let mut out: Vec<f64> = (0..n * k).map(|i| b[i % k]).collect();
        gemm(
            MatRef::new(self.value(x).data(), n, d),
            MatRef::new(self.value(weight).data(), d, k),
            1.0,
            &mut out,
        );
        let value = Tensor::new(vec![n, k], out)?;
        Ok(self.push(value, Op::Linear { x, weight, bias }))
    }

    /// Batch-mean cross-entropy of `softmax(logits)` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return shape_err(
                "softmax_cross_entropy",
                format!("logits {s:?} vs {} labels", labels.len()),
            );
        }
        let (n, k) = (s[0], s[1]);
        if k < 2 {
            return shape_err(
                "softmax_cross_entropy",
                format!("need at least 2 classes, got {k}"),
            );
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(TensorError::LabelOutOfRange {
                index,
                label,
                classes: k,
            });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (row, (zr, pr)) in z.chunks(k).zip(probs.chunks_mut(k)).enumerate() {
            let m = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (p, &v) in pr.iter_mut().zip(zr) {
                *p = (v - m).exp();
                total += *p;
            }
            pr.iter_mut().for_each(|p| *p /= total);
            loss += m + total.ln() - zr[labels[row]];
        }
        let value = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Attention-weighted spatial pooling.
    ///
    /// `features: N×C×H×W`, `attention: N×M×H×W` → `N×M×C` with
    /// `out[n,m,c] = (1/HW) Σ_{h,w} features[n,c,h,w] · attention[n,m,h,w]`.
    /// Equivalent to global-average-pooling the features after weighting them
    /// by each attention map in turn.
    pub fn attention_pool(&mut self, features: Var, attention: Var) -> Result<Var> {
        let xs = self.shape(features).to_vec();
        let as_ = self.shape(attention).to_vec();
        if xs.len() != 4 || as_.len() != 4 || xs[0] != as_[0] || xs[2..] != as_[2..] {
            return shape_err(
                "attention_pool",
                format!("features {xs:?} and attention {as_:?} must agree on N, H, W"),
            );
        }
        let (n, c, m, p) = (xs[0], xs[1], as_[1], xs[2] * xs[3]);
        let x = self.value(features).data();
        let a = self.value(attention).data();
        let mut out = vec![0.0; n * m * c];
        for s in 0..n {
            gemm(
                MatRef::new(&a[s * m * p..(s + 1) * m * p], m, p),
                MatRef::new(&x[s * c * p..(s + 1) * c * p], c, p).t(),
                0.0,
                &mut out[s * m * c..(s + 1) * m * c],
            );
        }
        out.iter_mut().for_each(|v| *v /= p as f64);
        let value = Tensor::new(vec![n, m, c], out)?;
        Ok(self.push(
            value,
            Op::AttentionPool {
                features,
                attention,
            },
        ))
    }

    /// Scales every slice along axis 0 to unit ℓ2 norm. All-zero slices stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let rows = t.shape()[0];
        let d = t.numel() / rows;
        let mut norms = Vec::with_capacity(rows);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            norms.push(norm);
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::L2NormalizeRows { input: x, norms })
    }

    /// Mean over the `N·M` maps of `Σ p log p`, where `p` is each map
    /// rescaled to sum to one. Maps that sum to zero contribute zero.
    ///
    /// Input must be nonnegative with rank ≥ 3 (`N×M×...`).
    pub fn neg_entropy(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() < 3 {
            return shape_err("neg_entropy", format!("expected N×M×..., got {s:?}"));
        }
        if t.min() < 0.0 {
            return Err(TensorError::InvalidArgument(
                "neg_entropy input must be nonnegative".into(),
            ));
        }
        let groups = s[0] * s[1];
        let cells = t.numel() / groups;
        let mut sums = Vec::with_capacity(groups);
        let mut total = 0.0;
        for map in t.data().chunks(cells) {
            let z: f64 = map.iter().sum();
            sums.push(z);
            if z > 0.0 {
                total += map
                    .iter()
                    .filter(|&&v| v > 0.0)
                    .map(|&v| (v / z) * (v / z).ln())
                    .sum::<f64>();
            }
        }
        let value = Tensor::scalar(total / groups as f64);
        Ok(self.push(
            value,
            Op::NegEntropy {
                input: x,
                groups,
                sums,
            },
        ))
    }

    /// Batch-hard triplet loss over `N×D` embeddings (used as given; callers
    /// normalize first). Per anchor with at least one positive and one
    /// negative: `max(0, max_pos d − min_neg d + margin)`; mean over those
    /// anchors. Also returns the number of qualifying anchors; with none the
    /// loss is 0.
    pub fn batch_hard_triplet(
        &mut self,
        x: Var,
        labels: &[usize],
        margin: f64,
    ) -> Result<(Var, usize)> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return shape_err(
                "batch_hard_triplet",
                format!("embeddings {s:?} vs {} labels", labels.len()),
            );
        }
        let (n, d) = (s[0], s[1]);
        let e = self.value(x).data();
        let dist = |i: usize, j: usize| -> f64 {
            e[i * d..(i + 1) * d]
                .iter()
                .zip(&e[j * d..(j + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let mut picks = Vec::new();
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..n {
            let mut pos: Option<(usize, f64)> = None;
            let mut neg: Option<(usize, f64)> = None;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let dij = dist(i, j);
                if labels[j] == labels[i] {
                    if pos.map_or(true, |(_, best)| dij > best) {
                        pos = Some((j, dij));
                    }
                } else if neg.map_or(true, |(_, best)| dij < best) {
                    neg = Some((j, dij));
                }
            }
            if let (Some((p, dp)), Some((q, dq))) = (pos, neg) {
                anchors += 1;
                let hinge = dp - dq + margin;
                if hinge > 0.0 {
                    total += hinge;
                    picks.push(TripletPick {
                        anchor: i,
                        positive: p,
                        negative: q,
                        d_pos: dp,
                        d_neg: dq,
                    });
                }
            }
        }
        let loss = if anchors > 0 {
            total / anchors as f64
        } else {
            0.0
        };
        let var = self.push(
            Tensor::scalar(loss),
            Op::BatchHardTriplet {
                input: x,
                picks,
                anchors,
            },
        );
        Ok((var, anchors))
    }

    // ----- reverse sweep ----------------------------------------------------

    /// Propagates `d loss / d node` back through the record and adds the
    /// result into the gradient buffer of every leaf that requires one.
    /// Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            for (input, delta) in self.local_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let (q, p) = (geom.patch_len(), geom.out_len());
                let k = self.shape(*weight)[0];
                let n = self.shape(*input)[0];
                let img = geom.channels * geom.height * geom.width;
                let mut out = Vec::new();
                if needs(*weight) {
                    let mut dw = vec![0.0; k * q];
                    for s in 0..n {
                        gemm(
                            MatRef::new(&g[s * k * p..(s + 1) * k * p], k, p),
                            MatRef::new(&cols[s * q * p..(s + 1) * q * p], q, p).t(),
                            1.0,
                            &mut dw,
                        );
                    }
                    out.push((*weight, dw));
                }
                if needs(*bias) {
                    let mut db = vec![0.0; k];
                    for (i, row) in g.chunks(p).enumerate() {
                        db[i % k] += row.iter().sum::<f64>();
                    }
                    out.push((*bias, db));
                }
                if needs(*input) {
                    let w = val(*weight);
                    let mut dx = vec![0.0; n * img];
                    let mut dcols = vec![0.0; q * p];
                    for s in 0..n {
                        gemm(
                            MatRef::new(w, k, q).t(),
                            MatRef::new(&g[s * k * p..(s + 1) * k * p], k, p),
                            0.0,
                            &mut dcols,
                        );
                        geom.col2im(&dcols, &mut dx[s * img..(s + 1) * img]);
                    }
                    out.push((*input, dx));
                }
                out
            }
            Op::Relu(x) => {
                let d = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                vec![(*x, d)]
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let d = (0..s.iter().product::<usize>())
                    .map(|i| g[i / hw] / hw as f64)
                    .collect();
                vec![(*x, d)]
            }
            Op::Mul {
                a,
                b,
                channels,
                broadcast,
            } => {
                let (av, bv) = (val(*a), val(*b));
                let mut out = Vec::new();
                if !broadcast {
                    if needs(*a) {
                        out.push((*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()));
                    }
                    if needs(*b) {
                        out.push((*b, g.iter().zip(av).map(|(g, a)| g * a).collect()));
                    }
                    return out;
                }
                let inner = bv.len() / self.shape(*b)[0];
                let bidx = |i: usize| (i / (channels * inner)) * inner + i % inner;
                if needs(*a) {
                    out.push((
                        *a,
                        g.iter().enumerate().map(|(i, g)| g * bv[bidx(i)]).collect(),
                    ));
                }
                if needs(*b) {
                    let mut db = vec![0.0; bv.len()];
                    for (i, (g, a)) in g.iter().zip(av).enumerate() {
                        db[bidx(i)] += g * a;
                    }
                    out.push((*b, db));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Scale(x, f) => vec![(*x, g.iter().map(|v| v * f).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Linear { x, weight, bias } => {
                let xs = self.shape(*x);
                let (n, d) = (xs[0], xs[1]);
                let k = self.shape(*weight)[1];
                let mut out = Vec::new();
                if needs(*x) {
                    let mut dx = vec![0.0; n * d];
                    gemm(
                        MatRef::new(g, n, k),
                        MatRef::new(val(*weight), d, k).t(),
                        0.0,
                        &mut dx,
                    );
                    out.push((*x, dx));
                }
                if needs(*weight) {
                    let mut dw = vec![0.0; d * k];
                    gemm(
                        MatRef::new(val(*x), n, d).t(),
                        MatRef::new(g, n, k),
                        0.0,
                        &mut dw,
                    );
                    out.push((*weight, dw));
                }
                if needs(*bias) {
                    let mut db = vec![0.0; k];
                    for row in g.chunks(k) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    out.push((*bias, db));
                }
                out
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &l) in labels.iter().enumerate() {
                    d[row * k + l] -= scale;
                }
                vec![(*logits, d)]
            }
            Op::AttentionPool {
                features,
                attention,
            } => {
                let xs = self.shape(*features);
                let (n, c, p) = (xs[0], xs[1], xs[2] * xs[3]);
                let m = self.shape(*attention)[1];
                let (x, a) = (val(*features), val(*attention));
                let inv = 1.0 / p as f64;
                let gs: Vec<f64> = g.iter().map(|v| v * inv).collect();
                let mut out = Vec::new();
                if needs(*features) {
                    let mut dx = vec![0.0; n * c * p];
                    for s in 0..n {
                        gemm(
                            MatRef::new(&gs[s * m * c..(s + 1) * m * c], m, c).t(),
                            MatRef::new(&a[s * m * p..(s + 1) * m * p], m, p),
                            0.0,
                            &mut dx[s * c * p..(s + 1) * c * p],
                        );
                    }
                    out.push((*features, dx));
                }
                if needs(*attention) {
                    let mut da = vec![0.0; n * m * p];
                    for s in 0..n {
                        gemm(
                            MatRef::new(&gs[s * m * c..(s + 1) * m * c], m, c),
                            MatRef::new(&x[s * c * p..(s + 1) * c * p], c, p),
                            0.0,
                            &mut da[s * m * p..(s + 1) * m * p],
                        );
                    }
                    out.push((*attention, da));
                }
                out
            }
            Op::L2NormalizeRows { input, norms } => {
                let y = node.value.data();
                let d = y.len() / norms.len();
                let mut dx = vec![0.0; y.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    if norm == 0.0 {
                        continue;
                    }
                    let range = r * d..(r + 1) * d;
                    let yr = &y[range.clone()];
                    let gr = &g[range.clone()];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yi), &gi) in dx[range].iter_mut().zip(yr).zip(gr) {
                        *o = (gi - yi * dot) / norm;
                    }
                }
                vec![(*input, dx)]
            }
            Op::NegEntropy {
                input,
                groups,
                sums,
            } => {
                let a = val(*input);
                let cells = a.len() / groups;
                let scale = g[0] / *groups as f64;
                let mut dx = vec![0.0; a.len()];
                for (gi, &z) in sums.iter().enumerate() {
                    if z <= 0.0 {
                        continue;
                    }
                    let map = &a[gi * cells..(gi + 1) * cells];
                    let plogp: f64 = map
                        .iter()
                        .filter(|&&v| v > 0.0)
                        .map(|&v| (v / z) * (v / z).ln())
                        .sum();
                    // d/da_j Σ p log p = (log p_j − Σ p log p) / z; log 0 is clamped.
                    for (o, &v) in dx[gi * cells..(gi + 1) * cells].iter_mut().zip(map) {
                        let logp = (v / z).max(1e-300).ln();
                        *o = scale * (logp - plogp) / z;
                    }
                }
                vec![(*input, dx)]
            }
            Op::BatchHardTriplet {
                input,
                picks,
                anchors,
            } => {
                let s = self.shape(*input);
                let (n, d) = (s[0], s[1]);
                let e = val(*input);
                let mut dx = vec![0.0; n * d];
                if *anchors == 0 {
                    return vec![(*input, dx)];
                }
                let scale = g[0] / *anchors as f64;
                let mut pull = |i: usize, j: usize, dist: f64, sign: f64| {
                    if dist <= 0.0 {
                        return;
                    }
                    for t in 0..d {
                        let diff = (e[i * d + t] - e[j * d + t]) / dist * sign * scale;
                        dx[i * d + t] += diff;
                        dx[j * d + t] -= diff;
                    }
                };
                for p in picks {
                    pull(p.anchor, p.positive, p.d_pos, 1.0);
                    pull(p.anchor, p.negative, p.d_neg, -1.0);
                }
                vec![(*input, dx)]
            }
        }
    }
}
