//! A small reverse-mode tape over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! node list is a valid topological order for backpropagation.

use crate::error::{Error, Result};
use crate::tensor::{self, Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Probabilities are clamped at this floor inside the log of the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<S>,
        inv_std: Vec<S>,
        batch_stats: bool,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    WeightedCrossEntropy {
        logits: Var,
        labels: Vec<u8>,
        weights: Vec<S>,
        probs: Tensor<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Per-channel statistics observed by a batch-norm node in train mode.
#[derive(Clone, Debug)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Unbiased variance (used for running-statistics updates).
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable (gradient-tracked) input.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = tensor::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv { x, w, b }, &inputs))
    }

    /// Batch normalization over (N, H, W) per channel using the batch's own
    /// moments. Returns the output and the observed moments.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchMoments)> {
        let xv = self.value(x);
        check_bn(xv, self.value(gamma), self.value(beta))?;
        let (n, c, plane) = (xv.dim(0), xv.dim(1), xv.dim(2) * xv.dim(3));
        let m = n * plane;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for i in 0..n {
            for ch in 0..c {
                let p = &xv.data()[(i * c + ch) * plane..(i * c + ch + 1) * plane];
                mean[ch] += p.iter().map(|v| v.f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for i in 0..n {
            for ch in 0..c {
                let p = &xv.data()[(i * c + ch) * plane..(i * c + ch + 1) * plane];
                var[ch] += p.iter().map(|v| (v.f64() - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<S> = var.iter().map(|v| S::of(1.0 / (v + BN_EPS).sqrt())).collect();
        let shift: Vec<S> = mean.iter().map(|&v| S::of(v)).collect();
        let unbiased = var
            .iter()
            .map(|v| if m > 1 { v * m as f64 / (m - 1) as f64 } else { *v })
            .collect();
        let moments = BatchMoments { mean, var: unbiased };
        let v = self.normalize(x, gamma, beta, &shift, inv_std, true);
        Ok((v, moments))
    }

    /// Batch normalization with frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<S>,
        running_var: &Tensor<S>,
    ) -> Result<Var> {
        check_bn(self.value(x), self.value(gamma), self.value(beta))?;
        if running_mean.numel() != self.value(x).dim(1) || running_var.numel() != running_mean.numel() {
            return Err(Error::Shape("batch-norm running statistics".into()));
        }
        let inv_std = running_var
            .data()
            .iter()
            .map(|&v| S::of(1.0 / (v.f64() + BN_EPS).sqrt()))
            .collect();
        Ok(self.normalize(x, gamma, beta, running_mean.data(), inv_std, false))
    }

    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, mean: &[S], inv_std: Vec<S>, batch_stats: bool) -> Var {
        let xv = self.value(x);
        let (n, c, plane) = (xv.dim(0), xv.dim(1), xv.dim(2) * xv.dim(3));
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Tensor::zeros(xv.shape());
        let mut out = Tensor::zeros(xv.shape());
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                let src = &xv.data()[r.clone()];
                let xh = &mut xhat.data_mut()[r.clone()];
                for (d, &s) in xh.iter_mut().zip(src) {
                    *d = (s - mean[ch]) * inv_std[ch];
                }
                for (o, &h) in out.data_mut()[r]
                    .iter_mut()
                    .zip(xhat.data()[(i * c + ch) * plane..].iter())
                {
                    *o = g[ch] * h + b[ch];
                }
            }
        }
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = tensor::max_pool2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn upsample(&mut self, x: Var) -> Var {
        let out = tensor::upsample2(self.value(x));
        self.push(out, Op::Upsample(x), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = tensor::concat(&values, axis)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || start + len > xv.dim(axis) {
            return Err(Error::Shape(format!(
                "slice {start}..{} on axis {axis} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let outer: usize = xv.shape()[..axis].iter().product();
        let inner: usize = xv.shape()[axis + 1..].iter().product();
        let total = xv.dim(axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * total + start) * inner;
            data.extend_from_slice(&xv.data()[s..s + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    /// Mean over all pixels of `w[y] * -ln(max(softmax(logits)[y], PROB_FLOOR))`.
    /// `logits: [N, K, H, W]`, `labels: N*H*W` class indices.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[u8], weights: &[S]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 4 || lv.dim(1) != weights.len() {
            return Err(Error::Shape(format!(
                "cross entropy: logits {:?} with {} class weights",
                lv.shape(),
                weights.len()
            )));
        }
        let (n, k, plane) = (lv.dim(0), lv.dim(1), lv.dim(2) * lv.dim(3));
        if labels.len() != n * plane {
            return Err(Error::Shape(format!(
                "cross entropy: {} labels for {} pixels",
                labels.len(),
                n * plane
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= k) {
            return Err(Error::Shape(format!("label {bad} outside {k} classes")));
        }
        let probs = softmax_channels(lv);
        let mut total = 0.0f64;
        for i in 0..n {
            for p in 0..plane {
                let y = labels[i * plane + p] as usize;
                let prob = probs.data()[(i * k + y) * plane + p].f64();
                total += weights[y].f64() * -prob.max(PROB_FLOOR).ln();
            }
        }
        let loss = Tensor::new(&[1], vec![S::of(total / (n * plane) as f64)])?;
        Ok(self.push(
            loss,
            Op::WeightedCrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Backpropagate from the scalar `root`. Returns one gradient slot per node;
    /// only gradient-tracked nodes are filled.
    pub fn backward(&self, root: Var) -> Result<Vec<Option<Tensor<S>>>> {
        if self.value(root).numel() != 1 {
            return Err(Error::Shape("backward root must be a scalar".into()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), S::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &dy, &mut grads)?;
        }
        Ok(grads)
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<S>, dy: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b } => {
                let g = tensor::conv2d_backward(self.value(*x), self.value(*w), dy, self.tracks(*x))?;
                if let Some(dx) = g.dx {
                    accumulate(grads, *x, dx);
                }
                if self.tracks(*w) {
                    accumulate(grads, *w, g.dw);
                }
                if let Some(b) = b {
                    if self.tracks(*b) {
                        accumulate(grads, *b, g.db);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, plane) = (dy.dim(0), dy.dim(1), dy.dim(2) * dy.dim(3));
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                        for (&d, &h) in dy.data()[r.clone()].iter().zip(&xhat.data()[r]) {
                            dgamma[ch] += d * h;
                            dbeta[ch] += d;
                        }
                    }
                }
                if self.tracks(*x) {
                    let mut dx = Tensor::zeros(dy.shape());
                    let m = S::of((n * plane) as f64);
                    for i in 0..n {
                        for ch in 0..c {
                            let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                            let scale = gv[ch] * inv_std[ch];
                            for ((o, &d), &h) in dx.data_mut()[r.clone()]
                                .iter_mut()
                                .zip(&dy.data()[r.clone()])
                                .zip(&xhat.data()[r])
                            {
                                *o = if *batch_stats {
                                    scale * (d - dbeta[ch] / m - h * dgamma[ch] / m)
                                } else {
                                    scale * d
                                };
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.tracks(*gamma) {
                    accumulate(grads, *gamma, Tensor::new(&[c], dgamma)?);
                }
                if self.tracks(*beta) {
                    accumulate(grads, *beta, Tensor::new(&[c], dbeta)?);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = dy
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&d, &v)| if v > S::zero() { d } else { S::zero() })
                    .collect();
                accumulate(grads, *x, Tensor::new(dy.shape(), data)?);
            }
            Op::MaxPool { x, argmax } => {
                let dx = tensor::max_pool2_backward(self.value(*x).shape(), argmax, dy);
                accumulate(grads, *x, dx);
            }
            Op::Upsample(x) => accumulate(grads, *x, tensor::upsample2_backward(dy)),
            Op::Concat { parts, axis } => {
                let sizes: Vec<usize> = parts.iter().map(|&p| self.value(p).dim(*axis)).collect();
                for (p, g) in parts.iter().zip(tensor::split(dy, *axis, &sizes)) {
                    if self.tracks(*p) {
                        accumulate(grads, *p, g);
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.value(*x).shape().to_vec();
                let slot = grads[x.0].get_or_insert_with(|| Tensor::zeros(&shape));
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let chunk = dy.dim(*axis) * inner;
                for o in 0..outer {
                    let s = (o * shape[*axis] + start) * inner;
                    for (d, &g) in slot.data_mut()[s..s + chunk]
                        .iter_mut()
                        .zip(&dy.data()[o * chunk..(o + 1) * chunk])
                    {
                        *d += g;
                    }
                }
            }
            Op::Add(a, b) => {
                if self.tracks(*a) {
                    accumulate(grads, *a, dy.clone());
                }
                if self.tracks(*b) {
                    accumulate(grads, *b, dy.clone());
                }
            }
            Op::Mul(a, b) => {
                if self.tracks(*a) {
                    let d = self.zip_with(dy, *b, |g, v| g * v)?;
                    accumulate(grads, *a, d);
                }
                if self.tracks(*b) {
                    let d = self.zip_with(dy, *a, |g, v| g * v)?;
                    accumulate(grads, *b, d);
                }
            }
            Op::Sigmoid(x) => {
                let data = dy
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &s)| g * s * (S::one() - s))
                    .collect();
                accumulate(grads, *x, Tensor::new(dy.shape(), data)?);
            }
            Op::Tanh(x) => {
                let data = dy
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &t)| g * (S::one() - t * t))
                    .collect();
                accumulate(grads, *x, Tensor::new(dy.shape(), data)?);
            }
            Op::WeightedCrossEntropy {
                logits,
                labels,
                weights,
                probs,
            } => {
                let (n, k, plane) = (probs.dim(0), probs.dim(1), probs.dim(2) * probs.dim(3));
                let scale = dy.data()[0] / S::of((n * plane) as f64);
                let mut dl = Tensor::zeros(probs.shape());
                for i in 0..n {
                    for p in 0..plane {
                        let y = labels[i * plane + p] as usize;
                        let py = probs.data()[(i * k + y) * plane + p];
                        if py.f64() < PROB_FLOOR {
                            continue; // clamped: constant in the logits
                        }
                        let w = weights[y] * scale;
                        for cls in 0..k {
                            let idx = (i * k + cls) * plane + p;
                            let target = if cls == y { S::one() } else { S::zero() };
                            dl.data_mut()[idx] = w * (probs.data()[idx] - target);
                        }
                    }
                }
                accumulate(grads, *logits, dl);
            }
        }
        Ok(())
    }

    fn zip_with(&self, dy: &Tensor<S>, other: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let data = dy
            .data()
            .iter()
            .zip(self.value(other).data())
            .map(|(&g, &v)| f(g, v))
            .collect();
        Tensor::new(dy.shape(), data)
    }
}

fn check_bn<S: Scalar>(x: &Tensor<S>, gamma: &Tensor<S>, beta: &Tensor<S>) -> Result<()> {
    if x.rank() != 4 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1) {
        return Err(Error::Shape(format!(
            "batch norm: input {:?}, gamma {:?}, beta {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// Softmax over axis 1 of an `[N, K, H, W]` tensor.
pub fn softmax_channels<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, k, plane) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
    let mut out = Tensor::zeros(x.shape());
    for i in 0..n {
        for p in 0..plane {
            let at = |c: usize| (i * k + c) * plane + p;
            let max = (0..k).map(|c| x.data()[at(c)]).fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for c in 0..k {
                let e = (x.data()[at(c)] - max).exp();
                out.data_mut()[at(c)] = e;
                sum += e;
            }
            for c in 0..k {
                out.data_mut()[at(c)] /= sum;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    /// Scalar function of one leaf, checked against central differences.
    fn check(build: impl Fn(&mut Graph<f64>, Var) -> Var, x0: Tensor<f64>) {
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let root = build(&mut g, x);
        let grads = g.backward(root).unwrap();
        let analytic = grads[0].clone().unwrap();
        let h = 1e-6;
        for i in 0..x0.numel() {
            let eval = |delta: f64| {
                let mut xi = x0.clone();
                xi.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.param(xi);
                let r = build(&mut g, x);
                g.value(r).data()[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((fd - a).abs() <= 1e-6 * (1.0 + fd.abs()), "component {i}: {a} vs {fd}");
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x0 = t(&[1, 2, 2, 2], &[0.3, -0.7, 1.2, 0.1, -0.4, 0.9, 0.05, -1.5]);
        check(
            |g, x| {
                let s = g.sigmoid(x);
                let th = g.tanh(x);
                let m = g.mul(s, th).unwrap();
                let a = g.add(m, x).unwrap();
                let r = g.relu(a);
                let l = g.slice(r, 1, 0, 1).unwrap();
                let q = g.slice(r, 1, 1, 1).unwrap();
                let logits = g.concat(&[l, q], 1).unwrap();
                g.weighted_cross_entropy(logits, &[0, 1, 1, 0], &[0.7, 1.3]).unwrap()
            },
            x0,
        );
    }

    #[test]
    fn batch_norm_train_matches_finite_differences() {
        let x0 = t(
            &[2, 2, 2, 2],
            &[
                0.3, -0.7, 1.2, 0.1, -0.4, 0.9, 0.05, -1.5, 0.2, 0.8, -0.3, 0.6, 1.1, -0.2, 0.4, 0.0,
            ],
        );
        check(
            |g, x| {
                let gamma = g.input(t(&[2], &[1.3, 0.6]));
                let beta = g.input(t(&[2], &[0.1, -0.2]));
                let (y, _) = g.batch_norm_train(x, gamma, beta).unwrap();
                let w = g.input(t(&[2, 2, 1, 1], &[0.5, -1.0, 0.8, 0.3]));
                let z = g.conv(y, w, None).unwrap();
                g.weighted_cross_entropy(z, &[0, 1, 1, 0, 1, 1, 0, 0], &[1.0, 2.0])
                    .unwrap()
            },
            x0,
        );
    }

    #[test]
    fn conv_pool_upsample_match_finite_differences() {
        let x0 = t(
            &[1, 1, 4, 4],
            &[
                0.3, -0.7, 1.2, 0.1, -0.4, 0.9, 0.05, -1.5, 0.2, 0.8, -0.3, 0.6, 1.1, -0.2, 0.4, 0.0,
            ],
        );
        check(
            |g, x| {
                let w =
                    g.input(Tensor::new(&[2, 1, 3, 3], (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
                let b = g.input(t(&[2], &[0.1, -0.1]));
                let c = g.conv(x, w, Some(b)).unwrap();
                let p = g.max_pool(c).unwrap();
                let u = g.upsample(p);
                g.weighted_cross_entropy(u, &[0, 1, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 0, 1, 0], &[1.0, 1.0])
                    .unwrap()
            },
            x0,
        );
    }

    #[test]
    fn softmax_sums_to_one() {
        let x = t(&[1, 3, 1, 2], &[1000.0, -3.0, 0.0, 2.0, 5.0, 1.0]);
        let p = softmax_channels(&x);
        for px in 0..2 {
            let s: f64 = (0..3).map(|c| p.data()[c * 2 + px]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
