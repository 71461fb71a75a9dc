//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: nodes are appended during the forward pass, so a
//! node's parents always have smaller indices and a single reverse sweep
//! visits every node exactly once in topological order. `backward` zeroes
//! all gradients first, making repeated calls idempotent.
//!
//! The op set is the minimum an MLP with an activation-density penalty
//! needs: matmul, bias broadcast, ReLU, softmax cross-entropy, row
//! selection, the smooth nonzero-count surrogate, and scalar glue.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    /// Caches the row softmax for the backward pass.
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        softmax: Tensor,
    },
    Sum(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Mean over all elements of v^2 / (v^2 + sigma).
    NonzeroSurrogateMean {
        input: NodeId,
        sigma: f64,
    },
    RowSelect {
        input: NodeId,
        rows: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.value(id).shape(), (1, 1));
        self.value(id).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a constant/parameter node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Matrix product a[m x k] * b[k x n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Row-broadcast x[m x n] + bias[1 x n].
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = self.value(x).add_row_broadcast(self.value(bias))?;
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    /// Elementwise max(0, v). Subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).relu();
        self.push(value, Op::Relu(x))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, stabilized by
    /// row-max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        let (m, c) = z.shape();
        if labels.len() != m {
            return Err(Error::invalid(format!(
                "{} labels for {} logit rows",
                labels.len(),
                m
            )));
        }
        if m == 0 {
            return Err(Error::invalid("softmax_cross_entropy on empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut softmax = Tensor::zeros(m, c);
        let mut loss = 0.0;
        for r in 0..m {
            let row = z.row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - max).exp();
            }
            for (j, &v) in row.iter().enumerate() {
                softmax.set(r, j, (v - max).exp() / denom);
            }
            loss += denom.ln() - (row[labels[r]] - max);
        }
        let value = Tensor::new(1, 1, vec![loss / m as f64])?.validated("softmax_cross_entropy")?;
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                softmax,
            },
        ))
    }

    /// Sum of all elements, as a 1x1 node.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let value = Tensor::new(1, 1, vec![self.value(x).sum()])?.validated("sum")?;
        Ok(self.push(value, Op::Sum(x)))
    }

    /// Elementwise a + b for same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Constant multiple.
    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::invalid(format!("non-finite scale factor {factor}")));
        }
        let value = self.value(x).scale(factor)?;
        Ok(self.push(value, Op::Scale(x, factor)))
    }

    /// Smooth nonzero-count surrogate: mean over all elements of
    /// v^2 / (v^2 + sigma). Each element's term lies in [0, 1); the
    /// derivative 2*v*sigma / (v^2 + sigma)^2 is exactly 0 at v = 0.
    pub fn nonzero_surrogate_mean(&mut self, x: NodeId, sigma: f64) -> Result<NodeId> {
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::invalid("nonzero surrogate of an empty tensor"));
        }
        let mean = t
            .data()
            .iter()
            .map(|&v| v * v / (v * v + sigma))
            .sum::<f64>()
            / t.len() as f64;
        let value = Tensor::new(1, 1, vec![mean])?.validated("nonzero_surrogate_mean")?;
        Ok(self.push(value, Op::NonzeroSurrogateMean { input: x, sigma }))
    }

    /// Gather a subset of rows (scatter-add on the way back).
    pub fn row_select(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let value = self.value(x).select_rows(rows)?;
        Ok(self.push(
            value,
            Op::RowSelect {
                input: x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar root. All gradients are zeroed first,
    /// then each node at or below the root is visited exactly once in
    /// reverse insertion order (a valid topological order for a tape).
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::invalid(format!(
                "backward root must be scalar, got {}",
                self.value(root).shape_string()
            )));
        }
        for node in &mut self.nodes {
            node.grad = Tensor::zeros(node.value.rows(), node.value.cols());
        }
        self.nodes[root.0].grad.data_mut()[0] = 1.0;

        for i in (0..=root.0).rev() {
            // Split borrow: take the node's grad, scatter into parents.
            let upstream = std::mem::replace(&mut self.nodes[i].grad, Tensor::zeros(0, 0));
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = upstream.matmul(&self.value(b).transpose())?;
                    let db = self.value(a).transpose().matmul(&upstream)?;
                    self.accumulate(a, &da)?;
                    self.accumulate(b, &db)?;
                }
                Op::AddBias(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    let cols = upstream.cols();
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..upstream.rows() {
                        for c in 0..cols {
                            db.data_mut()[c] += upstream.get(r, c);
                        }
                    }
                    self.accumulate(x, &upstream)?;
                    self.accumulate(bias, &db)?;
                }
                Op::Relu(x) => {
                    let x = *x;
                    let mut dx = upstream.clone();
                    for (g, &v) in dx.data_mut().iter_mut().zip(self.nodes[x.0].value.data()) {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    self.accumulate(x, &dx)?;
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    softmax,
                } => {
                    let logits = *logits;
                    let scale = upstream.data()[0] / softmax.rows() as f64;
                    let mut dz = softmax.clone();
                    for (r, &label) in labels.iter().enumerate() {
                        let v = dz.get(r, label);
                        dz.set(r, label, v - 1.0);
                    }
                    let dz = dz.scale(scale)?;
                    self.accumulate(logits, &dz)?;
                }
                Op::Sum(x) => {
                    let x = *x;
                    let g = upstream.data()[0];
                    let shape = self.nodes[x.0].value.shape();
                    let dx = Tensor::new(shape.0, shape.1, vec![g; shape.0 * shape.1])?;
                    self.accumulate(x, &dx)?;
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &upstream)?;
                    self.accumulate(b, &upstream)?;
                }
                Op::Scale(x, factor) => {
                    let (x, factor) = (*x, *factor);
                    let dx = upstream.scale(factor)?;
                    self.accumulate(x, &dx)?;
                }
                Op::NonzeroSurrogateMean { input, sigma } => {
                    let (input, sigma) = (*input, *sigma);
                    let g = upstream.data()[0];
                    let src = &self.nodes[input.0].value;
                    let n = src.len() as f64;
                    let mut dx = Tensor::zeros(src.rows(), src.cols());
                    for (d, &v) in dx.data_mut().iter_mut().zip(src.data()) {
                        let denom = v * v + sigma;
                        *d = g * (2.0 * v * sigma) / (denom * denom) / n;
                    }
                    self.accumulate(input, &dx)?;
                }
                Op::RowSelect { input, rows } => {
                    let input = *input;
                    let rows = rows.clone();
                    let src_shape = self.nodes[input.0].value.shape();
                    let mut dx = Tensor::zeros(src_shape.0, src_shape.1);
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..upstream.cols() {
                            let v = dx.get(r, c) + upstream.get(k, c);
                            dx.set(r, c, v);
                        }
                    }
                    self.accumulate(input, &dx)?;
                }
            }
            self.nodes[i].grad = upstream;
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: &Tensor) -> Result<()> {
        let grad = &mut self.nodes[id.0].grad;
        debug_assert_eq!(grad.shape(), delta.shape());
        for (g, d) in grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite("backward"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central finite differences of `f` w.r.t. one leaf of a rebuilt graph.
    /// `build` maps perturbed leaf tensors to a scalar loss.
    fn finite_difference(
        base: &[Tensor],
        which: usize,
        build: &dyn Fn(&[Tensor]) -> f64,
        step: f64,
    ) -> Tensor {
        let mut grad = Tensor::zeros(base[which].rows(), base[which].cols());
        for i in 0..base[which].len() {
            let mut plus = base.to_vec();
            plus[which].data_mut()[i] += step;
            let mut minus = base.to_vec();
            minus[which].data_mut()[i] -= step;
            grad.data_mut()[i] = (build(&plus) - build(&minus)) / (2.0 * step);
        }
        grad
    }

    fn assert_close_rel(analytic: &Tensor, numeric: &Tensor, tol: f64) {
        for (a, f) in analytic.data().iter().zip(numeric.data()) {
            let denom = a.abs().max(f.abs()).max(1e-4);
            assert!(
                (a - f).abs() / denom <= tol,
                "analytic {a} vs finite-difference {f}"
            );
        }
    }

    #[test]
    fn matmul_grad_matches_spec_example() {
        // d sum(a*b) / da at a=[[1,2]], b=[[3],[4]] is [[3,4]]
        let a0 = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b0 = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let mut g = Graph::new();
        let a = g.leaf(a0.clone());
        let b = g.leaf(b0.clone());
        let prod = g.matmul(a, b).unwrap();
        let loss = g.sum(prod).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).data(), &[3.0, 4.0]);

        let fd = finite_difference(
            &[a0, b0],
            0,
            &|ts| {
                let mut g = Graph::new();
                let a = g.leaf(ts[0].clone());
                let b = g.leaf(ts[1].clone());
                let p = g.matmul(a, b).unwrap();
                let l = g.sum(p).unwrap();
                g.scalar(l)
            },
            1e-6,
        );
        assert_close_rel(g.grad(a), &fd, 1e-4);
    }

    #[test]
    fn add_bias_grad_sums_rows() {
        // two rows of unit upstream grads -> bias grad [2, 2]
        let x0 = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b0 = Tensor::row(&[10.0, 20.0]);
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let b = g.leaf(b0.clone());
        let y = g.add_bias(x, b).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(b).data(), &[2.0, 2.0]);

        let fd = finite_difference(
            &[x0, b0],
            1,
            &|ts| {
                let mut g = Graph::new();
                let x = g.leaf(ts[0].clone());
                let b = g.leaf(ts[1].clone());
                let y = g.add_bias(x, b).unwrap();
                let l = g.sum(y).unwrap();
                g.scalar(l)
            },
            1e-6,
        );
        assert_close_rel(g.grad(b), &fd, 1e-4);
    }

    #[test]
    fn relu_grad_definition() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[2.0, -1.0, 0.0]));
        let y = g.relu(x);
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_all_negative_is_all_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[-3.0, -0.5, -1e-9]));
        let y = g.relu(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(&[0.0, 0.0]));
        let loss = g.softmax_cross_entropy(z, &[0]).unwrap();
        assert!((g.scalar(loss) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_stabilized() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(&[1000.0, 0.0]));
        let loss = g.softmax_cross_entropy(z, &[0]).unwrap();
        let v = g.scalar(loss);
        assert!(v.is_finite() && v.abs() < 1e-12, "loss {v}");
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(&[0.0, 0.0]));
        assert!(g.softmax_cross_entropy(z, &[2]).is_err());
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let mut rng = crate::rng::stream(3, 0xCE);
        let z0 = Tensor::new(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let labels = vec![0usize, 3, 1];
        let mut g = Graph::new();
        let z = g.leaf(z0.clone());
        let loss = g.softmax_cross_entropy(z, &labels).unwrap();
        g.backward(loss).unwrap();

        let fd = finite_difference(
            &[z0],
            0,
            &|ts| {
                let mut g = Graph::new();
                let z = g.leaf(ts[0].clone());
                let l = g.softmax_cross_entropy(z, &labels).unwrap();
                g.scalar(l)
            },
            1e-6,
        );
        assert_close_rel(g.grad(z), &fd, 1e-4);
    }

    #[test]
    fn backward_linear_case() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let loss = g.sum(x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_detached_constant_leaves_grads_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[1.0, 2.0]));
        let y = g.relu(x);
        let _unused = g.sum(y).unwrap();
        let detached = g.leaf(Tensor::new(1, 1, vec![5.0]).unwrap());
        g.backward(detached).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 0.0));
        assert!(g.grad(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn backward_twice_is_idempotent() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(&[1.0, -2.0, 3.0]));
        let y = g.relu(x);
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        let first = g.grad(x).clone();
        g.backward(loss).unwrap();
        assert_eq!(&first, g.grad(x));
    }

    #[test]
    fn composed_relu_matmul_matches_finite_differences() {
        let mut rng = crate::rng::stream(5, 0xAD);
        let a0 = Tensor::new(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w0 = Tensor::new(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let build = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let a = g.leaf(ts[0].clone());
            let w = g.leaf(ts[1].clone());
            let h = g.matmul(a, w).unwrap();
            let r = g.relu(h);
            let l = g.sum(r).unwrap();
            g.scalar(l)
        };
        let mut g = Graph::new();
        let a = g.leaf(a0.clone());
        let w = g.leaf(w0.clone());
        let h = g.matmul(a, w).unwrap();
        let r = g.relu(h);
        let loss = g.sum(r).unwrap();
        g.backward(loss).unwrap();

        let base = [a0, w0];
        for which in 0..2 {
            let fd = finite_difference(&base, which, &build, 1e-6);
            let id = if which == 0 { a } else { w };
            assert_close_rel(g.grad(id), &fd, 1e-4);
        }
    }

    #[test]
    fn row_select_forward_and_backward() {
        let x0 = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(x0);
        let sel = g.row_select(x, &[0, 2]).unwrap();
        let loss = g.sum(sel).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.value(sel).data(), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(g.grad(x).data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    /// Random compositions of every differentiable op match central finite
    /// differences within 1e-4 relative error (step 1e-6), 100 instances.
    #[test]
    fn random_compositions_match_finite_differences() {
        for case in 0..100u64 {
            let mut rng = crate::rng::stream(case, 0xF00D);
            let m = rng.random_range(1..=4usize);
            let k = rng.random_range(1..=4usize);
            let c = rng.random_range(2..=4usize);
            let x0 = Tensor::new(
                m,
                k,
                (0..m * k).map(|_| rng.random_range(-1.5..1.5)).collect(),
            )
            .unwrap();
            let w0 = Tensor::new(
                k,
                c,
                (0..k * c).map(|_| rng.random_range(-1.5..1.5)).collect(),
            )
            .unwrap();
            let b0 =
                Tensor::new(1, c, (0..c).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
            let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
            let sigma = 10f64.powf(rng.random_range(-4.0..0.0));
            let lambda = rng.random_range(0.0..2.0);

            let build = |ts: &[Tensor]| {
                let mut g = Graph::new();
                let x = g.leaf(ts[0].clone());
                let w = g.leaf(ts[1].clone());
                let b = g.leaf(ts[2].clone());
                let z = g.matmul(x, w).unwrap();
                let z = g.add_bias(z, b).unwrap();
                let h = g.relu(z);
                let ce = g.softmax_cross_entropy(h, &labels).unwrap();
                let e = g.nonzero_surrogate_mean(h, sigma).unwrap();
                let pen = g.scale(e, -lambda).unwrap();
                let l = g.add(ce, pen).unwrap();
                g.scalar(l)
            };

            let base = [x0, w0, b0];
            let mut g = Graph::new();
            let x = g.leaf(base[0].clone());
            let w = g.leaf(base[1].clone());
            let b = g.leaf(base[2].clone());
            let z = g.matmul(x, w).unwrap();
            let z = g.add_bias(z, b).unwrap();
            let h = g.relu(z);
            let ce = g.softmax_cross_entropy(h, &labels).unwrap();
            let e = g.nonzero_surrogate_mean(h, sigma).unwrap();
            let pen = g.scale(e, -lambda).unwrap();
            let loss = g.add(ce, pen).unwrap();
            g.backward(loss).unwrap();

            for (which, id) in [(0, x), (1, w), (2, b)] {
                let fd = finite_difference(&base, which, &build, 1e-6);
                assert_close_rel(g.grad(id), &fd, 1e-4);
            }
        }
    }
}
