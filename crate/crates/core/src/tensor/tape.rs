//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node whose inputs precede it, so the node
//! order is already topological and `backward` is a single reverse sweep.

use super::kernels::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: Var,
        kernels: Var,
        bias: Var,
        dims: ConvDims,
        cols: Vec<f64>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    PoolAvg2(Var),
    Upsample2(Var),
    Concat {
        a: Var,
        b: Var,
        split: usize,
    },
    Reshape(Var),
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Sigmoid(Var),
    Tanh(Var),
    LogSigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitives as they execute.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    no_grad: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A tape for inference only: convolution patches are not retained and
    /// `backward` is refused.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            no_grad: true,
        }
    }

    /// Whether this tape can be differentiated.
    pub fn records(&self) -> bool {
        !self.no_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(value, op, name)
    }

    /// Same-size convolution of a batch `[N,C,H,W]` (or one image `[C,H,W]`).
    pub fn conv2d_same(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let in_shape = self.value(input).shape().to_vec();
        let shape4 = kernels::as_batch(&in_shape, "conv2d_same")?;
        let dims = ConvDims::check(
            &shape4,
            self.value(kernels).shape(),
            self.value(bias).shape(),
        )?;
        let (out, cols) = kernels::conv_forward(
            &dims,
            self.value(input).data(),
            self.value(kernels).data(),
            self.value(bias).data(),
            !self.no_grad,
        );
        let mut shape = dims.out_shape();
        if in_shape.len() == 3 {
            shape.remove(0);
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            value,
            Op::Conv {
                input,
                kernels,
                bias,
                dims,
                cols,
            },
            "conv2d_same",
        )
    }

    /// Affine map `[N,F] -> [N,O]` with weight `[O,F]` and bias `[O]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.rank() != 2
            || w.rank() != 2
            || x.shape()[1] != w.shape()[1]
            || b.shape() != [w.shape()[0]]
        {
            return Err(Error::shape(
                "dense",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    x.shape(),
                    w.shape(),
                    b.shape()
                ),
            ));
        }
        let (n, f, o) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let mut out = vec![0.0; n * o];
        for s in 0..n {
            let row = &x.data()[s * f..(s + 1) * f];
            for j in 0..o {
                let wr = &w.data()[j * f..(j + 1) * f];
                out[s * o + j] = b.data()[j] + row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let value = Tensor::new(vec![n, o], out)?;
        self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            "dense",
        )
    }

    pub fn pool_avg2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let r = x.rank();
        if r < 2 || !x.shape()[r - 1].is_multiple_of(2) || !x.shape()[r - 2].is_multiple_of(2) {
            return Err(Error::shape(
                "pool_avg2",
                format!("spatial dims must be even, got {:?}", x.shape()),
            ));
        }
        let mut shape = x.shape().to_vec();
        shape[r - 1] /= 2;
        shape[r - 2] /= 2;
        let value = Tensor::new(shape, kernels::pool_avg2(x.shape(), x.data()))?;
        self.push(value, Op::PoolAvg2(input), "pool_avg2")
    }

    pub fn upsample_nearest2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let r = x.rank();
        if r < 2 {
            return Err(Error::shape(
                "upsample_nearest2",
                format!("need spatial dims, got {:?}", x.shape()),
            ));
        }
        let mut shape = x.shape().to_vec();
        shape[r - 1] *= 2;
        shape[r - 2] *= 2;
        let value = Tensor::new(shape, kernels::upsample2(x.shape(), x.data()))?;
        self.push(value, Op::Upsample2(input), "upsample_nearest2")
    }

    /// Concatenate two `[N,C,H,W]` batches along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape("concat_channels", format!("{sa:?} vs {sb:?}")));
        }
        let n = sa[0];
        let (ca, cb) = (ta.len() / n, tb.len() / n);
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for s in 0..n {
            data.extend_from_slice(&ta.data()[s * ca..(s + 1) * ca]);
            data.extend_from_slice(&tb.data()[s * cb..(s + 1) * cb]);
        }
        let value = Tensor::new(vec![n, sa[1] + sb[1], sa[2], sa[3]], data)?;
        self.push(value, Op::Concat { a, b, split: ca }, "concat_channels")
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push(value, Op::Reshape(input), "reshape")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, Op::LeakyRelu { input: x, slope }, "leaky_relu", |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), "tanh", f64::tanh)
    }

    /// `ln σ(x)`, evaluated without forming σ(x).
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::LogSigmoid(x), "log_sigmoid", log_sigmoid)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, factor), "scale", |v| v * factor)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), "square", |v| v * v)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.no_grad {
            return Err(Error::Invalid("backward on an inference tape".into()));
        }
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv {
                    input,
                    kernels,
                    bias,
                    dims,
                    cols,
                } => {
                    let cg = kernels::conv_backward(dims, &g, cols, self.value(*kernels).data());
                    accumulate(&mut grads, *input, cg.input);
                    accumulate(&mut grads, *kernels, cg.kernels);
                    accumulate(&mut grads, *bias, cg.bias);
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => {
                    let (x, w) = (self.value(*input), self.value(*weight));
                    let (n, f, o) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                    let mut gx = vec![0.0; n * f];
                    let mut gw = vec![0.0; o * f];
                    let mut gb = vec![0.0; o];
                    for s in 0..n {
                        for j in 0..o {
                            let go = g[s * o + j];
                            gb[j] += go;
                            for q in 0..f {
                                gx[s * f + q] += go * w.data()[j * f + q];
                                gw[j * f + q] += go * x.data()[s * f + q];
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *weight, gw);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::PoolAvg2(x) => {
                    let gx = kernels::pool_avg2_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Upsample2(x) => {
                    let gx = kernels::upsample2_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat { a, b, split } => {
                    let n = self.value(*a).shape()[0];
                    let stride = g.len() / n;
                    let mut ga = Vec::with_capacity(n * split);
                    let mut gb = Vec::with_capacity(n * (stride - split));
                    for chunk in g.chunks(stride) {
                        ga.extend_from_slice(&chunk[..*split]);
                        gb.extend_from_slice(&chunk[*split..]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, g.clone()),
                Op::LeakyRelu { input, slope } => {
                    let x = self.value(*input).data();
                    let gx = g
                        .iter()
                        .zip(x)
                        .map(|(g, &v)| if v > 0.0 { *g } else { slope * g })
                        .collect();
                    accumulate(&mut grads, *input, gx);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let gx = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::LogSigmoid(x) => {
                    // d/dx ln σ(x) = σ(-x)
                    let xs = self.value(*x).data();
                    let gx = g.iter().zip(xs).map(|(g, &v)| g * sigmoid(-v)).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    let gb = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut grads, *x, g.iter().map(|v| v * factor).collect());
                }
                Op::Square(x) => {
                    let xs = self.value(*x).data();
                    let gx = g.iter().zip(xs).map(|(g, v)| 2.0 * g * v).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0] / n as f64; n]);
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.map(|g| Tensor::new(node.value.shape().to_vec(), g))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked by caller")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros if the loss does not depend on it.
    /// Gradients are retained for leaves only; interior nodes read as zero.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let theta = tape.leaf(Tensor::scalar(3.0));
        let loss = tape.square(theta).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(theta).item(), 6.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let theta = tape.leaf(Tensor::scalar(1.5));
        let y = tape.add(theta, theta).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(theta).item(), 2.0);
    }

    #[test]
    fn unreached_leaf_gets_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1.0, 2.0]));
        let unused = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let loss = tape.sum(a).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(&[3]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn bias_gradient_is_plane_area() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 5, 4], 0.3));
        let k = tape.leaf(Tensor::full(&[3, 2, 3, 3], 0.1));
        let b = tape.leaf(Tensor::zeros(&[3]));
        let y = tape.conv2d_same(x, k, b).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(b).data(), &[20.0, 20.0, 20.0]);
    }

    #[test]
    fn activations_closed_form() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[-1.0]));
        let z = tape.leaf(t(&[1], &[0.0]));
        let a = tape.leaky_relu(x, 0.2).unwrap();
        let s = tape.sigmoid(z).unwrap();
        let th = tape.tanh(z).unwrap();
        assert!((tape.value(a).item() + 0.2).abs() < 1e-15);
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(th).item(), 0.0);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn pool_rejects_odd() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3, 4]));
        assert!(tape.pool_avg2(x).is_err());
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let mut tape = Tape::inference();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = tape.square(x).unwrap();
        assert!(tape.backward(y).is_err());
    }
}
