use super::conv::{self, ConvGeom, Padding};
use super::{Array, ParamId, Params};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
        rows: usize,
        n: usize,
        m: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    MatVecConst {
        input: Var,
        matrix: Array,
    },
    #[cfg(test)]
    BrokenSquare(Var),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// A tape is built fresh for every forward pass; parameters enter through
/// [`Tape::param`] and receive their gradients in [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, params: &Params, id: ParamId) -> Var {
        self.push(params.get(id).value.clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let geom = ConvGeom::infer(
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).shape(),
            padding,
        )?;
        let out = conv::forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Array::new(geom.output_shape(), out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    /// Affine map `x·W + b` for `x` of shape `[n]` or `[rows, n]`.
    pub fn fully_connected(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ws = self.value(weights).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        let (rows, n, batched) = match xs[..] {
            [n] => (1, n, false),
            [r, n] => (r, n, true),
            _ => return Err(Error::shape("fully_connected", format!("input {xs:?}"))),
        };
        let [wn, m] = ws[..] else {
            return Err(Error::shape("fully_connected", format!("weights {ws:?}")));
        };
        if wn != n || bs != [m] {
            return Err(Error::shape(
                "fully_connected",
                format!("input {xs:?}, weights {ws:?}, bias {bs:?}"),
            ));
        }
        let x = self.value(input).data();
        let w = self.value(weights).data();
        let b = self.value(bias).data();
        let mut out = Vec::with_capacity(rows * m);
        for r in 0..rows {
            let mut acc = b.to_vec();
            for (i, &xi) in x[r * n..(r + 1) * n].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (a, &wij) in acc.iter_mut().zip(&w[i * m..(i + 1) * m]) {
                    *a += xi * wij;
                }
            }
            out.extend(acc);
        }
        let shape = if batched { vec![rows, m] } else { vec![m] };
        let value = Array::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weights,
                bias,
                rows,
                n,
                m,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(relu);
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(softplus);
        self.push(value, Op::Softplus(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        self.push(value, Op::Abs(x))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    /// Elementwise product of two equally shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Array::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Array::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Array::scalar(total), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Mean of squared differences against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(Error::shape(
                "mse",
                format!("{} predictions vs {} targets", p.len(), target.len()),
            ));
        }
        let sq: f64 = p.iter().zip(target).map(|(a, b)| (b - a) * (b - a)).sum();
        let value = Array::scalar(sq / p.len() as f64);
        Ok(self.push(
            value,
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// `x·M` for a vector `x` of length n and a constant n×m matrix.
    pub fn matvec_const(&mut self, input: Var, matrix: Array) -> Result<Var> {
        let x = self.value(input);
        let [n, m] = matrix.shape()[..] else {
            return Err(Error::shape("matvec_const", format!("matrix {:?}", matrix.shape())));
        };
        if x.shape() != [n] {
            return Err(Error::shape(
                "matvec_const",
                format!("input {:?} vs matrix {n}×{m}", x.shape()),
            ));
        }
        let md = matrix.data();
        let mut out = vec![0.0; m];
        for (i, &xi) in x.data().iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(&md[i * m..(i + 1) * m]) {
                *o += xi * v;
            }
        }
        let value = Array::from_vec(out);
        Ok(self.push(value, Op::MatVecConst { input, matrix }))
    }

    #[cfg(test)]
    pub(crate) fn broken_square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::BrokenSquare(x))
    }

    /// Reverse sweep from a one-element `root`, accumulating into `params`.
    pub fn backward(&self, root: Var, params: &mut Params) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Array::zeros(self.value(root).shape());
        seed.fill(1.0);
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => params.get_mut(*id).grad.add_assign(&g),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let (gi, gk, gb) = conv::backward(
                        self.value(*input).data(),
                        self.value(*kernel).data(),
                        g.data(),
                        geom,
                    );
                    self.accumulate(&mut grads, *input, gi);
                    self.accumulate(&mut grads, *kernel, gk);
                    self.accumulate(&mut grads, *bias, gb);
                }
                Op::Dense {
                    input,
                    weights,
                    bias,
                    rows,
                    n,
                    m,
                } => {
                    let (rows, n, m) = (*rows, *n, *m);
                    let x = self.value(*input).data();
                    let w = self.value(*weights).data();
                    let gd = g.data();
                    let mut gx = vec![0.0; rows * n];
                    let mut gw = vec![0.0; n * m];
                    let mut gb = vec![0.0; m];
                    for r in 0..rows {
                        let go = &gd[r * m..(r + 1) * m];
                        for (b, &v) in gb.iter_mut().zip(go) {
                            *b += v;
                        }
                        for i in 0..n {
                            let xi = x[r * n + i];
                            let wr = &w[i * m..(i + 1) * m];
                            let gwr = &mut gw[i * m..(i + 1) * m];
                            let mut dx = 0.0;
                            for j in 0..m {
                                gwr[j] += xi * go[j];
                                dx += wr[j] * go[j];
                            }
                            gx[r * n + i] = dx;
                        }
                    }
                    self.accumulate(&mut grads, *input, gx);
                    self.accumulate(&mut grads, *weights, gw);
                    self.accumulate(&mut grads, *bias, gb);
                }
                Op::Relu(x) => {
                    let d = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let d = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&s, &gv)| gv * s * (1.0 - s))
                        .collect();
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Softplus(x) => {
                    let d = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| gv * sigmoid(v))
                        .collect();
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Abs(x) => {
                    let d = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| {
                            if v > 0.0 {
                                gv
                            } else if v < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let da = bv.iter().zip(g.data()).map(|(y, gv)| y * gv).collect();
                    let db = av.iter().zip(g.data()).map(|(x, gv)| x * gv).collect();
                    self.accumulate(&mut grads, *a, da);
                    self.accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.data().to_vec());
                    self.accumulate(&mut grads, *b, g.into_data());
                }
                Op::Scale(x, f) => {
                    let d = g.data().iter().map(|v| v * f).collect();
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    self.accumulate(&mut grads, *x, vec![g.item(); n]);
                }
                Op::Reshape(x) => self.accumulate(&mut grads, *x, g.into_data()),
                Op::Mse { pred, target } => {
                    let p = self.value(*pred).data();
                    let k = 2.0 * g.item() / p.len() as f64;
                    let d = p.iter().zip(target).map(|(a, b)| k * (a - b)).collect();
                    self.accumulate(&mut grads, *pred, d);
                }
                Op::MatVecConst { input, matrix } => {
                    let [n, m] = matrix.shape()[..] else {
                        unreachable!()
                    };
                    let md = matrix.data();
                    let gd = g.data();
                    let d = (0..n)
                        .map(|i| (0..m).map(|j| md[i * m + j] * gd[j]).sum())
                        .collect();
                    self.accumulate(&mut grads, *input, d);
                }
                #[cfg(test)]
                Op::BrokenSquare(x) => {
                    // wrong on purpose: d(x²)/dx taken as x
                    let d = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| v * gv)
                        .collect();
                    self.accumulate(&mut grads, *x, d);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Array>], v: Var, data: Vec<f64>) {
        match &mut grads[v.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(&data) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(Array::new(shape, data).expect("gradient shape"));
            }
        }
    }
}
