//! Tape-based reverse-mode differentiation over whole tensors.
//!
//! Every operation records its output value, its input nodes and a
//! [`Backward`] rule. [`Tape::backward`] walks the tape once in reverse and
//! returns exact chain-rule derivatives of a scalar output with respect to
//! every node that depends on a parameter. Nodes created with
//! [`Tape::constant`] never receive gradients, which is how frozen
//! sub-networks are evaluated.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numeric::conv::{self, ConvGeom};
use crate::numeric::gemm::{gemm, MatRef};
use crate::numeric::ops::pow_n;
use crate::numeric::tensor::Tensor;
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward<T: Scalar>: Send + Sync {
    /// Returns one gradient per input, `None` where `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    op: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage("variable does not belong to this tape".into()));
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.check(v)?].value)
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.nodes[self.check(v)?].requires_grad)
    }

    /// Record an operation whose value the caller already computed.
    pub fn record(&mut self, inputs: &[Var], value: Tensor<T>, op: impl Backward<T> + 'static) -> Result<Var> {
        let idx = inputs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: idx,
            op: requires_grad.then(|| Box::new(op) as Box<dyn Backward<T>>),
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.check(output)?;
        let node = &self.nodes[out];
        if node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, found {} values",
                node.value.len()
            )));
        }
        if node.op.is_none() {
            return Err(Error::Usage(
                "no recorded forward computation connects this output to any parameter".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out] = Some(Tensor::full(node.value.shape().to_vec(), T::one()));
        for i in (0..=out).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[i].as_ref() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let input_grads = op.backward(&inputs, &node.value, g, &needs)?;
            for (&j, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&ig)?,
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn fm_shape(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match *self.value(v)?.shape() {
            [c, l] => Ok((c, l)),
            ref s => Err(Error::shape(op, "[channels, length]", format!("{s:?}"))),
        }
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (c, l) = self.fm_shape(x, "conv1d")?;
        let bias_len = b.map(|b| self.value(b).map(|t| t.len())).transpose()?;
        let g = conv::conv_geom(c, l, self.value(w)?.shape(), bias_len, stride, padding)?;
        let out = conv::conv_forward_multi(
            &g,
            &[(self.value(x)?.data(), self.value(w)?.data())],
            b.map(|b| self.value(b).map(|t| t.data())).transpose()?,
        );
        let value = Tensor::new(vec![g.out_channels, g.len_out], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.record(&inputs, value, ConvOp { geom: g })
    }

    /// Transposed convolution with weights `[C_in][C_out][K]`.
    pub fn transposed_conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (c, l) = self.fm_shape(x, "transposed_conv1d")?;
        let bias_len = b.map(|b| self.value(b).map(|t| t.len())).transpose()?;
        let g = conv::tconv_geom(c, l, self.value(w)?.shape(), bias_len, stride, padding)?;
        let out = conv::tconv_forward_multi(
            &g,
            &[(self.value(x)?.data(), self.value(w)?.data())],
            b.map(|b| self.value(b).map(|t| t.data())).transpose()?,
        );
        let value = Tensor::new(vec![g.in_channels, g.len_in], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.record(&inputs, value, TConvOp { geom: g })
    }

    pub fn power(&mut self, x: Var, q: usize) -> Result<Var> {
        if q == 0 {
            return Err(Error::InvalidArgument("power order q must be >= 1".into()));
        }
        let value = self.value(x)?.map(|v| pow_n(v, q));
        self.record(&[x], value, PowerOp { q })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x)?.map(|v| v.tanh());
        self.record(&[x], value, TanhOp)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut value = self.value(a)?.clone();
        value.add_assign(self.value(b)?)?;
        self.record(&[a, b], value, AddOp)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, la) = self.fm_shape(a, "concat_channels")?;
        let (cb, lb) = self.fm_shape(b, "concat_channels")?;
        if la != lb {
            return Err(Error::shape(
                "concat_channels",
                format!("length {la}"),
                format!("length {lb}"),
            ));
        }
        let mut data = self.value(a)?.data().to_vec();
        data.extend_from_slice(self.value(b)?.data());
        let value = Tensor::new(vec![ca + cb, la], data)?;
        self.record(&[a, b], value, ConcatOp { split: ca * la })
    }

    /// Fully connected layer over the flattened input; output shape `[out, 1]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let n = self.value(x)?.len();
        let [out, inp] = *self.value(w)?.shape() else {
            return Err(Error::shape(
                "dense",
                "weights [out, in]",
                format!("{:?}", self.value(w)?.shape()),
            ));
        };
        if inp != n {
            return Err(Error::shape("dense", format!("input of {inp} values"), n));
        }
        let mut y = vec![T::zero(); out];
        dense_forward(self.value(w)?.data(), self.value(x)?.data(), out, inp, &mut y);
        if let Some(b) = b {
            let bias = self.value(b)?;
            if bias.len() != out {
                return Err(Error::shape("dense", format!("bias of length {out}"), bias.len()));
            }
            y.iter_mut().zip(bias.data()).for_each(|(v, &bb)| *v += bb);
        }
        let value = Tensor::new(vec![out, 1], y)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.record(&inputs, value, DenseOp { out, inp })
    }

    /// `sum_i coeff_i * v_i` over single-element values.
    pub fn linear_combination(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, c) in terms {
            total += c * self.value(v)?.item()?;
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let coeffs: Vec<T> = terms.iter().map(|t| t.1).collect();
        self.record(&vars, Tensor::scalar(total), LinearCombinationOp { coeffs })
    }
}

pub(crate) fn dense_forward<T: Scalar>(w: &[T], x: &[T], out: usize, inp: usize, y: &mut [T]) {
    gemm(T::one(), MatRef::new(w, out, inp), MatRef::new(x, inp, 1), T::zero(), y);
}

/// Result of [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a node, `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient of a node, zero-filled when the output does not depend on it.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Result<Tensor<T>> {
        let shape = tape.value(v)?.shape().to_vec();
        Ok(self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape)))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

fn wrap<T: Scalar>(shape: &[usize], data: Vec<T>) -> Result<Tensor<T>> {
    Tensor::new(shape.to_vec(), data)
}

struct ConvOp {
    geom: ConvGeom,
}

impl<T: Scalar> Backward<T> for ConvOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (dw, dx) = conv::conv_backward_term(&self.geom, x.data(), w.data(), grad.data(), needs[1], needs[0]);
        let mut out = vec![
            dx.map(|d| wrap(x.shape(), d)).transpose()?,
            dw.map(|d| wrap(w.shape(), d)).transpose()?,
        ];
        if inputs.len() == 3 {
            let db = needs[2].then(|| Tensor::from_vec(conv::bias_gradient(grad.data(), self.geom.len_out)));
            out.push(db);
        }
        Ok(out)
    }
}

struct TConvOp {
    geom: ConvGeom,
}

impl<T: Scalar> Backward<T> for TConvOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let dcols = conv::tconv_dcols(&self.geom, grad.data());
        let (dw, dx) = conv::tconv_backward_term(&self.geom, x.data(), w.data(), &dcols, needs[1], needs[0]);
        let mut out = vec![
            dx.map(|d| wrap(x.shape(), d)).transpose()?,
            dw.map(|d| wrap(w.shape(), d)).transpose()?,
        ];
        if inputs.len() == 3 {
            let db = needs[2].then(|| Tensor::from_vec(conv::bias_gradient(grad.data(), self.geom.len_in)));
            out.push(db);
        }
        Ok(out)
    }
}

struct PowerOp {
    q: usize,
}

impl<T: Scalar> Backward<T> for PowerOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let qf = T::from_usize_lossy(self.q);
        let data = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&v, &g)| if self.q == 1 { g } else { g * qf * pow_n(v, self.q - 1) })
            .collect();
        Ok(vec![Some(wrap(x.shape(), data)?)])
    }
}

struct TanhOp;

impl<T: Scalar> Backward<T> for TanhOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let data = output
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&y, &g)| g * (T::one() - y * y))
            .collect();
        Ok(vec![Some(wrap(inputs[0].shape(), data)?)])
    }
}

struct AddOp;

impl<T: Scalar> Backward<T> for AddOp {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(needs.iter().map(|&n| n.then(|| grad.clone())).collect())
    }
}

struct ConcatOp {
    split: usize,
}

impl<T: Scalar> Backward<T> for ConcatOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (ga, gb) = grad.data().split_at(self.split);
        Ok(vec![
            needs[0].then(|| wrap(inputs[0].shape(), ga.to_vec())).transpose()?,
            needs[1].then(|| wrap(inputs[1].shape(), gb.to_vec())).transpose()?,
        ])
    }
}

struct DenseOp {
    out: usize,
    inp: usize,
}

impl<T: Scalar> Backward<T> for DenseOp {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let g = grad.data();
        let dx = needs[0]
            .then(|| {
                let mut dx = vec![T::zero(); self.inp];
                gemm(
                    T::one(),
                    MatRef::new(w.data(), self.out, self.inp).t(),
                    MatRef::new(g, self.out, 1),
                    T::zero(),
                    &mut dx,
                );
                wrap(x.shape(), dx)
            })
            .transpose()?;
        let dw = needs[1]
            .then(|| {
                let mut dw = vec![T::zero(); self.out * self.inp];
                gemm(
                    T::one(),
                    MatRef::new(g, self.out, 1),
                    MatRef::new(x.data(), 1, self.inp),
                    T::zero(),
                    &mut dw,
                );
                wrap(w.shape(), dw)
            })
            .transpose()?;
        let mut out = vec![dx, dw];
        if inputs.len() == 3 {
            out.push(needs[2].then(|| Tensor::from_vec(g.to_vec())));
        }
        Ok(out)
    }
}

struct LinearCombinationOp<T> {
    coeffs: Vec<T>,
}

impl<T: Scalar> Backward<T> for LinearCombinationOp<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let g = grad.item()?;
        inputs
            .iter()
            .zip(&self.coeffs)
            .zip(needs)
            .map(|((x, &c), &n)| n.then(|| wrap(x.shape(), vec![g * c])).transpose())
            .collect()
    }
}
