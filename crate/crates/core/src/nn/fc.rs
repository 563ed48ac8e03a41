use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis, Ix1, Ix2};

use super::param::{Param, ParamMut, ParamRef};
use super::{sigmoid, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Relu => x.max(F::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed in terms of the pre-activation.
    #[inline]
    pub fn derivative<F: Real>(self, pre: F) -> F {
        match self {
            Activation::Relu => {
                if pre > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(pre);
                s * (F::one() - s)
            }
            Activation::Linear => F::one(),
        }
    }
}

/// Fully connected layer `y = act(x W^T + b)` with `W: out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer<F: Real> {
    pub weight: Param<F, Ix2>,
    pub bias: Param<F, Ix1>,
    pub activation: Activation,
}

/// Forward cache: the layer input and its pre-activations.
#[derive(Debug, Clone)]
pub struct FcTape<F> {
    input: Array2<F>,
    pre: Array2<F>,
}

impl<F> FcTape<F> {
    pub fn input(&self) -> &Array2<F> {
        &self.input
    }

    pub fn pre(&self) -> &Array2<F> {
        &self.pre
    }
}

impl<F: Real> FcLayer<F> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), Ix2(out_dim, in_dim)),
            bias: Param::zeros(format!("{name}.bias"), Ix1(out_dim)),
            activation,
        }
    }

    pub fn init(&mut self, seed: u64) {
        let fan_in = self.in_dim();
        self.weight.init(seed, fan_in);
        self.bias.init(seed, fan_in);
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.weight.frozen && self.bias.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.weight.frozen = frozen;
        self.bias.frozen = frozen;
    }

    pub fn params(&self) -> Vec<ParamRef<'_, F>> {
        vec![self.weight.as_ref(), self.bias.as_ref()]
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, F>> {
        vec![self.weight.as_mut(), self.bias.as_mut()]
    }

    fn check_input(&self, x: &ArrayView2<'_, F>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(
                "fc input (rows x in)",
                &[x.nrows(), self.in_dim()],
                x.shape(),
            ));
        }
        Ok(())
    }

    /// `x W^T + b`, without the activation.
    pub fn pre_activation(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        let mut pre = x.dot(&self.weight.value.t());
        pre += &self.bias.value;
        Ok(pre)
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Result<(Array2<F>, FcTape<F>)> {
        let pre = self.pre_activation(x)?;
        let act = self.activation;
        let y = pre.mapv(|v| act.apply(v));
        Ok((
            y,
            FcTape {
                input: x.to_owned(),
                pre,
            },
        ))
    }

    /// Backward from the gradient w.r.t. the activated output.
    pub fn backward(&mut self, tape: &FcTape<F>, dy: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if dy.dim() != tape.pre.dim() {
            return Err(Error::TapeMismatch(format!(
                "output gradient {:?} vs cached {:?}",
                dy.shape(),
                tape.pre.shape()
            )));
        }
        let act = self.activation;
        let mut dpre = dy.to_owned();
        dpre.zip_mut_with(&tape.pre, |d, &p| *d *= act.derivative(p));
        Ok(self
            .backward_pre(tape, dpre.view(), true, true)?
            .expect("input gradient requested"))
    }

    /// Backward from the gradient w.r.t. the pre-activation. Parameter
    /// gradients are accumulated when `param_grads` is set; the input
    /// gradient is returned when `want_dx` is set.
    pub fn backward_pre(
        &mut self,
        tape: &FcTape<F>,
        dpre: ArrayView2<'_, F>,
        param_grads: bool,
        want_dx: bool,
    ) -> Result<Option<Array2<F>>> {
        if tape.input.ncols() != self.in_dim() || tape.pre.ncols() != self.out_dim() {
            return Err(Error::TapeMismatch(format!(
                "tape for {}x{} layer used with {}x{} layer",
                tape.pre.ncols(),
                tape.input.ncols(),
                self.out_dim(),
                self.in_dim()
            )));
        }
        if dpre.dim() != tape.pre.dim() {
            return Err(Error::TapeMismatch(format!(
                "pre-activation gradient {:?} vs cached {:?}",
                dpre.shape(),
                tape.pre.shape()
            )));
        }
        if param_grads {
            general_mat_mul(
                F::one(),
                &dpre.t(),
                &tape.input,
                F::one(),
                &mut self.weight.grad,
            );
            self.bias.grad += &dpre.sum_axis(Axis(0));
        }
        Ok(want_dx.then(|| dpre.dot(&self.weight.value)))
    }
}
