use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Ix1, Ix2};

use super::param::{Param, ParamMut, ParamRef};
use super::{sigmoid, Real};
use crate::error::{Error, Result};

/// Gated recurrent unit with separate input-side and hidden-side biases.
///
/// Weights are stacked by gate in the order reset, update, candidate:
/// `weight_ih` is `3h x in` (`W_ir; W_iz; W_in`) and `weight_hh` is `3h x h`
/// (`W_hr; W_hz; W_hn`). Per step:
///
/// ```text
/// r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer<F: Real> {
    pub weight_ih: Param<F, Ix2>,
    pub weight_hh: Param<F, Ix2>,
    pub bias_ih: Param<F, Ix1>,
    pub bias_hh: Param<F, Ix1>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct GruTape<F> {
    input: Array2<F>,
    batch: usize,
    h0: Array2<F>,
    reset: Array2<F>,
    update: Array2<F>,
    candidate: Array2<F>,
    /// `W_hn h + b_hn`, before the reset gate is applied.
    hidden_candidate: Array2<F>,
    hidden: Array2<F>,
}

impl<F> GruTape<F> {
    pub fn hidden(&self) -> &Array2<F> {
        &self.hidden
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<F: Real> GruLayer<F> {
    pub fn new(name: &str, in_dim: usize, hidden: usize) -> Self {
        Self {
            weight_ih: Param::zeros(format!("{name}.weight_ih"), Ix2(3 * hidden, in_dim)),
            weight_hh: Param::zeros(format!("{name}.weight_hh"), Ix2(3 * hidden, hidden)),
            bias_ih: Param::zeros(format!("{name}.bias_ih"), Ix1(3 * hidden)),
            bias_hh: Param::zeros(format!("{name}.bias_hh"), Ix1(3 * hidden)),
        }
    }

    pub fn init(&mut self, seed: u64) {
        let (i, h) = (self.in_dim(), self.hidden_dim());
        self.weight_ih.init(seed, i);
        self.weight_hh.init(seed, h);
        self.bias_ih.init(seed, i);
        self.bias_hh.init(seed, h);
    }

    pub fn in_dim(&self) -> usize {
        self.weight_ih.value.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight_hh.value.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weight_ih.len() + self.weight_hh.len() + self.bias_ih.len() + self.bias_hh.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.weight_ih.frozen && self.weight_hh.frozen && self.bias_ih.frozen && self.bias_hh.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.weight_ih.frozen = frozen;
        self.weight_hh.frozen = frozen;
        self.bias_ih.frozen = frozen;
        self.bias_hh.frozen = frozen;
    }

    pub fn params(&self) -> Vec<ParamRef<'_, F>> {
        vec![
            self.weight_ih.as_ref(),
            self.weight_hh.as_ref(),
            self.bias_ih.as_ref(),
            self.bias_hh.as_ref(),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, F>> {
        vec![
            self.weight_ih.as_mut(),
            self.weight_hh.as_mut(),
            self.bias_ih.as_mut(),
            self.bias_hh.as_mut(),
        ]
    }

    /// Runs `batch` time-major sequences. `h0` defaults to zeros.
    pub fn forward(
        &self,
        x: ArrayView2<'_, F>,
        batch: usize,
        h0: Option<ArrayView2<'_, F>>,
    ) -> Result<(Array2<F>, GruTape<F>)> {
        let h = self.hidden_dim();
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(
                "gru input (rows x in)",
                &[x.nrows(), self.in_dim()],
                x.shape(),
            ));
        }
        if batch == 0 || x.nrows() % batch != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} rows cannot be split into {batch} sequences",
                x.nrows()
            )));
        }
        let h0 = match h0 {
            Some(h0) => {
                if h0.dim() != (batch, h) {
                    return Err(Error::shape("gru initial state", &[batch, h], h0.shape()));
                }
                if h0.iter().any(|v| v.abs() > F::one()) {
                    return Err(Error::InvalidArgument(
                        "initial GRU state must lie in [-1, 1]".into(),
                    ));
                }
                h0.to_owned()
            }
            None => Array2::zeros((batch, h)),
        };

        let rows = x.nrows();
        let steps = rows / batch;
        let mut gi = Array2::zeros((rows, 3 * h));
        general_mat_mul(F::one(), &x, &self.weight_ih.value.t(), F::zero(), &mut gi);
        gi += &self.bias_ih.value;

        let mut reset = Array2::zeros((rows, h));
        let mut update = Array2::zeros((rows, h));
        let mut candidate = Array2::zeros((rows, h));
        let mut hidden_candidate = Array2::zeros((rows, h));
        let mut hidden = Array2::<F>::zeros((rows, h));
        let mut gh = Array2::<F>::zeros((batch, 3 * h));
        let mut prev = h0.clone();
        let whh_t = self.weight_hh.value.t();
        let bhh = self.bias_hh.value.as_slice().expect("contiguous");

        for t in 0..steps {
            general_mat_mul(F::one(), &prev, &whh_t, F::zero(), &mut gh);
            let gi_t = gi.slice(s![t * batch..(t + 1) * batch, ..]);
            let gi_t = gi_t.as_slice().expect("contiguous");
            let gh_s = gh.as_slice().expect("contiguous");
            let prev_s = prev.as_slice().expect("contiguous");
            let base = t * batch * h;
            let r_s = &mut reset.as_slice_mut().expect("contiguous")[base..base + batch * h];
            let z_s = &mut update.as_slice_mut().expect("contiguous")[base..base + batch * h];
            let n_s = &mut candidate.as_slice_mut().expect("contiguous")[base..base + batch * h];
            let hn_s =
                &mut hidden_candidate.as_slice_mut().expect("contiguous")[base..base + batch * h];
            let h_s = &mut hidden.as_slice_mut().expect("contiguous")[base..base + batch * h];
            for b in 0..batch {
                let gir = &gi_t[b * 3 * h..(b + 1) * 3 * h];
                let ghr = &gh_s[b * 3 * h..(b + 1) * 3 * h];
                for j in 0..h {
                    let k = b * h + j;
                    let r = sigmoid(gir[j] + ghr[j] + bhh[j]);
                    let z = sigmoid(gir[h + j] + ghr[h + j] + bhh[h + j]);
                    let hn = ghr[2 * h + j] + bhh[2 * h + j];
                    let n = (gir[2 * h + j] + r * hn).tanh();
                    r_s[k] = r;
                    z_s[k] = z;
                    n_s[k] = n;
                    hn_s[k] = hn;
                    h_s[k] = (F::one() - z) * n + z * prev_s[k];
                }
            }
            prev.assign(&hidden.slice(s![t * batch..(t + 1) * batch, ..]));
        }

        let out = hidden.clone();
        Ok((
            out,
            GruTape {
                input: x.to_owned(),
                batch,
                h0,
                reset,
                update,
                candidate,
                hidden_candidate,
                hidden,
            },
        ))
    }

    /// Advances one step for a single stream, updating `state` in place.
    pub fn step(&self, x: ArrayView1<'_, F>, state: &mut Array1<F>) {
        let h = self.hidden_dim();
        let gi = self.weight_ih.value.dot(&x) + &self.bias_ih.value;
        let gh = self.weight_hh.value.dot(&*state) + &self.bias_hh.value;
        for j in 0..h {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[h + j] + gh[h + j]);
            let n = (gi[2 * h + j] + r * gh[2 * h + j]).tanh();
            state[j] = (F::one() - z) * n + z * state[j];
        }
    }

    /// Backpropagation through time. `dh` is the gradient w.r.t. every
    /// hidden output; the gradient also flows through the recurrence.
    pub fn backward(
        &mut self,
        tape: &GruTape<F>,
        dh: ArrayView2<'_, F>,
        param_grads: bool,
        want_dx: bool,
    ) -> Result<Option<Array2<F>>> {
        let h = self.hidden_dim();
        if tape.input.ncols() != self.in_dim() || tape.hidden.ncols() != h {
            return Err(Error::TapeMismatch(format!(
                "tape for in={} h={} used with in={} h={}",
                tape.input.ncols(),
                tape.hidden.ncols(),
                self.in_dim(),
                h
            )));
        }
        if dh.dim() != tape.hidden.dim() {
            return Err(Error::TapeMismatch(format!(
                "hidden gradient {:?} vs cached {:?}",
                dh.shape(),
                tape.hidden.shape()
            )));
        }
        if !param_grads && !want_dx {
            return Ok(None);
        }
        let batch = tape.batch;
        let rows = tape.hidden.nrows();
        let steps = rows / batch;
        let dh = dh.as_standard_layout();
        let dh_s = dh.as_slice().expect("contiguous");
        let r_s = tape.reset.as_slice().expect("contiguous");
        let z_s = tape.update.as_slice().expect("contiguous");
        let n_s = tape.candidate.as_slice().expect("contiguous");
        let hn_s = tape.hidden_candidate.as_slice().expect("contiguous");
        let h_s = tape.hidden.as_slice().expect("contiguous");
        let h0_s = tape.h0.as_slice().expect("contiguous");

        let mut dgi = Array2::<F>::zeros((rows, 3 * h));
        let mut dgh = Array2::<F>::zeros((rows, 3 * h));
        let mut carry = Array2::<F>::zeros((batch, h));
        let mut direct = Array2::<F>::zeros((batch, h));

        for t in (0..steps).rev() {
            {
                let carry_s = carry.as_slice().expect("contiguous");
                let direct_s = direct.as_slice_mut().expect("contiguous");
                let dgi_s = dgi.as_slice_mut().expect("contiguous");
                let dgh_s = dgh.as_slice_mut().expect("contiguous");
                for b in 0..batch {
                    let row = t * batch + b;
                    let gi_row = &mut dgi_s[row * 3 * h..(row + 1) * 3 * h];
                    let gh_row = &mut dgh_s[row * 3 * h..(row + 1) * 3 * h];
                    for j in 0..h {
                        let k = row * h + j;
                        let hp = if t == 0 {
                            h0_s[b * h + j]
                        } else {
                            h_s[(row - batch) * h + j]
                        };
                        let (r, z, n) = (r_s[k], z_s[k], n_s[k]);
                        let g = dh_s[k] + carry_s[b * h + j];
                        let dn_pre = g * (F::one() - z) * (F::one() - n * n);
                        let dz_pre = g * (hp - n) * z * (F::one() - z);
                        let dr_pre = dn_pre * hn_s[k] * r * (F::one() - r);
                        gi_row[j] = dr_pre;
                        gi_row[h + j] = dz_pre;
                        gi_row[2 * h + j] = dn_pre;
                        gh_row[j] = dr_pre;
                        gh_row[h + j] = dz_pre;
                        gh_row[2 * h + j] = dn_pre * r;
                        direct_s[b * h + j] = g * z;
                    }
                }
            }
            carry.assign(&direct);
            let dgh_t = dgh.slice(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(F::one(), &dgh_t, &self.weight_hh.value, F::one(), &mut carry);
        }

        if param_grads {
            let mut prev = Array2::<F>::zeros((rows, h));
            prev.slice_mut(s![..batch, ..]).assign(&tape.h0);
            if rows > batch {
                prev.slice_mut(s![batch.., ..])
                    .assign(&tape.hidden.slice(s![..rows - batch, ..]));
            }
            general_mat_mul(F::one(), &dgh.t(), &prev, F::one(), &mut self.weight_hh.grad);
            self.bias_hh.grad += &dgh.sum_axis(Axis(0));
            general_mat_mul(F::one(), &dgi.t(), &tape.input, F::one(), &mut self.weight_ih.grad);
            self.bias_ih.grad += &dgi.sum_axis(Axis(0));
        }
        Ok(want_dx.then(|| dgi.dot(&self.weight_ih.value)))
    }
}
