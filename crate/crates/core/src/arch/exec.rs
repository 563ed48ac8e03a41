//! Forward and backward passes over the stage graph.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::model::{FcExitSource, Layer, Model};
use super::variant::{StageKind, Topology, NUM_STAGES};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Activation, FcTape, GruTape, Real};

/// Masks keyed by exit stage.
pub type MaskSet<F> = BTreeMap<usize, Array2<F>>;

/// How an exit turns layer activations into a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitHead {
    /// Sigmoid of the first `bins` FC activations.
    Sigmoid,
    /// `0.5 (1 + h)` on the first `bins` GRU hidden units.
    GruScale,
    /// The layer output already is a mask (final sigmoid layer).
    Identity,
}

/// Applies an exit head to the first `bins` columns of `activations`.
pub fn extract_mask<F: Real>(
    activations: ArrayView2<'_, F>,
    head: ExitHead,
    bins: usize,
) -> Result<Array2<F>> {
    if activations.ncols() < bins {
        return Err(Error::InvalidArgument(format!(
            "exit needs {bins} activations but the layer has {}",
            activations.ncols()
        )));
    }
    let sub = activations.slice(s![.., ..bins]);
    let half = F::lit(0.5);
    Ok(match head {
        ExitHead::Sigmoid => sub.mapv(sigmoid),
        ExitHead::GruScale => sub.mapv(|h| half * (F::one() + h)),
        ExitHead::Identity => sub.to_owned(),
    })
}

#[derive(Debug, Clone)]
enum LayerTape<F> {
    Fc(FcTape<F>),
    Gru(GruTape<F>),
}

#[derive(Debug, Clone)]
struct StageTape<F> {
    main: LayerTape<F>,
    aux: Option<LayerTape<F>>,
}

/// Cached activations of one forward pass, consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTape<F> {
    rows: usize,
    stages: Vec<StageTape<F>>,
}

impl<F> ForwardTape<F> {
    /// Deepest stage that was computed.
    pub fn last_stage(&self) -> usize {
        self.stages.len() - 1
    }

    /// Pre-activations of every FC layer that was computed, main and
    /// auxiliary.
    pub fn fc_pre_activations(&self) -> Vec<&Array2<F>> {
        self.stages
            .iter()
            .flat_map(|s| std::iter::once(&s.main).chain(s.aux.as_ref()))
            .filter_map(|t| match t {
                LayerTape::Fc(fc) => Some(fc.pre()),
                LayerTape::Gru(_) => None,
            })
            .collect()
    }
}

/// Result of a forward pass with tapes.
#[derive(Debug, Clone)]
pub struct ForwardPass<F> {
    pub masks: MaskSet<F>,
    pub tape: ForwardTape<F>,
}

fn layer_forward<F: Real>(
    layer: &Layer<F>,
    input: ArrayView2<'_, F>,
    batch: usize,
) -> Result<(Array2<F>, LayerTape<F>)> {
    match layer {
        Layer::Fc(l) => {
            let (y, tape) = l.forward(input)?;
            Ok((y, LayerTape::Fc(tape)))
        }
        Layer::Gru(l) => {
            let (h, tape) = l.forward(input, batch, None)?;
            Ok((h, LayerTape::Gru(tape)))
        }
    }
}

/// Streaming state for frame-by-frame inference: one hidden state per GRU
/// layer.
#[derive(Debug, Clone)]
pub struct StreamState<F> {
    main: Vec<Option<Array1<F>>>,
    aux: Vec<Option<Array1<F>>>,
}

impl<F: Real> Model<F> {
    pub(crate) fn exit_head(&self, stage: usize) -> ExitHead {
        if stage == NUM_STAGES - 1 {
            return ExitHead::Identity;
        }
        match self.stages[stage].kind {
            StageKind::Fc => ExitHead::Sigmoid,
            StageKind::Gru => ExitHead::GruScale,
        }
    }

    fn check_features(&self, features: &ArrayView2<'_, F>, batch: usize) -> Result<()> {
        let bins = self.dims().bins;
        if features.ncols() != bins {
            return Err(Error::shape("features", &[features.nrows(), bins], features.shape()));
        }
        if batch == 0 || features.nrows() % batch != 0 || features.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows cannot be split into {batch} sequences",
                features.nrows()
            )));
        }
        Ok(())
    }

    fn mask_from(&self, stage: usize, tape: &LayerTape<F>, out: &Array2<F>) -> Result<Array2<F>> {
        let bins = self.dims().bins;
        let head = self.exit_head(stage);
        match (head, tape) {
            (ExitHead::Sigmoid, LayerTape::Fc(t)) => match self.fc_exit {
                FcExitSource::PreActivation => extract_mask(t.pre().view(), head, bins),
                FcExitSource::PostRelu => extract_mask(out.view(), head, bins),
            },
            _ => extract_mask(out.view(), head, bins),
        }
    }

    /// Runs stages `0..=last`, emitting masks at `emit`. The auxiliary layer
    /// of `last` is skipped when `skip_last_aux` is set: it only feeds deeper
    /// stages.
    pub(crate) fn run(
        &self,
        features: ArrayView2<'_, F>,
        batch: usize,
        last: usize,
        emit: &[usize],
        skip_last_aux: bool,
    ) -> Result<ForwardPass<F>> {
        self.check_features(&features, batch)?;
        let topology = self.variant().topology();
        let mut masks = MaskSet::new();
        let mut tapes = Vec::with_capacity(last + 1);
        let mut prev_main: Option<Array2<F>> = None;
        let mut prev_aux: Option<Array2<F>> = None;

        for i in 0..=last {
            let stage = &self.stages[i];
            let joined = match (&prev_main, &prev_aux) {
                (Some(m), Some(a)) => Some(concatenate![Axis(1), m.view(), a.view()]),
                _ => None,
            };
            let main_in = match (i, topology) {
                (0, _) => features.view(),
                (_, Topology::Chain) => prev_main.as_ref().expect("previous stage").view(),
                _ => joined.as_ref().expect("previous stage").view(),
            };
            self.access.mark(i, false);
            let (main_out, main_tape) = layer_forward(&stage.main, main_in, batch)?;
            if emit.contains(&i) {
                masks.insert(i, self.mask_from(i, &main_tape, &main_out)?);
            }

            let mut aux_tape = None;
            let mut aux_out = None;
            if let Some(aux) = &stage.aux {
                if !(skip_last_aux && i == last) {
                    let aux_in = match (i, topology) {
                        (0, _) => features.view(),
                        (_, Topology::Split) => prev_aux.as_ref().expect("previous aux").view(),
                        _ => joined.as_ref().expect("previous stage").view(),
                    };
                    self.access.mark(i, true);
                    let (out, tape) = layer_forward(aux, aux_in, batch)?;
                    aux_out = Some(out);
                    aux_tape = Some(tape);
                }
            }
            tapes.push(StageTape {
                main: main_tape,
                aux: aux_tape,
            });
            prev_main = Some(main_out);
            prev_aux = aux_out;
        }
        Ok(ForwardPass {
            masks,
            tape: ForwardTape {
                rows: features.nrows(),
                stages: tapes,
            },
        })
    }

    /// One pass computing the mask of every exit, plus tapes for backward.
    pub fn forward_all_exits(&self, features: ArrayView2<'_, F>, batch: usize) -> Result<ForwardPass<F>> {
        self.run(features, batch, NUM_STAGES - 1, self.variant().exits(), false)
    }

    /// Computes only what exit `exit` needs and returns its mask.
    pub fn forward_to_exit(
        &self,
        features: ArrayView2<'_, F>,
        batch: usize,
        exit: usize,
    ) -> Result<Array2<F>> {
        self.variant().check_exit(exit)?;
        let mut pass = self.run(features, batch, exit, &[exit], true)?;
        Ok(pass.masks.remove(&exit).expect("requested exit"))
    }

    /// Backpropagates mask gradients through every computed stage and
    /// accumulates parameter gradients of unfrozen layers.
    pub fn backward(&mut self, tape: &ForwardTape<F>, mask_grads: &MaskSet<F>) -> Result<()> {
        let last = tape.last_stage();
        if tape.stages.len() > self.stages.len() {
            return Err(Error::TapeMismatch("tape has more stages than the model".into()));
        }
        for (&e, g) in mask_grads {
            if e > last {
                return Err(Error::TapeMismatch(format!(
                    "gradient for exit {e} but the pass stopped at stage {last}"
                )));
            }
            if g.dim() != (tape.rows, self.dims().bins) {
                return Err(Error::shape("mask gradient", &[tape.rows, self.dims().bins], g.shape()));
            }
        }
        let topology = self.variant().topology();
        let bins = self.dims().bins;
        let fc_exit = self.fc_exit;
        let heads: Vec<ExitHead> = (0..=last).map(|i| self.exit_head(i)).collect();

        // trainable_upto[i]: some layer at stage <= i (that ran) is unfrozen.
        let mut trainable_upto = vec![false; last + 1];
        for i in 0..=last {
            let st = &self.stages[i];
            let here = !st.main.is_frozen()
                || (tape.stages[i].aux.is_some() && st.aux.as_ref().is_some_and(|a| !a.is_frozen()));
            trainable_upto[i] = here || (i > 0 && trainable_upto[i - 1]);
        }

        let mut d_main: Vec<Option<Array2<F>>> = vec![None; last + 1];
        let mut d_aux: Vec<Option<Array2<F>>> = vec![None; last + 1];
        let half = F::lit(0.5);

        for i in (0..=last).rev() {
            if !trainable_upto[i] {
                break;
            }
            let want_dx = i > 0 && trainable_upto[i - 1];
            let prev_main_w = if i > 0 { self.stages[i - 1].main.out_dim() } else { 0 };
            let stage_tape = &tape.stages[i];
            let stage = &mut self.stages[i];

            // Main layer.
            let mut dout = d_main[i].take();
            let dmask = mask_grads.get(&i);
            let main_frozen = stage.main.is_frozen();
            if dout.is_some() || dmask.is_some() {
                let dx = match (&mut stage.main, &stage_tape.main) {
                    (Layer::Fc(layer), LayerTape::Fc(t)) => {
                        let pre = t.pre();
                        let mut dy = dout.take().unwrap_or_else(|| Array2::zeros(pre.dim()));
                        if let (Some(dm), ExitHead::Identity) = (dmask, heads[i]) {
                            dy.slice_mut(s![.., ..bins]).zip_mut_with(dm, |d, &g| *d += g);
                        }
                        let act = layer.activation;
                        let mut dpre = dy;
                        dpre.zip_mut_with(pre, |d, &p| *d *= act.derivative(p));
                        if let (Some(dm), ExitHead::Sigmoid) = (dmask, heads[i]) {
                            let mut sub = dpre.slice_mut(s![.., ..bins]);
                            let pre_sub = pre.slice(s![.., ..bins]);
                            ndarray::Zip::from(&mut sub).and(&pre_sub).and(dm).for_each(
                                |d, &p, &g| {
                                    *d += match fc_exit {
                                        FcExitSource::PreActivation => {
                                            g * Activation::Sigmoid.derivative(p)
                                        }
                                        FcExitSource::PostRelu => {
                                            g * Activation::Sigmoid.derivative(p.max(F::zero()))
                                                * Activation::Relu.derivative(p)
                                        }
                                    }
                                },
                            );
                        }
                        layer.backward_pre(t, dpre.view(), !main_frozen, want_dx)?
                    }
                    (Layer::Gru(layer), LayerTape::Gru(t)) => {
                        let mut dh = dout.take().unwrap_or_else(|| Array2::zeros(t.hidden().dim()));
                        if let Some(dm) = dmask {
                            dh.slice_mut(s![.., ..bins])
                                .zip_mut_with(dm, |d, &g| *d += half * g);
                        }
                        layer.backward(t, dh.view(), !main_frozen, want_dx)?
                    }
                    _ => return Err(Error::TapeMismatch(format!("stage {i} layer kind"))),
                };
                if let Some(dx) = dx {
                    route_input_grad(topology, dx, prev_main_w, i, &mut d_main, &mut d_aux);
                }
            }

            // Auxiliary layer.
            if let (Some(aux), Some(aux_tape), Some(dout)) =
                (stage.aux.as_mut(), stage_tape.aux.as_ref(), d_aux[i].take())
            {
                let frozen = aux.is_frozen();
                let dx = match (aux, aux_tape) {
                    (Layer::Fc(layer), LayerTape::Fc(t)) => {
                        let act = layer.activation;
                        let mut dpre = dout;
                        dpre.zip_mut_with(t.pre(), |d, &p| *d *= act.derivative(p));
                        layer.backward_pre(t, dpre.view(), !frozen, want_dx)?
                    }
                    (Layer::Gru(layer), LayerTape::Gru(t)) => {
                        layer.backward(t, dout.view(), !frozen, want_dx)?
                    }
                    _ => return Err(Error::TapeMismatch(format!("stage {i} aux layer kind"))),
                };
                if let Some(dx) = dx {
                    match topology {
                        Topology::Split => accumulate(&mut d_aux[i - 1], dx),
                        _ => route_input_grad(topology, dx, prev_main_w, i, &mut d_main, &mut d_aux),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn stream_state(&self) -> StreamState<F> {
        let init = |l: &Layer<F>| match l {
            Layer::Gru(g) => Some(Array1::zeros(g.hidden_dim())),
            Layer::Fc(_) => None,
        };
        StreamState {
            main: self.stages.iter().map(|s| init(&s.main)).collect(),
            aux: self
                .stages
                .iter()
                .map(|s| s.aux.as_ref().and_then(init))
                .collect(),
        }
    }

    /// Processes one feature frame for a single stream and returns the mask
    /// of `exit`. Only stages up to `exit` (without the auxiliary layer of
    /// `exit`) advance their state.
    pub fn step_to_exit(
        &self,
        state: &mut StreamState<F>,
        frame: ArrayView1<'_, F>,
        exit: usize,
    ) -> Result<Array1<F>> {
        self.variant().check_exit(exit)?;
        let bins = self.dims().bins;
        if frame.len() != bins {
            return Err(Error::shape("feature frame", &[bins], &[frame.len()]));
        }
        let topology = self.variant().topology();
        let mut prev_main: Option<Array1<F>> = None;
        let mut prev_aux: Option<Array1<F>> = None;
        for i in 0..=exit {
            let stage = &self.stages[i];
            let joined = match (&prev_main, &prev_aux) {
                (Some(m), Some(a)) => Some(concatenate![Axis(0), m.view(), a.view()]),
                _ => None,
            };
            let main_in = match (i, topology) {
                (0, _) => frame.view(),
                (_, Topology::Chain) => prev_main.as_ref().expect("previous").view(),
                _ => joined.as_ref().expect("previous").view(),
            };
            self.access.mark(i, false);
            let (out, pre) = step_layer(&stage.main, main_in, state.main[i].as_mut());
            if i == exit {
                let head = self.exit_head(i);
                let src = match (head, self.fc_exit, &pre) {
                    (ExitHead::Sigmoid, FcExitSource::PreActivation, Some(p)) => p.view(),
                    _ => out.view(),
                };
                let half = F::lit(0.5);
                let sub = src.slice(s![..bins]);
                return Ok(match head {
                    ExitHead::Sigmoid => sub.mapv(sigmoid),
                    ExitHead::GruScale => sub.mapv(|h| half * (F::one() + h)),
                    ExitHead::Identity => sub.to_owned(),
                });
            }
            if let Some(aux) = &stage.aux {
                let aux_in = match (i, topology) {
                    (0, _) => frame.view(),
                    (_, Topology::Split) => prev_aux.as_ref().expect("previous aux").view(),
                    _ => joined.as_ref().expect("previous").view(),
                };
                self.access.mark(i, true);
                prev_aux = Some(step_layer(aux, aux_in, state.aux[i].as_mut()).0);
            }
            prev_main = Some(out);
        }
        unreachable!("loop returns at the exit stage")
    }
}

/// Returns the layer output and, for FC layers, the pre-activation.
fn step_layer<F: Real>(
    layer: &Layer<F>,
    input: ArrayView1<'_, F>,
    state: Option<&mut Array1<F>>,
) -> (Array1<F>, Option<Array1<F>>) {
    match layer {
        Layer::Fc(l) => {
            let pre = l.weight.value.dot(&input) + &l.bias.value;
            let act = l.activation;
            (pre.mapv(|v| act.apply(v)), Some(pre))
        }
        Layer::Gru(g) => {
            let h = state.expect("GRU layer has a state");
            g.step(input, h);
            (h.clone(), None)
        }
    }
}

fn accumulate<F: Real>(slot: &mut Option<Array2<F>>, g: Array2<F>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Splits the gradient of a stage input back onto the producing layers of
/// the previous stage.
fn route_input_grad<F: Real>(
    topology: Topology,
    dx: Array2<F>,
    prev_main_w: usize,
    stage: usize,
    d_main: &mut [Option<Array2<F>>],
    d_aux: &mut [Option<Array2<F>>],
) {
    if stage == 0 {
        return;
    }
    match topology {
        Topology::Chain => accumulate(&mut d_main[stage - 1], dx),
        Topology::Split | Topology::Concat => {
            accumulate(&mut d_main[stage - 1], dx.slice(s![.., ..prev_main_w]).to_owned());
            accumulate(&mut d_aux[stage - 1], dx.slice(s![.., prev_main_w..]).to_owned());
        }
    }
}
