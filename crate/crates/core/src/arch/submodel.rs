//! Prefix views of a model used by layer-wise training.

use ndarray::{Array2, ArrayView2};

use super::exec::{ForwardPass, ForwardTape, MaskSet};
use super::model::{Layer, Model};
use crate::error::{Error, Result};
use crate::nn::{ParamMut, ParamRef, Real};

/// Stages `0..=stage` plus exit head `stage`, sharing storage with the model.
/// The auxiliary layer of `stage` is excluded: it only feeds deeper stages.
#[derive(Debug)]
pub struct SubModel<'a, F: Real> {
    model: &'a mut Model<F>,
    stage: usize,
}

/// Borrows the slice ending at exit `stage`.
pub fn slice_submodel<F: Real>(model: &mut Model<F>, stage: usize) -> Result<SubModel<'_, F>> {
    model.variant().check_exit(stage)?;
    Ok(SubModel { model, stage })
}

impl<'a, F: Real> SubModel<'a, F> {
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn model(&self) -> &Model<F> {
        self.model
    }

    pub fn layers(&self) -> Vec<&Layer<F>> {
        let last = self.stage;
        self.model.stages()[..=last]
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                std::iter::once(&s.main).chain(s.aux.as_ref().filter(|_| i < last))
            })
            .collect()
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers().iter().map(|l| l.name().to_string()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    pub fn params(&self) -> Vec<ParamRef<'_, F>> {
        self.layers().into_iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, F>> {
        let last = self.stage;
        self.model.stages_mut()[..=last]
            .iter_mut()
            .enumerate()
            .flat_map(|(i, s)| {
                let aux = s.aux.as_mut().filter(|_| i < last);
                std::iter::once(&mut s.main).chain(aux)
            })
            .flat_map(|l| l.params_mut())
            .collect()
    }

    /// Freezes every tensor of the slice.
    pub fn freeze(&mut self) {
        for p in self.params_mut() {
            *p.frozen = true;
        }
    }

    pub fn forward(&self, features: ArrayView2<'_, F>, batch: usize) -> Result<ForwardPass<F>> {
        self.model
            .run(features, batch, self.stage, &[self.stage], true)
    }

    pub fn backward(&mut self, tape: &ForwardTape<F>, mask_grad: Array2<F>) -> Result<()> {
        if tape.last_stage() != self.stage {
            return Err(Error::TapeMismatch(format!(
                "tape ends at stage {} but the slice ends at {}",
                tape.last_stage(),
                self.stage
            )));
        }
        let mut grads = MaskSet::new();
        grads.insert(self.stage, mask_grad);
        self.model.backward(tape, &grads)
    }
}
