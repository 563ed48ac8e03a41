use std::sync::atomic::{AtomicU32, Ordering};

use super::variant::{Dims, Profile, StageKind, Topology, Variant, NUM_STAGES, STAGE_KINDS};
use crate::error::{Error, Result};
use crate::nn::{Activation, FcLayer, GruLayer, ParamMut, ParamRef, Real};

pub const LAYER_NAMES: [&str; NUM_STAGES] = ["fc1", "gru1", "gru2", "fc2", "fc3", "fc4"];

/// Which activations an FC exit passes through the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FcExitSource {
    /// Sigmoid of the pre-activation (the default).
    #[default]
    PreActivation,
    /// Sigmoid of the ReLU output; masks cannot go below 0.5.
    PostRelu,
}

impl FcExitSource {
    pub fn name(self) -> &'static str {
        match self {
            FcExitSource::PreActivation => "pre",
            FcExitSource::PostRelu => "post_relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(FcExitSource::PreActivation),
            "post_relu" => Ok(FcExitSource::PostRelu),
            other => Err(Error::InvalidArgument(format!(
                "unknown FC exit source `{other}` (expected pre or post_relu)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F: Real> {
    Fc(FcLayer<F>),
    Gru(GruLayer<F>),
}

impl<F: Real> Layer<F> {
    fn build(kind: StageKind, name: &str, in_dim: usize, out_dim: usize, act: Activation) -> Self {
        match kind {
            StageKind::Fc => Layer::Fc(FcLayer::new(name, in_dim, out_dim, act)),
            StageKind::Gru => Layer::Gru(GruLayer::new(name, in_dim, out_dim)),
        }
    }

    pub fn kind(&self) -> StageKind {
        match self {
            Layer::Fc(_) => StageKind::Fc,
            Layer::Gru(_) => StageKind::Gru,
        }
    }

    pub fn name(&self) -> &str {
        let full = match self {
            Layer::Fc(l) => l.weight.name(),
            Layer::Gru(l) => l.weight_ih.name(),
        };
        full.rsplit_once('.').map_or(full, |(prefix, _)| prefix)
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Fc(l) => l.in_dim(),
            Layer::Gru(l) => l.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Fc(l) => l.out_dim(),
            Layer::Gru(l) => l.hidden_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Layer::Fc(l) => l.num_params(),
            Layer::Gru(l) => l.num_params(),
        }
    }

    /// Multiply-accumulates per frame.
    pub fn macs_per_frame(&self) -> usize {
        let (i, o) = (self.in_dim(), self.out_dim());
        match self {
            Layer::Fc(_) => i * o,
            Layer::Gru(_) => 3 * (i * o + o * o),
        }
    }

    pub fn is_frozen(&self) -> bool {
        match self {
            Layer::Fc(l) => l.is_frozen(),
            Layer::Gru(l) => l.is_frozen(),
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        match self {
            Layer::Fc(l) => l.set_frozen(frozen),
            Layer::Gru(l) => l.set_frozen(frozen),
        }
    }

    pub fn init(&mut self, seed: u64) {
        match self {
            Layer::Fc(l) => l.init(seed),
            Layer::Gru(l) => l.init(seed),
        }
    }

    pub fn params(&self) -> Vec<ParamRef<'_, F>> {
        match self {
            Layer::Fc(l) => l.params(),
            Layer::Gru(l) => l.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, F>> {
        match self {
            Layer::Fc(l) => l.params_mut(),
            Layer::Gru(l) => l.params_mut(),
        }
    }
}

/// One of the six stages: a main layer (whose activations yield the exit
/// mask) and, in split/concat models, an auxiliary feature layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage<F: Real> {
    pub kind: StageKind,
    pub main: Layer<F>,
    pub aux: Option<Layer<F>>,
}

/// Records which layers a forward pass touched, one bit per layer:
/// bit `2 i` for the main layer of stage `i`, bit `2 i + 1` for its
/// auxiliary layer.
#[derive(Debug, Default)]
pub struct AccessLog(AtomicU32);

impl AccessLog {
    pub(crate) fn mark(&self, stage: usize, aux: bool) {
        let bit = 1u32 << (2 * stage + aux as usize);
        self.0.fetch_or(bit, Ordering::Relaxed);
    }

    fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }

    fn snapshot(&self) -> LayerAccess {
        LayerAccess(self.0.load(Ordering::Relaxed))
    }
}

/// Snapshot of an [`AccessLog`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerAccess(u32);

impl LayerAccess {
    pub fn main(self, stage: usize) -> bool {
        self.0 & (1 << (2 * stage)) != 0
    }

    pub fn aux(self, stage: usize) -> bool {
        self.0 & (1 << (2 * stage + 1)) != 0
    }

    /// Deepest stage with any touched layer.
    pub fn deepest_stage(self) -> Option<usize> {
        (0..NUM_STAGES).rev().find(|&s| self.main(s) || self.aux(s))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// A built model variant: the stage graph and all parameters.
#[derive(Debug)]
pub struct Model<F: Real> {
    variant: Variant,
    dims: Dims,
    seed: u64,
    pub(crate) fc_exit: FcExitSource,
    pub(crate) stages: Vec<Stage<F>>,
    pub(crate) access: AccessLog,
}

impl<F: Real> Clone for Model<F> {
    fn clone(&self) -> Self {
        Self {
            variant: self.variant,
            dims: self.dims,
            seed: self.seed,
            fc_exit: self.fc_exit,
            stages: self.stages.clone(),
            access: AccessLog::default(),
        }
    }
}

impl<F: Real> PartialEq for Model<F> {
    fn eq(&self, other: &Self) -> bool {
        self.variant == other.variant
            && self.dims == other.dims
            && self.fc_exit == other.fc_exit
            && self.stages == other.stages
    }
}

/// Builds and initializes a variant with the profile's widths.
pub fn build_model(variant: Variant, profile: Profile, seed: u64) -> Result<Model<f32>> {
    Model::new(variant, profile.dims(), seed)
}

impl<F: Real> Model<F> {
    /// Builds the stage graph with explicit widths and initializes every
    /// tensor from `seed`.
    pub fn new(variant: Variant, dims: Dims, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(variant, dims)?;
        model.seed = seed;
        for stage in &mut model.stages {
            stage.main.init(seed);
            if let Some(aux) = &mut stage.aux {
                aux.init(seed);
            }
        }
        Ok(model)
    }

    /// Same graph with every parameter set to zero.
    pub fn zeroed(variant: Variant, dims: Dims) -> Result<Self> {
        dims.validate(variant)?;
        let topology = variant.topology();
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for (i, &kind) in STAGE_KINDS.iter().enumerate() {
            let last = i == NUM_STAGES - 1;
            let main_act = if last { Activation::Sigmoid } else { Activation::Relu };
            let name = LAYER_NAMES[i];
            let stage = match topology {
                Topology::Chain => {
                    let in_dim = if i == 0 { dims.bins } else { dims.chain[i - 1] };
                    Stage {
                        kind,
                        main: Layer::build(kind, name, in_dim, dims.chain[i], main_act),
                        aux: None,
                    }
                }
                Topology::Split | Topology::Concat => {
                    let joined = dims.bins + dims.aux;
                    let main_in = if i == 0 { dims.bins } else { joined };
                    let aux_in = match (i, topology) {
                        (0, _) => dims.bins,
                        (_, Topology::Split) => dims.aux,
                        _ => joined,
                    };
                    Stage {
                        kind,
                        main: Layer::build(kind, name, main_in, dims.bins, main_act),
                        aux: (!last).then(|| {
                            Layer::build(
                                kind,
                                &format!("{name}_aux"),
                                aux_in,
                                dims.aux,
                                Activation::Relu,
                            )
                        }),
                    }
                }
            };
            stages.push(stage);
        }
        Ok(Self {
            variant,
            dims,
            seed: 0,
            fc_exit: FcExitSource::default(),
            stages,
            access: AccessLog::default(),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn fc_exit_source(&self) -> FcExitSource {
        self.fc_exit
    }

    pub fn set_fc_exit_source(&mut self, source: FcExitSource) {
        self.fc_exit = source;
    }

    pub fn stages(&self) -> &[Stage<F>] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [Stage<F>] {
        &mut self.stages
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<F>> {
        self.stages
            .iter()
            .flat_map(|s| std::iter::once(&s.main).chain(s.aux.as_ref()))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<F>> {
        self.stages
            .iter_mut()
            .flat_map(|s| std::iter::once(&mut s.main).chain(s.aux.as_mut()))
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn params(&self) -> Vec<ParamRef<'_, F>> {
        self.layers().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, F>> {
        self.layers_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for l in self.layers_mut() {
            l.set_frozen(frozen);
        }
    }

    pub fn reset_access_log(&self) {
        self.access.reset();
    }

    pub fn layer_access(&self) -> LayerAccess {
        self.access.snapshot()
    }

    /// Copies every tensor of `other` into the tensor with the same name and
    /// shape here. Returns the number of tensors copied; fails if a tensor of
    /// `other` has no counterpart.
    pub fn load_matching(&mut self, other: &Model<F>) -> Result<usize> {
        let src = other.params();
        let mut copied = 0;
        for dst in self.params_mut() {
            if let Some(s) = src.iter().find(|s| s.name == dst.name) {
                if s.shape != dst.shape.as_slice() {
                    return Err(Error::shape("matching tensor", &dst.shape, s.shape));
                }
                dst.value.copy_from_slice(s.value);
                copied += 1;
            }
        }
        if copied != src.len() {
            return Err(Error::InvalidArgument(format!(
                "{} of {} source tensors have no counterpart in {}",
                src.len() - copied,
                src.len(),
                self.variant
            )));
        }
        Ok(copied)
    }

    /// Converts element type, e.g. to run double-precision checks on an
    /// `f32` model.
    pub fn cast<G: Real>(&self) -> Model<G> {
        let mut out = Model::<G>::zeroed(self.variant, self.dims).expect("dims already validated");
        out.seed = self.seed;
        out.fc_exit = self.fc_exit;
        let src = self.params();
        for (dst, s) in out.params_mut().into_iter().zip(src) {
            for (d, v) in dst.value.iter_mut().zip(s.value) {
                *d = G::from(*v).expect("finite parameter");
            }
            *dst.frozen = s.frozen;
        }
        out
    }
}
