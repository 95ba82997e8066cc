use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{augment, sample_rng, Triplet, TrainError};
use crate::codecs::{self, TensorContainer};
use crate::losses::{feature_loss, l1_loss, lap_loss, ConvLayer, ConvStack, LAP_DIVISOR};
use crate::synthesis::{synthesis_forward, warp_inputs, Model};
use crate::tensor::{AdaMax, AdaMaxConfig, AdaMaxState, Ops, Real, SparseMap, Tape, Tensor};
use crate::warping::{prewarp_maps, DEFAULT_TAU};

/// Training runs at the temporal midpoint only: the ground truth is the
/// middle frame of each triplet.
const TRAIN_T: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L1,
    Lap,
    /// Laplacian loss first, then the feature loss.
    FeatureRefine,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l1" => Ok(LossKind::L1),
            "lap" => Ok(LossKind::Lap),
            "feature-refine" => Ok(LossKind::FeatureRefine),
            _ => Err(format!("unknown loss \"{s}\" (expected l1, lap or feature-refine)")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::Lap => "lap",
            LossKind::FeatureRefine => "feature-refine",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: AdaMaxConfig,
    pub batch: usize,
    pub epochs: usize,
    /// Side of the square training crop.
    pub crop: usize,
    pub seed: u64,
    pub tau: f64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_iterations: Option<u64>,
    /// For [`LossKind::FeatureRefine`]: epochs spent on the Laplacian loss
    /// before switching. Defaults to half of `epochs`.
    pub refine_after: Option<usize>,
    /// Random crops, flips and temporal swaps.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Lap,
            optimizer: AdaMaxConfig::default(),
            batch: 8,
            epochs: 50,
            crop: 256,
            seed: 0,
            tau: DEFAULT_TAU,
            max_iterations: None,
            refine_after: None,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, divisor: usize) -> Result<(), TrainError> {
        if self.batch == 0 {
            return Err(TrainError::Config("batch must be at least 1".into()));
        }
        let need = if self.loss == LossKind::L1 { divisor } else { divisor.max(LAP_DIVISOR) };
        if self.crop == 0 || !self.crop.is_multiple_of(need) {
            return Err(TrainError::Config(format!("crop {} must be a positive multiple of {need}", self.crop)));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(TrainError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    fn loss_at(&self, epoch: usize) -> LossKind {
        match self.loss {
            LossKind::FeatureRefine if epoch < self.refine_after.unwrap_or(self.epochs / 2) => LossKind::Lap,
            k => k,
        }
    }
}

/// One logged optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    pub iteration: u64,
    pub epoch: usize,
    pub loss: f64,
    pub wall_time: f64,
}

impl Progress {
    pub const CSV_HEADER: &'static str = "iteration,epoch,loss,wall_time";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:.3}", self.iteration, self.epoch, self.loss, self.wall_time)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub iterations: u64,
    pub log: Vec<Progress>,
}

/// Model plus optimizer state; the checkpoint carries both.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    opt: AdaMax<f32>,
    phi: Option<ConvStack<f32>>,
}

fn step_entries(step: u64) -> Vec<f32> {
    vec![(step >> 24) as f32, (step & 0xFF_FFFF) as f32]
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate(model.grid.config.divisor())?;
        Ok(Trainer { model, config: config.clone(), opt: AdaMax::new(config.optimizer), phi: None })
    }

    /// Restores model, optimizer state and feature network from a
    /// checkpoint written by [`Trainer::to_container`].
    pub fn from_container(c: &TensorContainer, config: TrainConfig) -> Result<Self, TrainError> {
        let model = Model::from_container(c)?;
        let mut trainer = Trainer::new(model, config)?;
        if c.get("opt.step").is_some() {
            let s = c.values("opt.step", 2)?;
            let step = ((s[0] as u64) << 24) | s[1] as u64;
            let mut state = AdaMaxState { step, m: Vec::new(), u: Vec::new() };
            if step > 0 {
                for (name, t) in trainer.named_params() {
                    state.m.push(c.values(&format!("opt.m.{name}"), t.numel())?.to_vec());
                    state.u.push(c.values(&format!("opt.u.{name}"), t.numel())?.to_vec());
                }
            }
            trainer.opt = AdaMax::with_state(trainer.config.optimizer, state);
        }
        if c.get("feat.0.weight").is_some() {
            trainer.phi = Some(ConvStack::load(c)?);
        }
        Ok(trainer)
    }

    pub fn load(path: &Path, config: TrainConfig) -> Result<Self, TrainError> {
        Self::from_container(&codecs::load_container(path)?, config)
    }

    pub fn to_container(&self) -> Result<TensorContainer, TrainError> {
        let mut c = self.model.to_container()?;
        c.push("opt.step", vec![2], step_entries(self.opt.state.step))?;
        if !self.opt.state.m.is_empty() {
            let names: Vec<(String, Vec<usize>)> =
                self.named_params().into_iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
            for ((name, shape), (m, u)) in names.iter().zip(self.opt.state.m.iter().zip(&self.opt.state.u)) {
                c.push(format!("opt.m.{name}"), shape.clone(), m.clone())?;
                c.push(format!("opt.u.{name}"), shape.clone(), u.clone())?;
            }
        }
        if let Some(phi) = &self.phi {
            phi.save(&mut c)?;
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(codecs::save_container(path, &self.to_container()?)?)
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.opt.state.step
    }

    /// Feature network for the refinement phase. Without one, the context
    /// extractor is frozen into one when refinement begins.
    pub fn set_feature_net(&mut self, phi: ConvStack<f32>) {
        self.phi = Some(phi);
    }

    fn named_params(&self) -> Vec<(&str, &Tensor<f32>)> {
        let mut v: Vec<_> = self.model.grid.params.iter().collect();
        if self.model.context.trainable {
            v.extend(self.model.context.params.iter());
        }
        v
    }

    fn feature_net(&mut self) -> &ConvStack<f32> {
        let ctx = &self.model.context;
        self.phi.get_or_insert_with(|| ConvStack {
            layers: vec![ConvLayer {
                weight: ctx.weight().clone(),
                bias: ctx.bias().clone(),
                stride: 1,
                pad: 3,
                relu: ctx.rectify,
            }],
        })
    }

    /// Loss of the model on a batch at t = 0.5, plus gradients for every
    /// trained parameter when `with_grad` is set.
    fn forward_backward(
        &mut self,
        batch: &[Triplet],
        kind: LossKind,
        with_grad: bool,
    ) -> Result<(f64, Vec<Tensor<f32>>), TrainError> {
        let (i1, i2, gt, maps1, maps2) = prepare_batch(batch, self.config.tau)?;
        if kind == LossKind::FeatureRefine {
            self.feature_net();
        }
        let mut tape = Tape::new();
        let gp: Vec<_> =
            self.model.grid.params.iter().map(|(_, t)| tape.leaf(t.clone(), with_grad)).collect();
        let trainable = with_grad && self.model.context.trainable;
        let cp: Vec<_> = self.model.context.params.iter().map(|(_, t)| tape.leaf(t.clone(), trainable)).collect();
        let (i1, i2, gt) = (tape.leaf(i1, false), tape.leaf(i2, false), tape.leaf(gt, false));
        let (w1, w2, c1, c2) = warp_inputs(&mut tape, &self.model.context, &cp, &i1, &i2, maps1, maps2)?;
        let out = synthesis_forward(&mut tape, &self.model.grid, &gp, &w1, &w2, Some((&c1, &c2)))?;
        let loss = match kind {
            LossKind::L1 => l1_loss(&mut tape, &out, &gt)?,
            LossKind::Lap => lap_loss(&mut tape, &out, &gt)?,
            LossKind::FeatureRefine => feature_loss(&mut tape, &out, &gt, self.phi.as_ref().unwrap())?,
        };
        let value = tape.value(&loss).item().as_f64();
        if !value.is_finite() || !with_grad {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        let mut grads: Vec<Tensor<f32>> = gp.iter().map(|&v| tape.grad(v)).collect();
        if trainable {
            grads.extend(cp.iter().map(|&v| tape.grad(v)));
        }
        Ok((value, grads))
    }

    /// Loss on a batch without updating anything.
    pub fn batch_loss(&mut self, batch: &[Triplet], kind: LossKind) -> Result<f64, TrainError> {
        Ok(self.forward_backward(batch, kind, false)?.0)
    }

    /// One optimizer step. A non-finite loss leaves the state untouched.
    pub fn train_step(&mut self, batch: &[Triplet], kind: LossKind) -> Result<f64, TrainError> {
        let (loss, grads) = self.forward_backward(batch, kind, true)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { iteration: self.opt.state.step + 1 });
        }
        let trainable = self.model.context.trainable;
        let mut params: Vec<&mut Tensor<f32>> = self.model.grid.params.tensors_mut().collect();
        if trainable {
            params.extend(self.model.context.params.tensors_mut());
        }
        self.opt.step(&mut params, &grads)?;
        Ok(loss)
    }

    fn iterations_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.config.batch) as u64
    }

    /// Runs from the current step to the configured end. `on_step` sees
    /// every completed step; its error stops the run.
    pub fn run(
        &mut self,
        data: &[Triplet],
        mut on_step: impl FnMut(&Trainer, &Progress) -> Result<(), TrainError>,
    ) -> Result<TrainOutcome, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if let Some(t) = data.iter().find(|t| t.flows.is_none()) {
            return Err(TrainError::Dataset(format!("{} has no flow", t.source)));
        }
        let per_epoch = self.iterations_per_epoch(data.len());
        let mut total = per_epoch.saturating_mul(self.config.epochs as u64);
        if let Some(m) = self.config.max_iterations {
            total = total.min(m);
        }
        let start = Instant::now();
        let mut log = Vec::new();
        let mut order: Option<(usize, Vec<usize>)> = None;
        while self.opt.state.step < total {
            let step = self.opt.state.step;
            let epoch = (step / per_epoch) as usize;
            if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
                order = Some((epoch, epoch_order(self.config.seed, epoch, data.len())));
            }
            let idx = &order.as_ref().unwrap().1;
            let b = (step % per_epoch) as usize * self.config.batch;
            let batch = idx[b..(b + self.config.batch).min(idx.len())]
                .iter()
                .map(|&i| self.example(&data[i], epoch, i))
                .collect::<Result<Vec<_>, _>>()?;
            let loss = self.train_step(&batch, self.config.loss_at(epoch))?;
            let p = Progress { iteration: step + 1, epoch, loss, wall_time: start.elapsed().as_secs_f64() };
            log::debug!("iteration {} epoch {} loss {:.6}", p.iteration, p.epoch, p.loss);
            log.push(p);
            on_step(self, &p)?;
        }
        Ok(TrainOutcome { iterations: self.opt.state.step, log })
    }

    fn example(&self, t: &Triplet, epoch: usize, index: usize) -> Result<Triplet, TrainError> {
        if self.config.augment {
            augment(t, self.config.crop, &mut sample_rng(self.config.seed, epoch as u64, index as u64))
        } else {
            t.crop(0, 0, self.config.crop, self.config.crop)
        }
    }
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_0d3e);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

type Batch = (Tensor<f32>, Tensor<f32>, Tensor<f32>, Arc<Vec<SparseMap>>, Arc<Vec<SparseMap>>);

fn prepare_batch(batch: &[Triplet], tau: f64) -> Result<Batch, TrainError> {
    let mut maps1 = Vec::with_capacity(batch.len());
    let mut maps2 = Vec::with_capacity(batch.len());
    for t in batch {
        let f = t.flows.as_ref().ok_or_else(|| TrainError::Dataset(format!("{} has no flow", t.source)))?;
        let (m1, m2) = prewarp_maps(&t.first, &t.last, &f.forward, &f.backward, TRAIN_T, tau)?;
        maps1.push(m1);
        maps2.push(m2);
    }
    let stack = |pick: fn(&Triplet) -> &crate::codecs::Frame| -> Result<Tensor<f32>, TrainError> {
        let parts: Vec<Tensor<f32>> = batch.iter().map(|t| pick(t).to_tensor()).collect();
        Ok(Tensor::concat_batch(&parts.iter().collect::<Vec<_>>())?)
    };
    Ok((stack(|t| &t.first)?, stack(|t| &t.last)?, stack(|t| &t.middle)?, Arc::new(maps1), Arc::new(maps2)))
}

/// Trains `model` on `data` from scratch and returns the trained model.
pub fn train(data: &[Triplet], config: &TrainConfig, model: Model) -> Result<(Model, TrainOutcome), TrainError> {
    let mut trainer = Trainer::new(model, config.clone())?;
    let outcome = trainer.run(data, |_, _| Ok(()))?;
    Ok((trainer.model, outcome))
}

/// Model stored in a training checkpoint (optimizer entries are ignored).
pub fn load_checkpoint(path: &Path) -> Result<Model, TrainError> {
    Ok(Model::load(path)?)
}
