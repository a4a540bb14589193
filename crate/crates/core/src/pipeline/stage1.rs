use rand::seq::SliceRandom;

use crate::autodiff::{Graph, Tensor};
use crate::geometry::Volume;
use crate::losses::mse_loss;
use crate::networks::{accumulate_grads, build_unet, unet_graph, Grads, NetworkParams};
use crate::parallel::map_range;
use crate::{Error, Result};

use super::checkpoint::Checkpoint;
use super::log::{Observer, StepRecord};
use super::optim::{adamw_step, cosine_lr, OptimizerState};
use super::{
    check_finite, check_stage, stream_rng, training_pair, ModelConfig, Stream, TrainConfig,
};

pub const STAGE1_COMPONENTS: [&str; 1] = ["mse"];

/// Everything that changes during stage 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1State {
    pub coarse: NetworkParams<f32>,
    pub opt: OptimizerState<f32>,
    /// epochs completed
    pub epoch: usize,
    pub step: u64,
}

impl Stage1State {
    pub fn to_checkpoint(&self, model: &ModelConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.set_meta("kind", "stage1");
        c.set_json("model", model)?;
        c.set_json("train", cfg)?;
        c.set_meta("epoch", self.epoch);
        c.set_meta("step", self.step);
        c.put_params("coarse", &self.coarse);
        c.put_optimizer("opt.coarse", &self.opt);
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(ModelConfig, Self)> {
        if ckpt.meta("kind")? != "stage1" {
            return Err(Error::ParamMismatch(format!(
                "expected a stage-1 checkpoint, found `{}`",
                ckpt.meta("kind")?
            )));
        }
        let model: ModelConfig = ckpt.json("model")?;
        model.validate()?;
        let template = build_unet::<f32>(&model.coarse, 0)?;
        let state = Self {
            coarse: ckpt.take_params("coarse", &template)?,
            opt: ckpt.take_optimizer("opt.coarse", &template)?,
            epoch: ckpt.meta_parsed("epoch")?,
            step: ckpt.meta_parsed("step")?,
        };
        Ok((model, state))
    }
}

/// Stage-1 trainer: the coarse 3D U-Net regresses the normalized volume
/// from the normalized back-projection.
pub struct Stage1 {
    model: ModelConfig,
    cfg: TrainConfig,
    pairs: Vec<(Tensor<f32>, Tensor<f32>)>,
    state: Stage1State,
}

impl Stage1 {
    pub fn new(model: ModelConfig, cfg: TrainConfig, volumes: &[Volume<f32>]) -> Result<Self> {
        let coarse = build_unet(&model.coarse, cfg.seed)?;
        let state = Stage1State {
            opt: OptimizerState::new(&coarse),
            coarse,
            epoch: 0,
            step: 0,
        };
        Self::with_state(model, cfg, volumes, state)
    }

    /// Continues from a checkpoint written by an earlier run.
    pub fn resume(cfg: TrainConfig, volumes: &[Volume<f32>], ckpt: &Checkpoint) -> Result<Self> {
        let (model, state) = Stage1State::from_checkpoint(ckpt)?;
        Self::with_state(model, cfg, volumes, state)
    }

    fn with_state(
        model: ModelConfig,
        cfg: TrainConfig,
        volumes: &[Volume<f32>],
        state: Stage1State,
    ) -> Result<Self> {
        model.validate()?;
        check_stage(&cfg, 1)?;
        if volumes.is_empty() {
            return Err(Error::Config("stage 1 needs at least one volume".into()));
        }
        if state.epoch > cfg.epochs {
            return Err(Error::Config(format!(
                "checkpoint is at epoch {} but the run has {} epochs",
                state.epoch, cfg.epochs
            )));
        }
        let pairs = volumes
            .iter()
            .map(|v| training_pair(v, &model))
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            cfg,
            pairs,
            state,
        })
    }

    pub fn state(&self) -> &Stage1State {
        &self.state
    }

    pub fn into_state(self) -> Stage1State {
        self.state
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        self.state.to_checkpoint(&self.model, &self.cfg)
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    fn item_grads(&self, idx: usize) -> Result<(f64, Grads<f32>)> {
        let (input, target) = &self.pairs[idx];
        let mut g = Graph::new();
        let b = self.state.coarse.bind(&mut g, true);
        let x = g.constant(input.clone());
        let y = unet_graph(&mut g, &b, &self.model.coarse, x)?.output;
        let t = g.constant(target.clone());
        let loss = mse_loss(&mut g, y, t)?;
        let value = g.value(loss).item() as f64;
        check_finite(value, "stage-1 loss", self.state.epoch, self.state.step)?;
        g.backward(loss)?;
        Ok((value, b.grads(&g)?))
    }

    /// Runs one epoch: a seeded shuffle of the volumes, split into batches
    /// whose gradients are averaged.
    pub fn run_epoch(&mut self, obs: &mut dyn Observer) -> Result<()> {
        let epoch = self.state.epoch;
        let lr = cosine_lr(epoch, self.cfg.epochs, self.cfg.lr_init, self.cfg.lr_min)?;
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut stream_rng(
            self.cfg.seed,
            Stream::Shuffle,
            epoch as u64,
        ));
        let adamw = self.cfg.adamw();
        for batch in order.chunks(self.cfg.batch_size) {
            let results = map_range(batch.len(), |j| self.item_grads(batch[j]));
            let scale = 1.0 / batch.len() as f32;
            let mut grads = Grads::new();
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l / batch.len() as f64;
                accumulate_grads(&mut grads, &g, scale);
            }
            adamw_step(
                &mut self.state.coarse,
                &grads,
                &mut self.state.opt,
                lr,
                &adamw,
            )?;
            obs.on_step(&StepRecord {
                epoch,
                step: self.state.step,
                loss_total: loss,
                components: vec![("mse", loss)],
                lr,
            })?;
            self.state.step += 1;
        }
        self.state.epoch += 1;
        let done = self.state.epoch;
        if done.is_multiple_of(self.cfg.checkpoint_every) || done == self.cfg.epochs {
            obs.on_checkpoint(done, &self.checkpoint()?)?;
        }
        Ok(())
    }

    /// Runs until `until` epochs are complete (capped at the configured
    /// total).
    pub fn run_until(&mut self, until: usize, obs: &mut dyn Observer) -> Result<()> {
        while self.state.epoch < until.min(self.cfg.epochs) {
            self.run_epoch(obs)?;
        }
        Ok(())
    }

    pub fn run(&mut self, obs: &mut dyn Observer) -> Result<()> {
        self.run_until(self.cfg.epochs, obs)
    }
}

/// Trains the coarse network from scratch and returns the final checkpoint.
pub fn train_stage1(
    volumes: &[Volume<f32>],
    model: &ModelConfig,
    cfg: &TrainConfig,
    obs: &mut dyn Observer,
) -> Result<Checkpoint> {
    let mut t = Stage1::new(model.clone(), cfg.clone(), volumes)?;
    t.run(obs)?;
    t.checkpoint()
}
