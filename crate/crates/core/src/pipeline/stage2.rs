use rand::seq::{index, SliceRandom};

use crate::autodiff::{Graph, Tensor, Var};
use crate::geometry::Volume;
use crate::losses::{
    anatomy_graph, discriminator_loss, ema_update, generator_loss, hybrid_graph, l1_loss,
    sample_anchors, semantic_graph, LossTerms, PerceptualExtractor, Pixel, PERCEPTUAL_SEED,
};
use crate::networks::{
    accumulate_grads, build_discriminator, build_unet, disc_graph, feature_forward, feature_graph,
    unet_forward, unet_graph, Bound, Grads, NetworkParams,
};
use crate::parallel::{map_owned, map_range};
use crate::{Error, Result};

use super::checkpoint::Checkpoint;
use super::log::{Observer, StepRecord};
use super::optim::{adamw_step, cosine_lr, OptimizerState};
use super::stage1::Stage1State;
use super::{
    axial_slice, check_finite, check_stage, stream_rng, training_pair, ModelConfig, Stream,
    TrainConfig,
};

/// Anchors on the semantic (bottleneck) map and on the anatomy map.
type AnchorSets = (Vec<Pixel>, Vec<Pixel>);

pub const STAGE2_COMPONENTS: [&str; 6] = [
    "l1",
    "perceptual",
    "adversarial",
    "semantic",
    "anatomy",
    "disc",
];

/// Everything that changes during stage 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2State {
    pub refiner: NetworkParams<f32>,
    pub disc: NetworkParams<f32>,
    pub student: NetworkParams<f32>,
    pub teacher: NetworkParams<f32>,
    pub opt_refiner: OptimizerState<f32>,
    pub opt_disc: OptimizerState<f32>,
    pub opt_student: OptimizerState<f32>,
    pub epoch: usize,
    pub step: u64,
}

impl Stage2State {
    fn fresh(model: &ModelConfig, seed: u64) -> Result<Self> {
        let refiner = build_unet(&model.refiner, seed)?;
        let disc = build_discriminator(&model.discriminator, seed.wrapping_add(1))?;
        let student = build_unet(&model.feature, seed.wrapping_add(2))?;
        Ok(Self {
            opt_refiner: OptimizerState::new(&refiner),
            opt_disc: OptimizerState::new(&disc),
            opt_student: OptimizerState::new(&student),
            teacher: student.clone(),
            refiner,
            disc,
            student,
            epoch: 0,
            step: 0,
        })
    }

    pub fn to_checkpoint(&self, model: &ModelConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.set_meta("kind", "stage2");
        c.set_json("model", model)?;
        c.set_json("train", cfg)?;
        c.set_meta("epoch", self.epoch);
        c.set_meta("step", self.step);
        c.put_params("refiner", &self.refiner);
        c.put_params("disc", &self.disc);
        c.put_params("student", &self.student);
        c.put_params("teacher", &self.teacher);
        c.put_optimizer("opt.refiner", &self.opt_refiner);
        c.put_optimizer("opt.disc", &self.opt_disc);
        c.put_optimizer("opt.student", &self.opt_student);
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(ModelConfig, Self)> {
        if ckpt.meta("kind")? != "stage2" {
            return Err(Error::ParamMismatch(format!(
                "expected a stage-2 checkpoint, found `{}`",
                ckpt.meta("kind")?
            )));
        }
        let model: ModelConfig = ckpt.json("model")?;
        model.validate()?;
        let t = Self::fresh(&model, 0)?;
        let state = Self {
            refiner: ckpt.take_params("refiner", &t.refiner)?,
            disc: ckpt.take_params("disc", &t.disc)?,
            student: ckpt.take_params("student", &t.student)?,
            teacher: ckpt.take_params("teacher", &t.student)?,
            opt_refiner: ckpt.take_optimizer("opt.refiner", &t.refiner)?,
            opt_disc: ckpt.take_optimizer("opt.disc", &t.disc)?,
            opt_student: ckpt.take_optimizer("opt.student", &t.student)?,
            epoch: ckpt.meta_parsed("epoch")?,
            step: ckpt.meta_parsed("step")?,
        };
        Ok((model, state))
    }
}

/// Coarse output and normalized ground truth of one training volume.
struct Sample {
    coarse: Tensor<f32>,
    target: Tensor<f32>,
}

/// One slice's refiner pass, kept alive between the discriminator update
/// and the generator update.
struct SliceGraph {
    g: Graph<f32>,
    refiner: Bound,
    refined: Var,
    target: Tensor<f32>,
}

struct SliceOutcome {
    terms: [f64; 5],
    total: f64,
    refiner: Grads<f32>,
    student: Option<Grads<f32>>,
}

/// Stage-2 trainer: the 2D refiner sharpens axial slices of the frozen
/// coarse reconstruction under the hybrid objective, with a patch
/// discriminator and an EMA teacher for the contrastive terms.
pub struct Stage2 {
    model: ModelConfig,
    cfg: TrainConfig,
    samples: Vec<Sample>,
    extractor: PerceptualExtractor<f32>,
    state: Stage2State,
}

fn check_coarse_compatible(model: &ModelConfig, coarse_model: &ModelConfig) -> Result<()> {
    if model.dims != coarse_model.dims
        || model.spacing != coarse_model.spacing
        || model.window != coarse_model.window
        || model.coarse != coarse_model.coarse
    {
        return Err(Error::ParamMismatch(
            "stage-1 checkpoint was trained for a different geometry or coarse architecture".into(),
        ));
    }
    Ok(())
}

impl Stage2 {
    /// Starts stage 2 on top of a stage-1 checkpoint. The coarse network is
    /// evaluated once per volume and never updated.
    pub fn new(
        model: ModelConfig,
        cfg: TrainConfig,
        volumes: &[Volume<f32>],
        coarse_ckpt: &Checkpoint,
    ) -> Result<Self> {
        model.validate()?;
        let state = Stage2State::fresh(&model, cfg.seed)?;
        Self::with_state(model, cfg, volumes, coarse_ckpt, state)
    }

    pub fn resume(
        cfg: TrainConfig,
        volumes: &[Volume<f32>],
        coarse_ckpt: &Checkpoint,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        let (model, state) = Stage2State::from_checkpoint(ckpt)?;
        Self::with_state(model, cfg, volumes, coarse_ckpt, state)
    }

    fn with_state(
        model: ModelConfig,
        cfg: TrainConfig,
        volumes: &[Volume<f32>],
        coarse_ckpt: &Checkpoint,
        state: Stage2State,
    ) -> Result<Self> {
        check_stage(&cfg, 2)?;
        let (coarse_model, coarse) = Stage1State::from_checkpoint(coarse_ckpt)?;
        check_coarse_compatible(&model, &coarse_model)?;
        if volumes.is_empty() {
            return Err(Error::Config("stage 2 needs at least one volume".into()));
        }
        if state.epoch > cfg.epochs {
            return Err(Error::Config(format!(
                "checkpoint is at epoch {} but the run has {} epochs",
                state.epoch, cfg.epochs
            )));
        }
        let coarse = &coarse.coarse;
        let samples = volumes
            .iter()
            .map(|v| {
                let (input, target) = training_pair(v, &model)?;
                let coarse = unet_forward(coarse, &model.coarse, &input)?;
                Ok(Sample { coarse, target })
            })
            .collect::<Result<_>>()?;
        let extractor = PerceptualExtractor::random(model.feature.clone(), PERCEPTUAL_SEED)?;
        Ok(Self {
            model,
            cfg,
            samples,
            extractor,
            state,
        })
    }

    pub fn state(&self) -> &Stage2State {
        &self.state
    }

    pub fn into_state(self) -> Stage2State {
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

    fn contrastive_on(&self) -> bool {
        self.cfg.loss_weights.w_contrast > 0.0
    }

    fn refine(&self, sample: &Sample, z: usize) -> Result<SliceGraph> {
        let mut g = Graph::new();
        let refiner = self.state.refiner.bind(&mut g, true);
        let x = g.constant(axial_slice(&sample.coarse, z));
        let refined = unet_graph(&mut g, &refiner, &self.model.refiner, x)?.output;
        Ok(SliceGraph {
            g,
            refiner,
            refined,
            target: axial_slice(&sample.target, z),
        })
    }

    fn disc_grads(&self, real: &Tensor<f32>, fake: &Tensor<f32>) -> Result<(f64, Grads<f32>)> {
        let mut g = Graph::new();
        let b = self.state.disc.bind(&mut g, true);
        let real = g.constant(real.clone());
        let fake = g.constant(fake.clone());
        let sr = disc_graph(&mut g, &b, &self.model.discriminator, real)?;
        let sf = disc_graph(&mut g, &b, &self.model.discriminator, fake)?;
        let loss = discriminator_loss(&mut g, sr, sf)?;
        let value = g.value(loss).item() as f64;
        check_finite(
            value,
            "discriminator loss",
            self.state.epoch,
            self.state.step,
        )?;
        g.backward(loss)?;
        Ok((value, b.grads(&g)?))
    }

    fn generator(&self, s: SliceGraph, anchors: AnchorSets) -> Result<SliceOutcome> {
        let SliceGraph {
            mut g,
            refiner,
            refined,
            target,
        } = s;
        let g = &mut g;
        let disc = self.state.disc.bind(g, false);
        let score = disc_graph(g, &disc, &self.model.discriminator, refined)?;
        let adversarial = generator_loss(g, score)?;
        let t = g.constant(target.clone());
        let l1 = l1_loss(g, refined, t)?;
        let perceptual = self.extractor.loss_graph(g, refined, &target)?;
        let mut terms = LossTerms {
            l1: Some(l1),
            perceptual: Some(perceptual),
            adversarial: Some(adversarial),
            semantic: None,
            anatomy: None,
        };
        let mut student = None;
        if self.contrastive_on() {
            let cc = &self.cfg.contrastive;
            let teacher = feature_forward(&self.state.teacher, &self.model.feature, &target)?;
            let b = self.state.student.bind(g, !self.cfg.freeze_student);
            let (_, f) = feature_graph(g, &b, &self.model.feature, refined)?;
            terms.semantic = Some(semantic_graph(
                g,
                f.semantic,
                &teacher.semantic,
                &anchors.0,
                cc,
            )?);
            terms.anatomy = Some(anatomy_graph(
                g,
                f.anatomy,
                &teacher.anatomy,
                &anchors.1,
                cc,
            )?);
            student = Some(b);
        }
        let total = hybrid_graph(g, &terms, &self.cfg.loss_weights)?;
        let value = |v: Option<Var>, g: &Graph<f32>| v.map_or(0.0, |v| g.value(v).item() as f64);
        let values = [
            value(terms.l1, g),
            value(terms.perceptual, g),
            value(terms.adversarial, g),
            value(terms.semantic, g),
            value(terms.anatomy, g),
        ];
        let total_value = g.value(total).item() as f64;
        check_finite(
            total_value,
            "hybrid loss",
            self.state.epoch,
            self.state.step,
        )?;
        g.backward(total)?;
        let student = match student {
            Some(b) if !self.cfg.freeze_student => Some(b.grads(g)?),
            _ => None,
        };
        Ok(SliceOutcome {
            terms: values,
            total: total_value,
            refiner: refiner.grads(g)?,
            student,
        })
    }

    /// Draws contrastive anchors for one slice, on the semantic and the
    /// anatomy grid.
    fn anchors(&self, rng: &mut rand_chacha::ChaCha8Rng) -> AnchorSets {
        if !self.contrastive_on() {
            return (Vec::new(), Vec::new());
        }
        let [nx, ny, _] = self.model.dims;
        let f = self.model.feature.stride_multiple();
        let n = self.cfg.contrastive.anchors_per_image;
        let s = sample_anchors(ny / f, nx / f, n, rng);
        let a = sample_anchors(ny, nx, n, rng);
        (s, a)
    }

    /// One optimizer step on `batch_size` axial slices of one volume:
    /// refiner forward, discriminator update on the detached output, refiner
    /// and student update, then the EMA teacher update.
    fn train_step(&mut self, sample_idx: usize, lr: f64, obs: &mut dyn Observer) -> Result<()> {
        let epoch = self.state.epoch;
        let step = self.state.step;
        let nz = self.model.dims[2];
        let count = self.cfg.batch_size.min(nz);
        let mut slice_rng = stream_rng(self.cfg.seed, Stream::Slices, step);
        let zs = index::sample(&mut slice_rng, nz, count).into_vec();
        let sample = &self.samples[sample_idx];

        let graphs = map_range(zs.len(), |j| self.refine(sample, zs[j]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let scale = 1.0 / zs.len() as f32;
        let mean = 1.0 / zs.len() as f64;
        let fakes: Vec<Tensor<f32>> = graphs
            .iter()
            .map(|s| s.g.value(s.refined).clone())
            .collect();
        let disc_results = map_range(zs.len(), |j| self.disc_grads(&graphs[j].target, &fakes[j]));
        let mut disc_grads = Grads::new();
        let mut d_loss = 0.0;
        for r in disc_results {
            let (l, g) = r?;
            d_loss += l * mean;
            accumulate_grads(&mut disc_grads, &g, scale);
        }
        let adamw = self.cfg.adamw();
        let st = &mut self.state;
        adamw_step(&mut st.disc, &disc_grads, &mut st.opt_disc, lr, &adamw)?;

        let mut anchor_rng = stream_rng(self.cfg.seed, Stream::Anchors, step);
        let work: Vec<_> = graphs
            .into_iter()
            .map(|s| (s, self.anchors(&mut anchor_rng)))
            .collect();
        let outcomes = map_owned(work, |(s, a)| self.generator(s, a));
        let mut refiner_grads = Grads::new();
        let mut student_grads = Grads::new();
        let mut terms = [0.0; 5];
        let mut total = 0.0;
        for o in outcomes {
            let o = o?;
            for (acc, v) in terms.iter_mut().zip(o.terms) {
                *acc += v * mean;
            }
            total += o.total * mean;
            accumulate_grads(&mut refiner_grads, &o.refiner, scale);
            if let Some(sg) = &o.student {
                accumulate_grads(&mut student_grads, sg, scale);
            }
        }
        let st = &mut self.state;
        adamw_step(
            &mut st.refiner,
            &refiner_grads,
            &mut st.opt_refiner,
            lr,
            &adamw,
        )?;
        if !student_grads.is_empty() {
            adamw_step(
                &mut st.student,
                &student_grads,
                &mut st.opt_student,
                lr,
                &adamw,
            )?;
        }
        ema_update(
            &mut st.teacher,
            &st.student,
            self.cfg.contrastive.ema_momentum,
        )?;

        let mut components: Vec<(&'static str, f64)> =
            STAGE2_COMPONENTS[..5].iter().copied().zip(terms).collect();
        components.push(("disc", d_loss));
        obs.on_step(&StepRecord {
            epoch,
            step,
            loss_total: total,
            components,
            lr,
        })?;
        self.state.step += 1;
        Ok(())
    }

    /// One pass over the training volumes in a seeded order, one step per
    /// volume.
    pub fn run_epoch(&mut self, obs: &mut dyn Observer) -> Result<()> {
        let epoch = self.state.epoch;
        let lr = cosine_lr(epoch, self.cfg.epochs, self.cfg.lr_init, self.cfg.lr_min)?;
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut stream_rng(
            self.cfg.seed,
            Stream::Shuffle,
            epoch as u64,
        ));
        for i in order {
            self.train_step(i, lr, obs)?;
        }
        self.state.epoch += 1;
        let done = self.state.epoch;
        if done.is_multiple_of(self.cfg.checkpoint_every) || done == self.cfg.epochs {
            obs.on_checkpoint(done, &self.checkpoint()?)?;
        }
        Ok(())
    }

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

/// Trains the refiner on top of a stage-1 checkpoint and returns the final
/// stage-2 checkpoint.
pub fn train_stage2(
    volumes: &[Volume<f32>],
    coarse_ckpt: &Checkpoint,
    model: &ModelConfig,
    cfg: &TrainConfig,
    obs: &mut dyn Observer,
) -> Result<Checkpoint> {
    let mut t = Stage2::new(model.clone(), cfg.clone(), volumes, coarse_ckpt)?;
    t.run(obs)?;
    t.checkpoint()
}
