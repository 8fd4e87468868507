//! Dataset synthesis, the alternating generator/discriminator optimization
//! and evaluation.
//!
//! Randomness flows from one seeded ChaCha8 stream, consumed per step in
//! this order: batch indices, then (when adversarial training is on) one
//! random pose per sample for the random-view branch, then the sampled
//! render views, sample-major. Growing a discriminator stage draws its
//! initial weights from the same stream before the step begins.

mod dataset;
mod eval;
mod optim;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    generate_toy_dataset, load_dataset, normalize, split_by_shape, write_dataset, DatasetSpec, ShapeFamily,
    SketchSample,
};
pub use eval::{evaluate, ClassMetrics, EvalReport};
pub use optim::Adam;

use crate::geometry::{CameraIntrinsics, CameraPose, GeometryError, ViewCamera, CANONICAL_DISTANCE};
use crate::losses::{
    discriminator_adversarial_graph, flatten_loss_graph, generator_adversarial_graph, laplacian_loss_graph,
    multiscale_loss_graph, total_loss, viewpoint_loss_graph, LossConfig, LossError, LossReport,
};
use crate::nn::{
    decode_graph, discriminate_graph, encode_graph, predict_view_graph, read_weights, view_code_graph, write_weights,
    Binding, ModelConfig, ModelWeights, NnError, Tape, TemplateMesh, Tensor, Var, WeightsFile, DISC_RESOLUTIONS,
};
use crate::nn::sketch_batch;
use crate::raster::{RasterError, SketchImage};
use crate::render::{render_soft_graph, RasterParams, RenderError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("unknown shape family '{0}'")]
    UnknownFamily(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("dataset manifest: {0}")]
    Manifest(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform distribution over elevation and azimuth ranges (degrees) at a
/// fixed distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseDistribution {
    pub elevation: [f64; 2],
    pub azimuth: [f64; 2],
    pub distance: f64,
}

impl Default for PoseDistribution {
    fn default() -> Self {
        Self {
            elevation: [-20.0, 40.0],
            azimuth: [0.0, 360.0],
            distance: CANONICAL_DISTANCE,
        }
    }
}

impl PoseDistribution {
    pub fn validate(&self) -> Result<(), TrainError> {
        let [e0, e1] = self.elevation;
        let [a0, a1] = self.azimuth;
        let finite = [e0, e1, a0, a1, self.distance].iter().all(|v| v.is_finite());
        if !finite || e0 > e1 || a0 > a1 || e0 < -90.0 || e1 > 90.0 || a1 - a0 > 360.0 || self.distance <= 0.0 {
            return Err(TrainError::InvalidConfig(format!("pose distribution {self:?}")));
        }
        Ok(())
    }
}

/// Uniform draw in each angular range; a degenerate range is a point mass.
pub fn sample_pose(dist: &PoseDistribution, rng: &mut impl Rng) -> CameraPose {
    let draw = |rng: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| if lo < hi { rng.gen_range(lo..hi) } else { lo };
    let e = draw(rng, dist.elevation);
    let a = draw(rng, dist.azimuth);
    CameraPose::new(e, a, dist.distance).expect("validated distribution")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Random views rendered per sample when random pose sampling is on.
    pub views_per_step: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Random pose sampling.
    pub rps: bool,
    /// Progressive shape discriminator.
    pub sd: bool,
    /// Fractions of `steps` at which the discriminator moves to 32² and 64².
    pub stage_fractions: [f64; 2],
    pub seed: u64,
    pub loss: LossConfig,
    pub raster: RasterParams,
    pub poses: PoseDistribution,
    /// Render the supervision silhouette at the ground-truth pose instead of
    /// the predicted one (diagnostic).
    pub supervise_at_gt: bool,
    pub model: ModelConfig,
    /// Step size of the finite-difference Hessian-vector product used for
    /// the R1 parameter gradient, relative to the largest input gradient.
    pub r1_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            views_per_step: 3,
            lr: 1e-4,
            lr_decay: 0.3,
            decay_every: 800,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            rps: true,
            sd: true,
            stage_fractions: [0.25, 0.6],
            seed: 0,
            loss: LossConfig::default(),
            raster: RasterParams::default(),
            poses: PoseDistribution::default(),
            supervise_at_gt: false,
            model: ModelConfig::default(),
            r1_eps: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.views_per_step == 0 {
            return bad("views_per_step must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be > 0");
        }
        if self.batch_size == 0 || self.decay_every == 0 {
            return bad("batch_size and decay_every must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        let [f0, f1] = self.stage_fractions;
        if !(0.0 <= f0 && f0 <= f1 && f1 <= 1.0) {
            return bad("stage fractions must be ascending in [0, 1]");
        }
        let size = self.model.input_size;
        if DISC_RESOLUTIONS.iter().any(|r| size % r != 0) {
            return bad("input size must be a multiple of every discriminator resolution");
        }
        self.loss.validate()?;
        self.poses.validate()
    }

    pub fn adversarial(&self) -> bool {
        self.rps || self.sd
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.lr_decay.powi((step / self.decay_every) as i32)
    }

    /// Active discriminator stage at `step`.
    pub fn stage_at(&self, step: usize) -> usize {
        if !self.sd {
            return DISC_RESOLUTIONS.len() - 1;
        }
        let f = step as f64 / self.steps.max(1) as f64;
        if f < self.stage_fractions[0] {
            0
        } else if f < self.stage_fractions[1] {
            1
        } else {
            2
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub sp: f64,
    pub r: f64,
    pub v: f64,
    pub sd: f64,
    pub dd: f64,
    pub total: f64,
    pub d_loss: Option<f64>,
    pub r1: Option<f64>,
    pub stage: Option<usize>,
}

/// Silhouettes handed from a generator step to the discriminator step,
/// `[M, 1, R, R]` at the active stage resolution.
#[derive(Clone, Debug)]
pub struct AdversarialBatch {
    pub real: Tensor,
    pub fake: Tensor,
    pub stage: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscReport {
    pub loss: f64,
    pub r1: f64,
}

fn is_disc(name: &str) -> bool {
    ModelWeights::is_discriminator_param(name)
}

fn is_gen(name: &str) -> bool {
    !ModelWeights::is_discriminator_param(name)
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var, NnError> {
    let s = tape.stack(terms)?;
    Ok(tape.mean(s))
}

/// Pose from predicted radians, clamped into the model's elevation range.
fn pose_from_prediction(cfg: &ModelConfig, elev: f64, azim: f64) -> CameraPose {
    let [lo, hi] = cfg.elevation_range;
    let e = elev.to_degrees().clamp(lo, hi).clamp(-90.0, 90.0);
    CameraPose::new(e, azim.to_degrees(), CANONICAL_DISTANCE).expect("finite prediction")
}

/// Stacks `[R, R]` renders into `[M, 1, R/f, R/f]`.
fn stack_pooled(tape: &mut Tape, imgs: &[Var], size: usize, factor: usize) -> Result<Var, NnError> {
    let s = tape.stack(imgs)?;
    let s = tape.reshape(s, vec![imgs.len(), 1, size, size])?;
    if factor == 1 {
        Ok(s)
    } else {
        tape.avg_pool(s, factor)
    }
}

fn collect_grads(tape: &Tape, bind: &Binding, keep: fn(&str) -> bool) -> BTreeMap<String, Vec<f64>> {
    bind.vars()
        .iter()
        .filter(|(n, _)| keep(n))
        .map(|(n, v)| {
            let g = tape
                .grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tape.value(*v).len()]);
            (n.clone(), g)
        })
        .collect()
}

fn grads_finite(g: &BTreeMap<String, Vec<f64>>) -> bool {
    g.values().all(|v| v.iter().all(|x| x.is_finite()))
}

/// Owns the weights, optimizer state and random stream of one run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub weights: ModelWeights,
    pub adam: Adam,
    step: usize,
    rng: ChaCha8Rng,
    template: TemplateMesh,
    faces: Arc<[[usize; 3]]>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let weights = ModelWeights::init(cfg.model.clone(), &mut rng);
        Ok(Self::assemble(cfg, weights, Adam::new(0.9, 0.999, 1e-8), 0, rng))
    }

    fn assemble(cfg: TrainConfig, weights: ModelWeights, mut adam: Adam, step: usize, rng: ChaCha8Rng) -> Self {
        adam.beta1 = cfg.beta1;
        adam.beta2 = cfg.beta2;
        adam.eps = cfg.adam_eps;
        let template = TemplateMesh::from_config(&weights.config);
        let faces = template.mesh.faces.clone().into();
        Self {
            cfg,
            weights,
            adam,
            step,
            rng,
            template,
            faces,
        }
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn template(&self) -> &TemplateMesh {
        &self.template
    }

    fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::square(self.weights.config.input_size)
    }

    /// One generator update on `batch`. When adversarial training is on,
    /// also returns the real/fake silhouettes for the discriminator.
    pub fn generator_step(
        &mut self,
        batch: &[&SketchSample],
        stage: usize,
    ) -> Result<(LossReport, Option<AdversarialBatch>), TrainError> {
        let (report, adv, grads) = self.generator_pass(batch, stage)?;
        let lr = self.cfg.lr_at(self.step);
        self.adam.update(&mut self.weights, &grads, lr);
        Ok((report, adv))
    }

    /// Generator losses and parameter gradients without an update.
    pub(crate) fn generator_pass(
        &mut self,
        batch: &[&SketchSample],
        stage: usize,
    ) -> Result<(LossReport, Option<AdversarialBatch>, BTreeMap<String, Vec<f64>>), TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let cfg = &self.cfg;
        let intr = self.intrinsics();
        let size = self.weights.config.input_size;
        let b = batch.len();
        let mut tape = Tape::new();
        let mut bind = Binding::new(&self.weights, is_gen);

        let sketches: Vec<&SketchImage> = batch.iter().map(|s| &s.sketch).collect();
        let x = tape.constant(sketch_batch(&sketches, &self.weights.config)?);
        let enc = encode_graph(&mut tape, &mut bind, x)?;
        let pred = predict_view_graph(&mut tape, &mut bind, enc.features)?;
        let gt: Vec<f64> = batch
            .iter()
            .flat_map(|s| [s.gt_pose.elevation_rad(), s.gt_pose.azimuth_rad()])
            .collect();
        let gt = tape.constant(Tensor::new(vec![b, 2], gt));
        let lv = viewpoint_loss_graph(&mut tape, pred, gt)?;
        let zv = view_code_graph(&mut tape, &mut bind, pred)?;
        let verts = decode_graph(&mut tape, &mut bind, enc.shape_code, zv, &self.template)?;

        let pred_vals = tape.value(pred).data().to_vec();
        let mut sp_terms = Vec::with_capacity(b);
        let mut r_terms = Vec::with_capacity(b);
        for (i, s) in batch.iter().enumerate() {
            let pose = if cfg.supervise_at_gt {
                s.gt_pose
            } else {
                pose_from_prediction(&self.weights.config, pred_vals[2 * i], pred_vals[2 * i + 1])
            };
            let cam = ViewCamera::orbit(&pose, [0.0; 3], intr);
            let sil = render_soft_graph(&mut tape, verts[i], &self.faces, &cam, &cfg.raster)?;
            let target = tape.constant(Tensor::new(vec![size, size], s.target.values.clone()));
            sp_terms.push(multiscale_loss_graph(&mut tape, sil, target, &cfg.loss)?);
            let lap = laplacian_loss_graph(&mut tape, &self.template.topology, verts[i])?;
            let lap = tape.scale(lap, cfg.loss.laplacian_weight);
            let flat = flatten_loss_graph(&mut tape, &self.template.topology, verts[i])?;
            let flat = tape.scale(flat, cfg.loss.flatten_weight);
            r_terms.push(tape.add(lap, flat)?);
        }
        let sp = mean_of(&mut tape, &sp_terms)?;
        let r = mean_of(&mut tape, &r_terms)?;

        let mut adversarial = None;
        let mut sd = None;
        if cfg.adversarial() {
            let random: Vec<f64> = (0..b)
                .flat_map(|_| {
                    let p = sample_pose(&cfg.poses, &mut self.rng);
                    [p.elevation_rad(), p.azimuth_rad()]
                })
                .collect();
            let zr = tape.constant(Tensor::new(vec![b, 2], random));
            let zvr = view_code_graph(&mut tape, &mut bind, zr)?;
            let verts_r = decode_graph(&mut tape, &mut bind, enc.shape_code, zvr, &self.template)?;
            let k = if cfg.rps { cfg.views_per_step } else { 1 };
            let mut real = Vec::with_capacity(b * k);
            let mut fake = Vec::with_capacity(b * k);
            for i in 0..b {
                for _ in 0..k {
                    let pose = sample_pose(&cfg.poses, &mut self.rng);
                    let cam = ViewCamera::orbit(&pose, [0.0; 3], intr);
                    real.push(render_soft_graph(&mut tape, verts[i], &self.faces, &cam, &cfg.raster)?);
                    fake.push(render_soft_graph(&mut tape, verts_r[i], &self.faces, &cam, &cfg.raster)?);
                }
            }
            let factor = size / DISC_RESOLUTIONS[stage];
            let real = stack_pooled(&mut tape, &real, size, factor)?;
            let fake = stack_pooled(&mut tape, &fake, size, factor)?;
            let scores = discriminate_graph(&mut tape, &mut bind, fake, stage)?;
            sd = Some(generator_adversarial_graph(&mut tape, scores));
            adversarial = Some(AdversarialBatch {
                real: tape.value(real).clone(),
                fake: tape.value(fake).clone(),
                stage,
            });
        }

        let lv_w = tape.scale(lv, cfg.loss.lambda_v);
        let mut total = tape.add(sp, r)?;
        total = tape.add(total, lv_w)?;
        if let Some(sd) = sd {
            let w = tape.scale(sd, cfg.loss.lambda_sd);
            total = tape.add(total, w)?;
        }
        let value = |v: Var| tape.value(v).item();
        let report = total_loss(value(sp), value(r), value(lv), sd.map_or(0.0, value), 0.0, &cfg.loss).map_err(|e| {
            TrainError::NonFiniteLoss {
                step: self.step,
                detail: e.to_string(),
            }
        })?;
        tape.backward(total)?;
        let grads = collect_grads(&tape, &bind, is_gen);
        if !grads_finite(&grads) {
            return Err(TrainError::NonFiniteLoss {
                step: self.step,
                detail: "generator gradient".into(),
            });
        }
        Ok((report, adversarial, grads))
    }

    /// Gradient of `Σ D(x)` with respect to the discriminator parameters.
    fn disc_param_grads(&self, x: Tensor, stage: usize) -> Result<BTreeMap<String, Vec<f64>>, TrainError> {
        let mut tape = Tape::new();
        let mut bind = Binding::new(&self.weights, is_disc);
        let x = tape.constant(x);
        let s = discriminate_graph(&mut tape, &mut bind, x, stage)?;
        let total = tape.sum(s);
        tape.backward(total)?;
        Ok(collect_grads(&tape, &bind, is_disc))
    }

    /// One discriminator update with R1 on the real inputs. Generator
    /// parameters are not touched.
    pub fn discriminator_step(&mut self, batch: &AdversarialBatch) -> Result<DiscReport, TrainError> {
        let stage = batch.stage;
        let gamma = self.cfg.loss.r1_gamma;
        let n = batch.real.shape()[0].max(1) as f64;
        let mut tape = Tape::new();
        let mut bind = Binding::new(&self.weights, is_disc);
        let xr = tape.leaf(batch.real.clone(), true);
        let sr = discriminate_graph(&mut tape, &mut bind, xr, stage)?;
        let sum = tape.sum(sr);
        tape.backward(sum)?;
        let g = tape.grad(xr).map(<[f64]>::to_vec).unwrap_or_default();
        let r1 = g.iter().map(|v| v * v).sum::<f64>() / n;
        tape.zero_grad();
        let xf = tape.constant(batch.fake.clone());
        let sf = discriminate_graph(&mut tape, &mut bind, xf, stage)?;
        let main = discriminator_adversarial_graph(&mut tape, sr, sf)?;
        tape.backward(main)?;
        let mut grads = collect_grads(&tape, &bind, is_disc);
        let loss = tape.value(main).item() + 0.5 * gamma * r1;
        drop(bind);

        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gamma > 0.0 && gmax > 0.0 {
            let eps = self.cfg.r1_eps / gmax;
            let shifted = |sign: f64| {
                let d: Vec<f64> = batch.real.data().iter().zip(&g).map(|(x, gi)| x + sign * eps * gi).collect();
                Tensor::new(batch.real.shape().to_vec(), d)
            };
            let plus = self.disc_param_grads(shifted(1.0), stage)?;
            let minus = self.disc_param_grads(shifted(-1.0), stage)?;
            for (name, acc) in grads.iter_mut() {
                let (p, m) = (&plus[name], &minus[name]);
                for i in 0..acc.len() {
                    acc[i] += gamma / n * (p[i] - m[i]) / (2.0 * eps);
                }
            }
        }
        if !loss.is_finite() || !grads_finite(&grads) {
            return Err(TrainError::NonFiniteLoss {
                step: self.step,
                detail: "discriminator".into(),
            });
        }
        let lr = self.cfg.lr_at(self.step);
        self.adam.update(&mut self.weights, &grads, lr);
        Ok(DiscReport { loss, r1 })
    }

    /// Draws a batch, runs the generator step and, when adversarial training
    /// is on, the discriminator step on the silhouettes it produced.
    pub fn step(&mut self, data: &[SketchSample]) -> Result<StepMetrics, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let idx: Vec<usize> = (0..self.cfg.batch_size).map(|_| self.rng.gen_range(0..data.len())).collect();
        let batch: Vec<&SketchSample> = idx.iter().map(|&i| &data[i]).collect();
        let stage = self.cfg.stage_at(self.step);
        if self.cfg.adversarial() {
            while self.weights.discriminator_stages() <= stage {
                self.weights.grow_discriminator(&mut self.rng);
            }
        }
        let lr = self.cfg.lr_at(self.step);
        let (report, adv) = self.generator_step(&batch, stage)?;
        let disc = match &adv {
            Some(a) => Some(self.discriminator_step(a)?),
            None => None,
        };
        let m = StepMetrics {
            step: self.step,
            lr,
            sp: report.sp,
            r: report.r,
            v: report.v,
            sd: report.sd,
            dd: report.dd,
            total: report.total,
            d_loss: disc.map(|d| d.loss),
            r1: disc.map(|d| d.r1),
            stage: adv.map(|a| a.stage),
        };
        self.step += 1;
        Ok(m)
    }

    /// Steps until `cfg.steps`, writing one JSON line per step to `log`.
    /// On a non-finite loss the untouched pre-step state is checkpointed to
    /// `checkpoint` (when given) and the error returned.
    pub fn run(
        &mut self,
        data: &[SketchSample],
        mut log: Option<&mut dyn Write>,
        checkpoint: Option<&Path>,
        checkpoint_every: usize,
    ) -> Result<Vec<StepMetrics>, TrainError> {
        let mut out = Vec::new();
        while self.step < self.cfg.steps {
            let m = match self.step(data) {
                Ok(m) => m,
                Err(e) => {
                    if let (TrainError::NonFiniteLoss { .. }, Some(p)) = (&e, checkpoint) {
                        self.save_checkpoint(p)?;
                    }
                    return Err(e);
                }
            };
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&m).map_err(|e| TrainError::Manifest(e.to_string()))?;
                writeln!(w, "{line}")?;
            }
            out.push(m);
            if let Some(p) = checkpoint {
                if checkpoint_every > 0 && self.step % checkpoint_every == 0 {
                    self.save_checkpoint(p)?;
                }
            }
        }
        if let Some(p) = checkpoint {
            self.save_checkpoint(p)?;
        }
        Ok(out)
    }

    /// Weights, optimizer moments, step and random-stream position.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let mut tensors = self.weights.params.clone();
        tensors.extend(self.adam.to_tensors());
        let meta = serde_json::json!({
            "step": self.step,
            "rng_seed": self.rng.get_seed().to_vec(),
            "rng_stream": self.rng.get_stream().to_string(),
            "rng_word_pos": self.rng.get_word_pos().to_string(),
            "adam_t": self.adam.t,
            "train_config": self.cfg,
        });
        let file = WeightsFile {
            tensors,
            config: serde_json::to_value(&self.weights.config).map_err(|e| TrainError::Checkpoint(e.to_string()))?,
            meta,
        };
        let tmp = path.with_extension("tmp");
        write_weights(&file, std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Restores a run saved by [`Trainer::save_checkpoint`]; `cfg` may
    /// extend `steps` but must otherwise match the original run to reproduce it.
    pub fn resume(cfg: TrainConfig, path: &Path) -> Result<Self, TrainError> {
        cfg.validate()?;
        let file = read_weights(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let bad = |m: &str| TrainError::Checkpoint(m.to_string());
        let meta = &file.meta;
        let step = meta["step"].as_u64().ok_or_else(|| bad("missing step"))? as usize;
        let seed: Vec<u8> = serde_json::from_value(meta["rng_seed"].clone()).map_err(|e| bad(&e.to_string()))?;
        let seed: [u8; 32] = seed.try_into().map_err(|_| bad("seed length"))?;
        let parse = |k: &str| -> Result<u128, TrainError> {
            meta[k].as_str().and_then(|s| s.parse().ok()).ok_or_else(|| bad(k))
        };
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(parse("rng_stream")? as u64);
        rng.set_word_pos(parse("rng_word_pos")?);
        let t: BTreeMap<String, u64> = serde_json::from_value(meta["adam_t"].clone()).map_err(|e| bad(&e.to_string()))?;
        let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
        let params = adam.take_from_tensors(file.tensors, t);
        let config: ModelConfig = serde_json::from_value(file.config).map_err(|e| bad(&e.to_string()))?;
        let weights = ModelWeights { config, params };
        Ok(Self::assemble(cfg, weights, adam, step, rng))
    }
}

/// Trains from scratch; see [`Trainer::run`].
pub fn train(
    cfg: TrainConfig,
    data: &[SketchSample],
    log: Option<&mut dyn Write>,
    checkpoint: Option<&Path>,
) -> Result<(ModelWeights, Vec<StepMetrics>), TrainError> {
    let mut t = Trainer::new(cfg)?;
    let metrics = t.run(data, log, checkpoint, 0)?;
    Ok((t.weights, metrics))
}

/// Outcome of [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub steps: usize,
    /// Hard-silhouette IoU with the target at the supervision pose.
    pub iou: f64,
    pub pose: CameraPose,
    pub metrics: Vec<StepMetrics>,
}

/// Overfits one sample with the generator losses only and reports how well
/// the final mesh covers the target silhouette.
pub fn fit(sample: &SketchSample, mut cfg: TrainConfig) -> Result<(ModelWeights, FitReport), TrainError> {
    cfg.rps = false;
    cfg.sd = false;
    cfg.batch_size = 1;
    let data = std::slice::from_ref(sample);
    let mut t = Trainer::new(cfg)?;
    let metrics = t.run(data, None, None, 0)?;
    let w = &t.weights;
    let enc = crate::nn::encode(&sample.sketch, w)?;
    let pose = if t.cfg.supervise_at_gt {
        sample.gt_pose
    } else {
        crate::nn::predict_view(&enc.features, w)?
    };
    let zv = crate::nn::view_code(&pose, w)?;
    let mesh = crate::nn::decode_mesh(&enc.shape_code, &zv, w, &t.template)?;
    let intr = CameraIntrinsics::square(w.config.input_size);
    let sil = crate::render::render_hard_silhouette(&mesh, &pose, &intr)?;
    let iou = 1.0 - crate::losses::iou_loss(&sil, &sample.target)?;
    let report = FitReport {
        steps: t.step,
        iou,
        pose,
        metrics,
    };
    Ok((t.weights, report))
}

#[cfg(test)]
mod tests;
