//! Encoder, view-regression head, view-code layers, mesh decoder and the
//! progressive silhouette discriminator.
//!
//! Every network comes in two forms: a `*_graph` function that records onto a
//! caller-owned [`Tape`] through a [`Binding`] (used for training), and a
//! plain function that runs inference on a private tape.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::weights::ModelWeights;
use super::NnError;
use crate::geometry::{icosphere, CameraPose, Mesh, CANONICAL_DISTANCE};
use crate::losses::MeshTopology;
use crate::raster::{SilhouetteImage, SketchImage};

/// Input resolution of each discriminator stage.
pub const DISC_RESOLUTIONS: [usize; 3] = [16, 32, 64];

/// Channel width of the discriminator feature map at each resolution.
fn disc_channels(res: usize) -> usize {
    match res {
        64 => 4,
        32 => 8,
        16 => 16,
        _ => 32,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square sketch resolution fed to the encoder.
    pub input_size: usize,
    /// Output channels of the stride-2 encoder convolutions.
    pub encoder_channels: Vec<usize>,
    pub code_dim: usize,
    pub view_hidden: usize,
    pub view_code_hidden: usize,
    pub decoder_hidden: usize,
    pub template_subdivisions: u32,
    pub template_radius: f64,
    pub max_offset: f64,
    /// Degrees, `[low, high]`.
    pub elevation_range: [f64; 2],
    pub azimuth_range: [f64; 2],
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            encoder_channels: vec![16, 32, 64, 128],
            code_dim: 512,
            view_hidden: 64,
            view_code_hidden: 64,
            decoder_hidden: 256,
            template_subdivisions: 3,
            template_radius: 0.5,
            max_offset: 0.75,
            elevation_range: [-30.0, 60.0],
            azimuth_range: [0.0, 360.0],
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        *self.encoder_channels.last().unwrap_or(&1)
    }
}

/// Fixed-topology sphere deformed by the decoder.
#[derive(Clone, Debug)]
pub struct TemplateMesh {
    pub mesh: Mesh,
    pub topology: MeshTopology,
}

impl TemplateMesh {
    pub fn new(subdivisions: u32, radius: f64) -> Self {
        let mesh = icosphere(subdivisions, radius);
        let topology = MeshTopology::new(&mesh).expect("icosphere is a closed manifold");
        Self { mesh, topology }
    }

    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self::new(cfg.template_subdivisions, cfg.template_radius)
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertices.len()
    }

    pub fn vertex_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.mesh.vertices.len(), 3],
            self.mesh.vertices.iter().flatten().copied().collect(),
        )
    }
}

fn linear_init(rng: &mut impl Rng, fan_in: usize, fan_out: usize, gain: f64) -> (Tensor, Tensor) {
    let a = gain * (6.0 / fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
    (Tensor::new(vec![fan_in, fan_out], w), Tensor::zeros(vec![fan_out]))
}

fn conv_init(rng: &mut impl Rng, cin: usize, cout: usize, k: usize) -> (Tensor, Tensor) {
    let fan_in = cin * k * k;
    let a = (6.0 / fan_in as f64).sqrt();
    let w = (0..cout * fan_in).map(|_| rng.gen_range(-a..a)).collect();
    (Tensor::new(vec![cout, cin, k, k], w), Tensor::zeros(vec![cout]))
}

fn insert(params: &mut BTreeMap<String, Tensor>, name: &str, (w, b): (Tensor, Tensor)) {
    params.insert(format!("{name}.w"), w);
    params.insert(format!("{name}.b"), b);
}

impl ModelWeights {
    /// Fresh generator weights plus the first discriminator stage.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Self {
        let mut p = BTreeMap::new();
        let mut cin = 1;
        for (i, &c) in config.encoder_channels.iter().enumerate() {
            insert(&mut p, &format!("enc.conv{i}"), conv_init(rng, cin, c, 3));
            cin = c;
        }
        let f = config.feature_dim();
        insert(&mut p, "enc.shape_proj", linear_init(rng, f, config.code_dim, 1.0));
        insert(&mut p, "view_head.fc1", linear_init(rng, f, config.view_hidden, 1.0));
        insert(&mut p, "view_head.fc2", linear_init(rng, config.view_hidden, 2, 0.5));
        insert(&mut p, "view_code.fc1", linear_init(rng, 4, config.view_code_hidden, 1.0));
        insert(&mut p, "view_code.fc2", linear_init(rng, config.view_code_hidden, config.code_dim, 1.0));
        let verts = 10 * 4usize.pow(config.template_subdivisions) + 2;
        insert(&mut p, "dec.fc1", linear_init(rng, 2 * config.code_dim, config.decoder_hidden, 1.0));
        insert(&mut p, "dec.fc2", linear_init(rng, config.decoder_hidden, 3 * verts, 0.05));
        let mut w = Self { config, params: p };
        w.grow_discriminator(rng);
        w
    }

    /// Number of discriminator stages with parameters.
    pub fn discriminator_stages(&self) -> usize {
        DISC_RESOLUTIONS
            .iter()
            .take_while(|r| self.params.contains_key(&format!("disc.from{r}.w")))
            .count()
    }

    /// Appends the parameters of the next discriminator stage. Parameters of
    /// earlier stages are left untouched. Returns the new stage count.
    pub fn grow_discriminator(&mut self, rng: &mut impl Rng) -> usize {
        let stages = self.discriminator_stages();
        if stages == DISC_RESOLUTIONS.len() {
            return stages;
        }
        let res = DISC_RESOLUTIONS[stages];
        let c = disc_channels(res);
        insert(&mut self.params, &format!("disc.from{res}"), conv_init(rng, 1, c, 1));
        insert(&mut self.params, &format!("disc.block{res}"), conv_init(rng, c, disc_channels(res / 2), 3));
        if stages == 0 {
            // shared tail: 8x8 → 4x4 conv and the linear score
            insert(&mut self.params, "disc.block8", conv_init(rng, disc_channels(8), disc_channels(4), 3));
            insert(&mut self.params, "disc.out", linear_init(rng, disc_channels(4) * 16, 1, 1.0));
        }
        stages + 1
    }

    pub fn is_discriminator_param(name: &str) -> bool {
        name.starts_with("disc.")
    }
}

/// Parameter leaves bound lazily onto a tape.
pub struct Binding<'w> {
    weights: &'w ModelWeights,
    trainable: fn(&str) -> bool,
    vars: BTreeMap<String, Var>,
}

impl<'w> Binding<'w> {
    /// Parameters for which `trainable` returns true are tracked for gradients.
    pub fn new(weights: &'w ModelWeights, trainable: fn(&str) -> bool) -> Self {
        Self {
            weights,
            trainable,
            vars: BTreeMap::new(),
        }
    }

    /// Binding with no tracked parameters.
    pub fn frozen(weights: &'w ModelWeights) -> Self {
        Self::new(weights, |_| false)
    }

    pub fn weights(&self) -> &'w ModelWeights {
        self.weights
    }

    pub fn param(&mut self, tape: &mut Tape, name: &str) -> Result<Var, NnError> {
        if let Some(v) = self.vars.get(name) {
            return Ok(*v);
        }
        let t = self.weights.get(name)?.clone();
        let v = tape.leaf(t, (self.trainable)(name));
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Bound parameters, by name.
    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    fn linear(&mut self, tape: &mut Tape, name: &str, x: Var) -> Result<Var, NnError> {
        let w = self.param(tape, &format!("{name}.w"))?;
        let b = self.param(tape, &format!("{name}.b"))?;
        let y = tape.matmul(x, w)?;
        tape.add_row_bias(y, b)
    }

    fn conv(&mut self, tape: &mut Tape, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var, NnError> {
        let w = self.param(tape, &format!("{name}.w"))?;
        let b = self.param(tape, &format!("{name}.b"))?;
        tape.conv2d(x, w, b, stride, pad)
    }
}

/// Encoder outputs for a batch.
pub struct EncodeGraph {
    /// Unit-norm shape codes `[N, code_dim]`.
    pub shape_code: Var,
    /// Pooled convolutional features `[N, feature_dim]`.
    pub features: Var,
}

/// `images [N,1,S,S]` (stroke = 1) → shape codes and features.
pub fn encode_graph(tape: &mut Tape, bind: &mut Binding, images: Var) -> Result<EncodeGraph, NnError> {
    let cfg = &bind.weights().config;
    let shape = tape.value(images).shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.input_size || shape[3] != cfg.input_size {
        return Err(NnError::ShapeMismatch(format!(
            "encoder expects [N,1,{0},{0}], got {shape:?}",
            cfg.input_size
        )));
    }
    let slope = cfg.leaky_slope;
    let layers = cfg.encoder_channels.len();
    let mut h = images;
    for i in 0..layers {
        h = bind.conv(tape, &format!("enc.conv{i}"), h, 2, 1)?;
        h = tape.leaky_relu(h, slope);
    }
    let features = tape.global_avg_pool(h)?;
    let z = bind.linear(tape, "enc.shape_proj", features)?;
    let shape_code = tape.normalize_rows(z)?;
    Ok(EncodeGraph { shape_code, features })
}

/// Pose-range affine map applied after `tanh`: `(scale, shift)` in radians.
pub fn pose_ranges(cfg: &ModelConfig) -> ([f64; 2], [f64; 2]) {
    let half = |r: [f64; 2]| (r[1] - r[0]).to_radians() * 0.5;
    let mid = |r: [f64; 2]| (r[1] + r[0]).to_radians() * 0.5;
    (
        [half(cfg.elevation_range), half(cfg.azimuth_range)],
        [mid(cfg.elevation_range), mid(cfg.azimuth_range)],
    )
}

/// Features `[N,F]` → poses `[N,2]` as (elevation, azimuth) in radians.
pub fn predict_view_graph(tape: &mut Tape, bind: &mut Binding, features: Var) -> Result<Var, NnError> {
    let slope = bind.weights().config.leaky_slope;
    let h = bind.linear(tape, "view_head.fc1", features)?;
    let h = tape.leaky_relu(h, slope);
    let o = bind.linear(tape, "view_head.fc2", h)?;
    let o = tape.tanh(o);
    let (scale, shift) = pose_ranges(&bind.weights().config);
    tape.affine_cols(o, &scale, &shift)
}

/// Poses `[N,2]` (radians) → unit-norm view codes `[N, code_dim]`.
pub fn view_code_graph(tape: &mut Tape, bind: &mut Binding, poses: Var) -> Result<Var, NnError> {
    let slope = bind.weights().config.leaky_slope;
    let f = tape.sin_cos(poses)?;
    let h = bind.linear(tape, "view_code.fc1", f)?;
    let h = tape.leaky_relu(h, slope);
    let z = bind.linear(tape, "view_code.fc2", h)?;
    tape.normalize_rows(z)
}

/// Shape and view codes → per-sample vertex tensors `[V,3]`.
pub fn decode_graph(
    tape: &mut Tape,
    bind: &mut Binding,
    shape_code: Var,
    view_code: Var,
    template: &TemplateMesh,
) -> Result<Vec<Var>, NnError> {
    let cfg = &bind.weights().config;
    let (slope, max_offset) = (cfg.leaky_slope, cfg.max_offset);
    let v = template.vertex_count();
    let x = tape.concat_cols(shape_code, view_code)?;
    let h = bind.linear(tape, "dec.fc1", x)?;
    let h = tape.leaky_relu(h, slope);
    let o = bind.linear(tape, "dec.fc2", h)?;
    if tape.value(o).shape()[1] != 3 * v {
        return Err(NnError::ShapeMismatch(format!(
            "decoder emits {} values for a {v}-vertex template",
            tape.value(o).shape()[1]
        )));
    }
    let o = tape.tanh(o);
    let offsets = tape.scale(o, max_offset);
    let base = tape.constant(template.vertex_tensor());
    let n = tape.value(offsets).shape()[0];
    (0..n)
        .map(|i| {
            let r = tape.row(offsets, i)?;
            let r = tape.reshape(r, vec![v, 3])?;
            tape.add(r, base)
        })
        .collect()
}

/// `silhouettes [N,1,R,R]` → scores `[N,1]` through the tower of `stage`.
pub fn discriminate_graph(tape: &mut Tape, bind: &mut Binding, silhouettes: Var, stage: usize) -> Result<Var, NnError> {
    let expected = *DISC_RESOLUTIONS
        .get(stage)
        .ok_or_else(|| NnError::ShapeMismatch(format!("no discriminator stage {stage}")))?;
    let shape = tape.value(silhouettes).shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != shape[3] {
        return Err(NnError::ShapeMismatch(format!("discriminator input {shape:?}")));
    }
    if shape[2] != expected {
        return Err(NnError::StageResolutionMismatch {
            stage,
            expected,
            got: shape[2],
        });
    }
    if stage >= bind.weights().discriminator_stages() {
        return Err(NnError::MissingParameter(format!("disc.from{expected}.w")));
    }
    let slope = bind.weights().config.leaky_slope;
    let n = shape[0];
    let mut h = bind.conv(tape, &format!("disc.from{expected}"), silhouettes, 1, 0)?;
    h = tape.leaky_relu(h, slope);
    let mut res = expected;
    while res >= 8 {
        h = bind.conv(tape, &format!("disc.block{res}"), h, 2, 1)?;
        h = tape.leaky_relu(h, slope);
        res /= 2;
    }
    let flat = tape.reshape(h, vec![n, disc_channels(4) * 16])?;
    bind.linear(tape, "disc.out", flat)
}

/// Inference-side encoder result.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeOutput {
    pub shape_code: Vec<f64>,
    pub features: Vec<f64>,
}

fn sketch_tensor(sketches: &[&SketchImage], size: usize) -> Result<Tensor, NnError> {
    let mut data = Vec::with_capacity(sketches.len() * size * size);
    for s in sketches {
        if s.width != size || s.height != size {
            return Err(NnError::ShapeMismatch(format!(
                "sketch {}x{} but encoder expects {size}x{size}",
                s.width, s.height
            )));
        }
        data.extend(s.stroke_mask());
    }
    Ok(Tensor::new(vec![sketches.len(), 1, size, size], data))
}

pub(crate) fn sketch_batch(sketches: &[&SketchImage], cfg: &ModelConfig) -> Result<Tensor, NnError> {
    sketch_tensor(sketches, cfg.input_size)
}

pub fn encode(sketch: &SketchImage, weights: &ModelWeights) -> Result<EncodeOutput, NnError> {
    let mut tape = Tape::new();
    let mut bind = Binding::frozen(weights);
    let x = tape.constant(sketch_tensor(&[sketch], weights.config.input_size)?);
    let g = encode_graph(&mut tape, &mut bind, x)?;
    Ok(EncodeOutput {
        shape_code: tape.value(g.shape_code).data().to_vec(),
        features: tape.value(g.features).data().to_vec(),
    })
}

pub fn predict_view(features: &[f64], weights: &ModelWeights) -> Result<CameraPose, NnError> {
    let mut tape = Tape::new();
    let mut bind = Binding::frozen(weights);
    let x = tape.constant(Tensor::new(vec![1, features.len()], features.to_vec()));
    let p = predict_view_graph(&mut tape, &mut bind, x)?;
    let d = tape.value(p).data();
    let [lo, hi] = weights.config.elevation_range;
    let elev = d[0].to_degrees().clamp(lo, hi).clamp(-90.0, 90.0);
    Ok(CameraPose::new(elev, d[1].to_degrees(), CANONICAL_DISTANCE).expect("finite predicted angles"))
}

pub fn view_code(pose: &CameraPose, weights: &ModelWeights) -> Result<Vec<f64>, NnError> {
    let mut tape = Tape::new();
    let mut bind = Binding::frozen(weights);
    let x = tape.constant(Tensor::new(vec![1, 2], vec![pose.elevation_rad(), pose.azimuth_rad()]));
    let z = view_code_graph(&mut tape, &mut bind, x)?;
    Ok(tape.value(z).data().to_vec())
}

pub fn decode_mesh(
    shape_code: &[f64],
    view_code: &[f64],
    weights: &ModelWeights,
    template: &TemplateMesh,
) -> Result<Mesh, NnError> {
    let mut tape = Tape::new();
    let mut bind = Binding::frozen(weights);
    let zs = tape.constant(Tensor::new(vec![1, shape_code.len()], shape_code.to_vec()));
    let zv = tape.constant(Tensor::new(vec![1, view_code.len()], view_code.to_vec()));
    let verts = decode_graph(&mut tape, &mut bind, zs, zv, template)?;
    let data = tape.value(verts[0]).data();
    Ok(Mesh {
        vertices: data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        faces: template.mesh.faces.clone(),
    })
}

pub fn discriminate(silhouettes: &[SilhouetteImage], stage: usize, weights: &ModelWeights) -> Result<Vec<f64>, NnError> {
    let Some(first) = silhouettes.first() else {
        return Ok(Vec::new());
    };
    let r = first.width;
    let mut data = Vec::with_capacity(silhouettes.len() * r * r);
    for s in silhouettes {
        if s.width != r || s.height != r {
            return Err(NnError::ShapeMismatch("mixed silhouette sizes".into()));
        }
        data.extend_from_slice(&s.values);
    }
    let mut tape = Tape::new();
    let mut bind = Binding::frozen(weights);
    let x = tape.constant(Tensor::new(vec![silhouettes.len(), 1, r, r], data));
    let s = discriminate_graph(&mut tape, &mut bind, x, stage)?;
    Ok(tape.value(s).data().to_vec())
}
