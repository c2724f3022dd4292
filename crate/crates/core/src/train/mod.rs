//! Alternating adversarial training: one discriminator update followed by one
//! generator update per step, with seeded epoch shuffling, a diversity
//! monitor, checkpoints and a JSON-lines metrics log.

mod checkpoint;

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, AdamConfig, AdamState, AutodiffError, Tape, Tensor};
use crate::dataset::{Condition, ConditionKind, Dataset};
use crate::image::Grid;
use crate::kv::{format_kv, parse_kv, KvError};
use crate::nets::{
    build_discriminator, build_generator, encode_conditions, CondEncoding, Discriminator, DiscriminatorSpec, Generator,
    GeneratorSpec, MinibatchDims, NetError,
};
use crate::objectives::{d_loss_tape, g_loss_tape, ConditionDomain, ConditionSampler, Objective, ObjectiveError};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(
        "non-finite loss at step {step}: d_loss {d_loss}, g_loss {g_loss}; \
         mean scores real {mean_real}, fake {mean_fake}"
    )]
    NonFinite {
        step: u64,
        d_loss: f64,
        g_loss: f64,
        mean_real: f64,
        mean_fake: f64,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Layer widths of both networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetPlan {
    pub g_channels: [usize; 2],
    pub d_channels: [usize; 2],
    pub features: usize,
    pub mb_kernels: usize,
    pub mb_dim: usize,
}

impl Default for NetPlan {
    fn default() -> Self {
        Self { g_channels: [128, 64], d_channels: [64, 128], features: 64, mb_kernels: 32, mb_dim: 8 }
    }
}

impl NetPlan {
    /// A narrow plan for small images on a single CPU core.
    pub fn desk() -> Self {
        Self { g_channels: [16, 8], d_channels: [8, 16], features: 32, mb_kernels: 16, mb_dim: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch_size: usize,
    pub steps: u64,
    /// `None` means one pass over the dataset: ceil(len / batch_size).
    pub steps_per_iteration: Option<u64>,
    pub adam: AdamConfig,
    pub z_dim: usize,
    pub seed: u64,
    pub minibatch_discrimination: bool,
    pub nonsaturating: bool,
    /// Minimum distance between a continuous condition and its mismatch.
    pub margin: f64,
    /// Write `step_XXXXXXXX.ckpt` every this many steps; 0 disables.
    pub checkpoint_every: u64,
    /// Warn when diversity falls below this fraction of the trailing median.
    pub collapse_ratio: f64,
    pub collapse_window: usize,
    pub plan: NetPlan,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::CrcganA,
            batch_size: 100,
            steps: 2000,
            steps_per_iteration: None,
            adam: AdamConfig::default(),
            z_dim: 64,
            seed: 0,
            minibatch_discrimination: true,
            nonsaturating: true,
            margin: crate::objectives::DEFAULT_MARGIN,
            checkpoint_every: 0,
            collapse_ratio: 0.1,
            collapse_window: 100,
            plan: NetPlan::default(),
        }
    }
}

/// Fewest trailing values before the collapse check starts.
const MIN_COLLAPSE_HISTORY: usize = 10;

fn parse_val<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| TrainError::Config(format!("bad value for {key}: {v:?}")))
}

fn parse_pair(key: &str, v: &str) -> Result<[usize; 2]> {
    let mut it = v.split(',').map(|s| parse_val::<usize>(key, s.trim()));
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok([a?, b?]),
        _ => Err(TrainError::Config(format!("{key} needs two comma-separated values, got {v:?}"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 21] = [
        "objective",
        "batch_size",
        "steps",
        "steps_per_iteration",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "z_dim",
        "seed",
        "minibatch_discrimination",
        "nonsaturating",
        "margin",
        "checkpoint_every",
        "collapse_ratio",
        "collapse_window",
        "g_channels",
        "d_channels",
        "features",
        "mb_kernels",
        "mb_dim",
    ];

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "objective" => self.objective = v.parse()?,
            "batch_size" => self.batch_size = parse_val(key, v)?,
            "steps" => self.steps = parse_val(key, v)?,
            "steps_per_iteration" => {
                self.steps_per_iteration = if v == "auto" { None } else { Some(parse_val(key, v)?) }
            }
            "lr" => self.adam.lr = parse_val(key, v)?,
            "beta1" => self.adam.beta1 = parse_val(key, v)?,
            "beta2" => self.adam.beta2 = parse_val(key, v)?,
            "eps" => self.adam.eps = parse_val(key, v)?,
            "z_dim" => self.z_dim = parse_val(key, v)?,
            "seed" => self.seed = parse_val(key, v)?,
            "minibatch_discrimination" => self.minibatch_discrimination = parse_val(key, v)?,
            "nonsaturating" => self.nonsaturating = parse_val(key, v)?,
            "margin" => self.margin = parse_val(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_val(key, v)?,
            "collapse_ratio" => self.collapse_ratio = parse_val(key, v)?,
            "collapse_window" => self.collapse_window = parse_val(key, v)?,
            "g_channels" => self.plan.g_channels = parse_pair(key, v)?,
            "d_channels" => self.plan.d_channels = parse_pair(key, v)?,
            "features" => self.plan.features = parse_val(key, v)?,
            "mb_kernels" => self.plan.mb_kernels = parse_val(key, v)?,
            "mb_dim" => self.plan.mb_dim = parse_val(key, v)?,
            _ => return Err(TrainError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let p = &self.plan;
        let vals = [
            self.objective.name().to_string(),
            self.batch_size.to_string(),
            self.steps.to_string(),
            self.steps_per_iteration.map_or("auto".to_string(), |s| s.to_string()),
            self.adam.lr.to_string(),
            self.adam.beta1.to_string(),
            self.adam.beta2.to_string(),
            self.adam.eps.to_string(),
            self.z_dim.to_string(),
            self.seed.to_string(),
            self.minibatch_discrimination.to_string(),
            self.nonsaturating.to_string(),
            self.margin.to_string(),
            self.checkpoint_every.to_string(),
            self.collapse_ratio.to_string(),
            self.collapse_window.to_string(),
            format!("{},{}", p.g_channels[0], p.g_channels[1]),
            format!("{},{}", p.d_channels[0], p.d_channels[1]),
            p.features.to_string(),
            p.mb_kernels.to_string(),
            p.mb_dim.to_string(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.minibatch_discrimination && self.batch_size < 2 {
            return bad("minibatch discrimination needs batch_size >= 2".into());
        }
        if self.steps_per_iteration == Some(0) {
            return bad("steps_per_iteration must be at least 1".into());
        }
        if self.z_dim == 0 {
            return bad("z_dim must be at least 1".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad(format!("bad optimizer settings {a:?}"));
        }
        if !(self.margin >= 0.0 && self.collapse_ratio >= 0.0) || self.collapse_window == 0 {
            return bad("margin, collapse_ratio and collapse_window must be non-negative (window positive)".into());
        }
        Ok(())
    }
}

/// Image size and condition domain a model was built for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    pub height: usize,
    pub width: usize,
    pub kind: ConditionKind,
    pub domain: ConditionDomain,
}

impl ModelShape {
    pub fn of_dataset(ds: &Dataset) -> Result<Self> {
        let domain = match ds.kind() {
            ConditionKind::Class { cardinality } => ConditionDomain::Classes(cardinality),
            ConditionKind::Continuous => {
                let (lo, hi) = ds.samples().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                    let v = s.condition.stored_value() as f64;
                    (lo.min(v), hi.max(v))
                });
                if ds.is_empty() {
                    return Err(TrainError::Domain("empty dataset".into()));
                }
                ConditionDomain::Range { lo, hi }
            }
        };
        Ok(Self { height: ds.height(), width: ds.width(), kind: ds.kind(), domain })
    }

    fn to_pairs(self) -> Vec<(String, String)> {
        let mut v = vec![("height".to_string(), self.height.to_string()), ("width".to_string(), self.width.to_string())];
        match self.domain {
            ConditionDomain::Classes(k) => v.push(("classes".into(), k.to_string())),
            ConditionDomain::Range { lo, hi } => {
                v.push(("range_lo".into(), lo.to_string()));
                v.push(("range_hi".into(), hi.to_string()));
            }
        }
        v
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| pairs.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let need = |k: &str| get(k).ok_or_else(|| TrainError::Config(format!("checkpoint lacks {k}")));
        let height = parse_val("height", need("height")?)?;
        let width = parse_val("width", need("width")?)?;
        let (kind, domain) = match get("classes") {
            Some(k) => {
                let k: u32 = parse_val("classes", k)?;
                (ConditionKind::Class { cardinality: k }, ConditionDomain::Classes(k))
            }
            None => {
                let lo = parse_val("range_lo", need("range_lo")?)?;
                let hi = parse_val("range_hi", need("range_hi")?)?;
                (ConditionKind::Continuous, ConditionDomain::Range { lo, hi })
            }
        };
        Ok(Self { height, width, kind, domain })
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Steps completed, counting this one.
    pub step: u64,
    /// Zero-based iteration (pass over the data) this step belongs to.
    pub iter: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub diversity: f64,
    pub mean_score_real: f64,
    pub mean_score_fake: f64,
    pub mean_score_mismatch: Option<f64>,
    pub wall_ms: f64,
    pub collapse_warning: bool,
}

/// Mean pairwise L1 distance between images, divided by the pixel count.
/// The first axis of `images` indexes the batch.
pub fn diversity_metric(images: &Tensor) -> Result<f64> {
    let n = images.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(TrainError::Contract(format!("diversity needs at least 2 images, got {n}")));
    }
    let px = images.len() / n;
    let d = images.data();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&d[i * px..(i + 1) * px], &d[j * px..(j + 1) * px]);
            total += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(total / pairs / px as f64)
}

fn median(values: &VecDeque<f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

const RNG_BLOB_LEN: usize = 32 + 8 + 16;

fn rng_bytes(r: &ChaCha8Rng, out: &mut Vec<u8>) {
    out.extend_from_slice(&r.get_seed());
    out.extend_from_slice(&r.get_stream().to_le_bytes());
    out.extend_from_slice(&r.get_word_pos().to_le_bytes());
}

fn rng_from(b: &[u8]) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::from_seed(b[..32].try_into().unwrap());
    r.set_stream(u64::from_le_bytes(b[32..40].try_into().unwrap()));
    r.set_word_pos(u128::from_le_bytes(b[40..56].try_into().unwrap()));
    r
}

/// Stream of the condition sampler's generator; epoch shuffles use streams
/// 1, 2, ... so the two never meet.
const SAMPLER_STREAM: u64 = u64::MAX;

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone)]
pub struct TrainState {
    config: TrainConfig,
    shape: ModelShape,
    encoding: CondEncoding,
    generator: Generator,
    discriminator: Discriminator,
    g_adam: AdamState,
    d_adam: AdamState,
    step: u64,
    rng: ChaCha8Rng,
    sampler: ConditionSampler,
    diversity: VecDeque<f64>,
}

fn specs(config: &TrainConfig, shape: &ModelShape, enc: CondEncoding) -> (GeneratorSpec, DiscriminatorSpec) {
    let p = &config.plan;
    let g = GeneratorSpec {
        channels: p.g_channels,
        ..GeneratorSpec::new(config.z_dim, enc, shape.height, shape.width)
    };
    let d = DiscriminatorSpec {
        channels: p.d_channels,
        features: p.features,
        minibatch: config
            .minibatch_discrimination
            .then_some(MinibatchDims { kernels: p.mb_kernels, kernel_dim: p.mb_dim }),
        ..DiscriminatorSpec::new(enc, shape.height, shape.width, false)
    };
    (g, d)
}

impl TrainState {
    /// Fresh networks for `shape`. `steps_per_iteration` must be resolved.
    pub fn new(config: TrainConfig, shape: ModelShape) -> Result<Self> {
        config.validate()?;
        if config.steps_per_iteration.is_none() {
            return Err(TrainError::Config("steps_per_iteration must be resolved before building state".into()));
        }
        let encoding = CondEncoding::for_kind(shape.kind);
        let (gs, ds) = specs(&config, &shape, encoding);
        let generator = build_generator(gs, config.seed)?;
        let discriminator = build_discriminator(ds, config.seed.wrapping_add(0x5eed))?;
        let g_adam = AdamState::new(config.adam, generator.params().tensors());
        let d_adam = AdamState::new(config.adam, discriminator.params().tensors());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut srng = ChaCha8Rng::seed_from_u64(config.seed);
        srng.set_stream(SAMPLER_STREAM);
        let mut sampler = ConditionSampler::with_rng(shape.domain, srng)?;
        sampler.margin = config.margin;
        Ok(Self {
            config,
            shape,
            encoding,
            generator,
            discriminator,
            g_adam,
            d_adam,
            step: 0,
            rng,
            sampler,
            diversity: VecDeque::new(),
        })
    }

    /// Fresh state for training on `ds`, resolving the iteration length.
    pub fn for_dataset(mut config: TrainConfig, ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(TrainError::Domain("cannot train on an empty dataset".into()));
        }
        if config.steps_per_iteration.is_none() {
            config.steps_per_iteration = Some(ds.len().div_ceil(config.batch_size) as u64);
        }
        Self::new(config, ModelShape::of_dataset(ds)?)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn steps_per_iteration(&self) -> u64 {
        self.config.steps_per_iteration.expect("resolved at construction")
    }

    /// Condition matrix fed to both networks; all zeros for the
    /// unconditional objective.
    pub fn encode(&self, conds: &[Condition]) -> Result<Tensor> {
        for c in conds {
            if c.kind() != self.shape.kind {
                return Err(TrainError::Domain(format!("{c:?} does not match model kind {:?}", self.shape.kind)));
            }
        }
        if self.config.objective.is_conditional() {
            Ok(encode_conditions(self.encoding, conds)?)
        } else {
            Ok(Tensor::zeros(&[conds.len(), self.encoding.width()]))
        }
    }

    fn conds_differ(&self, a: &Condition, b: &Condition) -> bool {
        match (a, b) {
            (Condition::Continuous(x), Condition::Continuous(y)) => ((*x as f64) - (*y as f64)).abs() >= self.config.margin,
            _ => a != b,
        }
    }

    /// For each sample, a uniformly drawn batch member with a different
    /// condition, or `None` when every member shares its condition.
    fn mismatch_partners(&mut self, conds: &[Condition]) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(conds.len());
        for ci in conds {
            let cand: Vec<usize> = (0..conds.len()).filter(|&j| self.conds_differ(ci, &conds[j])).collect();
            out.push((!cand.is_empty()).then(|| cand[self.rng.random_range(0..cand.len())]));
        }
        out
    }

    /// One discriminator update then one generator update on a real batch
    /// (`images` is N x 1 x H x W).
    pub fn training_step(&mut self, images: &Tensor, conds: &[Condition]) -> Result<StepMetrics> {
        let started = Instant::now();
        let n = conds.len();
        let (h, w) = (self.shape.height, self.shape.width);
        if n != self.config.batch_size || images.shape() != [n, 1, h, w] {
            return Err(TrainError::Contract(format!(
                "batch of {n} conditions and images {:?}; expected {} x 1 x {h} x {w}",
                images.shape(),
                self.config.batch_size
            )));
        }
        let objective = self.config.objective;
        let zd = self.config.z_dim;
        let y = self.encode(conds)?;

        // discriminator
        let z = Tensor::randn(&[n, zd], 1.0, &mut self.rng);
        let fake = self.generator.generate(&z, &y)?;
        let mismatch = match objective {
            Objective::CrcganA => {
                let y2: Vec<Condition> =
                    conds.iter().map(|c| self.sampler.sample_mismatched(c)).collect::<std::result::Result<_, _>>()?;
                Some((images.clone(), self.encode(&y2)?))
            }
            Objective::CrcganB => {
                // rows without a partner keep their image under a sampled wrong condition
                let partners = self.mismatch_partners(conds);
                let px = h * w;
                let mut data = Vec::with_capacity(n * px);
                let mut y2 = Vec::with_capacity(n);
                for (i, p) in partners.iter().enumerate() {
                    let j = p.unwrap_or(i);
                    data.extend_from_slice(&images.data()[j * px..(j + 1) * px]);
                    y2.push(match p {
                        Some(_) => conds[i],
                        None => self.sampler.sample_mismatched(&conds[i])?,
                    });
                }
                Some((Tensor::new(&[n, 1, h, w], data)?, self.encode(&y2)?))
            }
            Objective::Gan | Objective::Cgan => None,
        };
        let mut tape = Tape::new();
        let dp = self.discriminator.params().bind(&mut tape, true);
        let xr = tape.constant(images.clone());
        let yv = tape.constant(y.clone());
        let real = self.discriminator.forward(&mut tape, &dp, xr, yv)?.score;
        let mm = match mismatch {
            Some((x2, y2)) => {
                let (x2, y2) = (tape.constant(x2), tape.constant(y2));
                Some(self.discriminator.forward(&mut tape, &dp, x2, y2)?.score)
            }
            None => None,
        };
        let xf = tape.constant(fake);
        let sf = self.discriminator.forward(&mut tape, &dp, xf, yv)?.score;
        let dl = d_loss_tape(&mut tape, objective, real, mm, sf)?;
        let mean = |t: &Tape, v| {
            let d = t.value(v).data();
            d.iter().sum::<f64>() / d.len() as f64
        };
        let d_loss = tape.value(dl).item();
        let (mean_real, mean_fake) = (mean(&tape, real), mean(&tape, sf));
        let mean_mm = mm.map(|v| mean(&tape, v));
        let step_no = self.step + 1;
        let non_finite = |d_loss: f64, g_loss: f64| TrainError::NonFinite {
            step: step_no,
            d_loss,
            g_loss,
            mean_real,
            mean_fake,
        };
        if !d_loss.is_finite() {
            return Err(non_finite(d_loss, f64::NAN));
        }
        tape.backward(dl)?;
        let grads = self.discriminator.params().grads(&tape, &dp);
        adam_step(self.discriminator.params_mut().tensors_mut(), &grads, &mut self.d_adam)?;

        // generator, with fresh noise against the updated discriminator
        let z = Tensor::randn(&[n, zd], 1.0, &mut self.rng);
        let mut tape = Tape::new();
        let gp = self.generator.params().bind(&mut tape, true);
        let dp = self.discriminator.params().bind(&mut tape, false);
        let (zv, yv) = (tape.constant(z), tape.constant(y));
        let fake = self.generator.forward(&mut tape, &gp, zv, yv)?;
        let score = self.discriminator.forward(&mut tape, &dp, fake, yv)?.score;
        let gl = g_loss_tape(&mut tape, score, self.config.nonsaturating);
        let g_loss = tape.value(gl).item();
        if !g_loss.is_finite() {
            return Err(non_finite(d_loss, g_loss));
        }
        let diversity = if n >= 2 { diversity_metric(tape.value(fake))? } else { 0.0 };
        tape.backward(gl)?;
        let grads = self.generator.params().grads(&tape, &gp);
        adam_step(self.generator.params_mut().tensors_mut(), &grads, &mut self.g_adam)?;

        let collapse_warning = self.diversity.len() >= MIN_COLLAPSE_HISTORY
            && diversity < self.config.collapse_ratio * median(&self.diversity);
        self.diversity.push_back(diversity);
        while self.diversity.len() > self.config.collapse_window {
            self.diversity.pop_front();
        }
        let iter = self.step / self.steps_per_iteration();
        self.step += 1;
        if collapse_warning {
            log::warn!("step {}: diversity {diversity:.5} is below {} of its trailing median", self.step, self.config.collapse_ratio);
        }
        Ok(StepMetrics {
            step: self.step,
            iter,
            d_loss,
            g_loss,
            diversity,
            mean_score_real: mean_real,
            mean_score_fake: mean_fake,
            mean_score_mismatch: mean_mm,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            collapse_warning,
        })
    }

    /// Dataset indices for step `step` (zero-based): a contiguous slice of the
    /// iteration's seeded permutation, wrapping at the end.
    pub fn batch_indices(&self, len: usize, step: u64) -> Vec<usize> {
        let spi = self.steps_per_iteration();
        let (iter, pos) = (step / spi, (step % spi) as usize);
        let perm = epoch_permutation(len, self.config.seed, iter);
        let b = self.config.batch_size;
        (0..b).map(|i| perm[(pos * b + i) % len]).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (ps, adam) in [(self.generator.params(), &self.g_adam), (self.discriminator.params(), &self.d_adam)] {
            for (i, name) in ps.names().iter().enumerate() {
                tensors.push((name.clone(), ps.tensors()[i].clone()));
                tensors.push((format!("adam.m.{name}"), adam.m[i].clone()));
                tensors.push((format!("adam.v.{name}"), adam.v[i].clone()));
            }
        }
        let hist: Vec<f64> = self.diversity.iter().copied().collect();
        tensors.push(("monitor.diversity".into(), Tensor::new(&[hist.len()], hist).unwrap()));
        let mut rng = Vec::with_capacity(2 * RNG_BLOB_LEN);
        rng_bytes(&self.rng, &mut rng);
        rng_bytes(self.sampler.rng(), &mut rng);
        let mut pairs = self.config.to_pairs();
        pairs.extend(self.shape.to_pairs());
        Checkpoint { step: self.step, tensors, rng, config: format_kv(&pairs) }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let pairs = parse_kv(&ck.config)?;
        let (cfg, model): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(k, _)| TrainConfig::KEYS.contains(&k.as_str()));
        let config = TrainConfig::from_pairs(&cfg)?;
        let shape = ModelShape::from_pairs(&model)?;
        let mut state = Self::new(config, shape)?;
        let need = |name: &str| {
            ck.tensor(name)
                .cloned()
                .ok_or_else(|| TrainError::Format { offset: 0, message: format!("checkpoint lacks tensor {name}") })
        };
        let step = ck.step;
        for (ps, adam) in [
            (state.generator.params_mut(), &mut state.g_adam),
            (state.discriminator.params_mut(), &mut state.d_adam),
        ] {
            let names = ps.names().to_vec();
            let mut loaded = Vec::new();
            for (i, name) in names.iter().enumerate() {
                loaded.push((name.clone(), need(name)?));
                adam.m[i] = need(&format!("adam.m.{name}"))?;
                adam.v[i] = need(&format!("adam.v.{name}"))?;
                if adam.m[i].shape() != ps.tensors()[i].shape() || adam.v[i].shape() != ps.tensors()[i].shape() {
                    return Err(TrainError::Format { offset: 0, message: format!("moment shape mismatch for {name}") });
                }
            }
            ps.load(&loaded)?;
            adam.step = step;
        }
        state.diversity = need("monitor.diversity")?.into_data().into();
        if ck.rng.len() != 2 * RNG_BLOB_LEN {
            return Err(TrainError::Format { offset: 0, message: format!("rng blob has {} bytes", ck.rng.len()) });
        }
        state.rng = rng_from(&ck.rng[..RNG_BLOB_LEN]);
        let mut sampler = ConditionSampler::with_rng(shape.domain, rng_from(&ck.rng[RNG_BLOB_LEN..]))?;
        sampler.margin = state.config.margin;
        state.sampler = sampler;
        state.step = step;
        Ok(state)
    }

    /// Draws `count` images at `condition` from the generator.
    pub fn sample(&self, condition: Condition, count: usize, seed: u64) -> Result<Vec<Grid>> {
        sample_generator(self, condition, count, seed)
    }
}

/// Seeded permutation of `0..len` for a given iteration.
pub fn epoch_permutation(len: usize, seed: u64, iter: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter + 1);
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut rng);
    perm
}

const SAMPLE_CHUNK: usize = 256;

fn sample_generator(state: &TrainState, condition: Condition, count: usize, seed: u64) -> Result<Vec<Grid>> {
    if condition.kind() != state.shape.kind || !state.shape.domain.contains(&condition) {
        return Err(TrainError::Domain(format!("condition {condition:?} is outside {:?}", state.shape.domain)));
    }
    let zd = state.config.z_dim;
    let z = Tensor::randn(&[count, zd], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let (h, w) = (state.shape.height, state.shape.width);
    let mut out = Vec::with_capacity(count);
    for start in (0..count).step_by(SAMPLE_CHUNK) {
        let m = SAMPLE_CHUNK.min(count - start);
        let zc = Tensor::new(&[m, zd], z.data()[start * zd..(start + m) * zd].to_vec())?;
        let y = state.encode(&vec![condition; m])?;
        let imgs = state.generator.generate(&zc, &y)?;
        for img in imgs.data().chunks_exact(h * w) {
            out.push(Grid::new(w, h, img.to_vec()));
        }
    }
    Ok(out)
}

/// Loads `checkpoint` and draws `count` images at `condition`.
pub fn sample(checkpoint: &Checkpoint, condition: Condition, count: usize, seed: u64) -> Result<Vec<Grid>> {
    sample_generator(&TrainState::from_checkpoint(checkpoint)?, condition, count, seed)
}

/// Files produced by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    /// Metrics of the steps run by this call.
    pub metrics: Vec<StepMetrics>,
    pub state: TrainState,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn dataset_tensor(ds: &Dataset) -> Vec<f64> {
    ds.samples().iter().flat_map(|s| s.image.iter().map(|&v| v as f64)).collect()
}

fn run(mut state: TrainState, ds: &Dataset, out_dir: &Path, append: bool) -> Result<TrainOutcome> {
    let shape = ModelShape::of_dataset(ds)?;
    if (shape.height, shape.width, shape.kind) != (state.shape.height, state.shape.width, state.shape.kind) {
        return Err(TrainError::Domain(format!(
            "dataset is {}x{} {:?}, model expects {}x{} {:?}",
            shape.width, shape.height, shape.kind, state.shape.width, state.shape.height, state.shape.kind
        )));
    }
    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let file = if append {
        OpenOptions::new().create(true).append(true).open(&metrics_path)?
    } else {
        File::create(&metrics_path)?
    };
    let mut log_out = BufWriter::new(file);
    let pixels = dataset_tensor(ds);
    let px = ds.width() * ds.height();
    let mut metrics = Vec::new();
    while state.step < state.config.steps {
        let idx = state.batch_indices(ds.len(), state.step);
        let data: Vec<f64> = idx.iter().flat_map(|&i| pixels[i * px..(i + 1) * px].iter().copied()).collect();
        let images = Tensor::new(&[idx.len(), 1, ds.height(), ds.width()], data)?;
        let conds: Vec<Condition> = idx.iter().map(|&i| ds.samples()[i].condition).collect();
        let m = state.training_step(&images, &conds)?;
        serde_json::to_writer(&mut log_out, &m)?;
        log_out.write_all(b"\n")?;
        let every = state.config.checkpoint_every;
        if every > 0 && state.step % every == 0 {
            log_out.flush()?;
            write_checkpoint(&state.to_checkpoint(), out_dir.join(format!("step_{:08}.ckpt", state.step)))?;
        }
        metrics.push(m);
    }
    log_out.flush()?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    write_checkpoint(&state.to_checkpoint(), &final_checkpoint)?;
    Ok(TrainOutcome { final_checkpoint, metrics_path, metrics, state })
}

/// Trains from scratch, writing the metrics log and checkpoints to `out_dir`.
pub fn train(config: TrainConfig, ds: &Dataset, out_dir: impl AsRef<Path>) -> Result<TrainOutcome> {
    let state = TrainState::for_dataset(config, ds)?;
    run(state, ds, out_dir.as_ref(), false)
}

/// Continues from a checkpoint up to `steps` total (or the stored budget),
/// appending to the metrics log in `out_dir`.
pub fn resume(checkpoint: &Checkpoint, ds: &Dataset, out_dir: impl AsRef<Path>, steps: Option<u64>) -> Result<TrainOutcome> {
    let mut state = TrainState::from_checkpoint(checkpoint)?;
    if let Some(s) = steps {
        state.config.steps = s;
    }
    run(state, ds, out_dir.as_ref(), true)
}

/// Reads a metrics log.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<StepMetrics>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(TrainError::from))
        .collect()
}
