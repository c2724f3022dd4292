//! Generator and discriminator networks with condition injection, and the
//! minibatch discrimination layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{grad_check, AutodiffError, GradCheckReport, Tape, Tensor, Var, DEFAULT_STEP};
use crate::dataset::{Condition, ConditionKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("condition does not fit the network: {0}")]
    Domain(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Standard deviation of the normal weight initialisation.
pub const INIT_STD: f64 = 0.02;
/// Negative slope of every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.2;

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;

/// How a condition is fed to a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondEncoding {
    OneHot(usize),
    Scalar,
}

impl CondEncoding {
    pub fn for_kind(kind: ConditionKind) -> Self {
        match kind {
            ConditionKind::Class { cardinality } => CondEncoding::OneHot(cardinality as usize),
            ConditionKind::Continuous => CondEncoding::Scalar,
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            CondEncoding::OneHot(k) => k,
            CondEncoding::Scalar => 1,
        }
    }
}

/// Encodes conditions as an N x width matrix.
pub fn encode_conditions(enc: CondEncoding, conds: &[Condition]) -> Result<Tensor> {
    let w = enc.width();
    let mut data = vec![0.0; conds.len() * w];
    for (i, c) in conds.iter().enumerate() {
        match (enc, *c) {
            (CondEncoding::OneHot(k), Condition::Class { index, cardinality }) if cardinality as usize == k => {
                if index as usize >= k {
                    return Err(NetError::Domain(format!("class {index} out of {k}")));
                }
                data[i * w + index as usize] = 1.0;
            }
            (CondEncoding::Scalar, Condition::Continuous(v)) => data[i] = v as f64,
            (enc, c) => return Err(NetError::Domain(format!("{c:?} cannot be encoded as {enc:?}"))),
        }
    }
    Ok(Tensor::new(&[conds.len(), w], data)?)
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    fn push(&mut self, name: &str, t: Tensor) {
        self.names.push(name.to_string());
        self.tensors.push(t);
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces all tensors, checking names and shapes.
    pub fn load(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.len() {
            return Err(NetError::Spec(format!("expected {} tensors, got {}", self.len(), named.len())));
        }
        for (i, (name, t)) in named.iter().enumerate() {
            if *name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(NetError::Spec(format!(
                    "tensor {i}: expected {} {:?}, got {name} {:?}",
                    self.names[i],
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
        }
        for (slot, (_, t)) in self.tensors.iter_mut().zip(named) {
            *slot = t.clone();
        }
        Ok(())
    }

    /// Records every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, tracked: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone(), tracked)).collect()
    }

    /// Reads back accumulated gradients of vars returned by [`ParamSet::bind`].
    pub fn grads(&self, tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
        vars.iter()
            .zip(&self.tensors)
            .map(|(v, t)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

fn check_image_dims(height: usize, width: usize) -> Result<()> {
    if height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0 {
        return Err(NetError::Spec(format!("image {height}x{width} must be a positive multiple of 4 on both sides")));
    }
    Ok(())
}

fn cond_check(enc: CondEncoding) -> Result<()> {
    if enc.width() == 0 {
        return Err(NetError::Spec("one-hot encoding needs at least one class".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub z_dim: usize,
    pub cond: CondEncoding,
    /// Channels after the dense stage and after the first upsampling.
    pub channels: [usize; 2],
    pub height: usize,
    pub width: usize,
}

impl GeneratorSpec {
    pub fn new(z_dim: usize, cond: CondEncoding, height: usize, width: usize) -> Self {
        Self { z_dim, cond, channels: [128, 64], height, width }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 {
            return Err(NetError::Spec("z_dim must be at least 1".into()));
        }
        if self.channels.contains(&0) {
            return Err(NetError::Spec(format!("empty channel plan {:?}", self.channels)));
        }
        cond_check(self.cond)?;
        check_image_dims(self.height, self.width)
    }
}

/// Minibatch discrimination dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinibatchDims {
    pub kernels: usize,
    pub kernel_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub cond: CondEncoding,
    pub height: usize,
    pub width: usize,
    /// Channels of the two downsampling convolutions.
    pub channels: [usize; 2],
    /// Width of the dense feature layer.
    pub features: usize,
    pub minibatch: Option<MinibatchDims>,
}

impl DiscriminatorSpec {
    pub fn new(cond: CondEncoding, height: usize, width: usize, minibatch: bool) -> Self {
        Self {
            cond,
            height,
            width,
            channels: [64, 128],
            features: 64,
            minibatch: minibatch.then_some(MinibatchDims { kernels: 32, kernel_dim: 8 }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.features == 0 {
            return Err(NetError::Spec(format!("empty layer in {:?} / {}", self.channels, self.features)));
        }
        if let Some(mb) = self.minibatch {
            if mb.kernels == 0 || mb.kernel_dim == 0 {
                return Err(NetError::Spec(format!("empty minibatch tensor {mb:?}")));
            }
        }
        cond_check(self.cond)?;
        check_image_dims(self.height, self.width)
    }

    /// Length of the vector fed to the final layer.
    pub fn final_width(&self) -> usize {
        self.features + self.minibatch.map_or(0, |m| m.kernels)
    }
}

fn init(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, INIT_STD, rng)
}

/// `o[i, b] = sum_{j != i} exp(-||M_i,b - M_j,b||_1)` with `M_i = f_i T`.
/// `t` holds T as A x (B*C).
pub fn minibatch_features(tape: &mut Tape, f: Var, t: Var, dims: MinibatchDims) -> Result<Var> {
    let m = tape.matmul(f, t)?;
    Ok(tape.minibatch_similarity(m, dims.kernels, dims.kernel_dim)?)
}

fn check_inputs(tape: &Tape, a: Var, a_cols: usize, y: Var, y_cols: usize, what: &str) -> Result<usize> {
    let (sa, sy) = (tape.shape(a), tape.shape(y));
    if sa.len() != 2 || sa[1] != a_cols || sy != [sa[0], y_cols] {
        return Err(NetError::Spec(format!("{what}: got {sa:?} and condition {sy:?}")));
    }
    Ok(sa[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    spec: GeneratorSpec,
    params: ParamSet,
}

pub fn build_generator(spec: GeneratorSpec, seed: u64) -> Result<Generator> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.cond.width();
    let [c0, c1] = spec.channels;
    let cells = (spec.height / 4) * (spec.width / 4);
    let mut p = ParamSet::new();
    p.push("g.dense.w", init(&mut rng, &[spec.z_dim + k, c0 * cells]));
    p.push("g.dense.b", Tensor::zeros(&[c0 * cells]));
    p.push("g.up1.w", init(&mut rng, &[c0 + k, c1, KERNEL, KERNEL]));
    p.push("g.up1.b", Tensor::zeros(&[c1]));
    p.push("g.up2.w", init(&mut rng, &[c1 + k, 1, KERNEL, KERNEL]));
    p.push("g.up2.b", Tensor::zeros(&[1]));
    Ok(Generator { spec, params: p })
}

impl Generator {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Maps `z` (N x z_dim) and encoded `y` (N x k) to N x 1 x H x W images,
    /// using parameter vars from `self.params().bind(..)`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], z: Var, y: Var) -> Result<Var> {
        let s = &self.spec;
        let k = s.cond.width();
        let n = check_inputs(tape, z, s.z_dim, y, k, "generator input")?;
        let (h4, w4) = (s.height / 4, s.width / 4);
        let [c0, _] = s.channels;

        let zy = tape.concat(&[z, y], 1)?;
        let d = tape.matmul(zy, p[0])?;
        let d = tape.add_bias(d, p[1])?;
        let d = tape.leaky_relu(d, LEAKY_SLOPE);
        let d = tape.reshape(d, &[n, c0, h4, w4])?;

        let ym = tape.expand_spatial(y, h4, w4)?;
        let x = tape.concat(&[d, ym], 1)?;
        let x = tape.conv_transpose2d(x, p[2], STRIDE, PAD)?;
        let x = tape.add_bias(x, p[3])?;
        let x = tape.leaky_relu(x, LEAKY_SLOPE);

        let ym = tape.expand_spatial(y, 2 * h4, 2 * w4)?;
        let x = tape.concat(&[x, ym], 1)?;
        let x = tape.conv_transpose2d(x, p[4], STRIDE, PAD)?;
        let x = tape.add_bias(x, p[5])?;
        Ok(tape.sigmoid(x))
    }

    /// Untracked forward pass; returns N x 1 x H x W.
    pub fn generate(&self, z: &Tensor, y: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let (zv, yv) = (tape.constant(z.clone()), tape.constant(y.clone()));
        let out = self.forward(&mut tape, &p, zv, yv)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    params: ParamSet,
}

/// Vars produced by one discriminator pass.
#[derive(Debug, Clone, Copy)]
pub struct DiscOutput {
    /// N scores in (0, 1).
    pub score: Var,
    /// N x final_width features entering the last layer.
    pub features: Var,
}

pub fn build_discriminator(spec: DiscriminatorSpec, seed: u64) -> Result<Discriminator> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.cond.width();
    let [c0, c1] = spec.channels;
    let cells = (spec.height / 4) * (spec.width / 4);
    let mut p = ParamSet::new();
    p.push("d.conv1.w", init(&mut rng, &[c0, 1 + k, KERNEL, KERNEL]));
    p.push("d.conv1.b", Tensor::zeros(&[c0]));
    p.push("d.conv2.w", init(&mut rng, &[c1, c0 + k, KERNEL, KERNEL]));
    p.push("d.conv2.b", Tensor::zeros(&[c1]));
    p.push("d.feat.w", init(&mut rng, &[c1 * cells + k, spec.features]));
    p.push("d.feat.b", Tensor::zeros(&[spec.features]));
    if let Some(mb) = spec.minibatch {
        p.push("d.mbd.t", init(&mut rng, &[spec.features, mb.kernels * mb.kernel_dim]));
    }
    p.push("d.out.w", init(&mut rng, &[spec.final_width(), 1]));
    p.push("d.out.b", Tensor::zeros(&[1]));
    Ok(Discriminator { spec, params: p })
}

impl Discriminator {
    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Scores `x` (N x 1 x H x W) under encoded `y` (N x k).
    ///
    /// The minibatch features are divided by N - 1 before the final layer so
    /// their scale does not depend on the batch size.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var, y: Var) -> Result<DiscOutput> {
        let s = &self.spec;
        let k = s.cond.width();
        let sx = tape.shape(x).to_vec();
        if sx.len() != 4 || sx[1] != 1 || sx[2] != s.height || sx[3] != s.width || tape.shape(y) != [sx[0], k] {
            return Err(NetError::Spec(format!(
                "discriminator input {sx:?} with condition {:?}",
                tape.shape(y)
            )));
        }
        let n = sx[0];
        let [_, c1] = s.channels;
        let cells = (s.height / 4) * (s.width / 4);

        let ym = tape.expand_spatial(y, s.height, s.width)?;
        let h = tape.concat(&[x, ym], 1)?;
        let h = tape.conv2d(h, p[0], STRIDE, PAD)?;
        let h = tape.add_bias(h, p[1])?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);

        let ym = tape.expand_spatial(y, s.height / 2, s.width / 2)?;
        let h = tape.concat(&[h, ym], 1)?;
        let h = tape.conv2d(h, p[2], STRIDE, PAD)?;
        let h = tape.add_bias(h, p[3])?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);

        let h = tape.reshape(h, &[n, c1 * cells])?;
        let h = tape.concat(&[h, y], 1)?;
        let f = tape.matmul(h, p[4])?;
        let f = tape.add_bias(f, p[5])?;
        let f = tape.leaky_relu(f, LEAKY_SLOPE);

        let (features, out) = match s.minibatch {
            Some(mb) => {
                let o = minibatch_features(tape, f, p[6], mb)?;
                let o = tape.affine(o, 1.0 / (n.max(2) - 1) as f64, 0.0);
                (tape.concat(&[f, o], 1)?, 7)
            }
            None => (f, 6),
        };
        let logit = tape.matmul(features, p[out])?;
        let logit = tape.add_bias(logit, p[out + 1])?;
        let score = tape.sigmoid(logit);
        let score = tape.reshape(score, &[n])?;
        Ok(DiscOutput { score, features })
    }

    /// Untracked scores for a batch.
    pub fn score(&self, x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let out = self.forward(&mut tape, &p, xv, yv)?;
        Ok(tape.value(out.score).data().to_vec())
    }
}

fn as_autodiff(e: NetError) -> AutodiffError {
    match e {
        NetError::Autodiff(e) => e,
        e => AutodiffError::Contract(e.to_string()),
    }
}

/// Scalarizes `y` as `sum(y * R)` with fixed random `R`.
fn project(tape: &mut Tape, y: Var, rng: &mut ChaCha8Rng) -> crate::autodiff::Result<Var> {
    let w = tape.constant(Tensor::randn(tape.shape(y), 1.0, rng));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Gradient checks of small generator and discriminator instances (with and
/// without the minibatch layer) over all parameters and inputs. Parameters
/// are redrawn at std 0.4 so every layer moves the output.
pub fn grad_check_networks(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let scaled = |ps: &ParamSet, rng: &mut ChaCha8Rng| -> Vec<Tensor> {
        ps.tensors().iter().map(|t| Tensor::randn(t.shape(), 0.4, rng)).collect()
    };
    let y = encode_conditions(
        CondEncoding::OneHot(2),
        &[0, 1, 1].map(|index| Condition::Class { index, cardinality: 2 }),
    )?;

    let gspec = GeneratorSpec { channels: [6, 4], ..GeneratorSpec::new(5, CondEncoding::OneHot(2), 8, 8) };
    let g = build_generator(gspec, seed)?;
    let mut inputs = scaled(g.params(), &mut rng);
    let np = inputs.len();
    inputs.push(Tensor::randn(&[3, 5], 1.0, &mut rng));
    inputs.push(y.clone());
    let proj_seed = rng.random::<u64>();
    let report = grad_check(
        &inputs,
        |t, v| {
            let img = g.forward(t, &v[..np], v[np], v[np + 1]).map_err(as_autodiff)?;
            project(t, img, &mut ChaCha8Rng::seed_from_u64(proj_seed))
        },
        DEFAULT_STEP,
    )?;
    out.push(("generator", report));

    for (name, mbd) in [("discriminator", false), ("discriminator+minibatch", true)] {
        let dspec = DiscriminatorSpec {
            channels: [3, 4],
            features: 6,
            minibatch: mbd.then_some(MinibatchDims { kernels: 3, kernel_dim: 2 }),
            ..DiscriminatorSpec::new(CondEncoding::OneHot(2), 8, 8, false)
        };
        let d = build_discriminator(dspec, seed)?;
        let mut inputs = scaled(d.params(), &mut rng);
        let np = inputs.len();
        inputs.push(Tensor::new(&[3, 1, 8, 8], (0..192).map(|_| rng.random::<f64>()).collect())?);
        inputs.push(y.clone());
        let proj_seed = rng.random::<u64>();
        let report = grad_check(
            &inputs,
            |t, v| {
                let o = d.forward(t, &v[..np], v[np], v[np + 1]).map_err(as_autodiff)?;
                let l = t.log_clamped(o.score);
                project(t, l, &mut ChaCha8Rng::seed_from_u64(proj_seed))
            },
            DEFAULT_STEP,
        )?;
        out.push((name, report));
    }
    Ok(out)
}
