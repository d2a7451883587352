//! Network pieces: GCN encoder and generator, MLP critics, Glorot initialization,
//! Adam, and the checkpoint file format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{GradientMap, Matrix, Result, Tape, Var};
use crate::graph::{CsrMatrix, NormalizedAdjacency};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Linear => x,
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

/// One bias-free graph convolution: `activation(Â · H · W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayerParams {
    pub weight: Matrix,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<GcnLayerParams>,
    pub generator: Vec<GcnLayerParams>,
    pub d_z: MlpParams,
    pub d_x: MlpParams,
}

/// Layer widths. The encoder is two GCN layers `d → encoder_hidden → q`; the
/// generator is `q → generator_hidden… → d`; the critics are `in → hidden… → 1`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub generator_hidden: Vec<usize>,
    pub dz_hidden: Vec<usize>,
    pub dx_hidden: Vec<usize>,
}

impl Architecture {
    /// Link-prediction widths used for Cora: E 32/32, G 256/512, D_z 64/32, D_x 512/256.
    pub fn link_prediction(feature_dim: usize, latent_dim: usize) -> Self {
        Self {
            feature_dim,
            latent_dim,
            encoder_hidden: 32,
            generator_hidden: vec![256, 512],
            dz_hidden: vec![64, 32],
            dx_hidden: vec![512, 256],
        }
    }
}

/// Glorot/Xavier uniform: entries in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init(shape: (usize, usize), rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (shape.0 + shape.1) as f64).sqrt();
    Matrix::from_shape_fn(shape, |_| rng.random_range(-bound..=bound))
}

pub fn glorot_init_seeded(shape: (usize, usize), seed: u64) -> Matrix {
    glorot_init(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn gcn_stack(dims: &[usize], last: Activation, rng: &mut impl Rng) -> Vec<GcnLayerParams> {
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| GcnLayerParams {
            weight: glorot_init((w[0], w[1]), rng),
            activation: if i + 2 == dims.len() {
                last
            } else {
                Activation::Relu
            },
        })
        .collect()
}

fn mlp(input: usize, hidden: &[usize], rng: &mut impl Rng) -> MlpParams {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(1);
    MlpParams {
        weights: dims.windows(2).map(|w| glorot_init((w[0], w[1]), rng)).collect(),
        biases: dims[1..].iter().map(|&k| Matrix::zeros((1, k))).collect(),
    }
}

impl ModelParams {
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen_dims = vec![arch.latent_dim];
        gen_dims.extend_from_slice(&arch.generator_hidden);
        gen_dims.push(arch.feature_dim);
        Self {
            encoder: gcn_stack(
                &[arch.feature_dim, arch.encoder_hidden, arch.latent_dim],
                Activation::Linear,
                &mut rng,
            ),
            generator: gcn_stack(&gen_dims, Activation::Sigmoid, &mut rng),
            d_z: mlp(arch.latent_dim, &arch.dz_hidden, &mut rng),
            d_x: mlp(arch.feature_dim, &arch.dx_hidden, &mut rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.weight.ncols())
    }

    /// Flattened `(name, matrix)` pairs in a fixed order.
    pub fn named_matrices(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.weight"), &l.weight));
        }
        for (i, l) in self.generator.iter().enumerate() {
            out.push((format!("generator.{i}.weight"), &l.weight));
        }
        for (prefix, m) in [("d_z", &self.d_z), ("d_x", &self.d_x)] {
            for (i, (w, b)) in m.weights.iter().zip(&m.biases).enumerate() {
                out.push((format!("{prefix}.{i}.weight"), w));
                out.push((format!("{prefix}.{i}.bias"), b));
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named_matrices()
            .iter()
            .all(|(_, m)| m.iter().all(|v| v.is_finite()))
    }
}

/// Layer weights registered on a tape, ready for a forward pass.
pub struct GcnVars<'t> {
    pub weights: Vec<Var<'t>>,
    pub activations: Vec<Activation>,
}

pub struct MlpVars<'t> {
    pub weights: Vec<Var<'t>>,
    pub biases: Vec<Var<'t>>,
}

impl<'t> GcnVars<'t> {
    /// `trainable = false` registers the weights as constants.
    pub fn register(tape: &'t Tape, layers: &[GcnLayerParams], trainable: bool) -> Self {
        let leaf = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        Self {
            weights: layers.iter().map(|l| leaf(&l.weight)).collect(),
            activations: layers.iter().map(|l| l.activation).collect(),
        }
    }

    pub fn gradients(&self, grads: &GradientMap) -> Vec<Matrix> {
        self.weights.iter().map(|w| grads.get_or_zeros(*w)).collect()
    }
}

impl<'t> MlpVars<'t> {
    pub fn register(tape: &'t Tape, params: &MlpParams, trainable: bool) -> Self {
        let leaf = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        Self {
            weights: params.weights.iter().map(leaf).collect(),
            biases: params.biases.iter().map(leaf).collect(),
        }
    }

    pub fn gradients(&self, grads: &GradientMap) -> Vec<Matrix> {
        self.weights
            .iter()
            .chain(&self.biases)
            .map(|w| grads.get_or_zeros(*w))
            .collect()
    }
}

/// `activation(Â · H · W)`; the sparse product is taken first.
pub fn gcn_layer<'t>(
    adj: &Rc<CsrMatrix>,
    h: Var<'t>,
    weight: Var<'t>,
    activation: Activation,
) -> Result<Var<'t>> {
    let propagated = h.left_sparse_mul(adj)?;
    Ok(activation.apply(propagated.matmul(weight)?))
}

pub fn gcn_forward<'t>(adj: &Rc<CsrMatrix>, input: Var<'t>, layers: &GcnVars<'t>) -> Result<Var<'t>> {
    let mut h = input;
    for (w, act) in layers.weights.iter().zip(&layers.activations) {
        h = gcn_layer(adj, h, *w, *act)?;
    }
    Ok(h)
}

/// Encoder `E(X, Â) → H` (n×q). Hidden relu, linear output.
pub fn encoder_forward<'t>(x: Var<'t>, adj: &Rc<CsrMatrix>, enc: &GcnVars<'t>) -> Result<Var<'t>> {
    gcn_forward(adj, x, enc)
}

/// Generator `G(Z, Â) → X′` (n×d). Hidden relu, sigmoid output.
pub fn generator_forward<'t>(z: Var<'t>, adj: &Rc<CsrMatrix>, gen: &GcnVars<'t>) -> Result<Var<'t>> {
    gcn_forward(adj, z, gen)
}

/// Per-row critic score, `n×k → n×1`, with no output nonlinearity.
pub fn discriminator_forward<'t>(input: Var<'t>, d: &MlpVars<'t>) -> Result<Var<'t>> {
    let mut h = input;
    let last = d.weights.len() - 1;
    for (i, (w, b)) in d.weights.iter().zip(&d.biases).enumerate() {
        h = h.matmul(*w)?.add_bias(*b)?;
        if i < last {
            h = h.relu();
        }
    }
    Ok(h)
}

/// Shared handle on the adjacency used by the GCN layers.
pub fn adjacency_operand(adj: &NormalizedAdjacency) -> Rc<CsrMatrix> {
    Rc::new(adj.matrix.clone())
}

/// Encodes `X` with fixed weights, outside any training step.
pub fn encode(params: &ModelParams, x: &Matrix, adj: &NormalizedAdjacency) -> Result<Matrix> {
    let tape = Tape::new();
    let enc = GcnVars::register(&tape, &params.encoder, false);
    let h = encoder_forward(tape.constant(x.clone()), &adjacency_operand(adj), &enc)?;
    Ok((*h.value()).clone())
}

/// Bias-corrected Adam with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.dim())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "adam parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "adam gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.dim(), g.dim(), "gradient shape mismatch");
            ndarray::Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                });
        }
    }
}

pub fn gcn_params_mut(layers: &mut [GcnLayerParams]) -> Vec<&mut Matrix> {
    layers.iter_mut().map(|l| &mut l.weight).collect()
}

pub fn mlp_params_mut(p: &mut MlpParams) -> Vec<&mut Matrix> {
    p.weights.iter_mut().chain(p.biases.iter_mut()).collect()
}

pub fn mlp_params(p: &MlpParams) -> Vec<&Matrix> {
    p.weights.iter().chain(p.biases.iter()).collect()
}

// Checkpoint layout (little-endian):
//   magic  b"DBGANCKP"
//   u32    format version
//   u32    matrix count
//   per matrix: u32 name length, UTF-8 name, u64 rows, u64 cols, rows*cols f64 (row-major)
// Activations are implied by position and are not stored.

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DBGANCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is missing matrix `{0}`")]
    Missing(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub fn write_checkpoint(params: &ModelParams, path: &Path) -> std::result::Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    let named = params.named_matrices();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, m) in named {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.nrows() as u64).to_le_bytes())?;
        w.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for v in m.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(path: &Path) -> std::result::Result<ModelParams, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)?;
    let mut named = BTreeMap::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("non-UTF-8 matrix name".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let mut b = [0; 8];
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        let m = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        named.insert(name, m);
    }
    let layers = |prefix: &str| {
        named
            .keys()
            .filter(|k| k.starts_with(prefix) && k.ends_with(".weight"))
            .count()
    };
    let counts = [
        layers("encoder."),
        layers("generator."),
        layers("d_z."),
        layers("d_x."),
    ];
    let mut take = |name: String| named.remove(&name).ok_or(CheckpointError::Missing(name));
    let mut gcn = |prefix: &str, count: usize, last: Activation| {
        (0..count)
            .map(|i| {
                Ok(GcnLayerParams {
                    weight: take(format!("{prefix}.{i}.weight"))?,
                    activation: if i + 1 == count { last } else { Activation::Relu },
                })
            })
            .collect::<std::result::Result<Vec<_>, CheckpointError>>()
    };
    let encoder = gcn("encoder", counts[0], Activation::Linear)?;
    let generator = gcn("generator", counts[1], Activation::Sigmoid)?;
    let mut mlp = |prefix: &str, count: usize| -> std::result::Result<MlpParams, CheckpointError> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..count {
            weights.push(take(format!("{prefix}.{i}.weight"))?);
            biases.push(take(format!("{prefix}.{i}.bias"))?);
        }
        Ok(MlpParams { weights, biases })
    };
    let d_z = mlp("d_z", counts[2])?;
    let d_x = mlp("d_x", counts[3])?;
    Ok(ModelParams {
        encoder,
        generator,
        d_z,
        d_x,
    })
}
