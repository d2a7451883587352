//! Losses, gradient penalty and the alternating training schedule.
//!
//! One epoch runs `critic_steps` updates of the feature critic `D_x`, one
//! generator update, one latent critic `D_z` update and one encoder update
//! (which also moves the generator through the feature reconstruction term).
//! Every update draws a fresh batch of prior codes, one per node.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Matrix, Tape, TensorError, Var};
use crate::graph::{normalize_adjacency, CsrMatrix, EdgeSplit, Graph, GraphError};
use crate::metrics::{link_prediction, MetricsError};
use crate::nn::{
    adjacency_operand, discriminator_forward, encoder_forward, gcn_params_mut,
    generator_forward, mlp_params, mlp_params_mut, AdamState, Architecture, GcnVars, ModelParams,
    MlpVars,
};
use crate::prior::{
    estimate_prior, Prior, PriorError, PriorEstimate, PriorMode, PriorOptions, DEFAULT_EXACT_THRESHOLD,
    DEFAULT_PROTOTYPES,
};

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLoss {
    Bce,
    Mse,
}

impl std::str::FromStr for FeatureLoss {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "bce" => Ok(Self::Bce),
            "mse" => Ok(Self::Mse),
            other => Err(ConfigError::Value {
                key: "feature_loss".into(),
                value: other.into(),
                expected: "bce or mse",
            }),
        }
    }
}

impl fmt::Display for FeatureLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bce => "bce",
            Self::Mse => "mse",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: expected {expected}")]
    Value {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the reconstruction loss in the encoder objective.
    pub alpha: f64,
    /// Gradient-penalty coefficient.
    pub lambda_gp: f64,
    pub lr: f64,
    pub epochs: usize,
    /// `D_x` updates per generator update.
    pub critic_steps: usize,
    /// Latent width.
    pub q: usize,
    /// Prototype count.
    pub m: usize,
    pub seed: u64,
    pub use_pde: bool,
    pub use_bal: bool,
    /// Without adversarial learning, train the encoder on the adjacency term only.
    pub strict_gae: bool,
    /// KDE over all nodes instead of DPP prototypes (only with `use_pde`).
    pub x_only_prior: bool,
    pub feature_loss: FeatureLoss,
    pub exact_threshold: usize,
    pub encoder_hidden: usize,
    pub generator_hidden: Vec<usize>,
    pub dz_hidden: Vec<usize>,
    pub dx_hidden: Vec<usize>,
    /// Validation metrics every this many epochs; 0 disables them.
    pub eval_every: usize,
    /// Snapshot interval handed to the epoch observer; 0 disables snapshots.
    pub checkpoint_every: usize,
    /// Return the parameters with the best validation AUC instead of the last ones.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda_gp: 1.0,
            lr: 0.001,
            epochs: 400,
            critic_steps: 5,
            q: 32,
            m: DEFAULT_PROTOTYPES,
            seed: 0,
            use_pde: true,
            use_bal: true,
            strict_gae: false,
            x_only_prior: false,
            feature_loss: FeatureLoss::Bce,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            encoder_hidden: 32,
            generator_hidden: vec![256, 512],
            dz_hidden: vec![64, 32],
            dx_hidden: vec![512, 256],
            eval_every: 1,
            checkpoint_every: 0,
            keep_best: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        expected,
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim(), "comma-separated positive integers"))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "alpha",
        "lambda_gp",
        "lr",
        "epochs",
        "critic_steps",
        "q",
        "m",
        "seed",
        "use_pde",
        "use_bal",
        "strict_gae",
        "x_only_prior",
        "feature_loss",
        "exact_threshold",
        "encoder_hidden",
        "generator_hidden",
        "dz_hidden",
        "dx_hidden",
        "eval_every",
        "checkpoint_every",
        "keep_best",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "alpha" => self.alpha = parse_value(key, v, "a real number")?,
            "lambda_gp" => self.lambda_gp = parse_value(key, v, "a real number")?,
            "lr" => self.lr = parse_value(key, v, "a real number")?,
            "epochs" => self.epochs = parse_value(key, v, "an integer")?,
            "critic_steps" => self.critic_steps = parse_value(key, v, "an integer")?,
            "q" => self.q = parse_value(key, v, "an integer")?,
            "m" => self.m = parse_value(key, v, "an integer")?,
            "seed" => self.seed = parse_value(key, v, "an unsigned integer")?,
            "use_pde" => self.use_pde = parse_value(key, v, "true or false")?,
            "use_bal" => self.use_bal = parse_value(key, v, "true or false")?,
            "strict_gae" => self.strict_gae = parse_value(key, v, "true or false")?,
            "x_only_prior" => self.x_only_prior = parse_value(key, v, "true or false")?,
            "feature_loss" => self.feature_loss = v.parse()?,
            "exact_threshold" => self.exact_threshold = parse_value(key, v, "an integer")?,
            "encoder_hidden" => self.encoder_hidden = parse_value(key, v, "an integer")?,
            "generator_hidden" => self.generator_hidden = parse_list(key, v)?,
            "dz_hidden" => self.dz_hidden = parse_list(key, v)?,
            "dx_hidden" => self.dx_hidden = parse_list(key, v)?,
            "eval_every" => self.eval_every = parse_value(key, v, "an integer")?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, v, "an integer")?,
            "keep_best" => self.keep_best = parse_value(key, v, "true or false")?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Flat `key = value` lines in [`TrainConfig::KEYS`] order.
    pub fn to_config_text(&self) -> String {
        let b = |x: bool| x.to_string();
        let values = [
            self.alpha.to_string(),
            self.lambda_gp.to_string(),
            self.lr.to_string(),
            self.epochs.to_string(),
            self.critic_steps.to_string(),
            self.q.to_string(),
            self.m.to_string(),
            self.seed.to_string(),
            b(self.use_pde),
            b(self.use_bal),
            b(self.strict_gae),
            b(self.x_only_prior),
            self.feature_loss.to_string(),
            self.exact_threshold.to_string(),
            self.encoder_hidden.to_string(),
            join(&self.generator_hidden),
            join(&self.dz_hidden),
            join(&self.dx_hidden),
            self.eval_every.to_string(),
            self.checkpoint_every.to_string(),
            b(self.keep_best),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.into()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if !(self.lambda_gp >= 0.0 && self.lambda_gp.is_finite()) {
            return bad("lambda_gp must be finite and non-negative");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.critic_steps == 0 {
            return bad("critic_steps must be at least 1");
        }
        if self.q == 0 || self.m == 0 || self.encoder_hidden == 0 {
            return bad("q, m and encoder_hidden must be positive");
        }
        let layers = [&self.generator_hidden, &self.dz_hidden, &self.dx_hidden];
        if layers.iter().any(|l| l.is_empty() || l.contains(&0)) {
            return bad("hidden layer lists must be non-empty with positive widths");
        }
        Ok(())
    }

    pub fn architecture(&self, feature_dim: usize) -> Architecture {
        Architecture {
            feature_dim,
            latent_dim: self.q,
            encoder_hidden: self.encoder_hidden,
            generator_hidden: self.generator_hidden.clone(),
            dz_hidden: self.dz_hidden.clone(),
            dx_hidden: self.dx_hidden.clone(),
        }
    }

    pub fn prior_mode(&self) -> PriorMode {
        match (self.use_pde, self.x_only_prior) {
            (false, _) => PriorMode::StandardNormal,
            (true, true) => PriorMode::XOnly,
            (true, false) => PriorMode::Pde,
        }
    }
}

/// Reads flat `key = value` text. Blank lines and `#` comments are skipped.
/// Returns the pairs in file order; callers decide which keys they own.
pub fn parse_config_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig, ConfigError> {
    let mut c = TrainConfig::default();
    for (k, v) in parse_config_pairs(text)? {
        c.set(&k, &v)?;
    }
    c.validate()?;
    Ok(c)
}

/// Mean over rows of `(‖∇ D(x̂ᵢ)‖₂ − 1)²` at per-row random interpolates
/// `x̂ᵢ = uᵢ·realᵢ + (1 − uᵢ)·fakeᵢ`. Differentiable in the critic parameters.
pub fn gradient_penalty<'t>(
    tape: &'t Tape,
    critic: &MlpVars<'t>,
    real: &Matrix,
    fake: &Matrix,
    rng: &mut impl Rng,
) -> Result<Var<'t>, TensorError> {
    if real.dim() != fake.dim() {
        return Err(TensorError::ShapeMismatch {
            op: "gradient_penalty",
            lhs: real.dim(),
            rhs: fake.dim(),
        });
    }
    let mut mixed = fake.clone();
    for (mut row, r) in mixed.rows_mut().into_iter().zip(real.rows()) {
        let u: f64 = rng.random();
        row.zip_mut_with(&r, |f, &r| *f = u * r + (1.0 - u) * *f);
    }
    let x_hat = tape.param(mixed);
    let score = discriminator_forward(x_hat, critic)?.sum();
    let grad = tape.input_gradient(score, x_hat)?;
    Ok(grad.row_norm().add_scalar(-1.0).square().mean())
}

/// Critic loss `−mean D(real) + mean D(fake) + λ·GP`, with `fake` detached.
fn critic_loss<'t>(
    tape: &'t Tape,
    real: Var<'t>,
    fake: Var<'t>,
    critic: &MlpVars<'t>,
    lambda_gp: f64,
    rng: &mut impl Rng,
) -> Result<Var<'t>, TensorError> {
    let fake = fake.detach();
    let real = real.detach();
    let wasserstein = discriminator_forward(fake, critic)?
        .mean()
        .sub(discriminator_forward(real, critic)?.mean())?;
    if lambda_gp == 0.0 {
        return Ok(wasserstein);
    }
    let gp = gradient_penalty(tape, critic, &real.value(), &fake.value(), rng)?;
    wasserstein.add(gp.scale(lambda_gp))
}

/// `−mean D_z(Z) + mean D_z(H) + λ·GP(D_z, Z, H)`; the encoder gets no gradient.
pub fn loss_dz<'t>(
    tape: &'t Tape,
    z: Var<'t>,
    h: Var<'t>,
    d_z: &MlpVars<'t>,
    lambda_gp: f64,
    rng: &mut impl Rng,
) -> Result<Var<'t>, TensorError> {
    critic_loss(tape, z, h, d_z, lambda_gp, rng)
}

/// `−mean D_z(H)`.
pub fn loss_ea<'t>(h: Var<'t>, d_z: &MlpVars<'t>) -> Result<Var<'t>, TensorError> {
    Ok(discriminator_forward(h, d_z)?.mean().neg())
}

/// `−mean D_x(X) + mean D_x(X′) + λ·GP(D_x, X, X′)`; the generator gets no gradient.
pub fn loss_dx<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    x_fake: Var<'t>,
    d_x: &MlpVars<'t>,
    lambda_gp: f64,
    rng: &mut impl Rng,
) -> Result<Var<'t>, TensorError> {
    critic_loss(tape, x, x_fake, d_x, lambda_gp, rng)
}

/// `−mean D_x(G(Z))`.
pub fn loss_g<'t>(x_fake: Var<'t>, d_x: &MlpVars<'t>) -> Result<Var<'t>, TensorError> {
    Ok(discriminator_forward(x_fake, d_x)?.mean().neg())
}

/// Binary training adjacency with self-loops, as the reconstruction target.
#[derive(Clone, Debug)]
pub struct AdjacencyTarget {
    pub positives: CsrMatrix,
    /// `#negative entries / #positive entries` over all `n²` entries.
    pub pos_weight: f64,
}

impl AdjacencyTarget {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for &(a, b) in edges {
            pairs.push((a, b));
            pairs.push((b, a));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let positives = CsrMatrix::from_triplets(n, n, pairs.into_iter().map(|(a, b)| (a, b, 1.0)).collect());
        let pos = positives.nnz() as f64;
        let neg = (n * n) as f64 - pos;
        Self {
            pos_weight: if neg > 0.0 { neg / pos } else { 1.0 },
            positives,
        }
    }
}

/// Feature term (when `x_rec` is given) plus weighted adjacency term over
/// `sigmoid(H Hᵀ)`. Both are negative log-likelihoods, so lower is better.
pub fn reconstruction_loss<'t>(
    x: &Rc<Matrix>,
    x_rec: Option<Var<'t>>,
    h: Var<'t>,
    target: &AdjacencyTarget,
    feature_loss: FeatureLoss,
) -> Result<Var<'t>, TensorError> {
    let adj = h.gram_bce(&target.positives, target.pos_weight, PROB_EPS)?;
    let Some(x_rec) = x_rec else { return Ok(adj) };
    let feat = match feature_loss {
        FeatureLoss::Bce => x_rec.bce(Rc::clone(x), 1.0, PROB_EPS)?,
        FeatureLoss::Mse => {
            let xc = h.tape().constant((**x).clone());
            x_rec.sub(xc)?.square().mean()
        }
    };
    feat.add(adj)
}

/// `L_EA + α·L_REC`.
pub fn loss_encoder_total<'t>(loss_ea: Var<'t>, rec: Var<'t>, alpha: f64) -> Result<Var<'t>, TensorError> {
    loss_ea.add(rec.scale(alpha))
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("adversarial steps need a prior; this configuration trains without one")]
    NoPrior,
    #[error("features must lie in [0, 1] for the bce feature loss")]
    FeaturesOutOfRange,
    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Diverged {
        epoch: usize,
        what: &'static str,
        history: Box<TrainHistory>,
    },
}

/// Optimizer steps taken, by module.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub d_x: u64,
    pub g: u64,
    pub d_z: u64,
    pub e: u64,
}

/// Last value of each loss in one epoch; `None` when that step did not run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_dz: Option<f64>,
    pub loss_ea: Option<f64>,
    pub loss_dx: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_rec: Option<f64>,
    /// `mean D_z(Z) − mean D_z(H)` at the latent critic step.
    pub w_latent: Option<f64>,
    /// Mean `|X − G(E(X))|` at the encoder step.
    pub feature_mae: Option<f64>,
    pub val_auc: Option<f64>,
    pub val_ap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub steps: StepCounts,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str =
        "epoch,loss_dz,loss_ea,loss_dx,loss_g,loss_rec,w_latent,feature_mae,val_auc,val_ap";

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            let cells = [
                r.loss_dz, r.loss_ea, r.loss_dx, r.loss_g, r.loss_rec, r.w_latent, r.feature_mae,
                r.val_auc, r.val_ap,
            ];
            let row: Vec<String> = cells.into_iter().map(cell).collect();
            s.push_str(&format!("{},{}\n", r.epoch, row.join(",")));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub prior: Option<PriorEstimate>,
    /// Epoch whose parameters were returned.
    pub selected_epoch: usize,
}

/// Everything a training run reads besides the configuration.
pub struct TrainData {
    pub features: Rc<Matrix>,
    /// Graph restricted to training edges.
    pub train_graph: Graph,
    pub adj: Rc<CsrMatrix>,
    pub target: AdjacencyTarget,
    pub val: Option<(Vec<(usize, usize)>, Vec<(usize, usize)>)>,
}

impl TrainData {
    /// Link prediction: only training edges are visible to the model.
    pub fn from_split(g: &Graph, split: &EdgeSplit) -> Result<Self, TrainError> {
        let train_graph = g.with_edges(&split.train_pos)?;
        let mut d = Self::from_graph(&train_graph);
        d.val = Some((split.val_pos.clone(), split.val_neg.clone()));
        Ok(d)
    }

    /// Every edge is visible; no validation metrics.
    pub fn from_graph(g: &Graph) -> Self {
        Self {
            features: Rc::new(g.features().clone()),
            adj: adjacency_operand(&normalize_adjacency(g, true)),
            target: AdjacencyTarget::new(g.n(), g.edges()),
            train_graph: g.clone(),
            val: None,
        }
    }
}

/// Parameter snapshot handed to the observer after an epoch.
pub struct EpochSnapshot<'a> {
    pub epoch: usize,
    pub params: &'a ModelParams,
    pub record: &'a EpochRecord,
}

struct Optimizers {
    encoder: AdamState,
    generator: AdamState,
    d_z: AdamState,
    d_x: AdamState,
}

impl Optimizers {
    fn new(p: &ModelParams) -> Self {
        Self {
            encoder: AdamState::new(p.encoder.iter().map(|l| &l.weight)),
            generator: AdamState::new(p.generator.iter().map(|l| &l.weight)),
            d_z: AdamState::new(mlp_params(&p.d_z)),
            d_x: AdamState::new(mlp_params(&p.d_x)),
        }
    }
}

/// RNG streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_PRIOR: u64 = 1;
const STREAM_STEPS: u64 = 2;

pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.random()
}

fn prior_options(config: &TrainConfig) -> PriorOptions {
    PriorOptions {
        latent_dim: config.q,
        prototypes: config.m,
        seed: stream_seed(config.seed, STREAM_PRIOR),
        mode: config.prior_mode(),
        exact_threshold: config.exact_threshold,
    }
}

/// Training state. Each `step_*` method runs one optimizer update of one
/// module and leaves every other module's parameters untouched.
pub struct Trainer<'d> {
    data: &'d TrainData,
    config: TrainConfig,
    params: ModelParams,
    opt: Optimizers,
    prior: Option<PriorEstimate>,
    rng: ChaCha8Rng,
    history: TrainHistory,
    current: EpochRecord,
}

impl<'d> Trainer<'d> {
    /// Validates the configuration, initializes parameters and, in adversarial
    /// mode, estimates the prior once from the training graph.
    pub fn new(data: &'d TrainData, config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let x = &data.features;
        let uses_features = config.use_bal || !config.strict_gae;
        if uses_features
            && config.feature_loss == FeatureLoss::Bce
            && !x.iter().all(|v| (0.0..=1.0).contains(v))
        {
            return Err(TrainError::FeaturesOutOfRange);
        }
        let params = ModelParams::init(&config.architecture(x.ncols()), stream_seed(config.seed, STREAM_INIT));
        let prior = if config.use_bal {
            Some(estimate_prior(&data.train_graph, &prior_options(config))?)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(STREAM_STEPS);
        Ok(Self {
            data,
            config: config.clone(),
            opt: Optimizers::new(&params),
            params,
            prior,
            rng,
            history: TrainHistory::default(),
            current: EpochRecord {
                epoch: 1,
                ..Default::default()
            },
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn prior(&self) -> Option<&PriorEstimate> {
        self.prior.as_ref()
    }

    fn check(&self, what: &'static str, v: f64) -> Result<f64, TrainError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TrainError::Diverged {
                epoch: self.current.epoch,
                what,
                history: Box::new(self.history.clone()),
            })
        }
    }

    fn sample_prior(&mut self) -> Result<Matrix, TrainError> {
        let prior: &Prior = match &self.prior {
            Some(p) => &p.prior,
            None => return Err(TrainError::NoPrior),
        };
        Ok(prior.sample(self.data.features.nrows(), &mut self.rng))
    }

    /// One `D_x` update on fresh generated features.
    pub fn step_dx(&mut self) -> Result<f64, TrainError> {
        let z = self.sample_prior()?;
        let tape = Tape::new();
        let gen = GcnVars::register(&tape, &self.params.generator, false);
        let d_x = MlpVars::register(&tape, &self.params.d_x, true);
        let fake = generator_forward(tape.constant(z), &self.data.adj, &gen)?;
        let real = tape.constant((*self.data.features).clone());
        let loss = loss_dx(&tape, real, fake, &d_x, self.config.lambda_gp, &mut self.rng)?;
        let value = self.check("D_x loss", loss.item())?;
        let grads = d_x.gradients(&tape.backward(loss)?);
        self.opt.d_x.step(&mut mlp_params_mut(&mut self.params.d_x), &grads, self.config.lr);
        self.history.steps.d_x += 1;
        self.current.loss_dx = Some(value);
        Ok(value)
    }

    /// One generator update against the frozen feature critic.
    pub fn step_g(&mut self) -> Result<f64, TrainError> {
        let z = self.sample_prior()?;
        let tape = Tape::new();
        let gen = GcnVars::register(&tape, &self.params.generator, true);
        let d_x = MlpVars::register(&tape, &self.params.d_x, false);
        let loss = loss_g(generator_forward(tape.constant(z), &self.data.adj, &gen)?, &d_x)?;
        let value = self.check("generator loss", loss.item())?;
        let grads = gen.gradients(&tape.backward(loss)?);
        self.opt.generator.step(&mut gcn_params_mut(&mut self.params.generator), &grads, self.config.lr);
        self.history.steps.g += 1;
        self.current.loss_g = Some(value);
        Ok(value)
    }

    /// One `D_z` update against the frozen encoder.
    pub fn step_dz(&mut self) -> Result<f64, TrainError> {
        let z = self.sample_prior()?;
        let tape = Tape::new();
        let enc = GcnVars::register(&tape, &self.params.encoder, false);
        let d_z = MlpVars::register(&tape, &self.params.d_z, true);
        let z = tape.constant(z);
        let h = encoder_forward(tape.constant((*self.data.features).clone()), &self.data.adj, &enc)?;
        let loss = loss_dz(&tape, z, h, &d_z, self.config.lambda_gp, &mut self.rng)?;
        let value = self.check("D_z loss", loss.item())?;
        let w = discriminator_forward(z, &d_z)?.mean().item() - discriminator_forward(h, &d_z)?.mean().item();
        let grads = d_z.gradients(&tape.backward(loss)?);
        self.opt.d_z.step(&mut mlp_params_mut(&mut self.params.d_z), &grads, self.config.lr);
        self.history.steps.d_z += 1;
        self.current.loss_dz = Some(value);
        self.current.w_latent = Some(w);
        Ok(value)
    }

    /// Encoder update, plus the generator whenever the feature term is active.
    /// In adversarial mode the loss is `L_EA + α·L_REC`, otherwise `L_REC`.
    pub fn step_encoder(&mut self) -> Result<f64, TrainError> {
        let adversarial = self.config.use_bal;
        let with_features = adversarial || !self.config.strict_gae;
        let data = self.data;
        let tape = Tape::new();
        let enc = GcnVars::register(&tape, &self.params.encoder, true);
        let gen = GcnVars::register(&tape, &self.params.generator, with_features);
        let h = encoder_forward(tape.constant((*data.features).clone()), &data.adj, &enc)?;
        let x_rec = if with_features {
            Some(generator_forward(h, &data.adj, &gen)?)
        } else {
            None
        };
        let rec = reconstruction_loss(&data.features, x_rec, h, &data.target, self.config.feature_loss)?;
        self.current.loss_rec = Some(self.check("reconstruction loss", rec.item())?);
        if let Some(xr) = x_rec {
            let mae = (&*xr.value() - &*data.features).mapv(f64::abs).mean().unwrap_or(0.0);
            self.current.feature_mae = Some(mae);
        }
        let loss = if adversarial {
            let d_z = MlpVars::register(&tape, &self.params.d_z, false);
            let ea = loss_ea(h, &d_z)?;
            self.current.loss_ea = Some(self.check("encoder adversarial loss", ea.item())?);
            loss_encoder_total(ea, rec, self.config.alpha)?
        } else {
            rec
        };
        let value = self.check("encoder loss", loss.item())?;
        let grads = tape.backward(loss)?;
        let lr = self.config.lr;
        self.opt.encoder.step(&mut gcn_params_mut(&mut self.params.encoder), &enc.gradients(&grads), lr);
        if with_features {
            self.opt.generator.step(&mut gcn_params_mut(&mut self.params.generator), &gen.gradients(&grads), lr);
        }
        self.history.steps.e += 1;
        Ok(value)
    }

    /// One epoch of the schedule, then validation metrics when due.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord, TrainError> {
        let epoch = self.history.records.len() + 1;
        self.current = EpochRecord {
            epoch,
            ..Default::default()
        };
        if self.config.use_bal {
            for _ in 0..self.config.critic_steps {
                self.step_dx()?;
            }
            self.step_g()?;
            self.step_dz()?;
        }
        self.step_encoder()?;
        if !self.params.all_finite() {
            return Err(TrainError::Diverged {
                epoch,
                what: "parameters",
                history: Box::new(self.history.clone()),
            });
        }
        let every = self.config.eval_every;
        if let Some((vp, vn)) = &self.data.val {
            if every > 0 && (epoch % every == 0 || epoch == self.config.epochs) {
                let lp = link_prediction(&embed(&self.params, self.data)?, vp, vn)?;
                self.current.val_auc = Some(lp.auc);
                self.current.val_ap = Some(lp.ap);
            }
        }
        self.history.records.push(std::mem::take(&mut self.current));
        Ok(self.history.records.last().unwrap())
    }

    pub fn into_parts(self) -> (ModelParams, TrainHistory, Option<PriorEstimate>) {
        (self.params, self.history, self.prior)
    }
}

/// Runs the full schedule. The prior is estimated once from the training graph.
pub fn train(data: &TrainData, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_observer(data, config, |_| {})
}

/// Like [`train`], calling `observer` every `checkpoint_every` epochs.
pub fn train_with_observer(
    data: &TrainData,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochSnapshot<'_>),
) -> Result<TrainOutcome, TrainError> {
    let mut t = Trainer::new(data, config)?;
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 1..=config.epochs {
        let auc = t.run_epoch()?.val_auc;
        if let (true, Some(auc)) = (config.keep_best, auc) {
            if best.as_ref().is_none_or(|(a, _, _)| auc > *a) {
                best = Some((auc, epoch, t.params.clone()));
            }
        }
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            observer(&EpochSnapshot {
                epoch,
                params: &t.params,
                record: t.history.records.last().unwrap(),
            });
        }
    }
    let (last, history, prior) = t.into_parts();
    let (params, selected_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (last, config.epochs),
    };
    Ok(TrainOutcome {
        params,
        history,
        prior,
        selected_epoch,
    })
}

/// Encoder output for the training graph.
pub fn embed(params: &ModelParams, data: &TrainData) -> Result<Matrix, TensorError> {
    let tape = Tape::new();
    let enc = GcnVars::register(&tape, &params.encoder, false);
    let h = encoder_forward(tape.constant((*data.features).clone()), &data.adj, &enc)?;
    Ok((*h.value()).clone())
}

/// Latent prior used by a configuration, re-estimated exactly as training does.
pub fn training_prior(data: &TrainData, config: &TrainConfig) -> Result<Prior, TrainError> {
    Ok(estimate_prior(&data.train_graph, &prior_options(config))?.prior)
}
