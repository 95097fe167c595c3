//! Complete models: the interpolation-prediction network, the GRU
//! baselines and a mean-feature linear model, all sharing one parameter
//! store and one batched training objective.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    densify, make_grid, Label, NormStats, Observation, ReferenceGrid, SparseSeries, Task, DEFAULT_GRID_POINTS,
    DEFAULT_WINDOW_HOURS,
};
use crate::error::{Error, Result};
use crate::interp::{Channel, InterpForward, InterpGrad, InterpParams, DEFAULT_KAPPA};
use crate::metrics::{evaluate_classification, evaluate_regression, EvalReport};
use crate::objective::{bce_with_logit, squared_error, LossBreakdown, LossConfig, ReconPass};
use crate::optim::{Gradients, Objective, ParamGroup, ParamId, ParamStore};
use crate::predict::baseline::{bin_case, decay_backward, BaselineVariant, BinnedCase, DecayParams};
use crate::predict::gru::{gru_backward_batch, gru_forward_batch, sigmoid, GruGradsMut, GruParams, GruWeights};
use crate::predict::head::{head_backward_batch, head_forward_batch, HeadGradsMut, HeadParams, HeadWeights};

pub const DEFAULT_HIDDEN: usize = 64;

/// Cases per forward pass when only predictions are needed.
const PREDICT_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelKind {
    /// Interpolation network feeding a GRU on the selected channels.
    Interp {
        channels: Vec<Channel>,
    },
    Gru(BaselineVariant),
    /// Logistic regression on per-dimension observed means.
    MeanLogReg,
    /// Linear regression on per-dimension observed means.
    MeanLinReg,
}

impl ModelKind {
    pub fn proposed() -> Self {
        ModelKind::Interp {
            channels: Channel::ALL.to_vec(),
        }
    }

    pub fn with_channels(channels: &[Channel]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Config("at least one channel is required".into()));
        }
        let mut sorted: Vec<Channel> = Channel::ALL.iter().copied().filter(|c| channels.contains(c)).collect();
        sorted.dedup();
        Ok(ModelKind::Interp { channels: sorted })
    }

    /// The four baselines compared against in the main experiment.
    pub fn gru_baselines() -> [ModelKind; 4] {
        [
            ModelKind::Gru(BaselineVariant::M),
            ModelKind::Gru(BaselineVariant::F),
            ModelKind::Gru(BaselineVariant::S),
            ModelKind::Gru(BaselineVariant::D),
        ]
    }

    pub fn is_mean_features(&self) -> bool {
        matches!(self, ModelKind::MeanLogReg | ModelKind::MeanLinReg)
    }

    /// The mean-feature baseline matching `task`.
    pub fn mean_features(task: Task) -> Self {
        match task {
            Task::Classification => ModelKind::MeanLogReg,
            Task::Regression => ModelKind::MeanLinReg,
        }
    }

    pub fn uses_interpolation(&self) -> bool {
        matches!(self, ModelKind::Interp { .. })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Interp { channels } if channels.len() == Channel::ALL.len() => f.write_str("ipn"),
            ModelKind::Interp { channels } => {
                let names: Vec<&str> = channels.iter().map(Channel::short_name).collect();
                write!(f, "ipn-{}", names.join("+"))
            }
            ModelKind::Gru(v) => write!(f, "gru-{}", format!("{v:?}").to_lowercase()),
            ModelKind::MeanLogReg => f.write_str("mean-logreg"),
            ModelKind::MeanLinReg => f.write_str("mean-linreg"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "ipn" => return Ok(Self::proposed()),
            "gru-m" => return Ok(ModelKind::Gru(BaselineVariant::M)),
            "gru-f" => return Ok(ModelKind::Gru(BaselineVariant::F)),
            "gru-s" => return Ok(ModelKind::Gru(BaselineVariant::S)),
            "gru-d" => return Ok(ModelKind::Gru(BaselineVariant::D)),
            "mean-logreg" => return Ok(ModelKind::MeanLogReg),
            "mean-linreg" => return Ok(ModelKind::MeanLinReg),
            _ => {}
        }
        if let Some(rest) = s.trim().strip_prefix("ipn-") {
            let channels = rest.split('+').map(Channel::parse).collect::<Result<Vec<_>>>()?;
            return Self::with_channels(&channels);
        }
        Err(Error::Config(format!(
            "unknown model '{s}' (expected ipn, ipn-<channels>, gru-m, gru-f, gru-s, gru-d, mean-logreg or mean-linreg)"
        )))
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub task: Task,
    pub dims: usize,
    pub hidden: usize,
    pub grid_points: usize,
    pub window: f64,
    pub kappa: f64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, task: Task, dims: usize) -> Self {
        Self {
            kind,
            task,
            dims,
            hidden: DEFAULT_HIDDEN,
            grid_points: DEFAULT_GRID_POINTS,
            window: DEFAULT_WINDOW_HOURS,
            kappa: DEFAULT_KAPPA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::Config("models need at least one dimension".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if !(self.kappa > 1.0) || !self.kappa.is_finite() {
            return Err(Error::Config(format!(
                "kappa must be a finite value > 1, got {}",
                self.kappa
            )));
        }
        match (&self.kind, self.task) {
            (ModelKind::MeanLogReg, Task::Regression) | (ModelKind::MeanLinReg, Task::Classification) => {
                return Err(Error::Config(format!(
                    "model {} does not fit a {} task",
                    self.kind, self.task
                )))
            }
            _ => {}
        }
        make_grid(self.window, self.grid_points)?;
        Ok(())
    }

    /// Width of the per-step input seen by the GRU, or of the linear model's
    /// feature vector.
    pub fn input_width(&self) -> usize {
        match &self.kind {
            ModelKind::Interp { channels } => channels.len() * self.dims,
            ModelKind::Gru(v) => v.num_features(self.dims),
            ModelKind::MeanLogReg | ModelKind::MeanLinReg => self.dims,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum HeadIds {
    Linear {
        w: ParamId,
        b: ParamId,
    },
    Mlp {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
}

/// Where each parameter lives in the store.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Layout {
    interp: Option<(ParamId, ParamId)>,
    decay: Option<(ParamId, ParamId)>,
    gru: Option<(ParamId, ParamId, ParamId)>,
    head: HeadIds,
}

fn param_group(name: &str) -> ParamGroup {
    match name {
        "log_alpha" | "rho" => ParamGroup::Interp,
        "gru_bias" | "head_b" | "head_b1" | "head_b2" | "decay_b" => ParamGroup::Free,
        _ => ParamGroup::Predict,
    }
}

/// Parameter names and shapes, in store order.
fn param_specs(cfg: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
    let d = cfg.dims;
    let h = cfg.hidden;
    let f = cfg.input_width();
    let mut out = Vec::new();
    if cfg.kind.uses_interpolation() {
        out.push(("log_alpha", vec![d]));
        out.push(("rho", vec![d, d]));
    }
    if cfg.kind == ModelKind::Gru(BaselineVariant::D) {
        out.push(("decay_w", vec![d]));
        out.push(("decay_b", vec![d]));
    }
    let head_in = if cfg.kind.is_mean_features() {
        f
    } else {
        out.push(("gru_w_input", vec![f, 3 * h]));
        out.push(("gru_w_hidden", vec![h, 3 * h]));
        out.push(("gru_bias", vec![3 * h]));
        h
    };
    match (cfg.task, &cfg.kind) {
        (Task::Classification, _) | (Task::Regression, ModelKind::MeanLinReg) => {
            out.push(("head_w", vec![head_in]));
            out.push(("head_b", vec![1]));
        }
        (Task::Regression, _) => {
            let m = crate::predict::head::REGRESSION_HIDDEN;
            out.push(("head_w1", vec![head_in, m]));
            out.push(("head_b1", vec![m]));
            out.push(("head_w2", vec![m]));
            out.push(("head_b2", vec![1]));
        }
    }
    out
}

fn layout_for(cfg: &ModelConfig, store: &ParamStore) -> Result<Layout> {
    let specs = param_specs(cfg);
    if store.len() != specs.len() {
        return Err(Error::Shape(format!(
            "store holds {} parameters, model {} needs {}",
            store.len(),
            cfg.kind,
            specs.len()
        )));
    }
    for (i, (name, shape)) in specs.iter().enumerate() {
        let p = &store.params()[i];
        if p.name != *name || p.shape != *shape {
            return Err(Error::Shape(format!(
                "parameter {i} is {}{:?}, expected {name}{shape:?}",
                p.name, p.shape
            )));
        }
    }
    let id = |n: &str| store.find(n).expect("checked above");
    let has = |n: &str| store.find(n).is_some();
    Ok(Layout {
        interp: has("rho").then(|| (id("log_alpha"), id("rho"))),
        decay: has("decay_w").then(|| (id("decay_w"), id("decay_b"))),
        gru: has("gru_w_input").then(|| (id("gru_w_input"), id("gru_w_hidden"), id("gru_bias"))),
        head: if has("head_w") {
            HeadIds::Linear {
                w: id("head_w"),
                b: id("head_b"),
            }
        } else {
            HeadIds::Mlp {
                w1: id("head_w1"),
                b1: id("head_b1"),
                w2: id("head_w2"),
                b2: id("head_b2"),
            }
        },
    })
}

/// A case converted into what its model consumes.
#[derive(Clone, Debug)]
pub struct PreparedCase {
    input: PreparedInput,
    pub target: f64,
}

#[derive(Clone, Debug)]
enum PreparedInput {
    Observations(Vec<Vec<Observation>>),
    Binned(Box<BinnedCase>),
    Means(Vec<f64>),
}

impl PreparedCase {
    /// Observation counts per dimension (empty unless the model interpolates).
    pub fn observation_counts(&self) -> Vec<usize> {
        match &self.input {
            PreparedInput::Observations(obs) => obs.iter().map(Vec::len).collect(),
            _ => Vec::new(),
        }
    }
}

/// A model architecture, its parameters and its input normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub store: ParamStore,
    grid: ReferenceGrid,
    layout: Layout,
}

impl Model {
    /// Fresh parameters drawn deterministically from `seed`.
    pub fn new(config: ModelConfig, norm: NormStats, seed: u64) -> Result<Self> {
        config.validate()?;
        if norm.mean.len() != config.dims {
            return Err(Error::Shape(format!(
                "normalisation covers {} dimensions, model has {}",
                norm.mean.len(),
                config.dims
            )));
        }
        let grid = make_grid(config.window, config.grid_points)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dims;
        let h = config.hidden;
        if config.kind.uses_interpolation() {
            let ip = InterpParams::init(d, &grid, config.kappa, &mut rng)?;
            store.add("log_alpha", &[d], ip.log_alpha, ParamGroup::Interp);
            store.add("rho", &[d, d], ip.rho.into_raw_vec_and_offset().0, ParamGroup::Interp);
        }
        if config.kind == ModelKind::Gru(BaselineVariant::D) {
            // gamma starts near exp(-0.1 dt/window-hour)
            store.add("decay_w", &[d], vec![0.1; d], param_group("decay_w"));
            store.add("decay_b", &[d], vec![0.0; d], param_group("decay_b"));
        }
        let head_in = if config.kind.is_mean_features() {
            config.input_width()
        } else {
            let g = GruParams::init(config.input_width(), h, &mut rng);
            let f = config.input_width();
            store.add(
                "gru_w_input",
                &[f, 3 * h],
                g.w_input.into_raw_vec_and_offset().0,
                ParamGroup::Predict,
            );
            store.add(
                "gru_w_hidden",
                &[h, 3 * h],
                g.w_hidden.into_raw_vec_and_offset().0,
                ParamGroup::Predict,
            );
            store.add("gru_bias", &[3 * h], g.bias.to_vec(), ParamGroup::Free);
            h
        };
        let linear_head = config.task == Task::Classification || config.kind.is_mean_features();
        if linear_head {
            let w = match HeadParams::init(Task::Classification, head_in, &mut rng) {
                HeadParams::Classification { w, .. } => w.to_vec(),
                HeadParams::Regression { .. } => unreachable!(),
            };
            store.add("head_w", &[head_in], w, ParamGroup::Predict);
            store.add("head_b", &[1], vec![0.0], ParamGroup::Free);
        } else if let HeadParams::Regression { w1, b1, w2, b2 } = HeadParams::init(Task::Regression, head_in, &mut rng)
        {
            let m = b1.len();
            store.add(
                "head_w1",
                &[head_in, m],
                w1.into_raw_vec_and_offset().0,
                ParamGroup::Predict,
            );
            store.add("head_b1", &[m], b1.to_vec(), ParamGroup::Free);
            store.add("head_w2", &[m], w2.to_vec(), ParamGroup::Predict);
            store.add("head_b2", &[1], vec![b2], ParamGroup::Free);
        }
        let layout = layout_for(&config, &store)?;
        Ok(Self {
            config,
            norm,
            store,
            grid,
            layout,
        })
    }

    /// Reassembles a model from saved parts, checking the parameter layout.
    pub fn from_parts(config: ModelConfig, norm: NormStats, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let grid = make_grid(config.window, config.grid_points)?;
        let layout = layout_for(&config, &store)?;
        Ok(Self {
            config,
            norm,
            store,
            grid,
            layout,
        })
    }

    pub fn grid(&self) -> &ReferenceGrid {
        &self.grid
    }

    /// Sets the output bias, e.g. to the mean training target.
    pub fn set_output_bias(&mut self, b: f64) {
        let id = match self.layout.head {
            HeadIds::Linear { b, .. } => b,
            HeadIds::Mlp { b2, .. } => b2,
        };
        self.store.value_mut(id)[0] = b;
    }

    pub fn interp_params(&self) -> Option<InterpParams> {
        interp_params(&self.config, &self.layout, &self.store)
    }

    /// Normalises and converts cases for this model.
    pub fn prepare(&self, cases: &[SparseSeries]) -> Result<Vec<PreparedCase>> {
        cases.iter().map(|c| self.prepare_case(c)).collect()
    }

    fn prepare_case(&self, case: &SparseSeries) -> Result<PreparedCase> {
        if case.num_dims() != self.config.dims {
            return Err(Error::InvalidSeries {
                case: case.id.clone(),
                dim: case.num_dims(),
                reason: format!("model expects {} dimensions", self.config.dims),
            });
        }
        match (case.label, self.config.task) {
            (Label::Class(_), Task::Classification) | (Label::Regression(_), Task::Regression) => {}
            _ => {
                return Err(Error::Config(format!(
                    "case {} has a {} label, model is for {}",
                    case.id,
                    case.label.task(),
                    self.config.task
                )))
            }
        }
        case.validate(self.config.window)?;
        let norm = self.norm.apply(case);
        let input = match &self.config.kind {
            ModelKind::Interp { .. } => PreparedInput::Observations(norm.dims),
            ModelKind::Gru(_) => {
                let dense = densify(&norm, self.config.window)?;
                PreparedInput::Binned(Box::new(bin_case(&dense.case(0), &self.grid)))
            }
            ModelKind::MeanLogReg | ModelKind::MeanLinReg => PreparedInput::Means(
                norm.dims
                    .iter()
                    .map(|obs| {
                        if obs.is_empty() {
                            0.0
                        } else {
                            obs.iter().map(|o| o.value).sum::<f64>() / obs.len() as f64
                        }
                    })
                    .collect(),
            ),
        };
        Ok(PreparedCase {
            input,
            target: case.label.as_f64(),
        })
    }

    /// Probabilities (classification) or log-day predictions (regression).
    pub fn predict(&self, cases: &[SparseSeries]) -> Result<Vec<f64>> {
        let prepared = self.prepare(cases)?;
        self.predict_prepared(&prepared)
    }

    pub fn predict_prepared(&self, cases: &[PreparedCase]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(cases.len());
        for chunk in cases.chunks(PREDICT_CHUNK) {
            let refs: Vec<&PreparedCase> = chunk.iter().collect();
            let fwd = forward(&self.config, &self.layout, &self.grid, &self.store, &refs)?;
            out.extend(fwd.head.output.iter().map(|&o| match self.config.task {
                Task::Classification => sigmoid(o),
                Task::Regression => o,
            }));
        }
        Ok(out)
    }

    pub fn evaluate(&self, cases: &[SparseSeries], fold: Option<usize>) -> Result<EvalReport> {
        let pred = self.predict(cases)?;
        Ok(report_from_predictions(&pred, cases, self.config.task, fold))
    }

    /// The batched training objective over `cases`. `masks[i]` holds the
    /// held-out positions of case `i` for the reconstruction term.
    pub fn objective<'a>(
        &'a self,
        cases: Vec<&'a PreparedCase>,
        masks: Vec<Vec<Vec<usize>>>,
        loss: LossConfig,
    ) -> BatchObjective<'a> {
        BatchObjective {
            config: &self.config,
            layout: self.layout,
            grid: &self.grid,
            cases,
            masks,
            loss,
        }
    }
}

pub fn report_from_predictions(pred: &[f64], cases: &[SparseSeries], task: Task, fold: Option<usize>) -> EvalReport {
    let targets: Vec<f64> = cases.iter().map(|c| c.label.as_f64()).collect();
    match task {
        Task::Classification => {
            let labels: Vec<u8> = targets.iter().map(|&y| y as u8).collect();
            EvalReport {
                fold,
                n_cases: cases.len(),
                classification: Some(evaluate_classification(pred, &labels)),
                regression: None,
            }
        }
        Task::Regression => EvalReport {
            fold,
            n_cases: cases.len(),
            classification: None,
            regression: Some(evaluate_regression(pred, &targets)),
        },
    }
}

fn interp_params(cfg: &ModelConfig, layout: &Layout, store: &ParamStore) -> Option<InterpParams> {
    layout.interp.map(|(la, rho)| InterpParams {
        log_alpha: store.value(la).to_vec(),
        kappa: cfg.kappa,
        rho: store.matrix(rho).to_owned(),
    })
}

fn head_weights<'s>(layout: &Layout, store: &'s ParamStore) -> HeadWeights<'s> {
    match layout.head {
        HeadIds::Linear { w, b } => HeadWeights::Classification {
            w: store.vector(w),
            b: store.value(b)[0],
        },
        HeadIds::Mlp { w1, b1, w2, b2 } => HeadWeights::Regression {
            w1: store.matrix(w1),
            b1: store.vector(b1),
            w2: store.vector(w2),
            b2: store.value(b2)[0],
        },
    }
}

fn gru_weights<'s>(ids: (ParamId, ParamId, ParamId), store: &'s ParamStore) -> GruWeights<'s> {
    GruWeights {
        w_input: store.matrix(ids.0),
        w_hidden: store.matrix(ids.1),
        bias: store.vector(ids.2),
    }
}

fn decay_params(layout: &Layout, store: &ParamStore) -> Option<DecayParams> {
    layout.decay.map(|(w, b)| DecayParams {
        w: store.value(w).to_vec(),
        b: store.value(b).to_vec(),
    })
}

/// Everything the backward pass needs from a batched forward pass.
struct Forward {
    interp: Vec<InterpForward>,
    inputs: Vec<Array2<f64>>,
    gru: Option<crate::predict::gru::GruTrace>,
    head_input: Array2<f64>,
    head: crate::predict::head::HeadTrace,
}

fn forward(
    cfg: &ModelConfig,
    layout: &Layout,
    grid: &ReferenceGrid,
    store: &ParamStore,
    cases: &[&PreparedCase],
) -> Result<Forward> {
    let b = cases.len();
    let t_len = grid.len();
    let width = cfg.input_width();
    let d = cfg.dims;
    let mut interp = Vec::new();
    let mut inputs = Vec::new();
    let head_input = match &cfg.kind {
        ModelKind::MeanLogReg | ModelKind::MeanLinReg => {
            let mut x = Array2::zeros((b, width));
            for (i, c) in cases.iter().enumerate() {
                let PreparedInput::Means(m) = &c.input else {
                    return Err(Error::Config("case prepared for a different model".into()));
                };
                x.row_mut(i).assign(&ArrayView1::from(&m[..]));
            }
            x
        }
        kind => {
            inputs = vec![Array2::zeros((b, width)); t_len];
            match kind {
                ModelKind::Interp { channels } => {
                    let params = interp_params(cfg, layout, store).expect("interp layout");
                    let need_transient = channels.contains(&Channel::Transient);
                    for (i, c) in cases.iter().enumerate() {
                        let PreparedInput::Observations(obs) = &c.input else {
                            return Err(Error::Config("case prepared for a different model".into()));
                        };
                        let f = InterpForward::run(obs, &grid.points, &params, need_transient);
                        let grid_channels = f.channel_grid();
                        for (ci, ch) in channels.iter().enumerate() {
                            let m = grid_channels.channel(*ch);
                            for (k, x) in inputs.iter_mut().enumerate() {
                                for dd in 0..d {
                                    x[[i, ci * d + dd]] = m[[dd, k]];
                                }
                            }
                        }
                        interp.push(f);
                    }
                }
                ModelKind::Gru(variant) => {
                    let decay = decay_params(layout, store);
                    let means = vec![0.0; d];
                    for (i, c) in cases.iter().enumerate() {
                        let PreparedInput::Binned(binned) = &c.input else {
                            return Err(Error::Config("case prepared for a different model".into()));
                        };
                        let feat =
                            crate::predict::baseline::baseline_features(binned, *variant, &means, decay.as_ref())?
                                .scaled_for_network(d, cfg.window);
                        for (k, x) in inputs.iter_mut().enumerate() {
                            x.row_mut(i).assign(&feat.row(k));
                        }
                    }
                }
                ModelKind::MeanLogReg | ModelKind::MeanLinReg => unreachable!(),
            }
            let trace = gru_forward_batch(&inputs, &gru_weights(layout.gru.expect("gru layout"), store))?;
            let h = trace.final_hidden().clone();
            let fwd_head = head_forward_batch(&h, &head_weights(layout, store));
            return Ok(Forward {
                interp,
                inputs,
                gru: Some(trace),
                head_input: h,
                head: fwd_head,
            });
        }
    };
    let head = head_forward_batch(&head_input, &head_weights(layout, store));
    Ok(Forward {
        interp,
        inputs,
        gru: None,
        head_input,
        head,
    })
}

/// Composite loss over one minibatch: mean supervised loss, reconstruction
/// SSE per case and the two L2 penalties.
pub struct BatchObjective<'a> {
    config: &'a ModelConfig,
    layout: Layout,
    grid: &'a ReferenceGrid,
    cases: Vec<&'a PreparedCase>,
    masks: Vec<Vec<Vec<usize>>>,
    loss: LossConfig,
}

impl BatchObjective<'_> {
    pub fn breakdown(&self, store: &ParamStore) -> Result<LossBreakdown> {
        self.evaluate(store, None)
    }

    fn evaluate(&self, store: &ParamStore, grads: Option<&mut Gradients>) -> Result<LossBreakdown> {
        let n = self.cases.len();
        if n == 0 {
            return Err(Error::Config("empty minibatch".into()));
        }
        let inv_n = 1.0 / n as f64;
        let fwd = forward(self.config, &self.layout, self.grid, store, &self.cases)?;

        let mut supervised = 0.0;
        let mut d_out = Array1::zeros(n);
        for (i, c) in self.cases.iter().enumerate() {
            let o = fwd.head.output[i];
            let (l, g) = match self.config.task {
                Task::Classification => bce_with_logit(o, c.target),
                Task::Regression => squared_error(o, c.target),
            };
            supervised += l;
            d_out[i] = g * inv_n;
        }
        supervised *= inv_n;

        let params = interp_params(self.config, &self.layout, store);
        let mut interp_grad = params.as_ref().map(|p| InterpGrad::zeros(p.num_dims()));
        let mut sse = 0.0;
        if let Some(p) = &params {
            if self.loss.delta > 0.0 {
                for (i, c) in self.cases.iter().enumerate() {
                    let (PreparedInput::Observations(obs), Some(held)) = (&c.input, self.masks.get(i)) else {
                        continue;
                    };
                    if let Some(pass) = ReconPass::run(obs, held, p) {
                        let scale = self.loss.delta * inv_n;
                        let g = if grads.is_some() { interp_grad.as_mut() } else { None };
                        sse += pass.sse_and_backward(scale, g);
                    }
                }
            }
        }
        let reconstruction = self.loss.delta * sse * inv_n;
        let reg_i = self.loss.lambda_i * store.squared_norm(ParamGroup::Interp);
        let reg_p = self.loss.lambda_p * store.squared_norm(ParamGroup::Predict);
        let out = LossBreakdown {
            supervised,
            reconstruction,
            reg_i,
            reg_p,
            total: supervised + reconstruction + reg_i + reg_p,
        };

        let Some(grads) = grads else {
            return Ok(out);
        };
        self.backward(store, &fwd, &d_out, interp_grad, grads)?;
        for p in store.params().iter() {
            let lambda = match p.group {
                ParamGroup::Interp => self.loss.lambda_i,
                ParamGroup::Predict => self.loss.lambda_p,
                ParamGroup::Free => continue,
            };
            let id = store.find(&p.name).expect("own parameter");
            for (g, v) in grads.get_mut(id).iter_mut().zip(&p.value) {
                *g += 2.0 * lambda * v;
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        store: &ParamStore,
        fwd: &Forward,
        d_out: &Array1<f64>,
        interp_grad: Option<InterpGrad>,
        grads: &mut Gradients,
    ) -> Result<()> {
        let head_w = head_weights(&self.layout, store);
        let d_hidden = match self.layout.head {
            HeadIds::Linear { w, b } => {
                let mut gw = Array1::zeros(store.get(w).value.len());
                let mut gb = 0.0;
                let dh = head_backward_batch(
                    &fwd.head_input,
                    &head_w,
                    &fwd.head,
                    d_out,
                    &mut HeadGradsMut::Classification {
                        w: gw.view_mut(),
                        b: &mut gb,
                    },
                );
                add_into(grads.get_mut(w), gw.as_slice().expect("contiguous"));
                grads.get_mut(b)[0] += gb;
                dh
            }
            HeadIds::Mlp { w1, b1, w2, b2 } => {
                let mut gw1 = Array2::zeros(store.matrix(w1).dim());
                let mut gb1 = Array1::zeros(store.get(b1).value.len());
                let mut gw2 = Array1::zeros(store.get(w2).value.len());
                let mut gb2 = 0.0;
                let dh = head_backward_batch(
                    &fwd.head_input,
                    &head_w,
                    &fwd.head,
                    d_out,
                    &mut HeadGradsMut::Regression {
                        w1: gw1.view_mut(),
                        b1: gb1.view_mut(),
                        w2: gw2.view_mut(),
                        b2: &mut gb2,
                    },
                );
                add_into(grads.get_mut(w1), gw1.as_slice().expect("contiguous"));
                add_into(grads.get_mut(b1), gb1.as_slice().expect("contiguous"));
                add_into(grads.get_mut(w2), gw2.as_slice().expect("contiguous"));
                grads.get_mut(b2)[0] += gb2;
                dh
            }
        };

        let mut interp_grad = interp_grad;
        if let (Some(ids), Some(trace)) = (self.layout.gru, &fwd.gru) {
            let w = gru_weights(ids, store);
            let mut gwi = Array2::zeros(w.w_input.dim());
            let mut gwh = Array2::zeros(w.w_hidden.dim());
            let mut gb = Array1::zeros(w.bias.len());
            let d_inputs = gru_backward_batch(
                &fwd.inputs,
                &w,
                trace,
                &d_hidden,
                &mut GruGradsMut {
                    w_input: gwi.view_mut(),
                    w_hidden: gwh.view_mut(),
                    bias: gb.view_mut(),
                },
            );
            add_into(grads.get_mut(ids.0), gwi.as_slice().expect("contiguous"));
            add_into(grads.get_mut(ids.1), gwh.as_slice().expect("contiguous"));
            add_into(grads.get_mut(ids.2), gb.as_slice().expect("contiguous"));

            let d = self.config.dims;
            let t_len = fwd.inputs.len();
            match &self.config.kind {
                ModelKind::Interp { channels } => {
                    let ig = interp_grad.as_mut().expect("interp gradient");
                    for (i, f) in fwd.interp.iter().enumerate() {
                        let mut per_channel = [None, None, None];
                        for (ci, ch) in channels.iter().enumerate() {
                            let mut g = Array2::zeros((d, t_len));
                            for (k, dx) in d_inputs.iter().enumerate() {
                                for dd in 0..d {
                                    g[[dd, k]] = dx[[i, ci * d + dd]];
                                }
                            }
                            let slot = Channel::ALL.iter().position(|c| c == ch).expect("known channel");
                            per_channel[slot] = Some(g);
                        }
                        let [gs, gt, gi] = &per_channel;
                        f.backward(
                            gs.as_ref().map(|g| g.view()),
                            gt.as_ref().map(|g| g.view()),
                            gi.as_ref().map(|g| g.view()),
                            ig,
                        );
                    }
                }
                ModelKind::Gru(BaselineVariant::D) => {
                    let (wid, bid) = self.layout.decay.expect("decay layout");
                    let decay = decay_params(&self.layout, store).expect("decay layout");
                    let mut g_w = vec![0.0; d];
                    let mut g_b = vec![0.0; d];
                    let means = vec![0.0; d];
                    for (i, c) in self.cases.iter().enumerate() {
                        let PreparedInput::Binned(binned) = &c.input else {
                            continue;
                        };
                        let mut dv = Array2::zeros((t_len, d));
                        for (k, dx) in d_inputs.iter().enumerate() {
                            for dd in 0..d {
                                dv[[k, dd]] = dx[[i, dd]];
                            }
                        }
                        decay_backward(binned, &means, &decay, &dv, &mut g_w, &mut g_b);
                    }
                    add_into(grads.get_mut(wid), &g_w);
                    add_into(grads.get_mut(bid), &g_b);
                }
                _ => {}
            }
        }

        if let (Some(ig), Some((la, rho))) = (interp_grad, self.layout.interp) {
            add_into(grads.get_mut(la), &ig.log_alpha);
            add_into(grads.get_mut(rho), ig.rho.as_slice().expect("contiguous"));
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

impl Objective for BatchObjective<'_> {
    fn loss(&self, store: &ParamStore) -> Result<f64> {
        Ok(self.evaluate(store, None)?.total)
    }

    fn loss_and_grad(&self, store: &ParamStore, grads: &mut Gradients) -> Result<f64> {
        Ok(self.evaluate(store, Some(grads))?.total)
    }
}
