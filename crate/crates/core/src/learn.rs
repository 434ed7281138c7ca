//! Desk-scale binary classifiers over fused post embeddings: regularized
//! logistic regression, a one-hidden-layer network, and k-nearest-neighbors.
//! All training is full-batch, single-threaded, and deterministic for a
//! given seed; gradients are exposed so tests can check them against
//! finite differences.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Errors from dataset validation, training, and prediction.
#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature, label, and id counts disagree")]
    RowCountMismatch,
    #[error("features contain a non-finite value")]
    NonFiniteFeatures,
    #[error("training data contains only one class")]
    SingleClass,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Feature rows with binary labels and post ids, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<u8>,
        ids: Vec<String>,
    ) -> Result<Self, LearnError> {
        if features.is_empty() {
            return Err(LearnError::EmptyDataset);
        }
        if features.len() != labels.len() || features.len() != ids.len() {
            return Err(LearnError::RowCountMismatch);
        }
        let dim = features[0].len();
        for row in &features {
            if row.len() != dim {
                return Err(LearnError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(LearnError::NonFiniteFeatures);
            }
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(LearnError::InvalidConfig("labels must be 0 or 1".into()));
        }
        Ok(Dataset {
            features,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, LearnError> {
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        Dataset::new(features, labels, ids)
    }

    fn check_two_classes(&self) -> Result<(), LearnError> {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        if ones == 0 || ones == self.labels.len() {
            return Err(LearnError::SingleClass);
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

// ---------------------------------------------------------------- logistic

/// Logistic regression: score = σ(w·x + b).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

/// Mean cross-entropy plus (l2/2)·‖w‖² (bias unpenalized).
pub fn logreg_loss(weights: &[f64], bias: f64, features: &[Vec<f64>], labels: &[u8], l2: f64) -> f64 {
    let n = features.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z = dot(weights, x) + bias;
        loss += softplus(z) - f64::from(y) * z;
    }
    loss / n + 0.5 * l2 * dot(weights, weights)
}

/// Full-batch gradient of [`logreg_loss`] with respect to (weights, bias).
pub fn logreg_gradient(
    weights: &[f64],
    bias: f64,
    features: &[Vec<f64>],
    labels: &[u8],
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let error = (sigmoid(dot(weights, x) + bias) - f64::from(y)) / n;
        for (g, v) in grad_w.iter_mut().zip(x) {
            *g += error * v;
        }
        grad_b += error;
    }
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g += l2 * w;
    }
    (grad_w, grad_b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximum number of learning-rate halvings before training stops early.
const MAX_HALVINGS: u32 = 10;

/// Trains logistic regression from zero-initialized parameters by
/// full-batch gradient descent. A step that would increase the loss is
/// reverted and the learning rate halved; after ten halvings training
/// stops. The recorded loss sequence is therefore non-increasing.
pub fn train_logreg(
    ds: &Dataset,
    l2: f64,
    lr: f64,
    epochs: usize,
    _seed: u64,
) -> Result<LogRegModel, LearnError> {
    if ds.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    ds.check_two_classes()?;
    if !(l2 >= 0.0 && l2.is_finite()) || !(lr > 0.0 && lr.is_finite()) {
        return Err(LearnError::InvalidConfig(
            "l2 must be ≥ 0 and lr must be > 0".into(),
        ));
    }
    let mut weights = vec![0.0; ds.dim()];
    let mut bias = 0.0;
    let mut rate = lr;
    let mut halvings = 0;
    let mut loss = logreg_loss(&weights, bias, &ds.features, &ds.labels, l2);
    for _ in 0..epochs {
        let (grad_w, grad_b) = logreg_gradient(&weights, bias, &ds.features, &ds.labels, l2);
        let next_w: Vec<f64> = weights
            .iter()
            .zip(&grad_w)
            .map(|(w, g)| w - rate * g)
            .collect();
        let next_b = bias - rate * grad_b;
        let next_loss = logreg_loss(&next_w, next_b, &ds.features, &ds.labels, l2);
        if next_loss.is_finite() && next_loss <= loss {
            weights = next_w;
            bias = next_b;
            loss = next_loss;
        } else {
            halvings += 1;
            if halvings > MAX_HALVINGS {
                break;
            }
            rate /= 2.0;
        }
    }
    Ok(LogRegModel {
        weights,
        bias,
        l2,
    })
}

// --------------------------------------------------------------------- mlp

/// One-hidden-layer network with max(0, ·) hidden activation and a single
/// sigmoid output. `w1[j]` holds hidden unit j's input weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpModel {
    pub fn dim(&self) -> usize {
        self.w1.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn hidden(&self) -> usize {
        self.w1.len()
    }

    fn logit(&self, x: &[f64]) -> f64 {
        let mut z2 = self.b2;
        for ((row, &b), &w) in self.w1.iter().zip(&self.b1).zip(&self.w2) {
            let a = (dot(row, x) + b).max(0.0);
            z2 += w * a;
        }
        z2
    }

    /// Symmetric uniform init with per-layer width √(6/(fan_in+fan_out));
    /// biases start at zero.
    fn init(dim: usize, hidden: usize, seed: u64) -> MlpModel {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit1 = (6.0 / (dim + hidden) as f64).sqrt();
        let w1 = (0..hidden)
            .map(|_| {
                (0..dim)
                    .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit1)
                    .collect()
            })
            .collect();
        let limit2 = (6.0 / (hidden + 1) as f64).sqrt();
        let w2 = (0..hidden)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit2)
            .collect();
        MlpModel {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
        }
    }
}

/// Mean cross-entropy of the network on the given rows.
pub fn mlp_loss(model: &MlpModel, features: &[Vec<f64>], labels: &[u8]) -> f64 {
    let n = features.len() as f64;
    features
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z = model.logit(x);
            softplus(z) - f64::from(y) * z
        })
        .sum::<f64>()
        / n
}

/// Full-batch backpropagation gradients of [`mlp_loss`], in the same
/// shapes as the model parameters.
pub fn mlp_gradient(model: &MlpModel, features: &[Vec<f64>], labels: &[u8]) -> MlpModel {
    let n = features.len() as f64;
    let hidden = model.hidden();
    let dim = model.dim();
    let mut gw1 = vec![vec![0.0; dim]; hidden];
    let mut gb1 = vec![0.0; hidden];
    let mut gw2 = vec![0.0; hidden];
    let mut gb2 = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z1: Vec<f64> = model
            .w1
            .iter()
            .zip(&model.b1)
            .map(|(row, &b)| dot(row, x) + b)
            .collect();
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let z2 = dot(&model.w2, &a1) + model.b2;
        let error = (sigmoid(z2) - f64::from(y)) / n;
        gb2 += error;
        for j in 0..hidden {
            gw2[j] += error * a1[j];
            if z1[j] > 0.0 {
                let dz1 = error * model.w2[j];
                gb1[j] += dz1;
                for (g, v) in gw1[j].iter_mut().zip(x) {
                    *g += dz1 * v;
                }
            }
        }
    }
    MlpModel {
        w1: gw1,
        b1: gb1,
        w2: gw2,
        b2: gb2,
    }
}

/// Trains the one-hidden-layer network by full-batch gradient descent with
/// the same revert-and-halve stability rule as [`train_logreg`].
pub fn train_mlp(
    ds: &Dataset,
    hidden: usize,
    lr: f64,
    epochs: usize,
    seed: u64,
) -> Result<MlpModel, LearnError> {
    if ds.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    ds.check_two_classes()?;
    if hidden == 0 {
        return Err(LearnError::InvalidConfig("hidden must be ≥ 1".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(LearnError::InvalidConfig("lr must be > 0".into()));
    }
    let mut model = MlpModel::init(ds.dim(), hidden, seed);
    let mut rate = lr;
    let mut halvings = 0;
    let mut loss = mlp_loss(&model, &ds.features, &ds.labels);
    for _ in 0..epochs {
        let grad = mlp_gradient(&model, &ds.features, &ds.labels);
        let mut next = model.clone();
        for (row, grow) in next.w1.iter_mut().zip(&grad.w1) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= rate * g;
            }
        }
        for (b, g) in next.b1.iter_mut().zip(&grad.b1) {
            *b -= rate * g;
        }
        for (w, g) in next.w2.iter_mut().zip(&grad.w2) {
            *w -= rate * g;
        }
        next.b2 -= rate * grad.b2;
        let next_loss = mlp_loss(&next, &ds.features, &ds.labels);
        if next_loss.is_finite() && next_loss <= loss {
            model = next;
            loss = next_loss;
        } else {
            halvings += 1;
            if halvings > MAX_HALVINGS {
                break;
            }
            rate /= 2.0;
        }
    }
    Ok(model)
}

// --------------------------------------------------------------------- knn

/// Distance used by the k-nearest-neighbors model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Euclidean => write!(f, "euclidean"),
            Metric::Cosine => write!(f, "cosine"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

/// k-nearest-neighbors over the stored training set. k is odd so votes
/// cannot tie; equal distances break by training-row index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub k: usize,
    pub metric: Metric,
}

fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Metric::Cosine => {
            let na = dot(a, a).sqrt();
            let nb = dot(b, b).sqrt();
            if na == 0.0 || nb == 0.0 {
                return 1.0;
            }
            1.0 - dot(a, b) / (na * nb)
        }
    }
}

/// Stores the training set after validating k (odd, ≥ 1, ≤ n).
pub fn train_knn(ds: &Dataset, k: usize, metric: Metric) -> Result<KnnModel, LearnError> {
    if ds.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if k == 0 || k % 2 == 0 {
        return Err(LearnError::InvalidConfig("k must be odd and ≥ 1".into()));
    }
    if k > ds.len() {
        return Err(LearnError::InvalidConfig(format!(
            "k = {k} exceeds the {} training rows",
            ds.len()
        )));
    }
    Ok(KnnModel {
        features: ds.features.clone(),
        labels: ds.labels.clone(),
        k,
        metric,
    })
}

// ------------------------------------------------------------- prediction

/// Anything that can score a feature row with a probability in [0, 1].
pub trait Classifier {
    fn dim(&self) -> usize;
    fn score_one(&self, x: &[f64]) -> f64;
}

impl Classifier for LogRegModel {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn score_one(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }
}

impl Classifier for MlpModel {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn score_one(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

impl Classifier for KnnModel {
    fn dim(&self) -> usize {
        self.features.first().map(|r| r.len()).unwrap_or(0)
    }

    fn score_one(&self, x: &[f64]) -> f64 {
        let mut ranked: Vec<(f64, usize)> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, row)| (distance(self.metric, row, x), i))
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let positives = ranked
            .iter()
            .take(self.k)
            .filter(|&&(_, i)| self.labels[i] == 1)
            .count();
        positives as f64 / self.k as f64
    }
}

/// Scores every row and thresholds at 0.5: label = 1 iff score ≥ 0.5.
pub fn predict(
    model: &dyn Classifier,
    features: &[Vec<f64>],
) -> Result<(Vec<u8>, Vec<f64>), LearnError> {
    let dim = model.dim();
    let mut labels = Vec::with_capacity(features.len());
    let mut scores = Vec::with_capacity(features.len());
    for row in features {
        if row.len() != dim {
            return Err(LearnError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        let score = model.score_one(row);
        scores.push(score);
        labels.push(u8::from(score >= 0.5));
    }
    Ok((labels, scores))
}

// ----------------------------------------------------------- persistence

/// Any of the three trained model kinds, for storage and dispatch.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    LogReg(LogRegModel),
    Mlp(MlpModel),
    Knn(KnnModel),
}

impl Classifier for TrainedModel {
    fn dim(&self) -> usize {
        match self {
            TrainedModel::LogReg(m) => m.dim(),
            TrainedModel::Mlp(m) => Classifier::dim(m),
            TrainedModel::Knn(m) => Classifier::dim(m),
        }
    }

    fn score_one(&self, x: &[f64]) -> f64 {
        match self {
            TrainedModel::LogReg(m) => m.score_one(x),
            TrainedModel::Mlp(m) => m.score_one(x),
            TrainedModel::Knn(m) => m.score_one(x),
        }
    }
}

const MODEL_HEADER: &str = "cbe-model v1";

fn push_floats(out: &mut String, label: &str, values: &[f64]) {
    out.push_str(label);
    for v in values {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

/// Serializes a model as a versioned plain-text parameter dump.
pub fn model_to_string(model: &TrainedModel) -> String {
    let mut out = format!("{MODEL_HEADER}\n");
    match model {
        TrainedModel::LogReg(m) => {
            let _ = writeln!(out, "kind logreg\ndim {}", m.weights.len());
            let _ = writeln!(out, "l2 {:?}", m.l2);
            let _ = writeln!(out, "bias {:?}", m.bias);
            push_floats(&mut out, "weights", &m.weights);
        }
        TrainedModel::Mlp(m) => {
            let _ = writeln!(out, "kind mlp\ndim {}\nhidden {}", m.dim(), m.hidden());
            push_floats(&mut out, "b1", &m.b1);
            for row in &m.w1 {
                push_floats(&mut out, "w1", row);
            }
            let _ = writeln!(out, "b2 {:?}", m.b2);
            push_floats(&mut out, "w2", &m.w2);
        }
        TrainedModel::Knn(m) => {
            let _ = writeln!(
                out,
                "kind knn\ndim {}\nk {}\nmetric {}\nn {}",
                Classifier::dim(m),
                m.k,
                m.metric,
                m.features.len()
            );
            for (row, label) in m.features.iter().zip(&m.labels) {
                let mut line = format!("row {label}");
                for v in row {
                    let _ = write!(line, " {v:?}");
                }
                out.push_str(&line);
                out.push('\n');
            }
        }
    }
    out
}

struct ModelLines<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> ModelLines<'a> {
    fn next_field(&mut self, key: &str) -> Result<(usize, &'a str), LearnError> {
        let (idx, line) = self.lines.next().ok_or(LearnError::ParseError {
            line: 0,
            reason: format!("missing {key} line"),
        })?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
            .ok_or(LearnError::ParseError {
                line: idx + 1,
                reason: format!("expected {key:?} line, got {line:?}"),
            })?;
        Ok((idx + 1, rest))
    }
}

fn parse_float_list(line_no: usize, raw: &str, expected: usize) -> Result<Vec<f64>, LearnError> {
    let values: Result<Vec<f64>, _> = raw.split_whitespace().map(str::parse::<f64>).collect();
    let values = values.map_err(|e| LearnError::ParseError {
        line: line_no,
        reason: format!("bad float: {e}"),
    })?;
    if values.len() != expected {
        return Err(LearnError::ParseError {
            line: line_no,
            reason: format!("expected {expected} values, got {}", values.len()),
        });
    }
    Ok(values)
}

fn parse_scalar<T: std::str::FromStr>(line_no: usize, raw: &str) -> Result<T, LearnError>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e| LearnError::ParseError {
        line: line_no,
        reason: format!("bad value {raw:?}: {e}"),
    })
}

/// Parses a dump produced by [`model_to_string`].
pub fn parse_model(content: &str) -> Result<TrainedModel, LearnError> {
    let mut lines = ModelLines {
        lines: content.lines().enumerate(),
    };
    let (idx, header) = lines.lines.next().ok_or(LearnError::ParseError {
        line: 1,
        reason: "empty model file".into(),
    })?;
    if header.trim() != MODEL_HEADER {
        return Err(LearnError::ParseError {
            line: idx + 1,
            reason: format!("unsupported model header {header:?}"),
        });
    }
    let (_, kind) = lines.next_field("kind")?;
    match kind.trim() {
        "logreg" => {
            let (no, dim) = lines.next_field("dim")?;
            let dim: usize = parse_scalar(no, dim)?;
            let (no, l2) = lines.next_field("l2")?;
            let l2: f64 = parse_scalar(no, l2)?;
            let (no, bias) = lines.next_field("bias")?;
            let bias: f64 = parse_scalar(no, bias)?;
            let (no, raw) = lines.next_field("weights")?;
            let weights = parse_float_list(no, raw, dim)?;
            Ok(TrainedModel::LogReg(LogRegModel { weights, bias, l2 }))
        }
        "mlp" => {
            let (no, dim) = lines.next_field("dim")?;
            let dim: usize = parse_scalar(no, dim)?;
            let (no, hidden) = lines.next_field("hidden")?;
            let hidden: usize = parse_scalar(no, hidden)?;
            let (no, raw) = lines.next_field("b1")?;
            let b1 = parse_float_list(no, raw, hidden)?;
            let mut w1 = Vec::with_capacity(hidden);
            for _ in 0..hidden {
                let (no, raw) = lines.next_field("w1")?;
                w1.push(parse_float_list(no, raw, dim)?);
            }
            let (no, b2) = lines.next_field("b2")?;
            let b2: f64 = parse_scalar(no, b2)?;
            let (no, raw) = lines.next_field("w2")?;
            let w2 = parse_float_list(no, raw, hidden)?;
            Ok(TrainedModel::Mlp(MlpModel { w1, b1, w2, b2 }))
        }
        "knn" => {
            let (no, dim) = lines.next_field("dim")?;
            let dim: usize = parse_scalar(no, dim)?;
            let (no, k) = lines.next_field("k")?;
            let k: usize = parse_scalar(no, k)?;
            let (no, metric) = lines.next_field("metric")?;
            let metric: Metric = metric.trim().parse().map_err(|e| LearnError::ParseError {
                line: no,
                reason: e,
            })?;
            let (no, n) = lines.next_field("n")?;
            let n: usize = parse_scalar(no, n)?;
            let mut features = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let (no, raw) = lines.next_field("row")?;
                let mut parts = raw.split_whitespace();
                let label: u8 = parse_scalar(no, parts.next().unwrap_or(""))?;
                if label > 1 {
                    return Err(LearnError::ParseError {
                        line: no,
                        reason: format!("label must be 0 or 1, got {label}"),
                    });
                }
                let rest: Vec<&str> = parts.collect();
                features.push(parse_float_list(no, &rest.join(" "), dim)?);
                labels.push(label);
            }
            Ok(TrainedModel::Knn(KnnModel {
                features,
                labels,
                k,
                metric,
            }))
        }
        other => Err(LearnError::ParseError {
            line: 3,
            reason: format!("unknown model kind {other:?}"),
        }),
    }
}
