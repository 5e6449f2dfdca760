//! Distillation of optimized labels into an embedding-to-quality regressor.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DatasetBundle, EmbeddingRecord, QualityTable};
use crate::error::{Error, Result};
use crate::seed;

const MODEL_VERSION: u32 = 1;

/// Min-max rescale to [0, 1]; a constant table maps to 0.5 everywhere.
pub fn normalize_scores(table: &QualityTable) -> Result<QualityTable> {
    if table.is_empty() {
        return Err(Error::Empty("quality table"));
    }
    let (lo, hi) = table
        .scores()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &q| (lo.min(q), hi.max(q)));
    if hi == lo {
        return table.map_scores(|_| 0.5);
    }
    let span = hi - lo;
    table.map_scores(|q| ((q - lo) / span).clamp(0.0, 1.0))
}

/// Mean absolute error.
pub fn l1_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("l1 loss inputs"));
    }
    let total: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp,
}

/// Regression head: linear, or one ReLU hidden layer followed by a linear output.
///
/// The flat parameter order is hidden weights (row-major, `hidden x dim`),
/// hidden biases, output weights, output bias. A linear model has no hidden
/// layer and its output weights act on the input directly.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    dimension: usize,
    hidden_width: usize,
    hidden_weights: Vec<f64>,
    hidden_bias: Vec<f64>,
    output_weights: Vec<f64>,
    output_bias: f64,
}

impl RegressorModel {
    pub fn zeros(dimension: usize, hidden_width: usize) -> Self {
        let fan_in = if hidden_width == 0 { dimension } else { hidden_width };
        Self {
            dimension,
            hidden_width,
            hidden_weights: vec![0.0; hidden_width * dimension],
            hidden_bias: vec![0.0; hidden_width],
            output_weights: vec![0.0; fan_in],
            output_bias: 0.0,
        }
    }

    pub fn linear(weights: Vec<f64>, bias: f64) -> Self {
        Self {
            dimension: weights.len(),
            hidden_width: 0,
            hidden_weights: Vec::new(),
            hidden_bias: Vec::new(),
            output_weights: weights,
            output_bias: bias,
        }
    }

    /// Weights uniform in +-1/sqrt(fan_in), biases zero.
    fn init(dimension: usize, hidden_width: usize, rng: &mut seed::Rng) -> Self {
        let mut model = Self::zeros(dimension, hidden_width);
        let bound = 1.0 / (dimension as f64).sqrt();
        model
            .hidden_weights
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..=bound));
        let out_bound = 1.0 / (model.output_weights.len() as f64).sqrt();
        model
            .output_weights
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-out_bound..=out_bound));
        model
    }

    pub fn architecture(&self) -> Architecture {
        if self.hidden_width == 0 {
            Architecture::Linear
        } else {
            Architecture::Mlp
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden_weights.len() + self.hidden_bias.len() + self.output_weights.len() + 1
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.parameter_count());
        p.extend_from_slice(&self.hidden_weights);
        p.extend_from_slice(&self.hidden_bias);
        p.extend_from_slice(&self.output_weights);
        p.push(self.output_bias);
        p
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::LengthMismatch {
                left: self.parameter_count(),
                right: params.len(),
            });
        }
        let (hw, rest) = params.split_at(self.hidden_weights.len());
        let (hb, rest) = rest.split_at(self.hidden_bias.len());
        let (ow, ob) = rest.split_at(self.output_weights.len());
        self.hidden_weights.copy_from_slice(hw);
        self.hidden_bias.copy_from_slice(hb);
        self.output_weights.copy_from_slice(ow);
        self.output_bias = ob[0];
        Ok(())
    }

    /// Hidden pre-activations (empty for a linear model) and the output.
    fn forward(&self, x: &[f64], pre: &mut Vec<f64>) -> f64 {
        pre.clear();
        if self.hidden_width == 0 {
            return dot(&self.output_weights, x) + self.output_bias;
        }
        pre.extend(
            self.hidden_weights
                .chunks_exact(self.dimension)
                .zip(&self.hidden_bias)
                .map(|(row, b)| dot(row, x) + b),
        );
        pre.iter()
            .zip(&self.output_weights)
            .map(|(z, w)| z.max(0.0) * w)
            .sum::<f64>()
            + self.output_bias
    }

    /// Raw (unclamped) prediction.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::LengthMismatch {
                left: self.dimension,
                right: x.len(),
            });
        }
        Ok(self.forward(x, &mut Vec::new()))
    }

    /// Mean L1 loss over the batch and its gradient in flat parameter order.
    ///
    /// The subgradient of |r| at r = 0 is taken as 0.
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let scale = 1.0 / inputs.len() as f64;
        let n_hw = self.hidden_weights.len();
        let n_hb = self.hidden_bias.len();
        let n_ow = self.output_weights.len();
        let mut grad = vec![0.0; self.parameter_count()];
        let mut loss = 0.0;
        let mut pre = Vec::with_capacity(self.hidden_width);

        for (x, &y) in inputs.iter().zip(targets) {
            let residual = self.forward(x, &mut pre) - y;
            loss += residual.abs();
            let g = if residual > 0.0 {
                scale
            } else if residual < 0.0 {
                -scale
            } else {
                0.0
            };
            if g == 0.0 {
                continue;
            }
            grad[n_hw + n_hb + n_ow] += g;
            if self.hidden_width == 0 {
                for (gw, xi) in grad[..n_ow].iter_mut().zip(x.iter()) {
                    *gw += g * xi;
                }
                continue;
            }
            for (j, &z) in pre.iter().enumerate() {
                grad[n_hw + n_hb + j] += g * z.max(0.0);
                if z > 0.0 {
                    let dz = g * self.output_weights[j];
                    grad[n_hw + j] += dz;
                    let row = &mut grad[j * self.dimension..(j + 1) * self.dimension];
                    for (gw, xi) in row.iter_mut().zip(x.iter()) {
                        *gw += dz * xi;
                    }
                }
            }
        }
        Ok((loss * scale, grad))
    }

    fn step(&mut self, grad: &[f64], lr: f64) {
        let n_hw = self.hidden_weights.len();
        let n_hb = self.hidden_bias.len();
        let n_ow = self.output_weights.len();
        for (w, g) in self.hidden_weights.iter_mut().zip(&grad[..n_hw]) {
            *w -= lr * g;
        }
        for (b, g) in self.hidden_bias.iter_mut().zip(&grad[n_hw..n_hw + n_hb]) {
            *b -= lr * g;
        }
        for (w, g) in self.output_weights.iter_mut().zip(&grad[n_hw + n_hb..n_hw + n_hb + n_ow]) {
            *w -= lr * g;
        }
        self.output_bias -= lr * grad[n_hw + n_hb + n_ow];
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.try_into()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// On-disk model layout.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    architecture: Architecture,
    dimension: usize,
    hidden_width: usize,
    hidden_weights: Vec<f64>,
    hidden_bias: Vec<f64>,
    output_weights: Vec<f64>,
    output_bias: f64,
}

impl From<&RegressorModel> for ModelFile {
    fn from(m: &RegressorModel) -> Self {
        Self {
            version: MODEL_VERSION,
            architecture: m.architecture(),
            dimension: m.dimension,
            hidden_width: m.hidden_width,
            hidden_weights: m.hidden_weights.clone(),
            hidden_bias: m.hidden_bias.clone(),
            output_weights: m.output_weights.clone(),
            output_bias: m.output_bias,
        }
    }
}

impl TryFrom<ModelFile> for RegressorModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", f.version)));
        }
        let expected = match f.architecture {
            Architecture::Linear => 0,
            Architecture::Mlp => f.hidden_width.max(1),
        };
        if f.hidden_width != expected {
            return Err(Error::Format("architecture does not match hidden_width".into()));
        }
        let fan_in = if f.hidden_width == 0 { f.dimension } else { f.hidden_width };
        if f.hidden_weights.len() != f.hidden_width * f.dimension
            || f.hidden_bias.len() != f.hidden_width
            || f.output_weights.len() != fan_in
        {
            return Err(Error::Format("model parameter arrays have the wrong length".into()));
        }
        let model = RegressorModel {
            dimension: f.dimension,
            hidden_width: f.hidden_width,
            hidden_weights: f.hidden_weights,
            hidden_bias: f.hidden_bias,
            output_weights: f.output_weights,
            output_bias: f.output_bias,
        };
        if model.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameter".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero selects the linear head.
    pub hidden_width: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            epochs: 200,
            batch_size: 16,
            hidden_width: 64,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRegressor {
    pub model: RegressorModel,
    /// Training-set L1 loss after each epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainedRegressor {
    pub fn write_loss_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["epoch", "l1_loss"]).map_err(to_err)?;
        for (e, l) in self.loss_trace.iter().enumerate() {
            w.write_record([(e + 1).to_string(), l.to_string()]).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io("<loss trace>", e))
    }
}

/// Mini-batch SGD on the L1 loss.
///
/// The step size decays linearly over epochs, from `learning_rate` in the
/// first epoch to `learning_rate / epochs` in the last; with a constant step
/// the L1 subgradient keeps oscillating around the target.
pub fn train_regressor(bundle: &DatasetBundle, labels: &QualityTable, config: &TrainConfig) -> Result<TrainedRegressor> {
    config.validate()?;
    if labels.len() != bundle.len() {
        return Err(Error::LengthMismatch {
            left: bundle.len(),
            right: labels.len(),
        });
    }
    let targets: Vec<f64> = bundle
        .embeddings()
        .iter()
        .map(|r| {
            labels.get(&r.image_id).ok_or_else(|| Error::MissingId {
                id: r.image_id.clone(),
                present_in: "embeddings",
                missing_from: "labels",
            })
        })
        .collect::<Result<_>>()?;
    if let Some((id, q)) = labels.iter().find(|(_, q)| !(0.0..=1.0).contains(q)) {
        return Err(Error::InvalidConfig(format!("label {q} of {id} is outside [0, 1]; normalize first")));
    }
    if bundle.is_empty() {
        return Err(Error::Empty("training set"));
    }

    let inputs: Vec<Vec<f64>> = bundle.embeddings().iter().map(EmbeddingRecord::vector_f64).collect();
    let mut rng = seed::rng(config.seed);
    let mut model = RegressorModel::init(bundle.dimension(), config.hidden_width, &mut rng);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate * (config.epochs - epoch) as f64 / config.epochs as f64;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let (_, grad) = model.loss_and_gradient(&xs, &ys)?;
            model.step(&grad, lr);
        }
        let preds: Vec<f64> = inputs.iter().map(|x| model.forward(x, &mut Vec::new())).collect();
        loss_trace.push(l1_loss(&preds, &targets)?);
    }
    if model.parameters().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("trained parameters".into()));
    }
    Ok(TrainedRegressor { model, loss_trace })
}

pub fn predict_quality<T: Copy + Into<f64>>(model: &RegressorModel, vector: &[T]) -> Result<f64> {
    let x: Vec<f64> = vector.iter().map(|&v| v.into()).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regressor input".into()));
    }
    model.predict(&x)
}

/// Predicted quality for every record, in record order.
pub fn predict_table(model: &RegressorModel, records: &[EmbeddingRecord]) -> Result<QualityTable> {
    let mut table = QualityTable::new();
    for r in records {
        table.insert(r.image_id.clone(), predict_quality(model, &r.vector)?)?;
    }
    Ok(table)
}
