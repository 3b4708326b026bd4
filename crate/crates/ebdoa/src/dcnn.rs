//! The deconvolution network: a fully connected encoder from the flattened
//! covariance feature into a coarse channel map, followed by a transposed
//! convolution stack that upsamples to the output grid. Covers model
//! assembly, training, inference, and weight serialization.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::{MATCH_THRESHOLD_DEG, MatchResult, compute_metrics, match_doas};
use crate::nn::{
    AdamHyper, AdamState, Deconv2dParams, DenseParams, LayerParams, ParamGrads, Tensor, deconv2d,
    deconv2d_backward, dense, dense_backward, init_rng, relu, relu_backward, sigmoid, sigmoid_bce,
};
use crate::sphharm::{GridSpec, channel_count};
use crate::sps::{DEFAULT_PEAK_THRESHOLD, SpsGrid, SpsKind, extract_peaks, normalize_map};

/// Geometry of one transposed-convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeconvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub output_padding: (usize, usize),
}

impl DeconvSpec {
    fn output_size(&self, h_in: usize, w_in: usize) -> Result<(usize, usize)> {
        let dim = |n: usize, k: usize, s: usize, p: usize, op: usize| -> Result<usize> {
            let v = (n as i64 - 1) * s as i64 - 2 * p as i64 + k as i64 + op as i64;
            if v <= 0 {
                return Err(Error::invalid(format!(
                    "deconv geometry collapses a {n}-sample axis to {v}"
                )));
            }
            Ok(v as usize)
        };
        Ok((
            dim(h_in, self.kernel.0, self.stride.0, self.padding.0, self.output_padding.0)?,
            dim(w_in, self.kernel.1, self.stride.1, self.padding.1, self.output_padding.1)?,
        ))
    }
}

/// Network geometry: HOA order, dense widths, the reshape from the last
/// dense output into channel maps, the deconvolution stack, and the output
/// grid. The final layer's bias starts at `final_bias` so the network
/// begins near the sparse-background prior instead of at 0.5 everywhere.
///
/// Deserializes from TOML with every field optional, falling back to the
/// defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub order: usize,
    pub fc_widths: Vec<usize>,
    pub reshape: (usize, usize, usize),
    pub deconv: Vec<DeconvSpec>,
    pub grid: GridSpec,
    pub final_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = |ic, oc, k, s| DeconvSpec {
            in_channels: ic,
            out_channels: oc,
            kernel: (k, k),
            stride: (s, s),
            padding: (1, 1),
            output_padding: (0, 0),
        };
        Self {
            order: 4,
            fc_widths: vec![625, 256, 256, 512, 7200],
            reshape: (16, 15, 30),
            deconv: vec![d(16, 8, 4, 2), d(8, 4, 4, 2), d(4, 1, 3, 1)],
            grid: GridSpec::default(),
            final_bias: -2.0,
        }
    }
}

impl ModelConfig {
    /// Length of the input feature: the flattened channel covariance,
    /// `(order + 1)^4` entries.
    pub fn input_len(&self) -> usize {
        channel_count(self.order) * channel_count(self.order)
    }

    /// Number of output cells.
    pub fn output_len(&self) -> usize {
        self.grid.el_bins * self.grid.az_bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order > crate::sphharm::MAX_ORDER {
            return Err(Error::invalid(format!(
                "model order must be in 1..={}, got {}",
                crate::sphharm::MAX_ORDER,
                self.order
            )));
        }
        if self.fc_widths.len() < 2 || self.fc_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("fc widths need at least an input and an output, all positive"));
        }
        if self.fc_widths[0] != self.input_len() {
            return Err(Error::invalid(format!(
                "first fc width {} does not match the feature length {} of order {}",
                self.fc_widths[0],
                self.input_len(),
                self.order
            )));
        }
        let (ch, h, w) = self.reshape;
        if ch == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("reshape dimensions must be positive"));
        }
        let last = *self.fc_widths.last().unwrap();
        if last != ch * h * w {
            return Err(Error::invalid(format!(
                "last fc width {last} does not equal the reshape volume {ch}x{h}x{w}"
            )));
        }
        if self.deconv.is_empty() {
            return Err(Error::invalid("the deconv stack must have at least one layer"));
        }
        let mut channels = ch;
        let (mut cur_h, mut cur_w) = (h, w);
        for (i, spec) in self.deconv.iter().enumerate() {
            if spec.in_channels != channels {
                return Err(Error::invalid(format!(
                    "deconv layer {i} expects {} input channels but receives {channels}",
                    spec.in_channels
                )));
            }
            (cur_h, cur_w) = spec.output_size(cur_h, cur_w)?;
            channels = spec.out_channels;
        }
        if channels != 1 {
            return Err(Error::invalid(format!(
                "the deconv stack must end in one channel, got {channels}"
            )));
        }
        if (cur_h, cur_w) != (self.grid.el_bins, self.grid.az_bins) {
            return Err(Error::invalid(format!(
                "deconv stack produces {cur_h}x{cur_w} but the grid is {}x{}",
                self.grid.el_bins, self.grid.az_bins
            )));
        }
        // Deserialized configs bypass the GridSpec constructor, so re-check
        // the sphere tiling here.
        GridSpec::new(self.grid.el_bins, self.grid.az_bins, self.grid.res_deg)?;
        if !self.final_bias.is_finite() {
            return Err(Error::invalid("final bias must be finite"));
        }
        Ok(())
    }
}

/// Training schedule. `val_fraction` of the data (seeded shuffle) is held
/// out for validation; with a fraction of zero the training set doubles as
/// the validation set. `checkpoint_every` controls how often the
/// best-so-far snapshot is refreshed (the final epoch is always
/// considered).
///
/// Deserializes from TOML with every field optional, falling back to the
/// defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            val_fraction: 0.1,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint cadence must be at least 1"));
        }
        Ok(())
    }
}

/// Per-epoch curves. Recall and precision are measured on the validation
/// split with the 25 degree success rule and are absent for epochs where
/// the split contains no true directions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_recall: Vec<Option<f64>>,
    pub val_precision: Vec<Option<f64>>,
}

/// One supervised pair: a length-`(N+1)^4` feature and a flattened label
/// grid in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub feature: Vec<f64>,
    pub label: Vec<f64>,
}

/// Network parameters with the geometry they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    seed: u64,
    layers: Vec<LayerParams>,
}

/// Output of one forward pass with everything the backward pass needs:
/// post-activation inputs to every layer plus the raw output logits.
struct ForwardPass {
    dense_inputs: Vec<Tensor>,
    dense_out: Tensor,
    deconv_inputs: Vec<Tensor>,
    logits: Tensor,
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    #[cfg(test)]
    pub(crate) fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    fn dense_count(&self) -> usize {
        self.config.fc_widths.len() - 1
    }

    /// Errors unless the model was built for the given HOA order.
    pub fn require_order(&self, expected: usize) -> Result<()> {
        if self.config.order != expected {
            return Err(Error::Geometry {
                context: "model hoa order".into(),
                expected: expected.to_string(),
                actual: self.config.order.to_string(),
            });
        }
        Ok(())
    }

    /// Errors unless a feature of the given length fits the input layer.
    pub fn check_feature_len(&self, len: usize) -> Result<()> {
        if len != self.config.input_len() {
            return Err(Error::Geometry {
                context: "model input feature length".into(),
                expected: self.config.input_len().to_string(),
                actual: len.to_string(),
            });
        }
        Ok(())
    }

    /// Rounds every parameter to its nearest f32 so serialized weights
    /// reload bit-exactly.
    fn quantize(&mut self) {
        for layer in &mut self.layers {
            for v in layer.weights_mut().values_mut() {
                *v = *v as f32 as f64;
            }
            for v in layer.bias_mut().values_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn forward(&self, features: &Tensor) -> Result<ForwardPass> {
        let &[batch, n_in] = features.shape() else {
            return Err(Error::invalid("model input must be a [batch, feature] tensor"));
        };
        self.check_feature_len(n_in)?;
        let mut dense_inputs = Vec::with_capacity(self.dense_count());
        let mut x = features.clone();
        for layer in &self.layers[..self.dense_count()] {
            let LayerParams::Dense(p) = layer else { unreachable!() };
            let z = dense(p, &x)?;
            dense_inputs.push(x);
            x = relu(&z);
        }
        let dense_out = x;
        let (ch, h, w) = self.config.reshape;
        let mut t = dense_out.reshape(&[batch, ch, h, w])?;
        let mut deconv_inputs = Vec::with_capacity(self.config.deconv.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate().skip(self.dense_count()) {
            let LayerParams::Deconv2d(p) = layer else { unreachable!() };
            let z = deconv2d(p, &t)?;
            deconv_inputs.push(t);
            t = if i < last { relu(&z) } else { z };
        }
        Ok(ForwardPass { dense_inputs, dense_out, deconv_inputs, logits: t })
    }

    fn backward(&self, pass: &ForwardPass, grad_logits: &Tensor) -> Result<Vec<ParamGrads>> {
        let n_dense = self.dense_count();
        let n_deconv = self.config.deconv.len();
        let mut grads: Vec<Option<ParamGrads>> = (0..self.layers.len()).map(|_| None).collect();

        let mut g = grad_logits.clone();
        for j in (0..n_deconv).rev() {
            let LayerParams::Deconv2d(p) = &self.layers[n_dense + j] else { unreachable!() };
            let (gi, pg) = deconv2d_backward(p, &pass.deconv_inputs[j], &g)?;
            grads[n_dense + j] = Some(pg);
            // The activation between layers j-1 and j is gated by the
            // stored input of layer j; the reshape boundary is handled on
            // the dense side below.
            g = if j > 0 { relu_backward(&pass.deconv_inputs[j], &gi)? } else { gi };
        }
        let batch = pass.dense_out.shape()[0];
        let flat = self.config.fc_widths[n_dense];
        let mut g = g.reshape(&[batch, flat])?;
        g = relu_backward(&pass.dense_out, &g)?;
        for i in (0..n_dense).rev() {
            let LayerParams::Dense(p) = &self.layers[i] else { unreachable!() };
            let (gi, pg) = dense_backward(p, &pass.dense_inputs[i], &g)?;
            grads[i] = Some(pg);
            if i > 0 {
                g = relu_backward(&pass.dense_inputs[i], &gi)?;
            }
        }
        Ok(grads.into_iter().map(Option::unwrap).collect())
    }
}

/// Builds a model with He-scaled Gaussian weights. The same seed always
/// yields the same parameters.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = init_rng(seed);
    let mut layers = Vec::new();
    for pair in config.fc_widths.windows(2) {
        layers.push(LayerParams::Dense(DenseParams::he_init(pair[0], pair[1], &mut rng)?));
    }
    for d in &config.deconv {
        layers.push(LayerParams::Deconv2d(Deconv2dParams::he_init(
            d.in_channels,
            d.out_channels,
            d.kernel,
            d.stride,
            d.padding,
            d.output_padding,
            &mut rng,
        )?));
    }
    if let Some(last) = layers.last_mut() {
        last.bias_mut().values_mut().fill(config.final_bias);
    }
    let mut model = Model { config: config.clone(), seed, layers };
    model.quantize();
    Ok(model)
}

/// Runs one feature through the network. The sigmoid output lands strictly
/// inside (0, 1) for every cell.
pub fn model_forward(model: &Model, feature: &[f64]) -> Result<SpsGrid> {
    model.check_feature_len(feature.len())?;
    let input = Tensor::new(&[1, feature.len()], feature.to_vec())?;
    let pass = model.forward(&input)?;
    let values = pass.logits.values().iter().map(|&z| sigmoid(z)).collect();
    SpsGrid::new(model.config.grid, SpsKind::NetworkOutput, values)
}

fn batch_tensors(
    data: &[TrainExample],
    idx: &[usize],
    input_len: usize,
    grid: GridSpec,
) -> Result<(Tensor, Tensor)> {
    let b = idx.len();
    let cells = grid.el_bins * grid.az_bins;
    let mut features = Vec::with_capacity(b * input_len);
    let mut labels = Vec::with_capacity(b * cells);
    for &i in idx {
        features.extend_from_slice(&data[i].feature);
        labels.extend_from_slice(&data[i].label);
    }
    Ok((
        Tensor::new(&[b, input_len], features)?,
        Tensor::new(&[b, 1, grid.el_bins, grid.az_bins], labels)?,
    ))
}

/// Mean sigmoid cross-entropy of the model over a set of examples,
/// evaluated in batches. This is the same quantity the trainer logs as
/// validation loss.
pub fn dataset_loss(model: &Model, data: &[TrainExample], batch_size: usize) -> Result<f64> {
    if data.is_empty() || batch_size == 0 {
        return Err(Error::invalid("loss evaluation needs data and a positive batch size"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let (loss, _) = evaluate_split(model, data, &idx, batch_size)?;
    Ok(loss)
}

/// Loss plus peak-matching results over one index subset.
fn evaluate_split(
    model: &Model,
    data: &[TrainExample],
    idx: &[usize],
    batch_size: usize,
) -> Result<(f64, Vec<MatchResult>)> {
    let grid = model.config.grid;
    let cells = grid.el_bins * grid.az_bins;
    let mut loss_sum = 0.0;
    let mut results = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size) {
        let (features, labels) = batch_tensors(data, chunk, model.config.input_len(), grid)?;
        let pass = model.forward(&features)?;
        let (loss, _) = sigmoid_bce(&pass.logits, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        for (k, _) in chunk.iter().enumerate() {
            let logits = &pass.logits.values()[k * cells..(k + 1) * cells];
            let output = SpsGrid::new(
                grid,
                SpsKind::NetworkOutput,
                logits.iter().map(|&z| sigmoid(z)).collect(),
            )?;
            let pred = extract_peaks(&normalize_map(&output), DEFAULT_PEAK_THRESHOLD);
            let label = SpsGrid::new(
                grid,
                SpsKind::Label,
                labels.values()[k * cells..(k + 1) * cells].to_vec(),
            )?;
            let truth = extract_peaks(&label, DEFAULT_PEAK_THRESHOLD);
            results.push(match_doas(&pred, &truth, MATCH_THRESHOLD_DEG));
        }
    }
    Ok((loss_sum / idx.len() as f64, results))
}

/// Mini-batch Adam training over seeded shuffled epochs. Returns the
/// best-validation snapshot together with the full per-epoch history.
pub fn train(model: Model, data: &[TrainExample], cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training requires at least one example"));
    }
    let input_len = model.config.input_len();
    let cells = model.config.output_len();
    for (i, ex) in data.iter().enumerate() {
        if ex.feature.len() != input_len {
            return Err(Error::invalid(format!(
                "example {i} has feature length {}, the model expects {input_len}",
                ex.feature.len()
            )));
        }
        if ex.label.len() != cells {
            return Err(Error::invalid(format!(
                "example {i} has label length {}, the grid has {cells} cells",
                ex.label.len()
            )));
        }
    }

    let mut rng = init_rng(cfg.seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(&mut rng);
    let mut val_count = (data.len() as f64 * cfg.val_fraction).round() as usize;
    if val_count >= data.len() {
        val_count = data.len() - 1;
    }
    let split_at = data.len() - val_count;
    let (train_part, val_part) = indices.split_at(split_at);
    let mut train_idx = train_part.to_vec();
    // An empty holdout degenerates to validating on the training set.
    let val_idx: Vec<usize> =
        if val_count == 0 { train_idx.clone() } else { val_part.to_vec() };

    let mut model = model;
    let hyper = AdamHyper { lr: cfg.learning_rate, ..AdamHyper::default() };
    let mut opt: Vec<(AdamState, AdamState)> = model
        .layers
        .iter()
        .map(|l| {
            (AdamState::new(l.weights().len(), hyper), AdamState::new(l.bias().len(), hyper))
        })
        .collect();

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model)> = None;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_no, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            let (features, labels) = batch_tensors(data, chunk, input_len, model.config.grid)?;
            let pass = model.forward(&features)?;
            let (loss, grad_logits) = sigmoid_bce(&pass.logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss became non-finite ({loss}) at epoch {epoch}, batch {batch_no}"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = model.backward(&pass, &grad_logits)?;
            for (layer, ((wopt, bopt), grad)) in
                model.layers.iter_mut().zip(opt.iter_mut().zip(&grads))
            {
                wopt.step(layer.weights_mut().values_mut(), grad.weights.values())?;
                bopt.step(layer.bias_mut().values_mut(), grad.bias.values())?;
            }
            model.quantize();
        }
        history.train_loss.push(loss_sum / train_idx.len() as f64);

        let (val_loss, results) = evaluate_split(&model, data, &val_idx, cfg.batch_size)?;
        let metrics = compute_metrics(&results);
        history.val_loss.push(val_loss);
        history.val_recall.push(metrics.recall);
        history.val_precision.push(metrics.precision);

        let cadence_hit = (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs;
        if cadence_hit && best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
    }

    let final_model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((final_model, history))
}

const MODEL_MAGIC: &str = "EBDOA-MODEL 1";

fn render_pairs(out: &mut String, values: &[usize]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
}

/// Writes the model as a text header followed by raw little-endian f32
/// parameter blocks, weights before bias, layer by layer.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let cfg = &model.config;
    let mut header = String::new();
    let _ = writeln!(header, "{MODEL_MAGIC}");
    let _ = writeln!(header, "order: {}", cfg.order);
    header.push_str("fc: ");
    render_pairs(&mut header, &cfg.fc_widths);
    header.push('\n');
    let _ = writeln!(header, "reshape: {},{},{}", cfg.reshape.0, cfg.reshape.1, cfg.reshape.2);
    header.push_str("deconv: ");
    for (i, d) in cfg.deconv.iter().enumerate() {
        if i > 0 {
            header.push(';');
        }
        let _ = write!(
            header,
            "{},{},{},{},{},{},{},{},{},{}",
            d.in_channels,
            d.out_channels,
            d.kernel.0,
            d.kernel.1,
            d.stride.0,
            d.stride.1,
            d.padding.0,
            d.padding.1,
            d.output_padding.0,
            d.output_padding.1,
        );
    }
    header.push('\n');
    let _ = writeln!(header, "grid: {},{},{}", cfg.grid.el_bins, cfg.grid.az_bins, cfg.grid.res_deg);
    let _ = writeln!(header, "activation: relu");
    let _ = writeln!(header, "final-bias: {}", cfg.final_bias);
    let _ = writeln!(header, "seed: {}", model.seed);
    let _ = writeln!(header, "created-by: ebdoa {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(header, "params: {}", model.param_count());
    let _ = writeln!(header, "end");

    let mut bytes = header.into_bytes();
    bytes.reserve(model.param_count() * 4);
    for layer in &model.layers {
        for &v in layer.weights().values().iter().chain(layer.bias().values()) {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn parse_usize_list(path: &Path, key: &str, text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad integer in `{key}`: {t:?}")))
        })
        .collect()
}

/// Reads a model saved by [`save_model`], validating the header, the
/// geometry, and the exact parameter byte count.
pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    let end_marker = b"\nend\n";
    let Some(end) = bytes.windows(end_marker.len()).position(|w| w == end_marker) else {
        return Err(Error::format(path, "missing `end` marker; not a model file or truncated"));
    };
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::format(path, "model header is not valid UTF-8"))?;
    let body = &bytes[end + end_marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MODEL_MAGIC) {
        return Err(Error::format(path, format!("expected `{MODEL_MAGIC}` on the first line")));
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines {
        let Some((key, value)) = line.split_once(':') else {
            return Err(Error::format(path, format!("malformed header line {line:?}")));
        };
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| Error::format(path, format!("missing header field `{key}`")))
    };

    let order: usize = get("order")?
        .parse()
        .map_err(|_| Error::format(path, "bad integer in `order`"))?;
    let fc_widths = parse_usize_list(path, "fc", &get("fc")?)?;
    let reshape_v = parse_usize_list(path, "reshape", &get("reshape")?)?;
    let [ch, h, w] = reshape_v[..] else {
        return Err(Error::format(path, "`reshape` needs exactly three dimensions"));
    };
    let mut deconv = Vec::new();
    for group in get("deconv")?.split(';') {
        let v = parse_usize_list(path, "deconv", group)?;
        let [ic, oc, kh, kw, sh, sw, ph, pw, oph, opw] = v[..] else {
            return Err(Error::format(path, "each `deconv` group needs ten integers"));
        };
        deconv.push(DeconvSpec {
            in_channels: ic,
            out_channels: oc,
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
            output_padding: (oph, opw),
        });
    }
    let grid_text = get("grid")?;
    let grid_parts: Vec<&str> = grid_text.split(',').collect();
    let [el_text, az_text, res_text] = grid_parts[..] else {
        return Err(Error::format(path, "`grid` needs three comma-separated values"));
    };
    let grid = GridSpec {
        el_bins: el_text
            .trim()
            .parse()
            .map_err(|_| Error::format(path, "bad integer in `grid`"))?,
        az_bins: az_text
            .trim()
            .parse()
            .map_err(|_| Error::format(path, "bad integer in `grid`"))?,
        res_deg: res_text
            .trim()
            .parse()
            .map_err(|_| Error::format(path, "bad resolution in `grid`"))?,
    };
    let activation = get("activation")?;
    if activation != "relu" {
        return Err(Error::format(path, format!("unsupported activation {activation:?}")));
    }
    let final_bias: f64 = get("final-bias")?
        .parse()
        .map_err(|_| Error::format(path, "bad number in `final-bias`"))?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| Error::format(path, "bad integer in `seed`"))?;
    let declared: usize = get("params")?
        .parse()
        .map_err(|_| Error::format(path, "bad integer in `params`"))?;

    let config = ModelConfig { order, fc_widths, reshape: (ch, h, w), deconv, grid, final_bias };
    config.validate()?;

    let mut layers = Vec::new();
    for pair in config.fc_widths.windows(2) {
        layers.push(LayerParams::Dense(DenseParams::zeros(pair[0], pair[1])?));
    }
    for d in &config.deconv {
        layers.push(LayerParams::Deconv2d(Deconv2dParams::zeros(
            d.in_channels,
            d.out_channels,
            d.kernel,
            d.stride,
            d.padding,
            d.output_padding,
        )?));
    }
    let expected: usize = layers.iter().map(LayerParams::param_count).sum();
    if declared != expected {
        return Err(Error::format(
            path,
            format!("header declares {declared} parameters but the geometry needs {expected}"),
        ));
    }
    if body.len() != expected * 4 {
        return Err(Error::format(
            path,
            format!(
                "expected {} parameter bytes after the header, found {}",
                expected * 4,
                body.len()
            ),
        ));
    }
    let mut cursor = body;
    let mut take = |dst: &mut [f64]| {
        for v in dst {
            let (chunk, rest) = cursor.split_at(4);
            *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            cursor = rest;
        }
    };
    for layer in &mut layers {
        take(layer.weights_mut().values_mut());
        take(layer.bias_mut().values_mut());
    }
    Ok(Model { config, seed, layers })
}

/// Flattened view over every parameter, layer by layer, weights before
/// bias. Used by training diagnostics.
pub fn flat_gradients(grads: &[ParamGrads]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(g.weights.values());
        out.extend_from_slice(g.bias.values());
    }
    out
}

/// Analytic gradients of the mean loss for one batch, flattened in
/// serialization order. Exposed for gradient verification.
pub fn batch_gradients(model: &Model, features: &Tensor, labels: &Tensor) -> Result<(f64, Vec<f64>)> {
    let pass = model.forward(features)?;
    let (loss, grad_logits) = sigmoid_bce(&pass.logits, &labels.clone())?;
    let grads = model.backward(&pass, &grad_logits)?;
    Ok((loss, flat_gradients(&grads)))
}

/// Loss of the model with one flat-indexed parameter temporarily offset by
/// `delta`. Pairs with [`batch_gradients`] for finite-difference checks.
pub fn loss_with_param(
    model: &mut Model,
    features: &Tensor,
    labels: &Tensor,
    flat_index: usize,
    delta: f64,
) -> Result<f64> {
    let mut remaining = flat_index;
    let mut location = None;
    for (li, layer) in model.layers.iter().enumerate() {
        let wlen = layer.weights().len();
        let blen = layer.bias().len();
        if remaining < wlen {
            location = Some((li, false, remaining));
            break;
        }
        remaining -= wlen;
        if remaining < blen {
            location = Some((li, true, remaining));
            break;
        }
        remaining -= blen;
    }
    let Some((li, is_bias, off)) = location else {
        return Err(Error::invalid(format!("parameter index {flat_index} out of range")));
    };
    let slot = if is_bias {
        &mut model.layers[li].bias_mut().values_mut()[off]
    } else {
        &mut model.layers[li].weights_mut().values_mut()[off]
    };
    let old = *slot;
    *slot = old + delta;
    let result = (|| {
        let pass = model.forward(features)?;
        let (loss, _) = sigmoid_bce(&pass.logits, labels)?;
        Ok(loss)
    })();
    let slot = if is_bias {
        &mut model.layers[li].bias_mut().values_mut()[off]
    } else {
        &mut model.layers[li].weights_mut().values_mut()[off]
    };
    *slot = old;
    result
}
