//! Semi-supervised fully connected autoencoder: a parametric map from
//! standardized log-covariance features to a 2-D latent chart and back.
//!
//! The latent space is tied to physical coordinates through a labeled
//! regression term, so the encoder output is read directly as a position
//! estimate in meters. Training is plain mini-batch gradient descent with
//! hand-derived backpropagation; everything is seeded and deterministic.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::ChannelMatrix;
use crate::chart_tsne::Embedding;
use crate::{Error, Result};

/// Feature dimension for an `n x n` log covariance: real upper triangle
/// with diagonal, strict-upper imaginary parts, and `n` reserved zeros,
/// `n(n+1)/2 + n(n-1)/2 + n = n(n+1)`.
pub fn feature_dim(n: usize) -> usize {
    n * (n + 1)
}

/// Real feature vector of one point.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub point_id: usize,
    pub values: DVector<f64>,
}

/// Vectorizes a Hermitian log covariance: diagonal-and-upper real parts
/// row-major, then strict-upper imaginary parts row-major, then the
/// reserved zero block.
pub fn featurize(log_r: &ChannelMatrix, point_id: usize) -> FeatureVector {
    let n = log_r.nrows();
    let mut values = Vec::with_capacity(feature_dim(n));
    for i in 0..n {
        for j in i..n {
            values.push(log_r[(i, j)].re);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            values.push(log_r[(i, j)].im);
        }
    }
    values.resize(feature_dim(n), 0.0);
    FeatureVector { point_id, values: DVector::from_vec(values) }
}

/// Inverse of [`featurize`] (reserved block ignored).
pub fn unfeaturize(values: &DVector<f64>, n: usize) -> Result<ChannelMatrix> {
    if values.len() != feature_dim(n) {
        return Err(Error::invalid(format!(
            "feature vector length {} does not match dimension {n}",
            values.len()
        )));
    }
    let mut m: ChannelMatrix = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)].re = values[k];
            m[(j, i)].re = values[k];
            k += 1;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            m[(i, j)].im = values[k];
            m[(j, i)].im = -values[k];
            k += 1;
        }
    }
    Ok(m)
}

const SIGMA_FLOOR: f64 = 1e-8;

/// Per-coordinate mean and floored standard deviation over the given
/// subset (population convention).
pub fn standardize_stats(
    features: &[FeatureVector],
    subset: &[usize],
) -> Result<(DVector<f64>, DVector<f64>)> {
    if subset.is_empty() {
        return Err(Error::invalid("standardization subset is empty"));
    }
    let f = features[subset[0]].values.len();
    let mut mu = DVector::zeros(f);
    for &i in subset {
        mu += &features[i].values;
    }
    mu /= subset.len() as f64;
    let mut var = DVector::zeros(f);
    for &i in subset {
        let d = &features[i].values - &mu;
        var += d.component_mul(&d);
    }
    var /= subset.len() as f64;
    let sigma = var.map(|v| v.sqrt().max(SIGMA_FLOOR));
    Ok((mu, sigma))
}

/// Columns are standardized feature vectors `(u - mu) / sigma`.
pub fn standardize(features: &[FeatureVector], mu: &DVector<f64>, sigma: &DVector<f64>) -> DMatrix<f64> {
    let f = mu.len();
    let mut out = DMatrix::zeros(f, features.len());
    for (c, feat) in features.iter().enumerate() {
        for r in 0..f {
            out[(r, c)] = (feat.values[r] - mu[r]) / sigma[r];
        }
    }
    out
}

/// Hidden-layer activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative as a function of the preactivation.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Layer widths (input first) and one activation per non-input layer; the
/// output activation is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("network needs at least input and output layers"));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::invalid("need one activation per non-input layer"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if *activations.last().unwrap() != Activation::Linear {
            return Err(Error::invalid("output activation must be linear"));
        }
        Ok(MlpSpec { widths, activations })
    }

    /// Encoder spec from hidden widths: ReLU on all hidden layers except
    /// the last, which is tanh; linear output.
    pub fn encoder(input: usize, hidden: &[usize], latent: usize) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(latent);
        let mut acts = Vec::new();
        for i in 0..hidden.len() {
            acts.push(if i + 1 == hidden.len() { Activation::Tanh } else { Activation::Relu });
        }
        acts.push(Activation::Linear);
        MlpSpec::new(widths, acts)
    }

    /// Mirrored decoder: hidden widths reversed, activations mirrored.
    pub fn decoder(input: usize, hidden: &[usize], latent: usize) -> Result<Self> {
        let mut widths = vec![latent];
        widths.extend(hidden.iter().rev());
        widths.push(input);
        let mut acts = Vec::new();
        for i in 0..hidden.len() {
            acts.push(if i == 0 { Activation::Tanh } else { Activation::Relu });
        }
        acts.push(Activation::Linear);
        MlpSpec::new(widths, acts)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Default hidden widths used with the full-size feature vector.
pub const DEFAULT_HIDDEN: [usize; 3] = [512, 128, 32];

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    w: DMatrix<f64>,
    b: DVector<f64>,
    act: Activation,
}

/// Plain multilayer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Symmetric uniform fan-in initialization, seeded.
    pub fn init(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        for i in 0..spec.widths.len() - 1 {
            let fan_in = spec.widths[i];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = DMatrix::from_fn(spec.widths[i + 1], fan_in, |_, _| {
                (rng.random::<f64>() * 2.0 - 1.0) * bound
            });
            layers.push(Layer {
                w,
                b: DVector::zeros(spec.widths[i + 1]),
                act: spec.activations[i],
            });
        }
        Mlp { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.ncols())
    }

    /// Batch forward pass; columns are samples.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (_, acts) = self.forward_cached(x);
        acts.into_iter().last().unwrap()
    }

    /// Forward pass keeping preactivations and activations per layer.
    fn forward_cached(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let mut pre = &layer.w * acts.last().unwrap();
            for c in 0..pre.ncols() {
                for r in 0..pre.nrows() {
                    pre[(r, c)] += layer.b[r];
                }
            }
            let act = pre.map_with_location(|r, c, v| {
                let _ = (r, c);
                layer.act.apply(v)
            });
            pres.push(pre);
            acts.push(act);
        }
        (pres, acts)
    }

    /// Backpropagates `upstream = dL/d(output)` through the cached pass,
    /// accumulating parameter gradients and returning `dL/d(input)`.
    fn backward(
        &self,
        pres: &[DMatrix<f64>],
        acts: &[DMatrix<f64>],
        upstream: DMatrix<f64>,
        grads: &mut MlpGrads,
    ) -> DMatrix<f64> {
        let mut g = upstream;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &pres[i];
            let mut delta = g;
            for c in 0..delta.ncols() {
                for r in 0..delta.nrows() {
                    delta[(r, c)] *= layer.act.derivative(pre[(r, c)]);
                }
            }
            grads.w[i] += &delta * acts[i].transpose();
            for c in 0..delta.ncols() {
                for r in 0..delta.nrows() {
                    grads.b[i][r] += delta[(r, c)];
                }
            }
            g = layer.w.transpose() * delta;
        }
        g
    }

    /// Squared Frobenius norm of all weight matrices (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.w.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    fn apply_grads(&mut self, grads: &MlpGrads, lr: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.w.iter().zip(&grads.b)) {
            layer.w -= gw * lr;
            layer.b -= gb * lr;
        }
    }

    fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w: self.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect(),
            b: self.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
        }
    }

    fn add_weight_decay(&self, grads: &mut MlpGrads, factor: f64) {
        if factor == 0.0 {
            return;
        }
        for (g, layer) in grads.w.iter_mut().zip(&self.layers) {
            *g += &layer.w * factor;
        }
    }
}

struct MlpGrads {
    w: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

/// Loss weights and optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AeConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            alpha: 1.0,
            beta: 10.0,
            gamma: 1.0,
            eta: 0.0,
            batch_size: 32,
            epochs: 200,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl AeConfig {
    fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 || self.eta < 0.0 {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        if self.alpha + self.beta + self.gamma <= 0.0 {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Trained encoder/decoder pair with the frozen standardization stats.
#[derive(Clone, Debug, PartialEq)]
pub struct AeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub mu: DVector<f64>,
    pub sigma: DVector<f64>,
}

impl AeModel {
    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }
}

/// Encode-then-decode a single standardized feature vector.
pub fn forward(model: &AeModel, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    if x.len() != model.encoder.input_dim() {
        return Err(Error::invalid(format!(
            "feature length {} does not match encoder input {}",
            x.len(),
            model.encoder.input_dim()
        )));
    }
    let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    let z = model.encoder.forward_batch(&xm);
    let xhat = model.decoder.forward_batch(&z);
    Ok((z.column(0).into_owned(), xhat.column(0).into_owned()))
}

/// Per-term loss breakdown of a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub latent: f64,
    pub decode_labels: f64,
    pub total: f64,
    pub labeled_in_batch: usize,
}

/// Total semi-supervised loss on a batch of standardized feature columns.
///
/// `labels[c]` carries the physical coordinates of batch column `c` when
/// that sample is labeled. A batch without labeled samples contributes
/// zero latent and label-decoding terms, flagged by `labeled_in_batch`.
pub fn loss_total(
    model: &AeModel,
    batch: &DMatrix<f64>,
    labels: &[Option<[f64; 2]>],
    cfg: &AeConfig,
) -> Result<LossBreakdown> {
    if labels.len() != batch.ncols() {
        return Err(Error::invalid("one label slot per batch column required"));
    }
    let b = batch.ncols();
    let z = model.encoder.forward_batch(batch);
    let xhat = model.decoder.forward_batch(&z);

    let mut recon = 0.0;
    for c in 0..b {
        for r in 0..batch.nrows() {
            let d = batch[(r, c)] - xhat[(r, c)];
            recon += d * d;
        }
    }
    recon /= b as f64;
    recon += cfg.eta / 2.0 * (model.encoder.weight_norm_sq() + model.decoder.weight_norm_sq());

    let labeled: Vec<usize> = (0..b).filter(|&c| labels[c].is_some()).collect();
    let (mut latent, mut dec) = (0.0, 0.0);
    if !labeled.is_empty() {
        for &c in &labeled {
            let y = labels[c].unwrap();
            for k in 0..2 {
                let d = z[(k, c)] - y[k];
                latent += d * d;
            }
        }
        latent /= labeled.len() as f64;

        let mut y_cols = DMatrix::zeros(2, labeled.len());
        for (i, &c) in labeled.iter().enumerate() {
            let y = labels[c].unwrap();
            y_cols[(0, i)] = y[0];
            y_cols[(1, i)] = y[1];
        }
        let decoded = model.decoder.forward_batch(&y_cols);
        for (i, &c) in labeled.iter().enumerate() {
            for r in 0..batch.nrows() {
                let d = batch[(r, c)] - decoded[(r, i)];
                dec += d * d;
            }
        }
        dec /= labeled.len() as f64;
    }
    latent += cfg.eta / 2.0 * model.encoder.weight_norm_sq();

    let total = cfg.alpha * recon + cfg.beta * latent + cfg.gamma * dec;
    Ok(LossBreakdown {
        reconstruction: recon,
        latent,
        decode_labels: dec,
        total,
        labeled_in_batch: labeled.len(),
    })
}

/// One gradient accumulation over a batch; returns the breakdown.
fn batch_gradients(
    model: &AeModel,
    batch: &DMatrix<f64>,
    labels: &[Option<[f64; 2]>],
    cfg: &AeConfig,
    enc_grads: &mut MlpGrads,
    dec_grads: &mut MlpGrads,
) -> Result<LossBreakdown> {
    let breakdown = loss_total(model, batch, labels, cfg)?;
    let b = batch.ncols();

    // Path through the autoencoder: x -> z -> xhat.
    let (enc_pres, enc_acts) = model.encoder.forward_cached(batch);
    let z = enc_acts.last().unwrap().clone();
    let (dec_pres, dec_acts) = model.decoder.forward_cached(&z);
    let xhat = dec_acts.last().unwrap();

    // dL_AE/dxhat = alpha * (2/B)(xhat - x).
    let mut up = xhat - batch;
    up *= cfg.alpha * 2.0 / b as f64;
    let mut dz = model.decoder.backward(&dec_pres, &dec_acts, up, dec_grads);

    // dL_E/dz adds beta * (2/|L|)(z - y) on labeled columns.
    let labeled: Vec<usize> = (0..b).filter(|&c| labels[c].is_some()).collect();
    if !labeled.is_empty() && cfg.beta != 0.0 {
        let w = cfg.beta * 2.0 / labeled.len() as f64;
        for &c in &labeled {
            let y = labels[c].unwrap();
            for k in 0..2 {
                dz[(k, c)] += w * (z[(k, c)] - y[k]);
            }
        }
    }
    model.encoder.backward(&enc_pres, &enc_acts, dz, enc_grads);

    // Path decoding the true positions: y -> xhat_y (labeled only).
    if !labeled.is_empty() && cfg.gamma != 0.0 {
        let mut y_cols = DMatrix::zeros(2, labeled.len());
        for (i, &c) in labeled.iter().enumerate() {
            let y = labels[c].unwrap();
            y_cols[(0, i)] = y[0];
            y_cols[(1, i)] = y[1];
        }
        let (pres, acts) = model.decoder.forward_cached(&y_cols);
        let decoded = acts.last().unwrap();
        let mut up = DMatrix::zeros(batch.nrows(), labeled.len());
        let w = cfg.gamma * 2.0 / labeled.len() as f64;
        for (i, &c) in labeled.iter().enumerate() {
            for r in 0..batch.nrows() {
                up[(r, i)] = w * (decoded[(r, i)] - batch[(r, c)]);
            }
        }
        model.decoder.backward(&pres, &acts, up, dec_grads);
    }

    // Weight decay: alpha*(eta)*w on both nets plus beta*(eta)*w on the
    // encoder, matching the loss definition exactly.
    model.encoder.add_weight_decay(enc_grads, cfg.eta * (cfg.alpha + cfg.beta));
    model.decoder.add_weight_decay(dec_grads, cfg.eta * cfg.alpha);

    Ok(breakdown)
}

/// Training output: the model plus the per-epoch mean total loss.
#[derive(Clone, Debug)]
pub struct TrainedAe {
    pub model: AeModel,
    pub loss_trace: Vec<f64>,
}

/// Trains the autoencoder on standardized feature columns.
///
/// `labels[i]` carries the physical coordinates of sample `i` when it is
/// an anchor. Mini-batches are drawn by a seeded shuffle each epoch; a
/// non-finite or exploding loss aborts with the epoch index.
pub fn train(
    standardized: &DMatrix<f64>,
    labels: &[Option<[f64; 2]>],
    encoder_spec: &MlpSpec,
    decoder_spec: &MlpSpec,
    cfg: &AeConfig,
    mu: DVector<f64>,
    sigma: DVector<f64>,
) -> Result<TrainedAe> {
    cfg.validate()?;
    let n = standardized.ncols();
    if labels.len() != n {
        return Err(Error::invalid("one label slot per sample required"));
    }
    if labels.iter().all(|l| l.is_none()) && (cfg.beta > 0.0 || cfg.gamma > 0.0) {
        return Err(Error::invalid("supervised loss terms need at least one anchor"));
    }
    if encoder_spec.input_dim() != standardized.nrows()
        || decoder_spec.output_dim() != standardized.nrows()
        || encoder_spec.output_dim() != decoder_spec.input_dim()
    {
        return Err(Error::invalid("encoder/decoder specs do not match the feature dimension"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = AeModel {
        encoder: Mlp::init(encoder_spec, &mut rng),
        decoder: Mlp::init(decoder_spec, &mut rng),
        mu,
        sigma,
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Seeded Fisher-Yates shuffle.
        for i in (1..n).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = DMatrix::zeros(standardized.nrows(), chunk.len());
            let mut batch_labels = Vec::with_capacity(chunk.len());
            for (c, &i) in chunk.iter().enumerate() {
                batch.set_column(c, &standardized.column(i));
                batch_labels.push(labels[i]);
            }
            let mut enc_grads = model.encoder.zero_grads();
            let mut dec_grads = model.decoder.zero_grads();
            let breakdown =
                batch_gradients(&model, &batch, &batch_labels, cfg, &mut enc_grads, &mut dec_grads)?;
            if !breakdown.total.is_finite() || breakdown.total > 1e12 {
                return Err(Error::Diverged {
                    iteration: epoch,
                    context: format!("total loss {}", breakdown.total),
                });
            }
            model.encoder.apply_grads(&enc_grads, cfg.learning_rate);
            model.decoder.apply_grads(&dec_grads, cfg.learning_rate);
            epoch_loss += breakdown.total;
            batches += 1;
        }
        loss_trace.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(TrainedAe { model, loss_trace })
}

/// Encodes raw (unstandardized) features into the latent chart using the
/// model's frozen standardization stats. Latent coordinates are read as
/// planar meters.
pub fn infer_positions(model: &AeModel, features: &[FeatureVector]) -> Result<Embedding> {
    let dim = model.latent_dim();
    if features.is_empty() {
        return Ok(Embedding::new(dim, Vec::new(), Vec::new(), f64::NAN));
    }
    let x = standardize(features, &model.mu, &model.sigma);
    let z = model.encoder.forward_batch(&x);
    let mut coords = Vec::with_capacity(features.len() * dim);
    for c in 0..z.ncols() {
        for r in 0..dim {
            coords.push(z[(r, c)]);
        }
    }
    Ok(Embedding::new(dim, coords, vec![false; features.len()], f64::NAN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn cx(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn featurize_zero_matrix() {
        let m: ChannelMatrix = DMatrix::zeros(2, 2);
        let f = featurize(&m, 0);
        assert_eq!(f.values.len(), 6);
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn featurize_diagonal_layout() {
        let mut m: ChannelMatrix = DMatrix::zeros(2, 2);
        m[(0, 0)] = cx(1.0, 0.0);
        m[(1, 1)] = cx(2.0, 0.0);
        let f = featurize(&m, 0);
        assert_eq!(f.values.as_slice(), &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn featurize_roundtrip() {
        let mut m: ChannelMatrix = DMatrix::zeros(3, 3);
        let vals = [
            (0, 0, 0.5, 0.0),
            (1, 1, -1.2, 0.0),
            (2, 2, 2.0, 0.0),
            (0, 1, 0.3, -0.7),
            (0, 2, -0.1, 0.2),
            (1, 2, 0.9, 0.4),
        ];
        for &(i, j, re, im) in &vals {
            m[(i, j)] = cx(re, im);
            if i != j {
                m[(j, i)] = cx(re, -im);
            }
        }
        let f = featurize(&m, 3);
        let back = unfeaturize(&f.values, 3).unwrap();
        assert_eq!(back, m);
    }

    fn fv(point_id: usize, values: Vec<f64>) -> FeatureVector {
        FeatureVector { point_id, values: DVector::from_vec(values) }
    }

    #[test]
    fn standardize_constant_coordinate_floors_sigma() {
        let feats = vec![fv(0, vec![5.0, 1.0]), fv(1, vec![5.0, 3.0])];
        let (mu, sigma) = standardize_stats(&feats, &[0, 1]).unwrap();
        assert_eq!(mu[0], 5.0);
        assert_eq!(sigma[0], SIGMA_FLOOR);
        let x = standardize(&feats, &mu, &sigma);
        assert_eq!(x[(0, 0)], 0.0);
        assert_eq!(x[(0, 1)], 0.0);
    }

    #[test]
    fn standardize_identity_with_unit_stats() {
        let feats = vec![fv(0, vec![1.5, -2.0])];
        let mu = DVector::zeros(2);
        let sigma = DVector::from_element(2, 1.0);
        let x = standardize(&feats, &mu, &sigma);
        assert_eq!(x[(0, 0)], 1.5);
        assert_eq!(x[(1, 0)], -2.0);
    }

    #[test]
    fn standardize_statistics_on_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feats: Vec<FeatureVector> = (0..20)
            .map(|i| fv(i, (0..6).map(|_| rng.random::<f64>() * 5.0 - 1.0).collect()))
            .collect();
        let subset: Vec<usize> = (0..20).collect();
        let (mu, sigma) = standardize_stats(&feats, &subset).unwrap();
        let x = standardize(&feats, &mu, &sigma);
        for r in 0..6 {
            let mean: f64 = (0..20).map(|c| x[(r, c)]).sum::<f64>() / 20.0;
            let var: f64 = (0..20).map(|c| (x[(r, c)] - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-10, "column mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-10, "column std {}", var.sqrt());
        }
    }

    fn tiny_model() -> AeModel {
        // Encoder 2 -> 3 (tanh) -> 2 (linear) with pinned weights; decoder
        // is an identity-ish linear map so forward() stays hand-checkable.
        let enc_spec = MlpSpec::new(
            vec![2, 3, 2],
            vec![Activation::Tanh, Activation::Linear],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut encoder = Mlp::init(&enc_spec, &mut rng);
        encoder.layers[0].w = DMatrix::from_row_slice(3, 2, &[0.5, -0.25, 0.1, 0.2, -0.3, 0.4]);
        encoder.layers[0].b = DVector::from_vec(vec![0.1, -0.1, 0.2]);
        encoder.layers[1].w = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, -1.0, 0.25]);
        encoder.layers[1].b = DVector::from_vec(vec![0.0, 0.1]);
        let dec_spec = MlpSpec::new(vec![2, 2], vec![Activation::Linear]).unwrap();
        let mut decoder = Mlp::init(&dec_spec, &mut rng);
        decoder.layers[0].w = DMatrix::identity(2, 2);
        decoder.layers[0].b = DVector::zeros(2);
        AeModel {
            encoder,
            decoder,
            mu: DVector::zeros(2),
            sigma: DVector::from_element(2, 1.0),
        }
    }

    #[test]
    fn forward_matches_hand_computed_values() {
        // Frozen by evaluating the two layers by hand for x = [1, -1].
        let model = tiny_model();
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let (z, xhat) = forward(&model, &x).unwrap();
        assert!((z[0] - 0.4600108912029256).abs() < 1e-15);
        assert!((z[1] - 0.1818460309099016).abs() < 1e-15);
        // Identity decoder: reconstruction equals the latent.
        assert_eq!(xhat, z);
    }

    #[test]
    fn forward_zero_weights_gives_zero() {
        let mut model = tiny_model();
        for layer in &mut model.encoder.layers {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        for layer in &mut model.decoder.layers {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let (z, xhat) = forward(&model, &DVector::from_vec(vec![3.0, -4.0])).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(xhat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_identity_single_layer() {
        let spec = MlpSpec::new(vec![2, 2], vec![Activation::Linear]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::init(&spec, &mut rng);
        net.layers[0].w = DMatrix::identity(2, 2);
        net.layers[0].b = DVector::zeros(2);
        let x = DMatrix::from_column_slice(2, 1, &[0.7, -0.2]);
        let y = net.forward_batch(&x);
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weighted_loss_is_zero() {
        // alpha = beta = gamma = 0 is rejected as an invalid config by
        // train(), but loss_total itself reports a plain zero.
        let model = tiny_model();
        let batch = DMatrix::from_column_slice(2, 1, &[0.3, 0.9]);
        let zero_cfg = AeConfig { alpha: 0.0, beta: 0.0, gamma: 0.0, ..Default::default() };
        let b = loss_total(&model, &batch, &[None], &zero_cfg).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn perfect_reconstruction_and_anchors_give_zero_loss() {
        // Identity encoder and decoder, input equals its own label: all
        // three terms vanish with eta = 0.
        let enc = MlpSpec::new(vec![2, 2], vec![Activation::Linear]).unwrap();
        let dec = MlpSpec::new(vec![2, 2], vec![Activation::Linear]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = AeModel {
            encoder: Mlp::init(&enc, &mut rng),
            decoder: Mlp::init(&dec, &mut rng),
            mu: DVector::zeros(2),
            sigma: DVector::from_element(2, 1.0),
        };
        model.encoder.layers[0].w = DMatrix::identity(2, 2);
        model.encoder.layers[0].b = DVector::zeros(2);
        model.decoder.layers[0].w = DMatrix::identity(2, 2);
        model.decoder.layers[0].b = DVector::zeros(2);
        let batch = DMatrix::from_column_slice(2, 1, &[1.5, -2.5]);
        let cfg = AeConfig { eta: 0.0, ..Default::default() };
        let b = loss_total(&model, &batch, &[Some([1.5, -2.5])], &cfg).unwrap();
        assert_eq!(b.total, 0.0);
        assert_eq!(b.labeled_in_batch, 1);
    }

    #[test]
    fn loss_matches_scratch_recomputation() {
        let model = tiny_model();
        let batch = DMatrix::from_column_slice(2, 2, &[1.0, -1.0, 0.5, 0.25]);
        let labels = [Some([0.4, 0.1]), None];
        let cfg = AeConfig { alpha: 1.0, beta: 2.0, gamma: 3.0, eta: 0.01, ..Default::default() };
        let got = loss_total(&model, &batch, &labels, &cfg).unwrap();

        // Scratch recomputation of the three sums.
        let mut recon = 0.0;
        let mut zs = Vec::new();
        for c in 0..2 {
            let x = batch.column(c).into_owned();
            let (z, xhat) = forward(&model, &x).unwrap();
            recon += (&x - &xhat).norm_squared();
            zs.push(z);
        }
        recon /= 2.0;
        let wnorm = model.encoder.weight_norm_sq() + model.decoder.weight_norm_sq();
        recon += cfg.eta / 2.0 * wnorm;
        let latent = (zs[0][0] - 0.4).powi(2)
            + (zs[0][1] - 0.1).powi(2)
            + cfg.eta / 2.0 * model.encoder.weight_norm_sq();
        // Identity decoder: decoding the label reproduces it.
        let dec = (batch[(0, 0)] - 0.4).powi(2) + (batch[(1, 0)] - 0.1).powi(2);
        let want = cfg.alpha * recon + cfg.beta * latent + cfg.gamma * dec;
        assert!((got.total - want).abs() < 1e-12, "{} vs {want}", got.total);
    }

    /// Collects every parameter of the model as mutable references paired
    /// with its index, for finite-difference probing.
    fn perturb_and_loss(
        model: &mut AeModel,
        which: usize,
        layer: usize,
        idx: usize,
        delta: f64,
        batch: &DMatrix<f64>,
        labels: &[Option<[f64; 2]>],
        cfg: &AeConfig,
    ) -> f64 {
        {
            let net = if which == 0 { &mut model.encoder } else { &mut model.decoder };
            let l = &mut net.layers[layer];
            let nw = l.w.len();
            if idx < nw {
                l.w[idx] += delta;
            } else {
                l.b[idx - nw] += delta;
            }
        }
        let out = loss_total(model, batch, labels, cfg).unwrap().total;
        {
            let net = if which == 0 { &mut model.encoder } else { &mut model.decoder };
            let l = &mut net.layers[layer];
            let nw = l.w.len();
            if idx < nw {
                l.w[idx] -= delta;
            } else {
                l.b[idx - nw] -= delta;
            }
        }
        out
    }

    #[test]
    fn backprop_matches_finite_differences() {
        // (12, 8, 2 / 2, 8, 12) net, both activations exercised, eta > 0.
        let enc_spec = MlpSpec::new(vec![12, 8, 2], vec![Activation::Relu, Activation::Linear]).unwrap();
        let dec_spec = MlpSpec::new(vec![2, 8, 12], vec![Activation::Tanh, Activation::Linear]).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = AeModel {
            encoder: Mlp::init(&enc_spec, &mut rng),
            decoder: Mlp::init(&dec_spec, &mut rng),
            mu: DVector::zeros(12),
            sigma: DVector::from_element(12, 1.0),
        };
        let batch = DMatrix::from_fn(12, 6, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let labels: Vec<Option<[f64; 2]>> = (0..6)
            .map(|c| if c % 2 == 0 { Some([rng.random::<f64>(), rng.random::<f64>()]) } else { None })
            .collect();
        let cfg = AeConfig { alpha: 1.0, beta: 2.0, gamma: 1.5, eta: 0.02, ..Default::default() };

        let mut enc_grads = model.encoder.zero_grads();
        let mut dec_grads = model.decoder.zero_grads();
        batch_gradients(&model, &batch, &labels, &cfg, &mut enc_grads, &mut dec_grads).unwrap();

        let h = 1e-5;
        for which in 0..2 {
            let layer_count = if which == 0 { 2 } else { 2 };
            for layer in 0..layer_count {
                let (nw, nb, analytic): (usize, usize, Vec<f64>) = {
                    let (net, grads) = if which == 0 {
                        (&model.encoder, &enc_grads)
                    } else {
                        (&model.decoder, &dec_grads)
                    };
                    let l = &net.layers[layer];
                    let mut a: Vec<f64> = grads.w[layer].iter().copied().collect();
                    a.extend(grads.b[layer].iter());
                    (l.w.len(), l.b.len(), a)
                };
                for idx in 0..nw + nb {
                    let lp = perturb_and_loss(&mut model, which, layer, idx, h, &batch, &labels, &cfg);
                    let lm = perturb_and_loss(&mut model, which, layer, idx, -h, &batch, &labels, &cfg);
                    let fd = (lp - lm) / (2.0 * h);
                    let rel = (analytic[idx] - fd).abs() / fd.abs().max(1e-6);
                    assert!(
                        rel < 1e-4,
                        "net {which} layer {layer} param {idx}: analytic {} vs fd {fd}",
                        analytic[idx]
                    );
                }
            }
        }
    }

    fn synthetic_training_set(n: usize) -> (DMatrix<f64>, Vec<Option<[f64; 2]>>) {
        // Features are a smooth nonlinear lift of planar positions.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut x = DMatrix::zeros(6, n);
        let mut labels = Vec::new();
        for c in 0..n {
            let px = rng.random::<f64>() * 4.0;
            let py = rng.random::<f64>() * 4.0;
            let feat = [
                px,
                py,
                (px * 0.7).sin(),
                (py * 0.9).cos(),
                0.3 * px * py,
                (px - py) * 0.5,
            ];
            for r in 0..6 {
                x[(r, c)] = feat[r];
            }
            labels.push(if c % 3 == 0 { Some([px, py]) } else { None });
        }
        (x, labels)
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let (x, labels) = synthetic_training_set(12);
        let enc = MlpSpec::encoder(6, &[4], 2).unwrap();
        let dec = MlpSpec::decoder(6, &[4], 2).unwrap();
        let cfg = AeConfig { epochs: 0, ..Default::default() };
        let out = train(&x, &labels, &enc, &dec, &cfg, DVector::zeros(6), DVector::from_element(6, 1.0)).unwrap();
        assert!(out.loss_trace.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let want_enc = Mlp::init(&enc, &mut rng);
        assert_eq!(out.model.encoder, want_enc);
    }

    #[test]
    fn training_reduces_total_loss() {
        let (x, labels) = synthetic_training_set(30);
        let enc = MlpSpec::encoder(6, &[8], 2).unwrap();
        let dec = MlpSpec::decoder(6, &[8], 2).unwrap();
        let cfg = AeConfig { epochs: 120, batch_size: 10, learning_rate: 5e-3, ..Default::default() };
        let out = train(&x, &labels, &enc, &dec, &cfg, DVector::zeros(6), DVector::from_element(6, 1.0)).unwrap();
        let first = out.loss_trace[0];
        let last = *out.loss_trace.last().unwrap();
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn plain_autoencoder_keeps_supervised_terms_zero() {
        let (x, mut labels) = synthetic_training_set(12);
        for l in &mut labels {
            *l = None;
        }
        let enc = MlpSpec::encoder(6, &[4], 2).unwrap();
        let dec = MlpSpec::decoder(6, &[4], 2).unwrap();
        let cfg = AeConfig { beta: 0.0, gamma: 0.0, epochs: 5, ..Default::default() };
        let out = train(&x, &labels, &enc, &dec, &cfg, DVector::zeros(6), DVector::from_element(6, 1.0)).unwrap();
        let batch = x.columns(0, 4).into_owned();
        let b = loss_total(&out.model, &batch, &[None, None, None, None], &cfg).unwrap();
        assert_eq!(b.latent, 0.0);
        assert_eq!(b.decode_labels, 0.0);
        assert_eq!(b.labeled_in_batch, 0);
    }

    #[test]
    fn inference_on_separable_toy_set_recovers_anchors() {
        let (x, labels) = synthetic_training_set(30);
        let enc = MlpSpec::encoder(6, &[12], 2).unwrap();
        let dec = MlpSpec::decoder(6, &[12], 2).unwrap();
        let cfg = AeConfig {
            epochs: 1500,
            batch_size: 30,
            learning_rate: 4e-3,
            beta: 10.0,
            ..Default::default()
        };
        let out = train(&x, &labels, &enc, &dec, &cfg, DVector::zeros(6), DVector::from_element(6, 1.0)).unwrap();
        let feats: Vec<FeatureVector> = (0..30)
            .map(|c| fv(c, x.column(c).iter().copied().collect()))
            .collect();
        let emb = infer_positions(&out.model, &feats).unwrap();
        // Anchored training points should land near their labels; the
        // 0.75 m threshold was pinned after one run at this seed.
        let mut worst = 0.0f64;
        for (c, label) in labels.iter().enumerate() {
            if let Some(y) = label {
                let z = emb.point(c);
                let err = ((z[0] - y[0]).powi(2) + (z[1] - y[1]).powi(2)).sqrt();
                worst = worst.max(err);
            }
        }
        assert!(worst < 0.75, "worst anchor error {worst}");
    }

    #[test]
    fn duplicate_features_encode_identically_and_empty_is_empty() {
        let model = tiny_model();
        let feats = vec![fv(0, vec![0.5, 0.5]), fv(1, vec![0.5, 0.5])];
        let emb = infer_positions(&model, &feats).unwrap();
        assert_eq!(emb.point(0), emb.point(1));

        let empty = infer_positions(&model, &[]).unwrap();
        assert_eq!(empty.len(), 0);
    }
}
