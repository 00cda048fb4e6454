//! Segmentation stand-in: images of `d` pixels, a linear scorer `theta^T x`, FNR-controlled
//! threshold and a soft-FPR training cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{dot, least_squares, sigmoid, CostPartials};
use crate::error::{invalid, Error, Result};
use crate::grad::{lambda_grad_piecewise, LambdaGrad, Threshold, ThresholdLoss};
use crate::loss::{fnr_step_loss, BoundFn, Loss, ParamInterval};
use crate::risk::RiskSpec;

// Positive pixels come from two clusters. The minority one is shifted along the second
// feature only, so least squares underweights it relative to what high recall needs.
const HARD_FRACTION: f64 = 0.25;
const EASY_SHIFT: f64 = 3.0;
const HARD_SHIFT: f64 = 3.0;
const TUMOR_LOGIT_MEAN: f64 = -1.6;
const TUMOR_LOGIT_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegTaskConfig {
    /// Pixels per image.
    pub d: usize,
    /// Feature dimension including the intercept; at least 3.
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub seed: u64,
    pub interval: ParamInterval,
}

impl Default for SegTaskConfig {
    fn default() -> Self {
        Self {
            d: 64,
            feature_dim: 3,
            n_train: 200,
            n_cal: 100,
            n_test: 500,
            alpha: 0.1,
            temperature: 0.1,
            seed: 0,
            interval: ParamInterval::new(-5.0, 5.0).unwrap(),
        }
    }
}

impl SegTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(invalid("images need at least two pixels"));
        }
        if self.feature_dim < 3 {
            return Err(invalid("feature_dim must be at least 3"));
        }
        if self.n_train == 0 || self.n_cal == 0 || self.n_test == 0 {
            return Err(invalid("n_train, n_cal and n_test must all be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.temperature > 0.0) {
            return Err(invalid("temperature must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegImage {
    /// Row-major `pixels x dim`.
    pub features: Vec<f64>,
    pub labels: Vec<bool>,
    pub dim: usize,
}

impl SegImage {
    pub fn pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn pixel(&self, j: usize) -> &[f64] {
        &self.features[j * self.dim..(j + 1) * self.dim]
    }

    pub fn scores(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.pixels()).map(|j| dot(theta, self.pixel(j))).collect()
    }

    pub fn positive_scores(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.pixels()).filter(|&j| self.labels[j]).map(|j| dot(theta, self.pixel(j))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegDataset {
    pub train: Vec<SegImage>,
    pub cal: Vec<SegImage>,
    pub test: Vec<SegImage>,
}

/// Draws one image; every image has at least one positive and one negative pixel.
pub fn seg_image<R: Rng>(config: &SegTaskConfig, rng: &mut R) -> SegImage {
    let (d, dim) = (config.d, config.feature_dim);
    loop {
        let eta: f64 = TUMOR_LOGIT_MEAN + TUMOR_LOGIT_SD * rng.sample::<f64, _>(StandardNormal);
        let rate = sigmoid(eta);
        let labels: Vec<bool> = (0..d).map(|_| rng.random::<f64>() < rate).collect();
        let mut features = Vec::with_capacity(d * dim);
        for &positive in &labels {
            let hard = rng.random::<f64>() < HARD_FRACTION;
            features.push(1.0);
            for k in 1..dim {
                let mut v: f64 = rng.sample(StandardNormal);
                if positive && k == 1 && !hard {
                    v += EASY_SHIFT;
                }
                if positive && k == 2 && hard {
                    v += HARD_SHIFT;
                }
                features.push(v);
            }
        }
        let positives = labels.iter().filter(|&&y| y).count();
        if positives > 0 && positives < d {
            return SegImage { features, labels, dim };
        }
    }
}

pub fn seg_images<R: Rng>(config: &SegTaskConfig, rng: &mut R, n: usize) -> Vec<SegImage> {
    (0..n).map(|_| seg_image(config, rng)).collect()
}

pub fn seg_generate(config: &SegTaskConfig) -> Result<SegDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(SegDataset {
        train: seg_images(config, &mut rng, config.n_train),
        cal: seg_images(config, &mut rng, config.n_cal),
        test: seg_images(config, &mut rng, config.n_test),
    })
}

/// Per-pixel least squares on the 0/1 labels.
pub fn seg_pretrain(images: &[SegImage]) -> Result<Vec<f64>> {
    let dim = images.first().ok_or(Error::EmptySamples)?.dim;
    let rows = images
        .iter()
        .flat_map(|im| (0..im.pixels()).map(move |j| (im.pixel(j), if im.labels[j] { 1.0 } else { 0.0 })));
    least_squares(rows, dim)
}

pub fn seg_fnr_losses(theta: &[f64], images: &[SegImage]) -> Result<Vec<Loss>> {
    images.iter().map(|im| fnr_step_loss(&im.positive_scores(theta)).map(Loss::Step)).collect()
}

pub fn seg_threshold_losses(theta: &[f64], images: &[SegImage]) -> Result<Vec<ThresholdLoss>> {
    images
        .iter()
        .map(|im| {
            let positives: Vec<usize> = (0..im.pixels()).filter(|&j| im.labels[j]).collect();
            if positives.is_empty() {
                return Err(Error::NoPositivePixels);
            }
            let size = 1.0 / positives.len() as f64;
            let thresholds = positives
                .iter()
                .map(|&j| Threshold { location: dot(theta, im.pixel(j)), grad: im.pixel(j).to_vec(), size })
                .collect();
            Ok(ThresholdLoss { base: 0.0, thresholds })
        })
        .collect()
}

/// Largest threshold keeping the calibrated FNR at `alpha`, with its gradient in `theta`.
pub fn seg_fnr_lambda(theta: &[f64], cal: &[SegImage], alpha: f64, interval: ParamInterval) -> Result<LambdaGrad> {
    let losses = seg_threshold_losses(theta, cal)?;
    let spec = RiskSpec::expectation(alpha, interval)?;
    lambda_grad_piecewise(&losses, &BoundFn::Constant(1.0), &spec, theta.len())
}

/// Mean of `sigmoid((theta^T x - lambda) / T)` over negative pixels.
pub fn seg_soft_fpr_cost(theta: &[f64], lambda: f64, image: &SegImage, temperature: f64) -> Result<CostPartials> {
    let negatives: Vec<usize> = (0..image.pixels()).filter(|&j| !image.labels[j]).collect();
    if negatives.is_empty() {
        return Err(Error::NoNegativePixels);
    }
    let inv = 1.0 / negatives.len() as f64;
    let mut value = 0.0;
    let mut d_theta = vec![0.0; theta.len()];
    let mut d_lambda = 0.0;
    for &j in &negatives {
        let x = image.pixel(j);
        let s = sigmoid((dot(theta, x) - lambda) / temperature);
        let slope = s * (1.0 - s) / temperature;
        value += s;
        d_lambda -= slope;
        for (g, xi) in d_theta.iter_mut().zip(x) {
            *g += slope * xi;
        }
    }
    d_theta.iter_mut().for_each(|g| *g *= inv);
    Ok(CostPartials { value: value * inv, d_theta, d_lambda: d_lambda * inv })
}

/// Hard `(FNR, FPR)` of one image; a pixel is flagged when its score is at least `lambda`.
pub fn seg_rates(theta: &[f64], lambda: f64, image: &SegImage) -> (f64, f64) {
    let (mut pos, mut missed, mut neg, mut flagged) = (0usize, 0usize, 0usize, 0usize);
    for j in 0..image.pixels() {
        let s = dot(theta, image.pixel(j));
        if image.labels[j] {
            pos += 1;
            missed += usize::from(s < lambda);
        } else {
            neg += 1;
            flagged += usize::from(s >= lambda);
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (frac(missed, pos), frac(flagged, neg))
}
