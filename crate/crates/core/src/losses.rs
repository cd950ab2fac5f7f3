//! Training objectives: a supervised contrastive loss over embeddings and a
//! focal loss for imbalanced binary classification, each with analytic
//! gradients and an independent brute-force reference evaluator for tests.
//!
//! Everything here runs in 64-bit; 32-bit training code converts at the
//! boundary, which keeps loss values and gradient checks exact regardless of
//! the precision used in the network.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Clamp bound keeping probabilities away from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

// ── Focal loss ────────────────────────────────────────────────────────────────

/// Focal-loss shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConfig {
    /// Weight on the positive class, in (0, 1).
    pub alpha: f64,
    /// Focusing exponent, >= 0; 0 recovers alpha-weighted cross-entropy.
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation(format!(
                "focal alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::validation(format!(
                "focal gamma must be finite and non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

fn check_label(y: u8) -> Result<()> {
    if y > 1 {
        return Err(Error::validation(format!("label must be 0 or 1, got {y}")));
    }
    Ok(())
}

/// Focal loss for one prediction:
/// `-alpha (1-p)^gamma y log p - (1-alpha) p^gamma (1-y) log(1-p)`,
/// with `p` clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn focal_loss(y_hat: f64, y: u8, cfg: &FocalConfig) -> Result<f64> {
    Ok(focal_loss_grad(y_hat, y, cfg)?.0)
}

/// Focal loss and its derivative with respect to `y_hat`.
///
/// Outside the clamp range the derivative is 0, matching the flat region of
/// the clamped composition.
pub fn focal_loss_grad(y_hat: f64, y: u8, cfg: &FocalConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    check_label(y)?;
    if !y_hat.is_finite() {
        return Err(Error::validation("prediction must be finite"));
    }
    let clamped = y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let p = clamped;
    let (a, g) = (cfg.alpha, cfg.gamma);
    let (loss, d) = if y == 1 {
        let modulator = (1.0 - p).powf(g);
        let loss = -a * modulator * p.ln();
        let d = if g == 0.0 {
            -a / p
        } else {
            a * g * (1.0 - p).powf(g - 1.0) * p.ln() - a * modulator / p
        };
        (loss, d)
    } else {
        let modulator = p.powf(g);
        let loss = -(1.0 - a) * modulator * (1.0 - p).ln();
        let d = if g == 0.0 {
            (1.0 - a) / (1.0 - p)
        } else {
            -(1.0 - a) * g * p.powf(g - 1.0) * (1.0 - p).ln() + (1.0 - a) * modulator / (1.0 - p)
        };
        (loss, d)
    };
    let d = if y_hat == clamped { d } else { 0.0 };
    Ok((loss, d))
}

/// Mean focal loss over a batch.
pub fn focal_loss_batch(y_hat: &[f64], y: &[u8], cfg: &FocalConfig) -> Result<f64> {
    Ok(focal_loss_batch_grad(y_hat, y, cfg)?.0)
}

/// Mean focal loss and per-element derivatives of the mean.
pub fn focal_loss_batch_grad(y_hat: &[f64], y: &[u8], cfg: &FocalConfig) -> Result<(f64, Vec<f64>)> {
    if y_hat.len() != y.len() || y_hat.is_empty() {
        return Err(Error::validation("predictions and labels must be non-empty and equal length"));
    }
    let n = y_hat.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(y_hat.len());
    for (&p, &label) in y_hat.iter().zip(y) {
        let (loss, d) = focal_loss_grad(p, label, cfg)?;
        total += loss;
        grads.push(d / n);
    }
    Ok((total / n, grads))
}

// ── Supervised contrastive loss ───────────────────────────────────────────────

/// A batch of embeddings with binary labels for the contrastive objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub embeddings: Vec<Array1<f64>>,
    pub labels: Vec<u8>,
    /// Softmax temperature, > 0.
    pub temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(embeddings: Vec<Array1<f64>>, labels: Vec<u8>, temperature: f64) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::validation("embeddings and labels must have equal length"));
        }
        if embeddings.len() < 2 {
            return Err(Error::validation("contrastive batch needs at least 2 elements"));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::validation(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let dim = embeddings[0].len();
        for (i, z) in embeddings.iter().enumerate() {
            if z.len() != dim {
                return Err(Error::validation("embeddings must share one dimension"));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("embedding {i} has non-finite entries")));
            }
            if z.dot(z).sqrt() < 1e-12 {
                return Err(Error::validation(format!("embedding {i} has near-zero norm")));
            }
        }
        for &y in &labels {
            check_label(y)?;
        }
        Ok(ContrastiveBatch { embeddings, labels, temperature })
    }

    fn cosine_matrix(&self) -> Array2<f64> {
        let b = self.embeddings.len();
        let norms: Vec<f64> = self.embeddings.iter().map(|z| z.dot(z).sqrt()).collect();
        let mut sims = Array2::zeros((b, b));
        for i in 0..b {
            for j in 0..b {
                if i != j {
                    sims[[i, j]] =
                        self.embeddings[i].dot(&self.embeddings[j]) / (norms[i] * norms[j]);
                }
            }
        }
        sims
    }
}

/// Contrastive loss value plus how many anchors contributed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmclLoss {
    pub value: f64,
    /// Anchors with at least one positive; 0 means every anchor was skipped.
    pub used_anchors: usize,
}

impl RmclLoss {
    pub fn all_skipped(&self) -> bool {
        self.used_anchors == 0
    }
}

/// Per-anchor supervised contrastive loss averaged over anchors.
///
/// For each anchor `i` with nonempty `pos(i) = {j != i : y_j = y_i}`:
/// `L_i = -(1/|pos(i)|) sum_{p in pos(i)} log( exp(s_ip/tau) / sum_{a != i} exp(s_ia/tau) )`
/// where `s` is cosine similarity. Anchors without positives are skipped; if
/// every anchor is skipped the loss is 0 and `used_anchors` is 0.
pub fn rmcl_loss(batch: &ContrastiveBatch) -> RmclLoss {
    rmcl_loss_from_similarities(&batch.cosine_matrix(), &batch.labels, batch.temperature)
}

/// The similarity-space core of [`rmcl_loss`], over a precomputed matrix.
///
/// Exposed so tests can probe monotonicity in a single similarity entry.
/// Diagonal entries are ignored.
pub fn rmcl_loss_from_similarities(sims: &Array2<f64>, labels: &[u8], tau: f64) -> RmclLoss {
    let b = labels.len();
    debug_assert_eq!(sims.dim(), (b, b));
    let mut total = 0.0;
    let mut used = 0;
    for i in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        // log-sum-exp over all a != i with max subtraction for stability
        let scaled: Vec<(usize, f64)> =
            (0..b).filter(|&a| a != i).map(|a| (a, sims[[i, a]] / tau)).collect();
        let max = scaled.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + scaled.iter().map(|&(_, s)| (s - max).exp()).sum::<f64>().ln();
        let mut anchor_loss = 0.0;
        for &p in &pos {
            anchor_loss -= sims[[i, p]] / tau - log_z;
        }
        total += anchor_loss / pos.len() as f64;
        used += 1;
    }
    RmclLoss {
        value: if used == 0 { 0.0 } else { total / used as f64 },
        used_anchors: used,
    }
}

/// Loss together with gradients with respect to each raw embedding.
///
/// The gradient accounts for the cosine normalization, so it is exact for
/// unnormalized inputs as well.
pub fn rmcl_loss_grad(batch: &ContrastiveBatch) -> (RmclLoss, Vec<Array1<f64>>) {
    let b = batch.embeddings.len();
    let tau = batch.temperature;
    let labels = &batch.labels;
    let sims = batch.cosine_matrix();
    let loss = rmcl_loss_from_similarities(&sims, labels, tau);
    let dim = batch.embeddings[0].len();
    let mut grads = vec![Array1::<f64>::zeros(dim); b];
    if loss.all_skipped() {
        return (loss, grads);
    }

    let norms: Vec<f64> = batch.embeddings.iter().map(|z| z.dot(z).sqrt()).collect();
    let m = loss.used_anchors as f64;
    for i in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        // softmax over a != i of s_ia / tau
        let others: Vec<usize> = (0..b).filter(|&a| a != i).collect();
        let max = others.iter().map(|&a| sims[[i, a]] / tau).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = others.iter().map(|&a| (sims[[i, a]] / tau - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (k, &a) in others.iter().enumerate() {
            let softmax = exps[k] / z;
            let is_pos = if labels[a] == labels[i] { 1.0 } else { 0.0 };
            // d(total)/d(sims[i, a]) for the anchor-i term
            let g = (softmax - is_pos / pos.len() as f64) / (tau * m);
            if g == 0.0 {
                continue;
            }
            // cosine quotient rule: s_ia = z_i . z_a / (|z_i| |z_a|)
            let zi = &batch.embeddings[i];
            let za = &batch.embeddings[a];
            let scale = 1.0 / (norms[i] * norms[a]);
            let d_zi = za.mapv(|v| v * scale) - zi.mapv(|v| v * sims[[i, a]] / (norms[i] * norms[i]));
            let d_za = zi.mapv(|v| v * scale) - za.mapv(|v| v * sims[[i, a]] / (norms[a] * norms[a]));
            grads[i] += &d_zi.mapv(|v| v * g);
            grads[a] += &d_za.mapv(|v| v * g);
        }
    }
    (loss, grads)
}

/// Independent brute-force evaluator enumerating every (anchor, positive,
/// denominator) term directly, with no shared code or log-sum-exp tricks.
/// Tests hold the main implementation to this within 1e-6.
pub fn rmcl_loss_reference(batch: &ContrastiveBatch) -> RmclLoss {
    let b = batch.embeddings.len();
    let tau = batch.temperature;
    let cos = |i: usize, j: usize| -> f64 {
        let zi = &batch.embeddings[i];
        let zj = &batch.embeddings[j];
        zi.dot(zj) / (zi.dot(zi).sqrt() * zj.dot(zj).sqrt())
    };
    let mut total = 0.0;
    let mut used = 0;
    for i in 0..b {
        let mut anchor_terms = Vec::new();
        for p in 0..b {
            if p == i || batch.labels[p] != batch.labels[i] {
                continue;
            }
            let mut denominator = 0.0;
            for a in 0..b {
                if a != i {
                    denominator += (cos(i, a) / tau).exp();
                }
            }
            anchor_terms.push(-((cos(i, p) / tau).exp() / denominator).ln());
        }
        if !anchor_terms.is_empty() {
            total += anchor_terms.iter().sum::<f64>() / anchor_terms.len() as f64;
            used += 1;
        }
    }
    RmclLoss {
        value: if used == 0 { 0.0 } else { total / used as f64 },
        used_anchors: used,
    }
}
