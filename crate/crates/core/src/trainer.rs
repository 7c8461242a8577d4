//! The adaptation training loop with per-epoch weight estimation.
//!
//! Every batch draws `s` source and `s` target samples with replacement,
//! computes the classification and adaptation losses from one forward pass
//! and applies a single momentum-SGD step to all networks:
//!
//! * `g` descends `L_C - da_coef * L_DA` (gradient reversal),
//! * `h` descends `L_C`,
//! * `d` descends `L_DA`.
//!
//! The batch is then passed through the updated networks and its soft
//! predictions are accumulated into the confusion estimate. At the end of
//! an epoch the estimate feeds the QP and the weights are blended in with
//! an exponential moving average.

use crate::datagen::Dataset;
use crate::diagnostics::{self, BoundReport, EpochSnapshot, HistogramSpec};
use crate::distributions;
use crate::estimator::{self, ConfusionAccumulator, WeightVector};
use crate::losses::{self, BatchLosses, RbfKernel, DEFAULT_BANDWIDTH_FACTORS};
use crate::network::{Architecture, DiscriminatorInput, ForwardMode, MlpGrads, ModelGrads, ModelState};
use crate::{Error, Matrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Source-only training, no adaptation loss.
    None,
    Dann,
    Iwdan,
    IwdanO,
    Cdan,
    Iwcdan,
    IwcdanO,
    Jan,
    Iwjan,
    IwjanO,
}

/// How the adaptation loss is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    SourceOnly,
    Adversarial(DiscriminatorInput),
    Mmd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Algorithm::None,
        Algorithm::Dann,
        Algorithm::Iwdan,
        Algorithm::IwdanO,
        Algorithm::Cdan,
        Algorithm::Iwcdan,
        Algorithm::IwcdanO,
        Algorithm::Jan,
        Algorithm::Iwjan,
        Algorithm::IwjanO,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::None => "none",
            Algorithm::Dann => "dann",
            Algorithm::Iwdan => "iwdan",
            Algorithm::IwdanO => "iwdan_o",
            Algorithm::Cdan => "cdan",
            Algorithm::Iwcdan => "iwcdan",
            Algorithm::IwcdanO => "iwcdan_o",
            Algorithm::Jan => "jan",
            Algorithm::Iwjan => "iwjan",
            Algorithm::IwjanO => "iwjan_o",
        }
    }

    pub fn family(self) -> Family {
        use Algorithm::*;
        match self {
            None => Family::SourceOnly,
            Dann | Iwdan | IwdanO => Family::Adversarial(DiscriminatorInput::Features),
            Cdan | Iwcdan | IwcdanO => Family::Adversarial(DiscriminatorInput::OuterProduct),
            Jan | Iwjan | IwjanO => Family::Mmd,
        }
    }

    pub fn is_weighted(self) -> bool {
        use Algorithm::*;
        matches!(self, Iwdan | IwdanO | Iwcdan | IwcdanO | Iwjan | IwjanO)
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, Algorithm::IwdanO | Algorithm::IwcdanO | Algorithm::IwjanO)
    }

    /// The unweighted algorithm a weighted variant extends.
    pub fn base(self) -> Algorithm {
        use Algorithm::*;
        match self {
            Iwdan | IwdanO => Dann,
            Iwcdan | IwcdanO => Cdan,
            Iwjan | IwjanO => Jan,
            other => other,
        }
    }

    /// The estimated-weight variant of a base algorithm.
    pub fn weighted(self) -> Algorithm {
        use Algorithm::*;
        match self {
            Dann | IwdanO => Iwdan,
            Cdan | IwcdanO => Iwcdan,
            Jan | IwjanO => Iwjan,
            other => other,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// EMA coefficient of the weight update.
    pub lambda: f64,
    pub seed: u64,
    /// Epochs between weight updates.
    pub weight_update_period: usize,
    /// Weight the adaptation loss (weighted algorithms only).
    pub weight_da_loss: bool,
    /// Use the balanced classification loss (weighted algorithms only).
    pub weight_c_loss: bool,
    /// Coefficient of the reversed adaptation gradient into `g`.
    pub da_coef: f64,
    pub arch: Architecture,
    /// Run the bound suite after every epoch.
    pub record_bounds: bool,
    pub histogram: HistogramSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Iwdan,
            epochs: 30,
            batches_per_epoch: 50,
            batch_size: 64,
            lr: 0.02,
            momentum: 0.9,
            lambda: 0.5,
            seed: 0,
            weight_update_period: 1,
            weight_da_loss: true,
            weight_c_loss: true,
            da_coef: 1.0,
            arch: Architecture::default(),
            record_bounds: false,
            histogram: HistogramSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batches_per_epoch == 0 {
            return bad("batches_per_epoch must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.weight_update_period == 0 {
            return bad("weight_update_period must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.da_coef.is_finite() && self.da_coef >= 0.0) {
            return bad("da_coef must be nonnegative");
        }
        Ok(())
    }

    fn uses_weighted_da(&self) -> bool {
        self.algorithm.is_weighted() && self.weight_da_loss
    }

    fn uses_weighted_c(&self) -> bool {
        self.algorithm.is_weighted() && self.weight_c_loss
    }
}

/// Metrics of one completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub acc_src: f64,
    pub acc_tgt: f64,
    /// Mean adaptation loss over the epoch's batches.
    pub loss_da: f64,
    pub loss_c: f64,
    /// Weights after this epoch: the true weights for oracle variants,
    /// the running estimate otherwise.
    pub w: WeightVector,
    /// `||w - w*||_2`.
    pub w_dist: f64,
    /// JSD between the source and target label distributions.
    pub jsd_label: f64,
    /// `(ln 4 - loss_da) / 2` for adversarial algorithms.
    pub jsd_disc: Option<f64>,
    /// Fraction of classes whose estimate moved towards the truth.
    pub contraction: Option<f64>,
    pub bounds: Vec<BoundReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub algorithm: Algorithm,
    pub k: usize,
    pub w_true: WeightVector,
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    /// Best target accuracy over all epochs.
    pub fn best_accuracy(&self) -> f64 {
        self.records.iter().map(|r| r.acc_tgt).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Inputs of one gradient evaluation.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub family: Family,
    pub xs: &'a Matrix,
    pub ys: &'a [usize],
    pub xt: &'a Matrix,
    /// Weights of the adaptation loss.
    pub w_da: &'a WeightVector,
    /// Per-class coefficients of the classification loss.
    pub class_coef: &'a [f64],
    pub da_coef: f64,
    /// Fixed kernel for the MMD loss; the median heuristic on the batch
    /// features is used when absent.
    pub kernel: Option<&'a RbfKernel>,
}

fn column(m: &Matrix) -> Vec<f64> {
    m.column(0).iter().copied().collect()
}

fn add_grads(a: &mut MlpGrads, b: &MlpGrads) {
    a.axpy(1.0, b);
}

/// Gradients of one batch:
/// `g` receives `d(L_C - da_coef L_DA)`, `h` receives `d L_C` and `d`
/// receives `d L_DA`. For the outer-product discriminator the derivative
/// into `g` includes the path through the classifier output.
pub fn batch_gradients(state: &ModelState, batch: &Batch) -> Result<(ModelGrads, BatchLosses)> {
    let mut grads = ModelGrads::zeros_like(state);
    let src = state.forward(batch.xs, ForwardMode::Classify)?;
    let hs = src.h.as_ref().expect("classify pass has a classifier cache");
    let ps = &src.output;
    let zs = &src.g.output;

    let l_c = losses::class_weighted_cross_entropy(ps, batch.ys, batch.class_coef)?;
    let grad_logits = losses::class_weighted_ce_logit_grads(ps, batch.ys, batch.class_coef);
    let (h_grads, mut grad_zs) = state.h.backward_logits(hs, &grad_logits)?;
    grads.h = h_grads;

    let mut l_da = 0.0;
    let mut grad_zt: Option<(crate::network::MlpCache, Matrix)> = None;
    match batch.family {
        Family::SourceOnly => {}
        Family::Adversarial(input) => {
            if input != state.disc_input {
                return Err(Error::ConfigInvalid("discriminator input differs from the model".into()));
            }
            let tgt = state.forward(batch.xt, ForwardMode::Classify)?;
            let ht = tgt.h.as_ref().expect("classify pass has a classifier cache");
            let (in_s, in_t) = match input {
                DiscriminatorInput::Features => (zs.clone(), tgt.g.output.clone()),
                DiscriminatorInput::OuterProduct => (
                    losses::cdan_feature_map(ps, zs)?,
                    losses::cdan_feature_map(&tgt.output, &tgt.g.output)?,
                ),
            };
            let ds = state.d.forward(&in_s)?;
            let dt = state.d.forward(&in_t)?;
            let (d_src, d_tgt) = (column(&ds.output), column(&dt.output));
            l_da = losses::weighted_da_loss(&d_src, &d_tgt, batch.ys, batch.w_da)?;
            let (gs, gt) = losses::weighted_da_logit_grads(&d_src, &d_tgt, batch.ys, batch.w_da);
            let (d_grads_s, g_in_s) = state.d.backward_logits(&ds, &Matrix::from_column_slice(gs.len(), 1, &gs))?;
            let (d_grads_t, g_in_t) = state.d.backward_logits(&dt, &Matrix::from_column_slice(gt.len(), 1, &gt))?;
            grads.d = d_grads_s;
            add_grads(&mut grads.d, &d_grads_t);
            let (da_zs, da_zt) = match input {
                DiscriminatorInput::Features => (g_in_s, g_in_t),
                DiscriminatorInput::OuterProduct => {
                    let (gp_s, gf_s) = losses::cdan_feature_map_backward(ps, zs, &g_in_s);
                    let (gp_t, gf_t) = losses::cdan_feature_map_backward(&tgt.output, &tgt.g.output, &g_in_t);
                    // the classifier's own parameters ignore the adaptation loss
                    let (_, via_h_s) = state.h.backward(hs, &gp_s)?;
                    let (_, via_h_t) = state.h.backward(ht, &gp_t)?;
                    (gf_s + via_h_s, gf_t + via_h_t)
                }
            };
            grad_zs -= da_zs * batch.da_coef;
            grad_zt = Some((tgt.g, da_zt * -batch.da_coef));
        }
        Family::Mmd => {
            let tgt = state.forward(batch.xt, ForwardMode::Features)?;
            let zt = &tgt.g.output;
            let median;
            let kernel = match batch.kernel {
                Some(k) => k,
                None => {
                    median = RbfKernel::median_heuristic(zs, zt, &DEFAULT_BANDWIDTH_FACTORS)?;
                    &median
                }
            };
            l_da = losses::weighted_mmd_loss(zs, batch.ys, zt, batch.w_da, kernel)?;
            let (gs, gt) = losses::weighted_mmd_feature_grads(zs, batch.ys, zt, batch.w_da, kernel);
            grad_zs -= gs * batch.da_coef;
            grad_zt = Some((tgt.g, gt * -batch.da_coef));
        }
    }

    let (g_grads, _) = state.g.backward(&src.g, &grad_zs)?;
    grads.g = g_grads;
    if let Some((cache, grad)) = grad_zt {
        let (g_t, _) = state.g.backward(&cache, &grad)?;
        add_grads(&mut grads.g, &g_t);
    }
    Ok((grads, BatchLosses { l_da, l_c }))
}

/// Loss values of [`batch_gradients`] without the gradients.
pub fn batch_losses(state: &ModelState, batch: &Batch) -> Result<BatchLosses> {
    batch_gradients(state, batch).map(|(_, l)| l)
}

fn argmax_rows(p: &Matrix) -> Vec<usize> {
    p.row_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

/// Hard predictions and features of a model on a whole dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Row-normalized confusion, rows = true class.
    pub confusion: Matrix,
    pub predictions: Vec<usize>,
    pub features: Matrix,
}

pub fn evaluate_full(state: &ModelState, data: &Dataset) -> Result<Evaluation> {
    if data.dim() != state.g.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} features, model expects {}",
            data.dim(),
            state.g.input_dim()
        )));
    }
    if data.k != state.k() {
        return Err(Error::DimensionMismatch(format!("data has {} classes, model {}", data.k, state.k())));
    }
    let pass = state.forward(&data.features, ForwardMode::Classify)?;
    let predictions = argmax_rows(&pass.output);
    let correct = predictions.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    let confusion = diagnostics::confusion_from_predictions(&predictions, &data.labels, data.k)?;
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        confusion,
        predictions,
        features: pass.g.output,
    })
}

/// Argmax accuracy and row-normalized confusion (rows = true class).
pub fn evaluate(state: &ModelState, data: &Dataset) -> Result<(f64, Matrix)> {
    evaluate_full(state, data).map(|e| (e.accuracy, e.confusion))
}

fn check_pair(source: &Dataset, target: &Dataset) -> Result<()> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} features, target {}",
            source.dim(),
            target.dim()
        )));
    }
    if source.k != target.k {
        return Err(Error::DimensionMismatch(format!("source has {} classes, target {}", source.k, target.k)));
    }
    Ok(())
}

/// Builds the model a config trains, seeded from `rng`.
pub fn init_model<R: Rng>(config: &TrainConfig, input_dim: usize, k: usize, rng: &mut R) -> Result<ModelState> {
    let disc_input = match config.algorithm.family() {
        Family::Adversarial(input) => input,
        _ => DiscriminatorInput::Features,
    };
    ModelState::new(input_dim, k, &config.arch, disc_input, config.lr, config.momentum, rng)
}

/// Trains one model and records a trace entry per epoch.
pub fn train(config: &TrainConfig, source: &Dataset, target: &Dataset) -> Result<(ModelState, TrainTrace)> {
    config.validate()?;
    check_pair(source, target)?;
    let k = source.k;
    let p_s = source.label_dist()?;
    let p_t = target.label_dist()?;
    let w_true = estimator::true_weights(&p_s, &p_t)?;
    let jsd_label = distributions::jsd(&p_s, &p_t)?;
    let family = config.algorithm.family();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = init_model(config, source.dim(), k, &mut rng)?;
    let mut accumulator = ConfusionAccumulator::new(k);
    let mut w_est = WeightVector::ones(k);
    let ones = WeightVector::ones(k);
    let mut records = Vec::with_capacity(config.epochs);
    let s = config.batch_size;

    for epoch in 1..=config.epochs {
        accumulator.reset();
        let w_used = if config.algorithm.is_oracle() { &w_true } else { &w_est };
        let w_da = if config.uses_weighted_da() { w_used.clone() } else { ones.clone() };
        let class_coef = if config.uses_weighted_c() {
            match family {
                Family::Mmd => losses::balanced_class_coefficients(&p_s, Some(w_used))?,
                _ => losses::balanced_class_coefficients(&p_s, None)?,
            }
        } else {
            vec![1.0; k]
        };

        let (mut sum_da, mut sum_c) = (0.0, 0.0);
        for _ in 0..config.batches_per_epoch {
            let idx_s: Vec<usize> = (0..s).map(|_| rng.gen_range(0..source.len())).collect();
            let idx_t: Vec<usize> = (0..s).map(|_| rng.gen_range(0..target.len())).collect();
            let xs = source.rows(&idx_s);
            let xt = target.rows(&idx_t);
            let ys: Vec<usize> = idx_s.iter().map(|&i| source.labels[i]).collect();
            let batch = Batch {
                family,
                xs: &xs,
                ys: &ys,
                xt: &xt,
                w_da: &w_da,
                class_coef: &class_coef,
                da_coef: config.da_coef,
                kernel: None,
            };
            let (grads, batch_losses) = batch_gradients(&state, &batch)?;
            state.sgd_step(&grads)?;
            sum_da += batch_losses.l_da;
            sum_c += batch_losses.l_c;

            let ps = state.forward(&xs, ForwardMode::Classify)?.output;
            let pt = state.forward(&xt, ForwardMode::Classify)?.output;
            accumulator.accumulate(&ps, &ys, &pt)?;
        }

        let mut contraction = None;
        if epoch % config.weight_update_period == 0 {
            let est = accumulator.finalize()?;
            match estimator::solve_qp(&est.confusion, &est.mu, &p_s) {
                Ok(w_qp) => {
                    let next = estimator::ema_update(&w_est, &w_qp, config.lambda)?;
                    contraction = Some(diagnostics::check_weight_contraction(&w_est, &next, &w_true)?.fraction);
                    w_est = next;
                }
                Err(e @ (Error::DegenerateProblem(_) | Error::SingularMatrix(_))) => {
                    log::warn!("epoch {epoch}: weight update skipped: {e}");
                }
                Err(e) => return Err(e),
            }
        }

        let eval_s = evaluate_full(&state, source)?;
        let eval_t = evaluate_full(&state, target)?;
        let bounds = if config.record_bounds {
            let snap = EpochSnapshot {
                k,
                feats_src: &eval_s.features,
                labels_src: &source.labels,
                preds_src: &eval_s.predictions,
                feats_tgt: &eval_t.features,
                labels_tgt: &target.labels,
                preds_tgt: &eval_t.predictions,
            };
            match diagnostics::bound_suite(&snap, &config.histogram) {
                Ok(reports) => reports,
                Err(e @ Error::InsufficientSamples { .. }) => {
                    log::warn!("epoch {epoch}: bound suite skipped: {e}");
                    Vec::new()
                }
                Err(e) => return Err(e),
            }
        } else {
            Vec::new()
        };

        let w = if config.algorithm.is_oracle() { w_true.clone() } else { w_est.clone() };
        let nb = config.batches_per_epoch as f64;
        let loss_da = sum_da / nb;
        let record = EpochRecord {
            epoch,
            acc_src: eval_s.accuracy,
            acc_tgt: eval_t.accuracy,
            loss_da,
            loss_c: sum_c / nb,
            w_dist: w.distance(&w_true)?,
            w,
            jsd_label,
            jsd_disc: matches!(family, Family::Adversarial(_)).then(|| (4f64.ln() - loss_da) / 2.0),
            contraction,
            bounds,
        };
        log::debug!(
            "{} epoch {epoch}: acc_src {:.4} acc_tgt {:.4} w_dist {:.4}",
            config.algorithm,
            record.acc_src,
            record.acc_tgt,
            record.w_dist
        );
        records.push(record);
    }

    Ok((
        state,
        TrainTrace {
            algorithm: config.algorithm,
            k,
            w_true,
            records,
        },
    ))
}

/// Mean of a sliding window of width `window` (shorter at the ends).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Largest drop of a sequence below its running maximum.
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    values.iter().fold(0.0, |worst, &v| {
        peak = peak.max(v);
        f64::max(worst, peak - v)
    })
}
