//! End-to-end demonstration pipeline: synthesize data, train the toy
//! model on the combined objective, decode with Viterbi, and score the
//! result against the synthetic ground truth.

use thiserror::Error;

use crate::align::{align_lyrics, AlignError};
use crate::loss::{framewise_targets_from_alignment, LossError};
use crate::metrics::{mae, MetricsError};
use crate::model::{synth_dataset, train, ModelError, SynthItem, SynthSpec, ToyModel, TrainConfig};
use crate::posteriogram::Posteriogram;
use crate::Scalar;

#[derive(Error, Debug)]
pub enum DemoError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Demo hyperparameters; the defaults meet the accuracy and boundary
/// thresholds in a few seconds of CPU time.
#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub synth: SynthSpec,
    pub train_items: usize,
    pub holdout_items: usize,
    pub hidden: usize,
    pub context: usize,
    pub train: TrainConfig,
    /// Held-out framewise accuracy the demo must reach.
    pub accuracy_threshold: f64,
    /// Median absolute boundary error bound, in frame hops.
    pub boundary_threshold_hops: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            train_items: 200,
            holdout_items: 40,
            hidden: 24,
            // Zero context keeps the per-frame classifier from modeling
            // the CTC label stretch across segment boundaries.
            context: 0,
            train: TrainConfig::default(),
            accuracy_threshold: 0.95,
            boundary_threshold_hops: 1.0,
        }
    }
}

impl DemoConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self
    }
}

/// Scores of one demo run.
#[derive(Debug, Clone)]
pub struct DemoReport {
    pub loss_curve: Vec<f64>,
    /// Fraction of held-out frames whose argmax class (over the target
    /// class space: syllables + silence) matches the ground-truth label.
    pub holdout_accuracy: f64,
    /// Median of all absolute boundary errors after Viterbi alignment,
    /// in seconds.
    pub median_boundary_error: f64,
    /// Duration-weighted mean absolute boundary error, in seconds.
    pub mae: f64,
    pub frame_hop: f64,
    pub accuracy_threshold: f64,
    pub boundary_threshold: f64,
}

impl DemoReport {
    pub fn meets_thresholds(&self) -> bool {
        self.holdout_accuracy >= self.accuracy_threshold
            && self.median_boundary_error <= self.boundary_threshold
    }
}

/// A finished demo run: the scores plus the trained model.
#[derive(Debug, Clone)]
pub struct DemoRun<F: Scalar> {
    pub report: DemoReport,
    pub model: ToyModel<F>,
}

/// Argmax over the target class space (silence included, blank excluded;
/// the blank is a CTC training construct, never a framewise label).
pub fn target_argmax<F: Scalar>(p: &Posteriogram<F>, frame: usize, class_count: usize) -> usize {
    let target_classes = class_count - 1;
    (0..target_classes)
        .max_by(|&a, &b| {
            p.prob(frame, a)
                .partial_cmp(&p.prob(frame, b))
                .expect("probabilities are finite")
        })
        .expect("posteriogram has at least one class")
}

/// Trains on synthetic data and evaluates on a held-out split generated
/// from a derived seed.
pub fn run_demo<F: Scalar>(config: &DemoConfig) -> Result<DemoRun<F>, DemoError> {
    let lex = config.synth.lexicon();
    let train_data: Vec<SynthItem<F>> = synth_dataset(&config.synth, config.train_items)?;
    let holdout_spec = SynthSpec {
        seed: config.synth.seed.wrapping_add(1),
        ..config.synth.clone()
    };
    let holdout: Vec<SynthItem<F>> = synth_dataset(&holdout_spec, config.holdout_items)?;

    let model = ToyModel::random(
        config.synth.feature_dim,
        config.context,
        config.hidden,
        lex.class_count(),
        config.synth.seed.wrapping_add(17),
    );
    let (model, loss_curve) = train(model, &train_data, &lex, &config.train)?;

    let mut correct = 0usize;
    let mut frames = 0usize;
    let mut boundary_errors: Vec<f64> = Vec::new();
    let mut mae_weighted = 0.0f64;
    let mut duration_total = 0.0f64;
    for item in &holdout {
        let posteriogram = model.predict_posteriogram(&item.features)?;
        let targets = framewise_targets_from_alignment(
            &item.reference,
            item.features.frame_count(),
            item.features.frame_hop,
            &lex,
        )?;
        for (t, &label) in targets.labels().iter().enumerate() {
            frames += 1;
            if target_argmax(&posteriogram, t, lex.class_count()) == label.index() {
                correct += 1;
            }
        }

        let (aligned, _) = align_lyrics(&posteriogram, &item.lyrics, &lex)?;
        for (pred, truth) in aligned.segments.iter().zip(&item.reference.segments) {
            boundary_errors.push((pred.onset - truth.onset).abs());
            boundary_errors.push((pred.offset - truth.offset).abs());
        }
        let duration = posteriogram.duration();
        mae_weighted += mae(&aligned, &item.reference)? * duration;
        duration_total += duration;
    }

    boundary_errors.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let median_boundary_error = if boundary_errors.is_empty() {
        0.0
    } else {
        let mid = boundary_errors.len() / 2;
        if boundary_errors.len().is_multiple_of(2) {
            0.5 * (boundary_errors[mid - 1] + boundary_errors[mid])
        } else {
            boundary_errors[mid]
        }
    };

    Ok(DemoRun {
        report: DemoReport {
            loss_curve,
            holdout_accuracy: correct as f64 / frames.max(1) as f64,
            median_boundary_error,
            mae: mae_weighted / duration_total.max(f64::MIN_POSITIVE),
            frame_hop: config.synth.frame_hop,
            accuracy_threshold: config.accuracy_threshold,
            boundary_threshold: config.boundary_threshold_hops * config.synth.frame_hop,
        },
        model,
    })
}
