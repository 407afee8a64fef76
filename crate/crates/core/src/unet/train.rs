use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AttentionUNet;
use crate::data::{Mask, Patch, PatchSet, Split};
use crate::nn::{bce_loss, Adam, AdamConfig, Confusion, Mode, Module, Tensor};
use crate::{Error, Result};

/// Patches per forward pass when only predicting.
const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, batch: 8, seed: 0, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-pixel BCE over the epoch.
    pub loss: f64,
    /// Pixel accuracy of the train-mode predictions seen during the epoch.
    pub train_oa: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// Tab-separated `epoch  loss  train_oa` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tloss\ttrain_oa\n");
        for e in &self.epochs {
            writeln!(out, "{}\t{:.6}\t{:.6}", e.epoch, e.loss, e.train_oa).unwrap();
        }
        out
    }
}

fn input_batch(patches: &[&Patch]) -> Result<Tensor> {
    Tensor::stack(&patches.iter().map(|p| &p.input).collect::<Vec<_>>())
}

fn target_batch(patches: &[&Patch]) -> Result<Tensor> {
    let p = patches[0].mask.height();
    let data = patches.iter().flat_map(|p| p.mask.data().iter().map(|&v| v as f64)).collect();
    Tensor::new(&[patches.len(), 1, p, patches[0].mask.width()], data)
}

fn check_channels(model: &AttentionUNet, set: &PatchSet) -> Result<()> {
    if set.channels != model.config().in_channels {
        return Err(Error::Shape(format!(
            "patches have {} channels, model expects {}",
            set.channels,
            model.config().in_channels
        )));
    }
    Ok(())
}

pub fn train(model: &mut AttentionUNet, set: &PatchSet, cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(model, set, cfg, &mut |_| {})
}

/// Mini-batch BCE with Adam over the training split. The batch order is a
/// fixed function of `cfg.seed`, so equal inputs give bit-identical models.
/// `on_epoch` sees each log entry as soon as the epoch finishes.
pub fn train_with(
    model: &mut AttentionUNet,
    set: &PatchSet,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainLog> {
    let items = set.of_split(Split::Train);
    if items.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    check_channels(model, set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut confusion = Confusion::default();
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Patch> = chunk.iter().map(|&i| items[i]).collect();
            let x = input_batch(&batch)?;
            let y = target_batch(&batch)?;
            let (pred, cache) = model.forward(&x, Mode::Train)?;
            let (loss, grad) = bce_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            let plane = pred.len() / batch.len();
            for (p, probs) in batch.iter().zip(pred.data().chunks_exact(plane)) {
                let m = Mask::from_probabilities(p.mask.height(), p.mask.width(), probs)?;
                confusion.merge(&Confusion::from_masks(&m, &p.mask)?);
            }
            model.zero_grad();
            model.backward(&cache, &grad)?;
            model.commit_stats(&cache);
            adam.step(model)?;
        }
        let entry = EpochLog { epoch, loss: loss_sum / items.len() as f64, train_oa: confusion.overall_accuracy() };
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    Ok(log)
}

/// Thresholded (≥ 0.5) evaluation-mode predictions for every patch of `split`.
pub fn predict_split(model: &AttentionUNet, set: &PatchSet, split: Split) -> Result<Vec<Mask>> {
    check_channels(model, set)?;
    let items = set.of_split(split);
    let mut masks = Vec::with_capacity(items.len());
    for chunk in items.chunks(EVAL_BATCH) {
        let pred = model.predict(&input_batch(chunk)?)?;
        let plane = pred.len() / chunk.len();
        for (p, probs) in chunk.iter().zip(pred.data().chunks_exact(plane)) {
            masks.push(Mask::from_probabilities(p.mask.height(), p.mask.width(), probs)?);
        }
    }
    Ok(masks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchScore {
    pub row: usize,
    pub col: usize,
    pub confusion: Confusion,
}

/// Pixel counts summed over every patch before any ratio is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub per_patch: Vec<PatchScore>,
}

impl EvalReport {
    pub fn overall_accuracy(&self) -> f64 {
        self.confusion.overall_accuracy()
    }

    pub fn iou(&self) -> f64 {
        self.confusion.iou()
    }

    /// Tab-separated per-patch table with a header line.
    pub fn table(&self) -> String {
        let mut out = String::from("patch\trow\tcol\toa\tiou\n");
        for (i, s) in self.per_patch.iter().enumerate() {
            writeln!(out, "{i}\t{}\t{}\t{:.6}\t{:.6}", s.row, s.col, s.confusion.overall_accuracy(), s.confusion.iou())
                .unwrap();
        }
        out
    }

    /// `OA=<6 decimals> IoU=<6 decimals>`.
    pub fn summary_line(&self) -> String {
        format!("OA={:.6} IoU={:.6}", self.overall_accuracy(), self.iou())
    }
}

/// Scores `predictions` against the masks of `patches`, pairwise.
pub fn evaluate_predictions(patches: &[&Patch], predictions: &[Mask]) -> Result<EvalReport> {
    if patches.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    if patches.len() != predictions.len() {
        return Err(Error::Shape(format!("{} patches but {} predictions", patches.len(), predictions.len())));
    }
    let mut confusion = Confusion::default();
    let mut per_patch = Vec::with_capacity(patches.len());
    for (p, pred) in patches.iter().zip(predictions) {
        let c = Confusion::from_masks(pred, &p.mask)?;
        confusion.merge(&c);
        per_patch.push(PatchScore { row: p.row, col: p.col, confusion: c });
    }
    Ok(EvalReport { confusion, per_patch })
}

pub fn evaluate(model: &AttentionUNet, set: &PatchSet, split: Split) -> Result<EvalReport> {
    if set.count(split) == 0 {
        return Err(Error::Data(format!("{split} split is empty")));
    }
    let predictions = predict_split(model, set, split)?;
    evaluate_predictions(&set.of_split(split), &predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{extract_patches, split, synth_scene};
    use crate::nn::{AdamConfig, Param};
    use crate::unet::AttentionUNetConfig;

    fn scene_patches(seed: u64, size: usize, patch: usize) -> PatchSet {
        let (img, mask) = synth_scene(seed, size, size, 6, 4.0).unwrap();
        extract_patches(&img.to_tensor(), &mask, patch, patch).unwrap()
    }

    fn params(model: &AttentionUNet) -> Vec<f64> {
        let mut v = Vec::new();
        model.visit_params("", &mut |_, p: &Param| v.extend_from_slice(p.value.data()));
        v
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let set = scene_patches(1, 64, 16);
        let mut model = AttentionUNet::new(&AttentionUNetConfig::new(1, &[2, 4]), 0).unwrap();
        let before = params(&model);
        let cfg = TrainConfig { epochs: 1, adam: AdamConfig { lr: 0.0, ..Default::default() }, ..Default::default() };
        let log = train(&mut model, &set, &cfg).unwrap();
        assert_eq!(log.epochs.len(), 1);
        assert!(log.to_tsv().lines().count() == 2);
        assert_eq!(params(&model), before);
    }

    #[test]
    fn overfits_four_patches() {
        let set = scene_patches(7, 64, 32);
        assert_eq!(set.len(), 4);
        let mut model = AttentionUNet::new(&AttentionUNetConfig::new(1, &[4, 8]), 3).unwrap();
        let cfg = TrainConfig { epochs: 200, batch: 4, seed: 1, adam: AdamConfig { lr: 1e-2, ..Default::default() } };
        let log = train(&mut model, &set, &cfg).unwrap();
        let last = log.epochs.last().unwrap();
        assert!(last.train_oa >= 0.99, "{last:?}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let set = scene_patches(2, 64, 16);
        let run = || {
            let mut model = AttentionUNet::new(&AttentionUNetConfig::new(1, &[2, 4]), 5).unwrap();
            train(&mut model, &set, &TrainConfig { epochs: 2, batch: 3, ..Default::default() }).unwrap();
            params(&model)
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn empty_split_is_data_error() {
        let mut set = scene_patches(3, 32, 16);
        for p in &mut set.items {
            p.split = Split::Test;
        }
        let mut model = AttentionUNet::new(&AttentionUNetConfig::new(1, &[2, 4]), 0).unwrap();
        assert!(matches!(train(&mut model, &set, &TrainConfig::default()), Err(Error::Data(_))));
        let set = split(scene_patches(3, 32, 16), 0.5, 0).unwrap();
        let mut only_train = set.clone();
        only_train.items.retain(|p| p.split == Split::Train);
        assert!(matches!(evaluate(&model, &only_train, Split::Test), Err(Error::Data(_))));
    }

    #[test]
    fn majority_class_model() {
        let set = scene_patches(4, 64, 32);
        let mut model = AttentionUNet::new(&AttentionUNetConfig::new(1, &[2, 4]), 0).unwrap();
        model.head.weight.value.fill(0.0);
        model.head.bias.as_mut().unwrap().value.fill(-30.0);
        let report = evaluate(&model, &set, Split::Train).unwrap();
        let total: usize = set.items.iter().map(|p| p.mask.data().len()).sum();
        let negatives: usize = set.items.iter().map(|p| p.mask.data().iter().filter(|&&v| v == 0).count()).sum();
        assert_eq!(report.overall_accuracy(), negatives as f64 / total as f64);
    }

    #[test]
    fn ground_truth_predictions_score_one() {
        let set = scene_patches(5, 64, 32);
        let items = set.of_split(Split::Train);
        let masks: Vec<Mask> = items.iter().map(|p| p.mask.clone()).collect();
        let report = evaluate_predictions(&items, &masks).unwrap();
        assert_eq!(report.summary_line(), format!("OA=1.000000 IoU={:.6}", 1.0));
    }

    #[test]
    fn micro_average_equals_concatenated_oa() {
        let set = scene_patches(6, 64, 32);
        let model = AttentionUNet::new(&AttentionUNetConfig::new(1, &[2, 4]), 9).unwrap();
        let report = evaluate(&model, &set, Split::Train).unwrap();
        let preds = predict_split(&model, &set, Split::Train).unwrap();
        let (mut correct, mut total) = (0usize, 0usize);
        for (p, m) in set.items.iter().zip(&preds) {
            correct += p.mask.data().iter().zip(m.data()).filter(|(a, b)| a == b).count();
            total += m.data().len();
        }
        assert_eq!(report.overall_accuracy(), correct as f64 / total as f64);
        assert_eq!(report.per_patch.len(), 4);
    }
}
