//! Confusion bookkeeping and per-class IoU / Dice.

use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::data::{ClassMask, NUM_CLASSES};
use crate::error::{Error, Result};

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["no_go_zone", "dissection_zone"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: [ClassCounts; NUM_CLASSES],
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.classes.iter_mut().zip(rhs.classes) {
            a.true_positive += b.true_positive;
            a.false_positive += b.false_positive;
            a.false_negative += b.false_negative;
        }
    }
}

pub fn confusion_counts(pred: &ClassMask, gt: &ClassMask) -> Result<ConfusionCounts> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p == g {
            counts.classes[g as usize].true_positive += 1;
        } else {
            counts.classes[p as usize].false_positive += 1;
            counts.classes[g as usize].false_negative += 1;
        }
    }
    Ok(counts)
}

impl ConfusionCounts {
    /// TP / (TP + FP + FN).
    pub fn iou(&self, class: usize) -> Result<f64> {
        let c = self.classes[class];
        let union = c.true_positive + c.false_positive + c.false_negative;
        if union == 0 {
            return Err(Error::UndefinedMetric { class });
        }
        Ok(c.true_positive as f64 / union as f64)
    }

    /// 2TP / (2TP + FP + FN).
    pub fn dice(&self, class: usize) -> Result<f64> {
        let c = self.classes[class];
        let denom = 2 * c.true_positive + c.false_positive + c.false_negative;
        if denom == 0 {
            return Err(Error::UndefinedMetric { class });
        }
        Ok(2.0 * c.true_positive as f64 / denom as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub name: String,
    /// `None` when the class never occurs in prediction or ground truth.
    pub iou: Option<f64>,
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Counts summed over the split, then scored.
    Micro,
    /// Scores computed per image, then averaged over images where defined.
    PerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub prompt_kind: String,
    pub corruption: Option<String>,
    pub aggregation: Aggregation,
    pub per_class: Vec<ClassScore>,
    /// Unweighted mean over classes with a defined score.
    pub mean_iou: Option<f64>,
    pub mean_dice: Option<f64>,
    pub n_images: usize,
    pub counts: ConfusionCounts,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsReport {
    pub fn from_counts(
        counts: ConfusionCounts,
        n_images: usize,
        split: &str,
        prompt_kind: &str,
        corruption: Option<String>,
    ) -> Self {
        let per_class: Vec<ClassScore> = (0..NUM_CLASSES)
            .map(|k| ClassScore {
                name: CLASS_NAMES[k].to_string(),
                iou: counts.iou(k).ok(),
                dice: counts.dice(k).ok(),
            })
            .collect();
        Self {
            split: split.to_string(),
            prompt_kind: prompt_kind.to_string(),
            corruption,
            aggregation: Aggregation::Micro,
            mean_iou: mean(per_class.iter().map(|c| c.iou)),
            mean_dice: mean(per_class.iter().map(|c| c.dice)),
            per_class,
            n_images,
            counts,
        }
    }

    pub fn dissection_iou(&self) -> Option<f64> {
        self.per_class[crate::data::DISSECTION as usize].iou
    }

    pub fn table_header() -> String {
        format!(
            "{:<16} {:<14} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "prompt", "corruption", "DZ IoU", "DZ Dice", "NG IoU", "NG Dice", "mIoU", "mDice"
        )
    }

    /// One aligned row in percent, dissection zone first.
    pub fn table_row(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        let dz = &self.per_class[1];
        let ng = &self.per_class[0];
        let mut row = String::new();
        let _ = writeln!(
            row,
            "{:<16} {:<14} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            self.prompt_kind,
            self.corruption.as_deref().unwrap_or("-"),
            pct(dz.iou),
            pct(dz.dice),
            pct(ng.iou),
            pct(ng.dice),
            pct(self.mean_iou),
            pct(self.mean_dice)
        );
        row
    }
}

/// Per-image mean of class IoU, skipping images where the class is absent
/// from both masks. Provided for comparison with the micro-aggregated score.
pub fn per_image_iou(pairs: &[(ClassMask, ClassMask)], class: usize) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for (pred, gt) in pairs {
        if let Ok(v) = confusion_counts(pred, gt)?.iou(class) {
            scores.push(v);
        }
    }
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}
