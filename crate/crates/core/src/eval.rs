//! Split-level evaluation with and without prompts and corruptions.

use serde::{Deserialize, Serialize};

use crate::corrupt::CorruptionSpec;
use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::metrics::{confusion_counts, ConfusionCounts, MetricsReport};
use crate::model::Segmenter;
use crate::pipeline::{prepare_record, PreparedSample, SampleCache};
use crate::prompt::PromptKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub split: String,
    pub prompt_kind: PromptKind,
    pub corruption: Option<CorruptionSpec>,
    pub batch_size: usize,
}

/// Forward prepared samples in batches and sum confusion counts against
/// their model-resolution masks.
pub fn evaluate_samples(model: &Segmenter, samples: &[&PreparedSample], batch_size: usize) -> Result<ConfusionCounts> {
    let view = model.detached();
    let mut counts = ConfusionCounts::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let images: Vec<_> = chunk.iter().map(|s| s.image.clone()).collect();
        let preds = view.predict(&images)?;
        for (pred, s) in preds.iter().zip(chunk) {
            counts += confusion_counts(pred, &s.mask)?;
        }
    }
    Ok(counts)
}

/// For every sample in the split: synthesize the prompt from ground
/// truth, overlay, optionally corrupt, forward, argmax, and accumulate
/// counts over the whole split (micro-aggregation).
pub fn run_eval(
    model: &Segmenter,
    manifest: &DatasetManifest,
    opts: &EvalOptions,
    cache: &SampleCache,
) -> Result<MetricsReport> {
    let records = manifest.split_samples(&opts.split);
    if records.is_empty() {
        return Err(Error::InvalidConfig(format!("split {:?} is empty", opts.split)));
    }
    if let Some(c) = &opts.corruption {
        c.validate()?;
    }
    let size = model.config.image_size();
    let view = model.detached();
    let mut counts = ConfusionCounts::default();
    for chunk in records.chunks(opts.batch_size.max(1)) {
        let prepared = chunk
            .iter()
            .map(|r| {
                let r = manifest.resolved(r);
                match &opts.corruption {
                    None => cache.get(&r, opts.prompt_kind, size),
                    Some(c) => prepare_record(&r, opts.prompt_kind, size, Some(c)).map(std::sync::Arc::new),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PreparedSample> = prepared.iter().map(|s| s.as_ref()).collect();
        counts += evaluate_samples(&view, &refs, refs.len())?;
    }
    Ok(MetricsReport::from_counts(
        counts,
        records.len(),
        &opts.split,
        opts.prompt_kind.as_str(),
        opts.corruption.map(|c| c.to_string()),
    ))
}
