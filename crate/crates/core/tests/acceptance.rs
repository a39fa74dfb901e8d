//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use candle_core::{DType, Device, Tensor, Var};
use pdzseg_core::contour::{extract_contours, fill_contours};
use pdzseg_core::corrupt::{corrupt, CorruptionKind, CorruptionSpec, GAUSSIAN_NOISE_STD};
use pdzseg_core::data::{DatasetManifest, SampleRecord, DISSECTION, TRAIN};
use pdzseg_core::eval::evaluate_samples;
use pdzseg_core::metrics::confusion_counts;
use pdzseg_core::model::{DecoderConfig, EncoderConfig, LoraConfig, Parameterized};
use pdzseg_core::pipeline::{prepare_pair, PreparedSample};
use pdzseg_core::prompt::gen_prompt;
use pdzseg_core::service::{router, ModelEntry, ServiceState, SegmentResponse};
use pdzseg_core::synthetic::{generate_scenes, SceneKind};
use pdzseg_core::train::{build_mixed_dataset, ce_loss, cosine_lr, one_hot, MixSpec, TrainConfig, Trainer};
use pdzseg_core::{ClassMask, ExperimentConfig, ImageTensor, ModelConfig, PromptKind, Segmenter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn tensor_values(t: &Tensor) -> Vec<f64> {
    t.flatten_all()
        .and_then(|t| t.to_dtype(DType::F64))
        .and_then(|t| t.to_vec1::<f64>())
        .expect("tensor to host")
}

fn random_images(n: usize, size: usize, seed: u64) -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..size * size * 3).map(|_| rng.random::<f32>()).collect();
            ImageTensor::new(size, size, data).unwrap()
        })
        .collect()
}

fn lora_noop() -> Outcome {
    let mut adapted_cfg = ModelConfig::vit_base();
    adapted_cfg.encoder = EncoderConfig::vit_base(56);
    let mut base_cfg = adapted_cfg.clone();
    base_cfg.lora = None;
    let adapted = Segmenter::new(adapted_cfg, 7).map_err(e)?.detached();
    let base = Segmenter::new(base_cfg, 7).map_err(e)?.detached();
    check(adapted.encoder.has_adapters() && !base.encoder.has_adapters(), || {
        "adapter injection did not happen".into()
    })?;
    let mut worst = 0f64;
    for img in random_images(10, 56, 1) {
        let x = adapted.images_to_tensor(std::slice::from_ref(&img)).map_err(e)?;
        let a = adapted.encoder.extract_multilevel(&x).map_err(e)?;
        let b = base.encoder.extract_multilevel(&x).map_err(e)?;
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            let diff = (la - lb).and_then(|d| d.abs()).and_then(|d| d.max_all()).map_err(e)?;
            worst = worst.max(diff.to_scalar::<f32>().map_err(e)? as f64);
        }
    }
    check(worst < 1e-6, || format!("max abs diff {worst:e}"))?;
    Ok(format!("max abs diff {worst:e} over 10 images"))
}

fn tiny_f64_model() -> Result<Segmenter, String> {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            depth: 2,
            num_heads: 2,
            mlp_ratio: 2,
            levels: vec![1, 2],
            upsample: 2,
            pixel_mean: [0.5; 3],
            pixel_std: [0.25; 3],
        },
        lora: Some(LoraConfig {
            rank: 2,
            alpha: 2.0,
            init_std: 0.02,
        }),
        decoder: DecoderConfig {
            hidden_dim: 16,
            ..DecoderConfig::default()
        },
    };
    let mut model = Segmenter::with_dtype(cfg, 3, DType::F64, &Device::Cpu).map_err(e)?;
    // Zero-initialized adapter factors would hide the gradient of their partners.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    model.visit_mut("", &mut |name, p| {
        if name.ends_with("lora_b") {
            let shape = p.tensor().dims().to_vec();
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
            p.replace(Tensor::from_vec(data, shape, &Device::Cpu).unwrap()).unwrap();
        }
    });
    Ok(model)
}

fn gradient_fidelity() -> Outcome {
    let model = tiny_f64_model()?;
    let scenes = generate_scenes(SceneKind::SingleBlob, 2, 16, 16, 4);
    let images: Vec<_> = scenes.iter().map(|(i, _)| i.clone()).collect();
    let masks: Vec<_> = scenes.iter().map(|(_, m)| m.clone()).collect();
    let x = model.images_to_tensor(&images).map_err(e)?;
    let y = one_hot(&masks, 2, DType::F64, &Device::Cpu).map_err(e)?;
    let loss_of = |m: &Segmenter| -> f64 {
        ce_loss(&m.forward(&x).unwrap(), &y)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    };
    let loss = ce_loss(&model.forward(&x).map_err(e)?, &y).map_err(e)?;
    let grads = loss.backward().map_err(e)?;
    let vars: Vec<(String, Var)> = model.trainable_vars();
    let h = 1e-5;
    let mut worst = (0f64, String::new());
    let mut checked = 0usize;
    for (name, var) in &vars {
        let analytic = tensor_values(grads.get(var.as_tensor()).ok_or_else(|| format!("no gradient for {name}"))?);
        let original = var.as_detached_tensor().copy().map_err(e)?;
        let values = tensor_values(&original);
        for (i, &g) in analytic.iter().enumerate() {
            let probe = |delta: f64| -> f64 {
                let mut v = values.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, original.dims(), &Device::Cpu).unwrap()).unwrap();
                loss_of(&model)
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-5);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]: analytic {g:e} numeric {numeric:e}"));
            }
            checked += 1;
        }
        var.set(&original).map_err(e)?;
    }
    check(worst.0 < 1e-4, || format!("max rel error {:e} at {}", worst.0, worst.1))?;
    Ok(format!(
        "{checked} parameters in {} tensors, max rel error {:e}",
        vars.len(),
        worst.0
    ))
}

fn shape_pipeline() -> Outcome {
    let model = Segmenter::new(ModelConfig::vit_base(), 0).map_err(e)?.detached();
    let x = model.images_to_tensor(&random_images(1, 532, 2)).map_err(e)?;
    let tokens = model.encoder.embed(&x).map_err(e)?;
    check(tokens.dims() == [1, 1445, 768], || format!("tokens {:?}", tokens.dims()))?;
    let features = model.encoder.extract_multilevel(&x).map_err(e)?;
    check(features.levels.len() == 4, || format!("{} levels", features.levels.len()))?;
    for level in &features.levels {
        check(level.dims() == [1, 152, 152, 1536], || format!("level {:?}", level.dims()))?;
    }
    let logits = model.decoder.forward(&features, 532, 532).map_err(e)?;
    check(logits.dims() == [1, 532, 532, 2], || format!("logits {:?}", logits.dims()))?;
    Ok("1444 patches + class token, 4 x 152x152x1536, logits 532x532x2".into())
}

fn parameter_audit() -> Outcome {
    let mut cfg = ModelConfig::vit_base();
    cfg.encoder = EncoderConfig::vit_base(56);
    let model = Segmenter::new(cfg.clone(), 0).map_err(e)?;
    let enc = &cfg.encoder;
    let rank = cfg.lora.as_ref().unwrap().rank;
    let expected = enc.depth * 2 * rank * (enc.embed_dim + enc.embed_dim);
    let trainable: BTreeMap<String, usize> = model
        .trainable_vars()
        .into_iter()
        .map(|(n, v)| (n, v.elem_count()))
        .collect();
    let encoder_trainable: usize = trainable
        .iter()
        .filter(|(n, _)| n.starts_with("encoder."))
        .map(|(_, c)| c)
        .sum();
    check(encoder_trainable == 147_456 && expected == 147_456, || {
        format!("encoder trainable {encoder_trainable}, formula {expected}")
    })?;
    check(
        trainable
            .keys()
            .filter(|n| n.starts_with("encoder."))
            .all(|n| n.contains("lora_")),
        || "a non-adapter encoder tensor is trainable".into(),
    )?;
    let decoder_trainable: usize = trainable.iter().filter(|(n, _)| n.starts_with("decoder.")).map(|(_, c)| c).sum();
    let before = model.frozen_digest().map_err(e)?;
    let adapters_before: Vec<f64> = model
        .trainable_vars()
        .iter()
        .filter(|(n, _)| n.ends_with("lora_b"))
        .flat_map(|(_, v)| tensor_values(v.as_tensor()))
        .collect();

    let samples: Vec<PreparedSample> = generate_scenes(SceneKind::TwoBlob, 4, 56, 56, 8)
        .iter()
        .map(|(i, m)| prepare_pair(i, m, PromptKind::LongScribble, 56, None).unwrap())
        .collect();
    let mut trainer = Trainer::new(model, TrainConfig::default(), 50).map_err(e)?;
    for step in 0..50 {
        let batch: Vec<&PreparedSample> = (0..2).map(|j| &samples[(2 * step + j) % samples.len()]).collect();
        trainer.train_step(&batch).map_err(e)?;
    }
    let after = trainer.model.frozen_digest().map_err(e)?;
    check(before == after, || "frozen base tensors changed".into())?;
    let adapters_after: Vec<f64> = trainer
        .model
        .trainable_vars()
        .iter()
        .filter(|(n, _)| n.ends_with("lora_b"))
        .flat_map(|(_, v)| tensor_values(v.as_tensor()))
        .collect();
    check(adapters_before != adapters_after, || "adapters did not move".into())?;
    Ok(format!(
        "{encoder_trainable} encoder + {decoder_trainable} decoder trainable; base digest unchanged after 50 steps"
    ))
}

fn random_mask(rng: &mut impl Rng, size: usize) -> ClassMask {
    let density = rng.random_range(0.0..1.0);
    let labels = (0..size * size).map(|_| u8::from(rng.random_bool(density))).collect();
    ClassMask::new(size, size, labels).unwrap()
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut undefined = 0;
    for case in 0..100 {
        let pred = random_mask(&mut rng, 16);
        let gt = random_mask(&mut rng, 16);
        let counts = confusion_counts(&pred, &gt).map_err(e)?;
        for class in 0..2u8 {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
                match (p == class, g == class) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let (iou, dice) = (counts.iou(class as usize), counts.dice(class as usize));
            if tp + fp + fn_ == 0 {
                check(iou.is_err() && dice.is_err(), || format!("case {case}: empty union not undefined"))?;
                undefined += 1;
                continue;
            }
            let oracle_iou = tp as f64 / (tp + fp + fn_) as f64;
            let oracle_dice = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            let (iou, dice) = (iou.map_err(e)?, dice.map_err(e)?);
            check(iou == oracle_iou && dice == oracle_dice, || {
                format!("case {case} class {class}: {iou}/{dice} vs {oracle_iou}/{oracle_dice}")
            })?;
            check(dice >= iou, || format!("case {case}: dice {dice} < iou {iou}"))?;
        }
    }
    Ok(format!("100 pairs exact, {undefined} undefined class cases"))
}

/// Squared distance to the nearest non-zone pixel, border counting as outside.
fn brute_distance_sq(mask: &ClassMask) -> Vec<i64> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let zone = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask.is_zone(x as usize, y as usize);
    let mut outside = Vec::new();
    for y in -1..=h {
        for x in -1..=w {
            if !zone(x, y) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| zone(x + dx, y + dy)) {
                outside.push((x, y));
            }
        }
    }
    let mut out = vec![0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            if zone(x, y) {
                out[(y * w + x) as usize] = outside
                    .iter()
                    .map(|(ox, oy)| (ox - x).pow(2) + (oy - y).pow(2))
                    .min()
                    .unwrap_or(0);
            }
        }
    }
    out
}

fn prompt_geometry() -> Outcome {
    let size = 64;
    let scenes = generate_scenes(SceneKind::SingleBlob, 200, size, size, 21);
    for (i, (_, mask)) in scenes.iter().enumerate() {
        let inside = |p: &pdzseg_core::prompt::Point| {
            p.x() >= 0 && p.y() >= 0 && (p.x() as usize) < size && (p.y() as usize) < size
                && mask.is_zone(p.x() as usize, p.y() as usize)
        };
        let point = gen_prompt(PromptKind::Point, mask, 0).map_err(e)?;
        let p = point.points[0];
        check(inside(&p), || format!("blob {i}: point {p:?} outside"))?;
        let dist = brute_distance_sq(mask);
        let max = *dist.iter().max().unwrap();
        check(dist[p.y() as usize * size + p.x() as usize] == max, || {
            format!("blob {i}: point not at the distance maximum")
        })?;

        let long = gen_prompt(PromptKind::LongScribble, mask, 0).map_err(e)?;
        let short = gen_prompt(PromptKind::ShortScribble, mask, 0).map_err(e)?;
        for s in [&long, &short] {
            check(s.points.iter().all(inside), || format!("blob {i}: {} vertex outside", s.kind))?;
        }
        let target = 0.3 * long.arc_length();
        check((short.arc_length() - target).abs() <= 2.0, || {
            format!("blob {i}: short {:.2} vs 30% of long {:.2}", short.arc_length(), target)
        })?;

        let bbox = gen_prompt(PromptKind::Bbox, mask, 0).map_err(e)?;
        let (a, b) = (bbox.points[0], bbox.points[1]);
        let zone: Vec<(i64, i64)> = (0..size)
            .flat_map(|y| (0..size).map(move |x| (x, y)))
            .filter(|&(x, y)| mask.is_zone(x, y))
            .map(|(x, y)| (x as i64, y as i64))
            .collect();
        check(zone.iter().all(|&(x, y)| x >= a.x() && x <= b.x() && y >= a.y() && y <= b.y()), || {
            format!("blob {i}: bbox misses pixels")
        })?;
        let touches = [
            zone.iter().any(|p| p.0 == a.x()),
            zone.iter().any(|p| p.0 == b.x()),
            zone.iter().any(|p| p.1 == a.y()),
            zone.iter().any(|p| p.1 == b.y()),
        ];
        check(touches.iter().all(|&t| t), || format!("blob {i}: bbox not tight"))?;

        for kind in PromptKind::ALL {
            let again = gen_prompt(kind, mask, 0).map_err(e)?;
            check(again == gen_prompt(kind, mask, 0).map_err(e)?, || {
                format!("blob {i}: {kind} not deterministic")
            })?;
        }
    }
    Ok("200 blobs: point, scribbles, bbox and determinism hold".into())
}

fn prepared(kind: PromptKind, scene: SceneKind, n: usize, size: usize, seed: u64) -> Vec<PreparedSample> {
    generate_scenes(scene, n, size, size, seed)
        .iter()
        .map(|(i, m)| prepare_pair(i, m, kind, size, None).unwrap())
        .collect()
}

fn train_cycle(exp: &ExperimentConfig, train: &[PreparedSample], steps: usize, batch: usize) -> Result<Segmenter, String> {
    let model = Segmenter::new(exp.model_config(), exp.train.seed).map_err(e)?;
    let cfg = TrainConfig {
        batch_size: batch,
        ..exp.train.clone()
    };
    let mut trainer = Trainer::new(model, cfg, steps).map_err(e)?;
    for step in 0..steps {
        let batch: Vec<&PreparedSample> = (0..batch).map(|j| &train[(step * batch + j) % train.len()]).collect();
        trainer.train_step(&batch).map_err(e)?;
    }
    Ok(trainer.model)
}

fn heldout_iou(model: &Segmenter, samples: &[PreparedSample]) -> Result<f64, String> {
    let refs: Vec<&PreparedSample> = samples.iter().collect();
    evaluate_samples(model, &refs, 16)
        .map_err(e)?
        .iou(DISSECTION as usize)
        .map_err(e)
}

fn prompt_benefit() -> Outcome {
    let exp = ExperimentConfig::desk();
    let size = exp.encoder.image_size;
    let batch = exp.train.batch_size;
    let mut iou = BTreeMap::new();
    for kind in [PromptKind::None, PromptKind::LongScribble] {
        let train = prepared(kind, SceneKind::TwoBlob, 400, size, 1);
        let test = prepared(kind, SceneKind::TwoBlob, 100, size, 2);
        let model = train_cycle(&exp, &train, 500, batch)?;
        iou.insert(kind, heldout_iou(&model, &test)?);
    }
    let (none, long) = (iou[&PromptKind::None], iou[&PromptKind::LongScribble]);
    let detail = format!("held-out IoU without prompt {none:.4}, with long scribble {long:.4}");
    check(none <= 0.60 && long >= 0.90, || detail.clone())?;
    Ok(detail)
}

fn overfit() -> Outcome {
    let exp = ExperimentConfig::desk();
    let size = exp.encoder.image_size;
    let train = prepared(PromptKind::None, SceneKind::SingleBlob, 10, size, 3);
    let model = train_cycle(&exp, &train, 200, 10)?;
    let iou = heldout_iou(&model, &train)?;
    check(iou >= 0.95, || format!("train IoU {iou:.4}"))?;
    Ok(format!("train IoU {iou:.4} after 200 steps"))
}

fn mean_abs_dev(a: &ImageTensor, b: &ImageTensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() as f64)
        .sum::<f64>()
        / a.data().len() as f64
}

fn corruption_suite() -> Outcome {
    let (image, _) = generate_scenes(SceneKind::TwoBlob, 1, 96, 96, 5).remove(0);
    let mut lines = Vec::new();
    for kind in CorruptionKind::ALL {
        let mut devs = Vec::new();
        for severity in 1..=5 {
            let spec = CorruptionSpec::new(kind, severity, 42).map_err(e)?;
            let out = corrupt(&image, &spec).map_err(e)?;
            check(out == corrupt(&image, &spec).map_err(e)?, || format!("{spec} not deterministic"))?;
            check(out.data().iter().all(|v| (0.0..=1.0).contains(v)), || format!("{spec} out of range"))?;
            devs.push(mean_abs_dev(&image, &out));
        }
        check(devs.windows(2).all(|w| w[1] >= w[0]), || format!("{kind} deviation not monotone: {devs:?}"))?;
        lines.push(format!("{kind} {:.3}..{:.3}", devs[0], devs[4]));
    }
    let gray = ImageTensor::filled(128, 128, [0.5; 3]);
    let noisy = corrupt(&gray, &CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, 9).map_err(e)?).map_err(e)?;
    let n = noisy.data().len() as f64;
    let mean = noisy.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (noisy.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let target = GAUSSIAN_NOISE_STD[2] as f64;
    check((std - target).abs() <= 0.05 * target, || format!("noise std {std:.4} vs {target}"))?;
    Ok(format!("{}; noise std {std:.4} (target {target})", lines.join(", ")))
}

fn schedule_and_mixing() -> Outcome {
    let total = 1000;
    let endpoints = [
        cosine_lr(0, total, 1e-3).map_err(e)?,
        cosine_lr(total / 2, total, 1e-3).map_err(e)?,
        cosine_lr(total, total, 1e-3).map_err(e)?,
    ];
    check(
        endpoints[0] == 1e-3 && (endpoints[1] - 5e-4).abs() < 1e-18 && endpoints[2] == 0.0,
        || format!("cosine endpoints {endpoints:?}"),
    )?;
    let n = 1480;
    let samples: Vec<SampleRecord> = (0..n)
        .map(|i| SampleRecord {
            sample_id: format!("s{i:04}"),
            video_id: format!("v{}", i / 10),
            image_path: PathBuf::from(format!("images/s{i:04}.png")),
            mask_path: PathBuf::from(format!("masks/s{i:04}.png")),
        })
        .collect();
    let videos = (0..n / 10).map(|v| format!("v{v}")).collect();
    let manifest = DatasetManifest::new(samples, BTreeMap::from([(TRAIN.to_string(), videos)]));
    let mut regimes: Vec<(String, MixSpec, BTreeMap<PromptKind, f64>)> = [0.6f64, 0.5, 0.4]
        .into_iter()
        .map(|p| {
            (
                format!("{}:{}", (p * 10.0) as u32, ((1.0 - p) * 10.0).round() as u32),
                MixSpec::ratio(PromptKind::LongScribble, p),
                BTreeMap::from([(PromptKind::LongScribble, p), (PromptKind::None, 1.0 - p)]),
            )
        })
        .collect();
    regimes.push((
        "25% each".into(),
        MixSpec::four_way(),
        [PromptKind::None, PromptKind::ShortScribble, PromptKind::LongScribble, PromptKind::Bbox]
            .into_iter()
            .map(|k| (k, 0.25))
            .collect(),
    ));
    for (label, mix, expected) in &regimes {
        let items = build_mixed_dataset(&manifest, mix, 3).map_err(e)?;
        check(items.len() == n, || format!("{label}: {} items", items.len()))?;
        for (kind, frac) in expected {
            let got = items.iter().filter(|(_, k)| k == kind).count() as f64;
            check((got - frac * n as f64).abs() <= 1.0, || format!("{label}: {kind} {got}"))?;
        }
    }
    Ok("cosine 0.001/0.0005/0; 6:4, 5:5, 4:6 and 25% mixes exact on 1480 samples".into())
}

fn png_base64(image: &ImageTensor) -> String {
    let mut bytes = Vec::new();
    image
        .to_rgb8()
        .write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .unwrap();
    B64.encode(bytes)
}

async fn post_segment(app: axum::Router, body: String) -> Result<SegmentResponse, String> {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let req = axum::http::Request::post("/v1/segment")
        .header("content-type", "application/json")
        .body(axum::body::Body::from(body))
        .map_err(e)?;
    let res = app.oneshot(req).await.map_err(e)?;
    let status = res.status();
    let bytes = res.into_body().collect().await.map_err(e)?.to_bytes();
    check(status.is_success(), || format!("status {status}: {}", String::from_utf8_lossy(&bytes)))?;
    serde_json::from_slice(&bytes).map_err(e)
}

fn service_contract() -> Outcome {
    let mut exp = ExperimentConfig::desk();
    exp.encoder.image_size = 32;
    exp.encoder.patch_size = 8;
    let model = Segmenter::new(exp.model_config(), 1).map_err(e)?;
    let entry = ModelEntry::new("desk", &model).map_err(e)?;
    let state = Arc::new(ServiceState::new(vec![entry], 2).map_err(e)?);
    let (image, mask) = generate_scenes(SceneKind::TwoBlob, 1, 90, 90, 6).remove(0);
    let image = image.resize_bilinear(53, 71);
    let mask = mask.resize_nearest(53, 71);
    let prompt = gen_prompt(PromptKind::LongScribble, &mask, 0).map_err(e)?;
    let body = serde_json::json!({ "image": png_base64(&image), "prompt": prompt.to_document() }).to_string();
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(e)?;
    let (first, second) = runtime.block_on(async {
        let a = post_segment(router(state.clone()), body.clone()).await?;
        let b = post_segment(router(state.clone()), body.clone()).await?;
        Ok::<_, String>((a, b))
    })?;
    check((first.width, first.height) == (71, 53), || format!("reported {}x{}", first.width, first.height))?;
    let decoded = image::load_from_memory(&B64.decode(&first.mask).map_err(e)?).map_err(e)?;
    check((decoded.width(), decoded.height()) == (71, 53), || {
        format!("mask PNG {}x{}", decoded.width(), decoded.height())
    })?;
    check(first.mask == second.mask && first.contours == second.contours, || {
        "repeated requests differ".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..50 {
        let side = rng.random_range(16..80);
        let (_, m) = generate_scenes(SceneKind::SingleBlob, 1, side, side, 100 + i).remove(0);
        let filled = fill_contours(&extract_contours(&m), side, side);
        check(filled == m, || format!("contour round trip failed on mask {i} ({side}px)"))?;
    }
    Ok("71x53 mask, byte-identical repeats; 50 contour round trips".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 11] = [
        ("adapter no-op at init", lora_noop, Duration::from_secs(60)),
        ("gradient fidelity", gradient_fidelity, Duration::from_secs(300)),
        ("shape pipeline", shape_pipeline, Duration::from_secs(60)),
        ("trainable-parameter audit", parameter_audit, Duration::from_secs(300)),
        ("metric oracle", metric_oracle, Duration::from_secs(60)),
        ("prompt geometry", prompt_geometry, Duration::from_secs(120)),
        ("prompt benefit", prompt_benefit, Duration::from_secs(900)),
        ("overfit sanity", overfit, Duration::from_secs(600)),
        ("corruption suite", corruption_suite, Duration::from_secs(120)),
        ("schedule and mixing", schedule_and_mixing, Duration::from_secs(60)),
        ("service contract", service_contract, Duration::from_secs(120)),
    ];
    let only: Option<Vec<usize>> = std::env::var("PDZSEG_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *budget => Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{:.1}s]", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {why} [{:.1}s]", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
