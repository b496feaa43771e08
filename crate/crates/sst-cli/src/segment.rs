//! `sst segment`: sliding-buffer segmentation over a synthetic scenario or
//! tensor files, reporting per-object region similarity against the ground
//! truth and optionally writing label maps and scoremaps as tensor files.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use sst_core::attention::AttentionConfig;
use sst_core::encoder::{EncoderConfig, FrameValidity, ObjectMaskSequence};
use sst_core::io::{read_tensor, write_tensor, Dtype, StoredTensor};
use sst_core::patterns::{PatternSpec, Variant};
use sst_core::posenc::{PosEncKind, PositionalEncodingSpec};
use sst_core::segmenter::{
    evaluate_iou, segment, synthesize_video, ParamsMode, PipelineConfig, ScoringHead,
    SyntheticVideoSpec,
};
use sst_core::tensor::{Dims3, VideoFeatureTensor};

use crate::config::resolve;
use crate::{emit, CommonArgs};

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Synthetic scenario JSON (see README for the schema)
    #[arg(long, conflicts_with_all = ["embeddings", "masks"])]
    pub synthetic: Option<PathBuf>,
    /// Embedding tensor file, shape (C, T, H, W)
    #[arg(long, requires = "masks")]
    pub embeddings: Option<PathBuf>,
    /// Ground-truth label tensor file, shape (T, H, W)
    #[arg(long, requires = "embeddings")]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Temporal buffer length
    #[arg(long)]
    pub tau: Option<usize>,
    /// Strided kernel h
    #[arg(long)]
    pub h: Option<usize>,
    /// Local window radius r
    #[arg(long)]
    pub r: Option<usize>,
    /// Positional encoding kind
    #[arg(long, value_parser = ["none", "sinusoidal"])]
    pub posenc: Option<String>,
    /// Scoring head: fixed affinity pass-through or a seeded linear map
    #[arg(long, value_parser = ["passthrough", "seeded"], default_value = "passthrough")]
    pub scoring: String,
    /// Which layer's affinity the pass-through head reads
    #[arg(long, default_value_t = 0)]
    pub scoring_layer: usize,
    /// Encoder parameters: identity projections or seeded random
    #[arg(long, value_parser = ["identity", "seeded"], default_value = "identity")]
    pub params: String,
    /// Leading frames whose ground-truth masks are given
    #[arg(long)]
    pub ref_frames: Option<usize>,
    /// Feed ground-truth masks forward instead of predictions
    #[arg(long)]
    pub teacher_forcing: bool,
    /// Write the full label sequence (T, H, W) as a tensor file
    #[arg(long)]
    pub out_labels: Option<PathBuf>,
    /// Write predicted scoremaps (frames, objects, H, W) as a tensor file
    #[arg(long)]
    pub out_scores: Option<PathBuf>,
}

/// Synthetic scenario file: a video spec plus an optional reference-frame
/// count consumed by the pipeline.
#[derive(Deserialize)]
struct ScenarioFile {
    #[serde(flatten)]
    video: SyntheticVideoSpec,
    reference_frames: Option<usize>,
}

#[derive(Serialize)]
struct SegmentOutput {
    frames: usize,
    objects: usize,
    reference_frames: usize,
    predicted_frames: Vec<usize>,
    per_object_j: Vec<f64>,
    mean_j: f64,
}

pub fn run(args: &SegmentArgs) -> Result<(), String> {
    let file = args.common.file_config()?;

    let (embeddings, truth, scenario_refs) = load_inputs(args)?;
    let dims = embeddings.dims();
    let channels = embeddings.channels();

    let variant: Variant = resolve(args.variant.clone(), file.variant.clone(), "grid".into())
        .parse()
        .map_err(|e| format!("{e}"))?;
    let heads = resolve(args.heads, file.heads, 1);
    if heads == 0 || channels % heads != 0 {
        return Err(format!(
            "channels {channels} not divisible by heads {heads}"
        ));
    }
    let spec = PatternSpec::new(variant)
        .with_kernel(resolve(args.h, file.h, 2))
        .with_radius(resolve(args.r, file.r, 7));
    let attn = AttentionConfig::new(heads, channels / heads, spec);
    let layers = resolve(args.layers, file.layers, 3);
    let tau = resolve(args.tau, file.tau, 3);
    let encoder = EncoderConfig::new(layers, attn, tau);

    let posenc_kind: PosEncKind = resolve(args.posenc.clone(), file.posenc.clone(), "none".into())
        .parse()
        .map_err(|e| format!("{e}"))?;
    let mut posenc = PositionalEncodingSpec::none();
    posenc.kind = posenc_kind;

    let scoring = match args.scoring.as_str() {
        "seeded" => ScoringHead::SeededLinear {
            seed: args.common.seed,
        },
        _ => ScoringHead::AffinityPassThrough {
            layer: args.scoring_layer,
        },
    };
    let params = match args.params.as_str() {
        "seeded" => ParamsMode::Seeded {
            seed: args.common.seed,
        },
        _ => ParamsMode::Identity,
    };

    let cfg = PipelineConfig {
        encoder,
        posenc,
        scoring,
        params,
        reference_frames: args.ref_frames.or(scenario_refs).unwrap_or(1),
        teacher_forcing: args.teacher_forcing,
    };

    let result = segment(&embeddings, &truth, &cfg).map_err(|e| e.to_string())?;
    let per_object_j =
        evaluate_iou(&result.masks, &truth, &result.predicted_frames).map_err(|e| e.to_string())?;
    let mean_j = if per_object_j.is_empty() {
        1.0
    } else {
        per_object_j.iter().sum::<f64>() / per_object_j.len() as f64
    };

    if let Some(path) = &args.out_labels {
        let labels: Vec<f64> = result.masks.labels().iter().map(|l| *l as f64).collect();
        let stored = StoredTensor::new(
            vec![dims.frames, dims.height, dims.width],
            Dtype::F64,
            labels,
        )
        .map_err(|e| e.to_string())?;
        std::fs::write(path, write_tensor(&stored))
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    if let Some(path) = &args.out_scores {
        let objects = truth.objects();
        let frames = result.scoremaps.len();
        let mut values = Vec::with_capacity(frames * objects * dims.height * dims.width);
        for maps in &result.scoremaps {
            values.extend_from_slice(maps.values());
        }
        let stored = StoredTensor::new(
            vec![frames.max(1), objects, dims.height, dims.width],
            Dtype::F64,
            if frames == 0 {
                vec![0.0; objects * dims.height * dims.width]
            } else {
                values
            },
        )
        .map_err(|e| e.to_string())?;
        std::fs::write(path, write_tensor(&stored))
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }

    let mut text = format!(
        "frames: {}  objects: {}  references: {}  predicted: {}\n",
        dims.frames,
        truth.objects(),
        cfg.reference_frames,
        result.predicted_frames.len()
    );
    for (i, j) in per_object_j.iter().enumerate() {
        text.push_str(&format!("object {}: J = {:.3}\n", i + 1, j));
    }
    text.push_str(&format!("mean J = {mean_j:.3}\n"));

    let output = SegmentOutput {
        frames: dims.frames,
        objects: truth.objects(),
        reference_frames: cfg.reference_frames,
        predicted_frames: result.predicted_frames,
        per_object_j,
        mean_j,
    };
    emit(&args.common, &output, text)
}

fn load_inputs(
    args: &SegmentArgs,
) -> Result<(VideoFeatureTensor, ObjectMaskSequence, Option<usize>), String> {
    if let Some(path) = &args.synthetic {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let scenario: ScenarioFile =
            serde_json::from_str(&text).map_err(|e| format!("bad scenario JSON: {e}"))?;
        let (embeddings, truth) = synthesize_video(&scenario.video).map_err(|e| e.to_string())?;
        return Ok((embeddings, truth, scenario.reference_frames));
    }
    let (Some(emb_path), Some(mask_path)) = (&args.embeddings, &args.masks) else {
        return Err("provide --synthetic or --embeddings with --masks".into());
    };
    let emb_bytes =
        std::fs::read(emb_path).map_err(|e| format!("cannot read {}: {e}", emb_path.display()))?;
    let embeddings = read_tensor(&emb_bytes)
        .and_then(StoredTensor::into_video)
        .map_err(|e| e.to_string())?;
    let mask_bytes = std::fs::read(mask_path)
        .map_err(|e| format!("cannot read {}: {e}", mask_path.display()))?;
    let stored = read_tensor(&mask_bytes).map_err(|e| e.to_string())?;
    if stored.dims.len() != 3 {
        return Err(format!(
            "mask tensor must have 3 axes (T, H, W), found {}",
            stored.dims.len()
        ));
    }
    let dims = Dims3::new(stored.dims[0], stored.dims[1], stored.dims[2]);
    if dims != embeddings.dims() {
        return Err("mask dims differ from embedding dims".into());
    }
    let mut labels = Vec::with_capacity(stored.data.len());
    for v in &stored.data {
        if !v.is_finite() || *v < 0.0 || v.fract() != 0.0 {
            return Err(format!("mask value {v} is not a non-negative integer"));
        }
        labels.push(*v as usize);
    }
    let objects = labels.iter().copied().max().unwrap_or(0) + 1;
    let truth = ObjectMaskSequence::new(
        dims,
        objects,
        labels,
        vec![FrameValidity::Reference; dims.frames],
    )
    .map_err(|e| e.to_string())?;
    Ok((embeddings, truth, None))
}
