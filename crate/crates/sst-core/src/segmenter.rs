//! Toy end-to-end segmentation pipeline over synthetic videos.
//!
//! A synthetic video is a set of moving shapes rendered as per-cell object
//! labels plus a pluggable embedding in place of a CNN backbone. Inference
//! follows the sliding-buffer protocol: for each frame past the reference
//! prefix, the encoder runs over the trailing buffer of frame embeddings and
//! masks, a per-pixel linear scoring head turns the concatenated features
//! into object scoremaps, and the frame's labels are the per-pixel argmax
//! over all generalized objects. Predicted masks feed forward into later
//! frames' buffers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode, AffinityTensor, EncoderConfig, EncoderParams, FrameValidity, ObjectMaskSequence,
};
use crate::error::{Error, Result};
use crate::posenc::{add_positional_encoding, PositionalEncodingSpec};
use crate::tensor::{Coord3, Dims3, Matrix, VideoFeatureTensor};

/// Shape of a synthetic object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectShape {
    Rect { height: usize, width: usize },
    Disc { radius: usize },
}

impl ObjectShape {
    fn extent(&self) -> (usize, usize) {
        match *self {
            ObjectShape::Rect { height, width } => (height, width),
            ObjectShape::Disc { radius } => (2 * radius + 1, 2 * radius + 1),
        }
    }

    fn covers(&self, dy: usize, dx: usize) -> bool {
        match *self {
            ObjectShape::Rect { .. } => true,
            ObjectShape::Disc { radius } => {
                let r = radius as i64;
                let dy = dy as i64 - r;
                let dx = dx as i64 - r;
                dy * dy + dx * dx <= r * r
            }
        }
    }
}

/// One synthetic object: its shape, starting top-left corner, and per-frame
/// integer translation schedule (cycled over the video; a single entry is a
/// constant velocity). Higher object ids render in front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ObjectShape,
    pub start: (usize, usize),
    #[serde(default)]
    pub motion: Vec<(i64, i64)>,
}

/// How cell embeddings are derived from the rendered labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FeatureMode {
    /// Cell of generalized object `o` carries the unit basis vector of
    /// channel `channel_offset + o`.
    OrthonormalId {
        #[serde(default)]
        channel_offset: usize,
    },
    /// Orthonormal ids plus seeded Gaussian noise of the given sigma.
    NoisyOrthonormal {
        sigma: f64,
        #[serde(default)]
        channel_offset: usize,
    },
    /// A rendered color per object in the first three channels.
    RgbRender,
}

/// Specification of a synthetic video: volume dims, channel count, objects,
/// feature mode, and the seed that fixes every random choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideoSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub objects: Vec<ObjectSpec>,
    pub feature_mode: FeatureMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    42
}

impl SyntheticVideoSpec {
    pub fn dims(&self) -> Dims3 {
        Dims3::new(self.frames, self.height, self.width)
    }

    /// Generalized object count: the annotated objects plus background.
    pub fn generalized_objects(&self) -> usize {
        self.objects.len() + 1
    }
}

/// Renders the spec into embeddings and ground-truth masks. Deterministic
/// given the seed; every frame of the returned mask sequence is marked as
/// reference since it is ground truth.
pub fn synthesize_video(
    spec: &SyntheticVideoSpec,
) -> Result<(VideoFeatureTensor, ObjectMaskSequence)> {
    let dims = spec.dims();
    if dims.frames == 0 || dims.height == 0 || dims.width == 0 || spec.channels == 0 {
        return Err(Error::InvalidDims("all axes must be >= 1".into()));
    }
    let objects = spec.generalized_objects();

    // Per-frame top-left positions, clamped to keep each shape in bounds.
    let mut labels = vec![0usize; dims.cells()];
    for (i, obj) in spec.objects.iter().enumerate() {
        let id = i + 1;
        let (eh, ew) = obj.shape.extent();
        if eh > dims.height || ew > dims.width {
            return Err(Error::InfeasibleGeometry(format!(
                "object {id} extent {eh}x{ew} exceeds frame {}x{}",
                dims.height, dims.width
            )));
        }
        if obj.start.0 + eh > dims.height || obj.start.1 + ew > dims.width {
            return Err(Error::InfeasibleGeometry(format!(
                "object {id} starts out of bounds"
            )));
        }
        let max_y = (dims.height - eh) as i64;
        let max_x = (dims.width - ew) as i64;
        let mut y = obj.start.0 as i64;
        let mut x = obj.start.1 as i64;
        for t in 0..dims.frames {
            if t > 0 && !obj.motion.is_empty() {
                let (dy, dx) = obj.motion[(t - 1) % obj.motion.len()];
                y = (y + dy).clamp(0, max_y);
                x = (x + dx).clamp(0, max_x);
            }
            for dy in 0..eh {
                for dx in 0..ew {
                    if obj.shape.covers(dy, dx) {
                        let p = Coord3::new(t, y as usize + dy, x as usize + dx);
                        labels[dims.cell_index(p)] = id;
                    }
                }
            }
        }
    }

    let masks = ObjectMaskSequence::new(
        dims,
        objects,
        labels,
        vec![FrameValidity::Reference; dims.frames],
    )?;

    let mut embeddings = VideoFeatureTensor::zeros(spec.channels, dims);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.feature_mode {
        FeatureMode::OrthonormalId { channel_offset } => {
            fill_orthonormal(&mut embeddings, &masks, channel_offset, objects)?;
        }
        FeatureMode::NoisyOrthonormal {
            sigma,
            channel_offset,
        } => {
            fill_orthonormal(&mut embeddings, &masks, channel_offset, objects)?;
            for v in embeddings.data_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * n;
            }
        }
        FeatureMode::RgbRender => {
            if spec.channels < 3 {
                return Err(Error::InvalidConfig(
                    "rgb_render needs at least 3 channels".into(),
                ));
            }
            let palette: Vec<[f64; 3]> = (0..objects)
                .map(|_| {
                    [
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                    ]
                })
                .collect();
            for p in dims.iter_cells() {
                let color = palette[masks.label(p)];
                for (c, v) in color.iter().enumerate() {
                    embeddings.set(c, p, *v);
                }
            }
        }
    }

    Ok((embeddings, masks))
}

fn fill_orthonormal(
    embeddings: &mut VideoFeatureTensor,
    masks: &ObjectMaskSequence,
    offset: usize,
    objects: usize,
) -> Result<()> {
    if offset + objects > embeddings.channels() {
        return Err(Error::ChannelAllocation(format!(
            "orthonormal ids need channels {}..{} but the tensor has {}",
            offset,
            offset + objects,
            embeddings.channels()
        )));
    }
    let dims = embeddings.dims();
    for p in dims.iter_cells() {
        embeddings.set(offset + masks.label(p), p, 1.0);
    }
    Ok(())
}

/// Per-pixel object scores for one frame, shape `(objects, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    objects: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ScoreMaps {
    pub fn new(objects: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != objects * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for {objects}x{height}x{width}",
                values.len()
            )));
        }
        Ok(ScoreMaps {
            objects,
            height,
            width,
            values,
        })
    }

    pub fn objects(&self) -> usize {
        self.objects
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, object: usize, y: usize, x: usize) -> f64 {
        self.values[(object * self.height + y) * self.width + x]
    }

    /// Per-pixel softmax over objects; each pixel's scores then sum to 1.
    pub fn normalized(&self) -> ScoreMaps {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let mut col: Vec<f64> = (0..self.objects).map(|o| self.get(o, y, x)).collect();
                crate::tensor::softmax_in_place(&mut col);
                for (o, v) in col.into_iter().enumerate() {
                    out.values[(o * self.height + y) * self.width + x] = v;
                }
            }
        }
        out
    }
}

/// Per-pixel argmax over all generalized-object scores, background included.
/// Ties break toward the lowest object id.
pub fn naive_inference(scores: &ScoreMaps) -> Vec<usize> {
    let mut labels = vec![0usize; scores.height * scores.width];
    for y in 0..scores.height {
        for x in 0..scores.width {
            let mut best = 0usize;
            let mut best_score = scores.get(0, y, x);
            for o in 1..scores.objects {
                let s = scores.get(o, y, x);
                if s > best_score {
                    best = o;
                    best_score = s;
                }
            }
            labels[y * scores.width + x] = best;
        }
    }
    labels
}

/// The per-pixel scoring head applied to the concatenated decoder input
/// (current-frame embeddings, per-layer affinity slices, encoder output).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScoringHead {
    /// Fixed weights that pass one layer's affinity block through unchanged.
    AffinityPassThrough { layer: usize },
    /// Seeded random linear map over the full concatenation.
    SeededLinear { seed: u64 },
}

impl ScoringHead {
    /// Materializes the head as an `objects x (C + L*O + C)` weight matrix.
    pub fn weights(&self, channels: usize, layers: usize, objects: usize) -> Result<Matrix> {
        let width = 2 * channels + layers * objects;
        match *self {
            ScoringHead::AffinityPassThrough { layer } => {
                if layer >= layers {
                    return Err(Error::InvalidConfig(format!(
                        "pass-through layer {layer} out of {layers}"
                    )));
                }
                let mut w = Matrix::zeros(objects, width);
                for o in 0..objects {
                    w.set(o, channels + layer * objects + o, 1.0);
                }
                Ok(w)
            }
            ScoringHead::SeededLinear { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data = (0..objects * width)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                Matrix::from_data(objects, width, data)
            }
        }
    }
}

/// Where encoder parameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParamsMode {
    /// Identity projections, zeroed feedforward: attention weights stay on
    /// the raw input features. Used by the exactness oracles.
    Identity,
    Seeded {
        seed: u64,
    },
}

/// Full pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub posenc: PositionalEncodingSpec,
    pub scoring: ScoringHead,
    pub params: ParamsMode,
    /// Leading frames whose ground-truth masks are given.
    pub reference_frames: usize,
    /// Feed ground-truth masks forward instead of predictions (debugging).
    pub teacher_forcing: bool,
}

impl PipelineConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        PipelineConfig {
            encoder,
            posenc: PositionalEncodingSpec::none(),
            scoring: ScoringHead::AffinityPassThrough { layer: 0 },
            params: ParamsMode::Identity,
            reference_frames: 1,
            teacher_forcing: false,
        }
    }
}

/// Output of the segmentation pipeline.
#[derive(Debug, Clone)]
pub struct SegmentationResult {
    /// Reference frames copied from the input, later frames predicted.
    pub masks: ObjectMaskSequence,
    /// Frame indices that were predicted (everything past the references).
    pub predicted_frames: Vec<usize>,
    /// Scoremaps per predicted frame, in `predicted_frames` order.
    pub scoremaps: Vec<ScoreMaps>,
    /// Affinity stack per predicted frame, over that frame's buffer.
    pub affinities: Vec<AffinityTensor>,
}

/// The trailing buffer of frames visible when predicting frame `t`: at most
/// `buffer_len` frames ending at `t` inclusive.
pub fn buffer_range(t: usize, buffer_len: usize) -> std::ops::RangeInclusive<usize> {
    t.saturating_sub(buffer_len - 1)..=t
}

fn slice_frames(
    x: &VideoFeatureTensor,
    range: std::ops::RangeInclusive<usize>,
) -> VideoFeatureTensor {
    let dims = x.dims();
    let frames = range.end() - range.start() + 1;
    let out_dims = Dims3::new(frames, dims.height, dims.width);
    let mut out = VideoFeatureTensor::zeros(x.channels(), out_dims);
    for c in 0..x.channels() {
        for (bt, t) in range.clone().enumerate() {
            for y in 0..dims.height {
                for x_ in 0..dims.width {
                    out.set(c, Coord3::new(bt, y, x_), x.get(c, Coord3::new(t, y, x_)));
                }
            }
        }
    }
    out
}

/// Runs sliding-buffer inference over a video.
///
/// `truth` supplies the masks of the `reference_frames` leading frames (and
/// of every frame under teacher forcing). Frames are predicted in order;
/// each prediction is appended to the working mask sequence before the next
/// frame runs.
pub fn segment(
    embeddings: &VideoFeatureTensor,
    truth: &ObjectMaskSequence,
    cfg: &PipelineConfig,
) -> Result<SegmentationResult> {
    let dims = embeddings.dims();
    if truth.dims() != dims {
        return Err(Error::ShapeMismatch(
            "mask dims differ from embedding dims".into(),
        ));
    }
    cfg.encoder.validate()?;
    if cfg.reference_frames == 0 || cfg.reference_frames > dims.frames {
        return Err(Error::MissingReferenceMask);
    }
    if truth.validity(0) != FrameValidity::Reference {
        return Err(Error::MissingReferenceMask);
    }
    let objects = truth.objects();
    let channels = embeddings.channels();
    if cfg.encoder.channels() != channels {
        return Err(Error::ShapeMismatch(format!(
            "encoder configured for {} channels, embeddings have {channels}",
            cfg.encoder.channels()
        )));
    }

    let params = match cfg.params {
        ParamsMode::Identity => EncoderParams::identity(&cfg.encoder),
        ParamsMode::Seeded { seed } => EncoderParams::seeded(&cfg.encoder, seed),
    };
    let head = cfg.scoring.weights(channels, cfg.encoder.layers, objects)?;

    // Working per-frame labels and validity; predictions are appended as
    // frames complete.
    let area = dims.height * dims.width;
    let mut work_labels: Vec<usize> = truth.labels().to_vec();
    let mut work_validity = vec![FrameValidity::Unknown; dims.frames];
    for v in work_validity.iter_mut().take(cfg.reference_frames) {
        *v = FrameValidity::Reference;
    }
    for f in cfg.reference_frames..dims.frames {
        for v in &mut work_labels[f * area..(f + 1) * area] {
            *v = 0;
        }
    }

    let tau = cfg.encoder.buffer_len;
    let mut predicted_frames = Vec::new();
    let mut scoremaps = Vec::new();
    let mut affinities = Vec::new();

    for t in cfg.reference_frames..dims.frames {
        let range = buffer_range(t, tau);
        let start = *range.start();
        let buf_frames = range.end() - start + 1;
        debug_assert!(buf_frames <= tau);
        let buf_dims = Dims3::new(buf_frames, dims.height, dims.width);

        let buffer = slice_frames(embeddings, range.clone());
        let buffer = add_positional_encoding(&buffer, &cfg.posenc)?;

        let mut buf_labels = Vec::with_capacity(buf_dims.cells());
        let mut buf_validity = Vec::with_capacity(buf_frames);
        for f in range.clone() {
            if f == t {
                buf_labels.extend(std::iter::repeat_n(0, area));
                buf_validity.push(FrameValidity::Unknown);
            } else if cfg.teacher_forcing {
                buf_labels.extend_from_slice(truth.frame(f));
                buf_validity.push(if work_validity[f] == FrameValidity::Reference {
                    FrameValidity::Reference
                } else {
                    FrameValidity::Predicted
                });
            } else {
                buf_labels.extend_from_slice(&work_labels[f * area..(f + 1) * area]);
                buf_validity.push(work_validity[f]);
            }
        }
        let buf_masks = ObjectMaskSequence::new(buf_dims, objects, buf_labels, buf_validity)?;

        let enc = encode(&buffer, &cfg.encoder, &params, &buf_masks)?;

        // Concatenate current-frame embeddings, the current temporal slice of
        // every layer's affinity, and the encoder output, per pixel.
        let cur = buf_frames - 1;
        let mut scores = vec![0.0; objects * area];
        for y in 0..dims.height {
            for x in 0..dims.width {
                let p_buf = Coord3::new(cur, y, x);
                let p_vid = Coord3::new(t, y, x);
                let mut concat = Vec::with_capacity(2 * channels + cfg.encoder.layers * objects);
                for c in 0..channels {
                    concat.push(embeddings.get(c, p_vid));
                }
                for l in 0..cfg.encoder.layers {
                    for o in 0..objects {
                        concat.push(enc.affinity.get(l, o, p_buf));
                    }
                }
                for c in 0..channels {
                    concat.push(enc.features.get(c, p_buf));
                }
                let s = head.matvec(&concat)?;
                for (o, v) in s.into_iter().enumerate() {
                    scores[(o * dims.height + y) * dims.width + x] = v;
                }
            }
        }
        let maps = ScoreMaps::new(objects, dims.height, dims.width, scores)?;
        let labels = naive_inference(&maps);
        work_labels[t * area..(t + 1) * area].copy_from_slice(&labels);
        work_validity[t] = FrameValidity::Predicted;

        predicted_frames.push(t);
        scoremaps.push(maps);
        affinities.push(enc.affinity);
    }

    let masks = ObjectMaskSequence::new(dims, objects, work_labels, work_validity)?;
    Ok(SegmentationResult {
        masks,
        predicted_frames,
        scoremaps,
        affinities,
    })
}

/// Mean per-object region similarity over the given frames: per frame the
/// intersection-over-union of the object's predicted and true cells, with
/// two empty masks counting as 1 and exactly one empty as 0. Returns one
/// value per annotated object (ids 1 and up).
pub fn evaluate_iou(
    predicted: &ObjectMaskSequence,
    truth: &ObjectMaskSequence,
    frames: &[usize],
) -> Result<Vec<f64>> {
    if predicted.dims() != truth.dims() {
        return Err(Error::ShapeMismatch(
            "predicted and truth dims differ".into(),
        ));
    }
    if predicted.objects() != truth.objects() {
        return Err(Error::ShapeMismatch(
            "predicted and truth object counts differ".into(),
        ));
    }
    let objects = truth.objects();
    let mut out = Vec::with_capacity(objects.saturating_sub(1));
    for o in 1..objects {
        let mut total = 0.0;
        for &f in frames {
            let (mut inter, mut union) = (0usize, 0usize);
            for (p, t) in predicted.frame(f).iter().zip(truth.frame(f)) {
                let pp = *p == o;
                let tt = *t == o;
                if pp && tt {
                    inter += 1;
                }
                if pp || tt {
                    union += 1;
                }
            }
            total += if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            };
        }
        out.push(if frames.is_empty() {
            1.0
        } else {
            total / frames.len() as f64
        });
    }
    Ok(out)
}
