//! Transformer-style encoder over video feature volumes.
//!
//! Each layer is multi-head sparse attention followed by a position-wise
//! feedforward, both wrapped in skip connections with post-norm layer
//! normalization over channels. Alongside the features, every layer's
//! attention weights are reduced into per-object affinity values: for each
//! cell, the maximum weight it puts on an earlier-frame cell labeled with the
//! object, zero when no such cell is connected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    multi_head_sparse, AttentionConfig, AttentionParams, CellWeights, HeadWeights,
};
use crate::error::{Error, Result};
use crate::tensor::{Coord3, Dims3, Matrix, VideoFeatureTensor};

/// Strided phase assignment across the stack: phases split across heads
/// within every layer, or whole layers alternating between the phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseAssignment {
    #[default]
    PerHead,
    AlternatingLayers,
}

/// Encoder stack configuration. The same attention configuration is used by
/// every layer.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub layers: usize,
    pub attention: AttentionConfig,
    pub ffn_hidden: usize,
    pub norm_eps: f64,
    /// Temporal buffer length the encoder expects its input to span.
    pub buffer_len: usize,
    pub phase_assignment: PhaseAssignment,
}

impl EncoderConfig {
    pub fn new(layers: usize, attention: AttentionConfig, buffer_len: usize) -> Self {
        let channels = attention.channels();
        EncoderConfig {
            layers,
            attention,
            ffn_hidden: 2 * channels,
            norm_eps: 1e-5,
            buffer_len,
            phase_assignment: PhaseAssignment::PerHead,
        }
    }

    pub fn channels(&self) -> usize {
        self.attention.channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidConfig(
                "encoder needs at least one layer".into(),
            ));
        }
        if self.buffer_len == 0 {
            return Err(Error::InvalidConfig("temporal buffer must be >= 1".into()));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::InvalidConfig(
                "feedforward hidden width must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters of one encoder layer: attention projections, the two
/// feedforward maps, and the per-norm channel gains.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub attention: AttentionParams,
    /// First feedforward map, `ffn_hidden x channels`.
    pub ffn_in: Matrix,
    /// Second feedforward map, `channels x ffn_hidden`.
    pub ffn_out: Matrix,
    pub norm1_gain: Vec<f64>,
    pub norm2_gain: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Deterministic seeded initialization: projection and feedforward
    /// weights uniform in [-1/sqrt(C), 1/sqrt(C)], norm gains 1.
    pub fn seeded(cfg: &EncoderConfig, seed: u64) -> Self {
        let c = cfg.channels();
        let f = cfg.ffn_hidden;
        let bound = 1.0 / (c as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            Matrix::from_data(rows, cols, data).expect("sized to shape")
        };
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                attention: AttentionParams {
                    query: mat(c, c),
                    key: mat(c, c),
                    value: mat(c, c),
                    output: mat(c, c),
                },
                ffn_in: mat(f, c),
                ffn_out: mat(c, f),
                norm1_gain: vec![1.0; c],
                norm2_gain: vec![1.0; c],
            })
            .collect();
        EncoderParams { layers }
    }

    /// Identity attention projections with a zeroed feedforward, so layer
    /// outputs are normalized attention mixes of the raw input. Oracle tests
    /// use this to keep attention weights on the unprojected features.
    pub fn identity(cfg: &EncoderConfig) -> Self {
        let c = cfg.channels();
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                attention: AttentionParams::identity(c),
                ffn_in: Matrix::zeros(cfg.ffn_hidden, c),
                ffn_out: Matrix::zeros(c, cfg.ffn_hidden),
                norm1_gain: vec![1.0; c],
                norm2_gain: vec![1.0; c],
            })
            .collect();
        EncoderParams { layers }
    }

    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        if self.layers.len() != cfg.layers {
            return Err(Error::ParamShape(format!(
                "{} layer parameter sets for {} layers",
                self.layers.len(),
                cfg.layers
            )));
        }
        let c = cfg.channels();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.attention.validate(c)?;
            if layer.ffn_in.rows() != cfg.ffn_hidden || layer.ffn_in.cols() != c {
                return Err(Error::ParamShape(format!("layer {i}: ffn_in shape")));
            }
            if layer.ffn_out.rows() != c || layer.ffn_out.cols() != cfg.ffn_hidden {
                return Err(Error::ParamShape(format!("layer {i}: ffn_out shape")));
            }
            if layer.norm1_gain.len() != c || layer.norm2_gain.len() != c {
                return Err(Error::ParamShape(format!("layer {i}: norm gain length")));
            }
        }
        Ok(())
    }
}

/// How a frame's mask entry came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameValidity {
    Reference,
    Predicted,
    Unknown,
}

/// Integer object labels per spatiotemporal cell, 0 = background, with a
/// per-frame validity flag: reference masks are given, predicted masks were
/// produced by earlier inference steps, unknown frames carry no labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMaskSequence {
    dims: Dims3,
    objects: usize,
    labels: Vec<usize>,
    validity: Vec<FrameValidity>,
}

impl ObjectMaskSequence {
    pub fn new(
        dims: Dims3,
        objects: usize,
        labels: Vec<usize>,
        validity: Vec<FrameValidity>,
    ) -> Result<Self> {
        if labels.len() != dims.cells() {
            return Err(Error::ShapeMismatch(format!(
                "label count {} != cell count {}",
                labels.len(),
                dims.cells()
            )));
        }
        if validity.len() != dims.frames {
            return Err(Error::ShapeMismatch(format!(
                "{} validity flags for {} frames",
                validity.len(),
                dims.frames
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= objects) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                objects,
            });
        }
        if !validity.iter().any(|v| *v != FrameValidity::Unknown) {
            return Err(Error::MissingReferenceMask);
        }
        Ok(ObjectMaskSequence {
            dims,
            objects,
            labels,
            validity,
        })
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    /// Generalized object count, background included.
    pub fn objects(&self) -> usize {
        self.objects
    }

    pub fn label(&self, p: Coord3) -> usize {
        self.labels[self.dims.cell_index(p)]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn validity(&self, frame: usize) -> FrameValidity {
        self.validity[frame]
    }

    /// Labels of one frame as an `H x W` slice.
    pub fn frame(&self, t: usize) -> &[usize] {
        let area = self.dims.height * self.dims.width;
        &self.labels[t * area..(t + 1) * area]
    }
}

/// Per-layer, per-object affinity values, shape `(layers, objects, frames,
/// height, width)`, every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityTensor {
    layers: usize,
    objects: usize,
    dims: Dims3,
    data: Vec<f64>,
}

impl AffinityTensor {
    fn zeros(layers: usize, objects: usize, dims: Dims3) -> Self {
        AffinityTensor {
            layers,
            objects,
            dims,
            data: vec![0.0; layers * objects * dims.cells()],
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn objects(&self) -> usize {
        self.objects
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn offset(&self, layer: usize, object: usize, p: Coord3) -> usize {
        (layer * self.objects + object) * self.dims.cells() + self.dims.cell_index(p)
    }

    pub fn get(&self, layer: usize, object: usize, p: Coord3) -> f64 {
        self.data[self.offset(layer, object, p)]
    }

    fn set(&mut self, layer: usize, object: usize, p: Coord3, value: f64) {
        let i = self.offset(layer, object, p);
        self.data[i] = value;
    }
}

/// Affinity of cell `p` for `object` given one head's weight row: the
/// maximum weight over connected cells at strictly earlier frames whose mask
/// label is the object, defaulting to zero when the set is empty. Unknown
/// frames never contribute.
pub fn object_affinity(
    row: &CellWeights,
    masks: &ObjectMaskSequence,
    p: Coord3,
    object: usize,
) -> f64 {
    let mut best = 0.0f64;
    for &(q, w) in row {
        if q.t < p.t && masks.validity(q.t) != FrameValidity::Unknown && masks.label(q) == object {
            best = best.max(w);
        }
    }
    best
}

fn layer_norm(row: &mut [f64], gain: &[f64], eps: f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for (v, g) in row.iter_mut().zip(gain) {
        *v = (*v - mean) * inv * g;
    }
}

/// One encoder layer: `y = Norm(x + MHA(x))` then `Norm(y + FFN(y))`,
/// position-wise, returning the per-head attention weights alongside.
pub fn encoder_layer(
    x: &VideoFeatureTensor,
    cfg: &EncoderConfig,
    params: &LayerParams,
    forced_phase: Option<crate::patterns::StridedPhase>,
) -> Result<(VideoFeatureTensor, Vec<HeadWeights>)> {
    let dims = x.dims();
    let channels = x.channels();
    let mut attn_cfg = cfg.attention.clone();
    attn_cfg.keep_weights = true;
    attn_cfg.forced_phase = forced_phase;
    let attn = multi_head_sparse(x, &attn_cfg, &params.attention)?;
    let weights = attn.weights.expect("weights kept");

    let x_cells = x.to_cell_matrix();
    let a_cells = attn.values.to_cell_matrix();
    let mut out = Matrix::zeros(dims.cells(), channels);
    for idx in 0..dims.cells() {
        // attention sublayer: skip-add then norm
        let mut row: Vec<f64> = x_cells
            .row(idx)
            .iter()
            .zip(a_cells.row(idx))
            .map(|(a, b)| a + b)
            .collect();
        layer_norm(&mut row, &params.norm1_gain, cfg.norm_eps);

        // feedforward sublayer: two linear maps with a rectifier between
        let hidden: Vec<f64> = params
            .ffn_in
            .matvec(&row)?
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        let ffn = params.ffn_out.matvec(&hidden)?;
        for (r, f) in row.iter_mut().zip(&ffn) {
            *r += f;
        }
        layer_norm(&mut row, &params.norm2_gain, cfg.norm_eps);
        out.row_mut(idx).copy_from_slice(&row);
    }

    Ok((VideoFeatureTensor::from_cell_matrix(&out, dims)?, weights))
}

/// Encoder output: the transformed features and the affinity stack.
#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub features: VideoFeatureTensor,
    pub affinity: AffinityTensor,
}

/// Runs the full layer stack and extracts per-layer object affinity from
/// each layer's attention weights. Multiple heads reduce by maximum.
pub fn encode(
    x: &VideoFeatureTensor,
    cfg: &EncoderConfig,
    params: &EncoderParams,
    masks: &ObjectMaskSequence,
) -> Result<EncodeOutput> {
    cfg.validate()?;
    params.validate(cfg)?;
    let dims = x.dims();
    if masks.dims() != dims {
        return Err(Error::ShapeMismatch(
            "mask dims differ from feature dims".into(),
        ));
    }
    if dims.frames > cfg.buffer_len {
        return Err(Error::ShapeMismatch(format!(
            "input spans {} frames, buffer length is {}",
            dims.frames, cfg.buffer_len
        )));
    }

    let objects = masks.objects();
    let mut affinity = AffinityTensor::zeros(cfg.layers, objects, dims);
    let mut features = x.clone();
    for (l, layer_params) in params.layers.iter().enumerate() {
        let forced_phase = match cfg.phase_assignment {
            PhaseAssignment::PerHead => None,
            PhaseAssignment::AlternatingLayers => Some(if l % 2 == 0 {
                crate::patterns::StridedPhase::Block
            } else {
                crate::patterns::StridedPhase::Lattice
            }),
        };
        let (next, weights) = encoder_layer(&features, cfg, layer_params, forced_phase)?;
        features = next;
        for p in dims.iter_cells() {
            let idx = dims.cell_index(p);
            for o in 0..objects {
                let mut best = 0.0f64;
                for head in &weights {
                    best = best.max(object_affinity(&head[idx], masks, p, o));
                }
                affinity.set(l, o, p, best);
            }
        }
    }

    Ok(EncodeOutput { features, affinity })
}
