//! Dense and sparse attention kernels with analytic backward passes.
//!
//! The dense kernel is the oracle: every cell attends to every other cell.
//! The sparse kernel restricts each cell's softmax and value sum to its
//! connectivity pattern; with the full pattern it reproduces the dense result
//! to machine precision. Values are gathered through the lazy pattern
//! generators cell by cell, so no gathered key/value matrices are ever
//! materialized. Neighbor iteration order is the pattern generation order,
//! which makes repeated runs bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::patterns::{PatternSpec, StridedPhase};
use crate::tensor::{dot, softmax_in_place, Coord3, Dims3, Matrix, VideoFeatureTensor};

/// Multi-head attention configuration.
#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub heads: usize,
    pub channels_per_head: usize,
    /// Divide logits by sqrt(channels) before the softmax. Off by default;
    /// the flag exists for ablation.
    pub scale_softmax: bool,
    pub pattern: PatternSpec,
    /// Retain per-head attention weights for affinity extraction.
    pub keep_weights: bool,
    /// Layer-alternating strided phase assignment (comparison mode); the
    /// default assigns phases to heads round-robin within each layer.
    pub forced_phase: Option<StridedPhase>,
}

impl AttentionConfig {
    pub fn new(heads: usize, channels_per_head: usize, pattern: PatternSpec) -> Self {
        AttentionConfig {
            heads,
            channels_per_head,
            scale_softmax: false,
            pattern,
            keep_weights: true,
            forced_phase: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.heads * self.channels_per_head
    }
}

/// Attention weights of one cell: its neighbors in generation order with
/// their softmax weights. Each row is a probability distribution.
pub type CellWeights = Vec<(Coord3, f64)>;

/// Per-cell weight rows for one head, indexed by `Dims3::cell_index`.
pub type HeadWeights = Vec<CellWeights>;

/// Output of an attention kernel: values of the input shape plus, when
/// retained, the per-head attention weight rows.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub values: VideoFeatureTensor,
    pub weights: Option<Vec<HeadWeights>>,
}

/// Parameters of a multi-head attention block: square projections for query,
/// key, value, and output, each `channels x channels`, no bias.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub output: Matrix,
}

impl AttentionParams {
    pub fn identity(channels: usize) -> Self {
        AttentionParams {
            query: Matrix::identity(channels),
            key: Matrix::identity(channels),
            value: Matrix::identity(channels),
            output: Matrix::identity(channels),
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (name, m) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("output", &self.output),
        ] {
            if m.rows() != channels || m.cols() != channels {
                return Err(Error::ParamShape(format!(
                    "{name} projection is {}x{}, expected {channels}x{channels}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }
}

fn check_shapes(
    q: &VideoFeatureTensor,
    k: &VideoFeatureTensor,
    v: &VideoFeatureTensor,
) -> Result<()> {
    if q.channels() != k.channels()
        || q.channels() != v.channels()
        || q.dims() != k.dims()
        || q.dims() != v.dims()
    {
        return Err(Error::ShapeMismatch(
            "query, key, and value must share one shape".into(),
        ));
    }
    Ok(())
}

/// Dense self-attention over the full spatiotemporal volume, computed the
/// matrix way: the full `S x S` logit matrix `Q K^T`, row softmax, then the
/// product with `V`. With `scale` the logits are divided by sqrt(channels)
/// first. This path shares no gather logic with the sparse kernel and serves
/// as its oracle.
pub fn dense_attention(
    q: &VideoFeatureTensor,
    k: &VideoFeatureTensor,
    v: &VideoFeatureTensor,
    scale: bool,
) -> Result<AttentionOutput> {
    check_shapes(q, k, v)?;
    let dims = q.dims();
    let channels = q.channels();
    let cells = dims.cells();
    let q_cells = q.to_cell_matrix();
    let k_cells = k.to_cell_matrix();
    let v_cells = v.to_cell_matrix();
    let logit_scale = if scale {
        1.0 / (channels as f64).sqrt()
    } else {
        1.0
    };

    let mut logits = Matrix::zeros(cells, cells);
    for i in 0..cells {
        let qi = q_cells.row(i);
        let row = logits.row_mut(i);
        for (j, l) in row.iter_mut().enumerate() {
            *l = logit_scale * dot(qi, k_cells.row(j));
        }
    }
    let weights = crate::tensor::softmax_rows(&logits)?;

    let mut out_cells = Matrix::zeros(cells, channels);
    for i in 0..cells {
        let w_row = weights.row(i);
        let out = out_cells.row_mut(i);
        for (j, &w) in w_row.iter().enumerate() {
            let v_row = v_cells.row(j);
            for c in 0..channels {
                out[c] += w * v_row[c];
            }
        }
    }

    let head: HeadWeights = (0..cells)
        .map(|i| {
            weights
                .row(i)
                .iter()
                .enumerate()
                .map(|(j, &w)| (dims.coord(j), w))
                .collect()
        })
        .collect();
    Ok(AttentionOutput {
        values: VideoFeatureTensor::from_cell_matrix(&out_cells, dims)?,
        weights: Some(vec![head]),
    })
}

/// Sparse self-attention restricted to the pattern's per-cell neighbor sets.
/// For a strided or local-strided spec the layer-level union of the head
/// group patterns is used; per-head assignment lives in
/// [`multi_head_sparse`].
pub fn sparse_attention(
    q: &VideoFeatureTensor,
    k: &VideoFeatureTensor,
    v: &VideoFeatureTensor,
    pattern: &PatternSpec,
) -> Result<AttentionOutput> {
    sparse_attention_scaled(q, k, v, pattern, false)
}

pub fn sparse_attention_scaled(
    q: &VideoFeatureTensor,
    k: &VideoFeatureTensor,
    v: &VideoFeatureTensor,
    pattern: &PatternSpec,
    scale: bool,
) -> Result<AttentionOutput> {
    let (out, _) = sparse_attention_with_state(q, k, v, pattern, scale)?;
    Ok(out)
}

/// Forward state saved for the analytic backward pass.
#[derive(Debug, Clone)]
pub struct ForwardState {
    dims: Dims3,
    channels: usize,
    scale: bool,
    q_cells: Matrix,
    k_cells: Matrix,
    v_cells: Matrix,
    neighbors: Vec<Vec<Coord3>>,
    weights: Vec<Vec<f64>>,
}

/// Sparse attention that also returns the saved forward state needed by
/// [`attention_backward`].
pub fn sparse_attention_with_state(
    q: &VideoFeatureTensor,
    k: &VideoFeatureTensor,
    v: &VideoFeatureTensor,
    pattern: &PatternSpec,
    scale: bool,
) -> Result<(AttentionOutput, ForwardState)> {
    check_shapes(q, k, v)?;
    let dims = q.dims();
    pattern.validate(dims)?;
    let channels = q.channels();
    let q_cells = q.to_cell_matrix();
    let k_cells = k.to_cell_matrix();
    let v_cells = v.to_cell_matrix();
    let logit_scale = if scale {
        1.0 / (channels as f64).sqrt()
    } else {
        1.0
    };

    let cells = dims.cells();
    let per_cell: Vec<(Vec<f64>, Vec<Coord3>, Vec<f64>)> = (0..cells)
        .into_par_iter()
        .map(|idx| {
            let p = dims.coord(idx);
            let neighbors = pattern
                .layer_neighbors(p, dims)
                .expect("cell coords are in bounds");
            let q_row = q_cells.row(idx);
            let mut logits: Vec<f64> = neighbors
                .iter()
                .map(|&n| logit_scale * dot(q_row, k_cells.row(dims.cell_index(n))))
                .collect();
            softmax_in_place(&mut logits);
            let mut out = vec![0.0; channels];
            for (&n, &w) in neighbors.iter().zip(&logits) {
                let v_row = v_cells.row(dims.cell_index(n));
                for c in 0..channels {
                    out[c] += w * v_row[c];
                }
            }
            (out, neighbors, logits)
        })
        .collect();

    let mut out_cells = Matrix::zeros(cells, channels);
    let mut neighbors = Vec::with_capacity(cells);
    let mut weights = Vec::with_capacity(cells);
    for (idx, (out, ns, ws)) in per_cell.into_iter().enumerate() {
        out_cells.row_mut(idx).copy_from_slice(&out);
        neighbors.push(ns);
        weights.push(ws);
    }

    let values = VideoFeatureTensor::from_cell_matrix(&out_cells, dims)?;
    let head_weights: HeadWeights = neighbors
        .iter()
        .zip(&weights)
        .map(|(ns, ws)| ns.iter().copied().zip(ws.iter().copied()).collect())
        .collect();
    let output = AttentionOutput {
        values,
        weights: Some(vec![head_weights]),
    };
    let state = ForwardState {
        dims,
        channels,
        scale,
        q_cells,
        k_cells,
        v_cells,
        neighbors,
        weights,
    };
    Ok((output, state))
}

/// Gradients of a sparse attention output with respect to its inputs.
#[derive(Debug, Clone)]
pub struct AttentionGradients {
    pub query: VideoFeatureTensor,
    pub key: VideoFeatureTensor,
    pub value: VideoFeatureTensor,
}

/// Analytic backward pass of [`sparse_attention_with_state`].
///
/// For each cell p with neighbors q and weights w: grad V_q accumulates
/// w_q * g_p; the logit gradient is w_q * (g_p . V_q - sum_r w_r g_p . V_r),
/// which distributes onto Q_p and K_q through the saved dot products.
pub fn attention_backward(
    grad_out: &VideoFeatureTensor,
    state: &ForwardState,
) -> Result<AttentionGradients> {
    if grad_out.dims() != state.dims || grad_out.channels() != state.channels {
        return Err(Error::ShapeMismatch(
            "grad_out shape differs from the saved forward state".into(),
        ));
    }
    let dims = state.dims;
    let channels = state.channels;
    let cells = dims.cells();
    let g_cells = grad_out.to_cell_matrix();
    let logit_scale = if state.scale {
        1.0 / (channels as f64).sqrt()
    } else {
        1.0
    };

    let mut grad_q = Matrix::zeros(cells, channels);
    let mut grad_k = Matrix::zeros(cells, channels);
    let mut grad_v = Matrix::zeros(cells, channels);

    for idx in 0..cells {
        let g_row = g_cells.row(idx);
        let neighbors = &state.neighbors[idx];
        let weights = &state.weights[idx];

        // grad of the softmax output w.r.t. each weight: g . V_q
        let gw: Vec<f64> = neighbors
            .iter()
            .map(|&n| dot(g_row, state.v_cells.row(dims.cell_index(n))))
            .collect();
        let expected: f64 = weights.iter().zip(&gw).map(|(w, g)| w * g).sum();

        for ((&n, &w), &gwq) in neighbors.iter().zip(weights).zip(&gw) {
            let n_idx = dims.cell_index(n);
            // value gradient
            for (gv, g) in grad_v.row_mut(n_idx).iter_mut().zip(g_row) {
                *gv += w * g;
            }
            // softmax backward to the logit, then onto Q and K
            let gz = w * (gwq - expected) * logit_scale;
            let k_row = state.k_cells.row(n_idx);
            let q_row = state.q_cells.row(idx);
            for c in 0..channels {
                grad_q.row_mut(idx)[c] += gz * k_row[c];
                grad_k.row_mut(n_idx)[c] += gz * q_row[c];
            }
        }
    }

    Ok(AttentionGradients {
        query: VideoFeatureTensor::from_cell_matrix(&grad_q, dims)?,
        key: VideoFeatureTensor::from_cell_matrix(&grad_k, dims)?,
        value: VideoFeatureTensor::from_cell_matrix(&grad_v, dims)?,
    })
}

/// Similarity features derivable from an attention dot product: the raw dot,
/// the Euclidean distance between the two vectors, and their normalized
/// cross-correlation. Auxiliary outputs for downstream scoring heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeatures {
    pub dot: f64,
    pub euclidean_distance: f64,
    pub normalized_cross_correlation: f64,
}

/// Computes [`PairFeatures`] for two cell vectors. Distance comes from
/// `|a - b|^2 = |a|^2 + |b|^2 - 2 a.b`; correlation divides the dot by the
/// norms, zero when either vector is zero.
pub fn pair_features(a: &[f64], b: &[f64]) -> PairFeatures {
    let d = dot(a, b);
    let na2 = dot(a, a);
    let nb2 = dot(b, b);
    let norms = (na2 * nb2).sqrt();
    PairFeatures {
        dot: d,
        euclidean_distance: (na2 + nb2 - 2.0 * d).max(0.0).sqrt(),
        normalized_cross_correlation: if norms > 0.0 { d / norms } else { 0.0 },
    }
}

/// Softmax-free sparse attention: each cell's output is the sum over its
/// neighbors of the raw dot product times the neighbor's value vector.
/// Composing layers of this operator propagates information along routes of
/// pairwise-similar cells, which is the analysis form of grid attention.
pub fn sparse_attention_linear(
    q: &VideoFeatureTensor,
    k: &VideoFeatureTensor,
    v: &VideoFeatureTensor,
    pattern: &PatternSpec,
) -> Result<VideoFeatureTensor> {
    check_shapes(q, k, v)?;
    let dims = q.dims();
    pattern.validate(dims)?;
    let channels = q.channels();
    let q_cells = q.to_cell_matrix();
    let k_cells = k.to_cell_matrix();
    let v_cells = v.to_cell_matrix();
    let cells = dims.cells();

    let mut out_cells = Matrix::zeros(cells, channels);
    for idx in 0..cells {
        let p = dims.coord(idx);
        let q_row = q_cells.row(idx);
        let out = out_cells.row_mut(idx);
        for n in pattern.layer_neighbors(p, dims)? {
            let n_idx = dims.cell_index(n);
            let w = dot(q_row, k_cells.row(n_idx));
            let v_row = v_cells.row(n_idx);
            for c in 0..channels {
                out[c] += w * v_row[c];
            }
        }
    }
    VideoFeatureTensor::from_cell_matrix(&out_cells, dims)
}

/// Multi-head sparse attention with learned projections.
///
/// The input is projected to queries, keys, and values; each head runs sparse
/// attention on its channel slice with its assigned pattern (strided phases
/// round-robin across heads); head outputs are concatenated and passed
/// through the output projection.
pub fn multi_head_sparse(
    x: &VideoFeatureTensor,
    cfg: &AttentionConfig,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    let channels = x.channels();
    if cfg.channels() != channels {
        return Err(Error::ParamShape(format!(
            "heads x channels-per-head = {} does not match input channels {}",
            cfg.channels(),
            channels
        )));
    }
    params.validate(channels)?;
    let dims = x.dims();
    cfg.pattern.validate(dims)?;
    let cells = dims.cells();
    let x_cells = x.to_cell_matrix();

    // Project per cell: rows of the cell matrix through each projection.
    let mut q_cells = Matrix::zeros(cells, channels);
    let mut k_cells = Matrix::zeros(cells, channels);
    let mut v_cells = Matrix::zeros(cells, channels);
    for idx in 0..cells {
        let row = x_cells.row(idx);
        q_cells
            .row_mut(idx)
            .copy_from_slice(&params.query.matvec(row)?);
        k_cells
            .row_mut(idx)
            .copy_from_slice(&params.key.matvec(row)?);
        v_cells
            .row_mut(idx)
            .copy_from_slice(&params.value.matvec(row)?);
    }

    let ch = cfg.channels_per_head;
    let logit_scale = if cfg.scale_softmax {
        1.0 / (ch as f64).sqrt()
    } else {
        1.0
    };

    let head_patterns: Vec<_> = (0..cfg.heads)
        .map(|h| cfg.pattern.head_pattern(h, cfg.forced_phase))
        .collect();
    let causal = cfg.pattern.causal;

    struct CellResult {
        concat: Vec<f64>,
        weights: Vec<CellWeights>,
    }

    let per_cell: Vec<CellResult> = (0..cells)
        .into_par_iter()
        .map(|idx| {
            let p = dims.coord(idx);
            let mut concat = vec![0.0; channels];
            let mut weights = Vec::with_capacity(cfg.heads);
            for (h, pat) in head_patterns.iter().enumerate() {
                let lo = h * ch;
                let hi = lo + ch;
                let mut neighbors = pat.neighbors(p, dims).expect("cell coords are in bounds");
                if causal {
                    neighbors.retain(|q| q.t <= p.t);
                }
                let q_slice = &q_cells.row(idx)[lo..hi];
                let mut logits: Vec<f64> = neighbors
                    .iter()
                    .map(|&n| logit_scale * dot(q_slice, &k_cells.row(dims.cell_index(n))[lo..hi]))
                    .collect();
                softmax_in_place(&mut logits);
                for (&n, &w) in neighbors.iter().zip(&logits) {
                    let v_slice = &v_cells.row(dims.cell_index(n))[lo..hi];
                    for (c, v) in v_slice.iter().enumerate() {
                        concat[lo + c] += w * v;
                    }
                }
                if cfg.keep_weights {
                    weights.push(neighbors.into_iter().zip(logits).collect());
                }
            }
            CellResult { concat, weights }
        })
        .collect();

    let mut out_cells = Matrix::zeros(cells, channels);
    let mut head_weights: Vec<HeadWeights> = if cfg.keep_weights {
        (0..cfg.heads).map(|_| Vec::with_capacity(cells)).collect()
    } else {
        Vec::new()
    };
    for (idx, mut res) in per_cell.into_iter().enumerate() {
        out_cells
            .row_mut(idx)
            .copy_from_slice(&params.output.matvec(&res.concat)?);
        if cfg.keep_weights {
            for (h, w) in res.weights.drain(..).enumerate() {
                head_weights[h].push(w);
            }
        }
    }

    Ok(AttentionOutput {
        values: VideoFeatureTensor::from_cell_matrix(&out_cells, dims)?,
        weights: if cfg.keep_weights {
            Some(head_weights)
        } else {
            None
        },
    })
}
