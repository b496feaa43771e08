//! Analytic multiply-accumulate and parameter counting for the attention
//! variants, under one declared convention so cross-variant ratios are
//! comparable:
//!
//! * one MAC per weight in a matrix-vector product;
//! * per attended neighbor, one channel-length dot product for the logit and
//!   one channel-length multiply-accumulate for the value sum (softmax
//!   exponentials are not counted);
//! * the two strided phases run as separate head groups on half the channels
//!   each, so a strided cell costs `C * (|block| + |lattice|)`;
//! * local-strided splits into three head groups: the strided phases on
//!   `C/3` channels each and the local window on the remaining channels.
//!
//! Neighbor counts come from the pattern generators, boundary clamping
//! included.

use serde::Serialize;

use crate::patterns::{CellPattern, PatternSpec, Variant};
use crate::tensor::Dims3;

/// Dimensions a cost query runs at.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostDims {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub kernel: usize,
    pub radius: usize,
}

impl CostDims {
    pub fn dims3(&self) -> Dims3 {
        Dims3::new(self.frames, self.height, self.width)
    }

    pub fn cells(&self) -> u64 {
        (self.frames * self.height * self.width) as u64
    }
}

/// Structural cost of one variant at one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub variant: String,
    pub dims: CostDims,
    pub attention_macs: u64,
    pub projection_macs: u64,
    pub ffn_macs: u64,
    pub total_macs: u64,
    pub params: u64,
}

/// The channel width each head group of a variant runs at. Groups follow
/// [`PatternSpec::cell_patterns`] order; any division remainder goes to the
/// first group.
pub fn group_channels(variant: Variant, channels: usize) -> Vec<usize> {
    match variant {
        Variant::Full | Variant::Grid | Variant::Local => vec![channels],
        Variant::Strided => {
            let half = channels / 2;
            vec![channels - half, half]
        }
        Variant::LocalStrided => {
            let third = channels / 3;
            vec![channels - 2 * third, third, third]
        }
    }
}

/// Counts attention, projection, and feedforward MACs plus parameters for
/// `variant` at `dims`. Attention MACs are `layers * sum over cells p and
/// head groups g of 2 * C_g * |pattern_g(p)|`, with exact per-cell neighbor
/// counts.
pub fn count_macs(variant: Variant, dims: &CostDims) -> CostReport {
    let spec = PatternSpec::new(variant)
        .with_kernel(dims.kernel)
        .with_radius(dims.radius);
    let groups = spec.cell_patterns();
    let widths = group_channels(variant, dims.channels);
    let d3 = dims.dims3();

    let mut per_layer: u64 = 0;
    for (pattern, width) in groups.iter().zip(&widths) {
        let neighbor_sum: u64 = pattern_size_sum(pattern, d3);
        per_layer += 2 * (*width as u64) * neighbor_sum;
    }
    let attention_macs = per_layer * dims.layers as u64;

    let c = dims.channels as u64;
    let cells = dims.cells();
    let layers = dims.layers as u64;
    let projection_macs = layers * cells * 4 * c * c;
    let ffn_hidden = 2 * c;
    let ffn_macs = layers * cells * 2 * c * ffn_hidden;

    CostReport {
        variant: variant.name().to_string(),
        dims: *dims,
        attention_macs,
        projection_macs,
        ffn_macs,
        total_macs: attention_macs + projection_macs + ffn_macs,
        params: count_params(dims.layers, dims.channels, 2 * dims.channels),
    }
}

/// Sum of exact pattern sizes over every cell of the volume.
pub fn pattern_size_sum(pattern: &CellPattern, dims: Dims3) -> u64 {
    dims.iter_cells().map(|p| pattern.len(p, dims) as u64).sum()
}

/// Parameter count of an encoder stack: per layer, the four `C x C`
/// projections, the two feedforward maps, and one gain vector per norm.
/// Position-wise sharing makes the count independent of the volume size.
pub fn count_params(layers: usize, channels: usize, ffn_hidden: usize) -> u64 {
    let c = channels as u64;
    let f = ffn_hidden as u64;
    layers as u64 * (4 * c * c + (c * f + f * c) + 2 * c)
}

/// The runtime-analysis preset: 3-frame temporal buffer, 128 channels,
/// 3 layers, a 465x465 input at the given backbone feature stride, strided
/// kernel 9 and local radius 7.
pub fn table_preset(stride: usize) -> CostDims {
    let side = 465usize.div_ceil(stride);
    CostDims {
        channels: 128,
        frames: 3,
        height: side,
        width: side,
        layers: 3,
        heads: 2,
        kernel: 9,
        radius: 7,
    }
}

/// Brute-force oracle for [`count_macs`]: enumerates every `(cell, neighbor)`
/// pair of every head group instead of using closed-form sizes.
pub fn count_attention_macs_by_enumeration(variant: Variant, dims: &CostDims) -> u64 {
    let spec = PatternSpec::new(variant)
        .with_kernel(dims.kernel)
        .with_radius(dims.radius);
    let widths = group_channels(variant, dims.channels);
    let d3 = dims.dims3();
    let mut per_layer: u64 = 0;
    for (pattern, width) in spec.cell_patterns().iter().zip(&widths) {
        let mut pairs: u64 = 0;
        for p in d3.iter_cells() {
            pattern.for_each_neighbor(p, d3, |_| pairs += 1);
        }
        per_layer += 2 * (*width as u64) * pairs;
    }
    per_layer * dims.layers as u64
}

/// Strided-versus-grid attention MAC ratio at the given square resolution,
/// reported as a diagnostic against the asymptotic band.
pub fn strided_grid_ratio(frames: usize, side: usize) -> f64 {
    let kernel = (side as f64).sqrt().floor() as usize;
    let dims = CostDims {
        channels: 128,
        frames,
        height: side,
        width: side,
        layers: 1,
        heads: 2,
        kernel,
        radius: 7,
    };
    let strided = count_macs(Variant::Strided, &dims).attention_macs as f64;
    let grid = count_macs(Variant::Grid, &dims).attention_macs as f64;
    strided / grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(
        channels: usize,
        frames: usize,
        height: usize,
        width: usize,
        layers: usize,
    ) -> CostDims {
        CostDims {
            channels,
            frames,
            height,
            width,
            layers,
            heads: 2,
            kernel: 2,
            radius: 1,
        }
    }

    #[test]
    fn dense_counts_all_pairs() {
        let d = dims(2, 2, 2, 2, 1);
        let report = count_macs(Variant::Full, &d);
        assert_eq!(report.attention_macs, 2 * 2 * 64); // 2*C*S^2 = 256
    }

    #[test]
    fn grid_counts_axis_neighbors() {
        let d = dims(2, 2, 2, 2, 1);
        let report = count_macs(Variant::Grid, &d);
        // Every cell attends to T+H+W-2 = 4 cells: 8 * 2*2*4 = 128
        assert_eq!(report.attention_macs, 128);
    }

    #[test]
    fn closed_form_matches_enumeration() {
        for variant in Variant::ALL {
            for (t, h, w) in [(1, 3, 4), (2, 4, 4), (3, 5, 2)] {
                let d = CostDims {
                    channels: 3,
                    frames: t,
                    height: h,
                    width: w,
                    layers: 2,
                    heads: 2,
                    kernel: 2,
                    radius: 1,
                };
                assert_eq!(
                    count_macs(variant, &d).attention_macs,
                    count_attention_macs_by_enumeration(variant, &d),
                    "{variant:?} at ({t},{h},{w})"
                );
            }
        }
    }

    #[test]
    fn doubling_spatial_axes_scales_as_expected() {
        let small = dims(4, 2, 8, 8, 1);
        let large = dims(4, 2, 16, 16, 1);
        let dense_ratio = count_macs(Variant::Full, &large).attention_macs as f64
            / count_macs(Variant::Full, &small).attention_macs as f64;
        assert!((dense_ratio - 16.0).abs() < 1e-9);

        let grid_ratio = count_macs(Variant::Grid, &large).attention_macs as f64
            / count_macs(Variant::Grid, &small).attention_macs as f64;
        // ratio = 4 * (T + 2H + 2W - 2) / (T + H + W - 2) at the small H, W
        let t = 2.0;
        let expect = 4.0 * (t + 2.0 * 8.0 + 2.0 * 8.0 - 2.0) / (t + 8.0 + 8.0 - 2.0);
        assert!(
            (grid_ratio - expect).abs() / expect < 1e-9,
            "got {grid_ratio}, want {expect}"
        );
    }

    #[test]
    fn params_hand_count() {
        // 1 layer, C = 2, hidden 4: 4*(2*2) + (2*4 + 4*2) + 2*2 = 36
        assert_eq!(count_params(1, 2, 4), 36);
    }

    #[test]
    fn params_zero_layers() {
        assert_eq!(count_params(0, 8, 16), 0);
    }

    #[test]
    fn params_independent_of_volume() {
        let a = count_macs(Variant::Grid, &dims(4, 2, 4, 4, 2)).params;
        let b = count_macs(Variant::Grid, &dims(4, 3, 8, 6, 2)).params;
        assert_eq!(a, b);
    }

    #[test]
    fn table_preset_orders_variants() {
        let preset = table_preset(8);
        assert_eq!(preset.height, 59);
        let grid = count_macs(Variant::Grid, &preset).attention_macs;
        let strided = count_macs(Variant::Strided, &preset).attention_macs;
        let local = count_macs(Variant::Local, &preset).attention_macs;
        let dense = count_macs(Variant::Full, &preset).attention_macs;
        assert!(grid < strided, "{grid} !< {strided}");
        assert!(strided < local, "{strided} !< {local}");
        assert!(local < dense, "{local} !< {dense}");
        assert!((grid as f64) / (dense as f64) < 0.02);
    }

    #[test]
    fn macs_monotone_in_each_axis() {
        let base = dims(3, 2, 4, 4, 2);
        for variant in Variant::ALL {
            let b = count_macs(variant, &base).attention_macs;
            for grown in [
                dims(4, 2, 4, 4, 2),
                dims(3, 3, 4, 4, 2),
                dims(3, 2, 5, 4, 2),
                dims(3, 2, 4, 5, 2),
                dims(3, 2, 4, 4, 3),
            ] {
                assert!(
                    count_macs(variant, &grown).attention_macs >= b,
                    "{variant:?} shrank from {base:?} to {grown:?}"
                );
            }
        }
    }

    #[test]
    fn strided_grid_diagnostic_ratio_reported() {
        for side in [64, 128] {
            let r = strided_grid_ratio(8, side);
            assert!(r.is_finite() && r > 0.0);
        }
    }
}
