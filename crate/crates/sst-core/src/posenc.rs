//! Absolute spatiotemporal positional encodings.
//!
//! The sinusoidal kind splits the channel axis into three bands, one per
//! spatiotemporal axis (T, then Y, then X), and fills each band with
//! interleaved sin/cos pairs of the cell's position on that axis over
//! geometric wavelengths. The none kind is the zero tensor, so adding it is
//! the no-positional-information baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims3, VideoFeatureTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosEncKind {
    #[default]
    None,
    Sinusoidal,
}

impl std::str::FromStr for PosEncKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PosEncKind::None),
            "sinusoidal" => Ok(PosEncKind::Sinusoidal),
            other => Err(Error::InvalidConfig(format!(
                "unknown positional encoding '{other}'"
            ))),
        }
    }
}

/// Positional encoding configuration: kind, optional explicit channel split
/// across the (T, Y, X) axes, and the base wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncodingSpec {
    pub kind: PosEncKind,
    /// Channels allocated to the T, Y, and X bands. Each count must be even
    /// and they must sum to the tensor's channel count. `None` splits into
    /// equal thirds rounded down to even, remainder to X.
    pub allocation: Option<(usize, usize, usize)>,
    pub base_wavelength: f64,
}

impl Default for PositionalEncodingSpec {
    fn default() -> Self {
        PositionalEncodingSpec {
            kind: PosEncKind::None,
            allocation: None,
            base_wavelength: 10_000.0,
        }
    }
}

impl PositionalEncodingSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn sinusoidal() -> Self {
        PositionalEncodingSpec {
            kind: PosEncKind::Sinusoidal,
            ..Self::default()
        }
    }

    /// Resolves the per-axis channel allocation for `channels`.
    pub fn resolve_allocation(&self, channels: usize) -> Result<(usize, usize, usize)> {
        let (t, y, x) = match self.allocation {
            Some(split) => split,
            None => {
                if channels < 6 {
                    return Err(Error::ChannelAllocation(format!(
                        "{channels} channels < 6 (need at least one sin/cos pair per axis)"
                    )));
                }
                let third = (channels / 3) & !1;
                (third, third, channels - 2 * third)
            }
        };
        if t + y + x != channels {
            return Err(Error::ChannelAllocation(format!(
                "band sizes {t}+{y}+{x} != {channels} channels"
            )));
        }
        if t == 0 || y == 0 || x == 0 || t % 2 != 0 || y % 2 != 0 || x % 2 != 0 {
            return Err(Error::ChannelAllocation(
                "each axis band must be a positive even channel count".into(),
            ));
        }
        Ok((t, y, x))
    }
}

/// Builds the positional encoding volume for the given shape.
///
/// Kind none yields the zero tensor. Sinusoidal writes, for each axis band of
/// `d` channels and position `pos`, `sin(pos / base^(2i/d))` into channel
/// `2i` of the band and the matching cosine into channel `2i + 1`.
pub fn positional_encoding(
    channels: usize,
    dims: Dims3,
    spec: &PositionalEncodingSpec,
) -> Result<VideoFeatureTensor> {
    match spec.kind {
        PosEncKind::None => Ok(VideoFeatureTensor::zeros(channels, dims)),
        PosEncKind::Sinusoidal => {
            let (dt, dy, dx) = spec.resolve_allocation(channels)?;
            let mut out = VideoFeatureTensor::zeros(channels, dims);
            let bands = [(0, dt, Axis::T), (dt, dy, Axis::Y), (dt + dy, dx, Axis::X)];
            for p in dims.iter_cells() {
                for &(offset, d, axis) in &bands {
                    let pos = match axis {
                        Axis::T => p.t,
                        Axis::Y => p.y,
                        Axis::X => p.x,
                    } as f64;
                    for i in 0..d / 2 {
                        let angle = pos / spec.base_wavelength.powf(2.0 * i as f64 / d as f64);
                        out.set(offset + 2 * i, p, angle.sin());
                        out.set(offset + 2 * i + 1, p, angle.cos());
                    }
                }
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Copy)]
enum Axis {
    T,
    Y,
    X,
}

/// Adds the encoding for `spec` to `x` per the positional-encoding sum.
pub fn add_positional_encoding(
    x: &VideoFeatureTensor,
    spec: &PositionalEncodingSpec,
) -> Result<VideoFeatureTensor> {
    let enc = positional_encoding(x.channels(), x.dims(), spec)?;
    let mut out = x.clone();
    for (o, e) in out.data_mut().iter_mut().zip(enc.data()) {
        *o += e;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Coord3;

    #[test]
    fn none_kind_is_zero_tensor() {
        let enc =
            positional_encoding(8, Dims3::new(2, 3, 4), &PositionalEncodingSpec::none()).unwrap();
        assert!(enc.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn origin_cell_is_sin_zero_cos_one() {
        let enc = positional_encoding(
            6,
            Dims3::new(2, 2, 2),
            &PositionalEncodingSpec::sinusoidal(),
        )
        .unwrap();
        let p = Coord3::new(0, 0, 0);
        for c in 0..6 {
            let want = if c % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(enc.get(c, p), want);
        }
    }

    #[test]
    fn small_volume_values_bounded_and_distinct() {
        let dims = Dims3::new(2, 2, 2);
        let enc = positional_encoding(6, dims, &PositionalEncodingSpec::sinusoidal()).unwrap();
        assert!(enc.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let mut vectors: Vec<Vec<f64>> = dims.iter_cells().map(|p| enc.cell_vector(p)).collect();
        vectors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in vectors.windows(2) {
            assert_ne!(w[0], w[1]);
        }
    }

    #[test]
    fn deterministic_output() {
        let dims = Dims3::new(3, 4, 5);
        let spec = PositionalEncodingSpec::sinusoidal();
        let a = positional_encoding(12, dims, &spec).unwrap();
        let b = positional_encoding(12, dims, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_allocation_splits_evenly() {
        let spec = PositionalEncodingSpec::sinusoidal();
        assert_eq!(spec.resolve_allocation(6).unwrap(), (2, 2, 2));
        assert_eq!(spec.resolve_allocation(12).unwrap(), (4, 4, 4));
        assert_eq!(spec.resolve_allocation(8).unwrap(), (2, 2, 4));
        assert!(spec.resolve_allocation(4).is_err());
        assert!(spec.resolve_allocation(7).is_err());
    }

    #[test]
    fn explicit_allocation_validated() {
        let mut spec = PositionalEncodingSpec::sinusoidal();
        spec.allocation = Some((2, 2, 4));
        assert!(positional_encoding(8, Dims3::new(1, 1, 1), &spec).is_ok());
        spec.allocation = Some((3, 3, 2));
        assert!(positional_encoding(8, Dims3::new(1, 1, 1), &spec).is_err());
        spec.allocation = Some((2, 2, 2));
        assert!(positional_encoding(8, Dims3::new(1, 1, 1), &spec).is_err());
    }

    #[test]
    fn injective_at_larger_scale() {
        let dims = Dims3::new(4, 16, 16);
        let enc = positional_encoding(12, dims, &PositionalEncodingSpec::sinusoidal()).unwrap();
        let mut vectors: Vec<Vec<f64>> = dims.iter_cells().map(|p| enc.cell_vector(p)).collect();
        vectors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in vectors.windows(2) {
            assert_ne!(w[0], w[1]);
        }
    }
}
