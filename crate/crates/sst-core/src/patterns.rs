//! Sparse connectivity patterns and multi-layer reachability analysis.
//!
//! A pattern maps a cell `p` to the set of cells it attends to in one layer.
//! Patterns are generated lazily per cell and never materialized globally.
//! Out-of-bounds neighbors are dropped, never wrapped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Coord3, Dims3};

/// Named sparse attention variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Grid,
    Strided,
    Local,
    LocalStrided,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Grid,
        Variant::Strided,
        Variant::Local,
        Variant::LocalStrided,
        Variant::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Grid => "grid",
            Variant::Strided => "strided",
            Variant::Local => "local",
            Variant::LocalStrided => "local_strided",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Variant::Grid),
            "strided" => Ok(Variant::Strided),
            "local" => Ok(Variant::Local),
            "local_strided" | "local-strided" => Ok(Variant::LocalStrided),
            "full" | "dense" => Ok(Variant::Full),
            other => Err(Error::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

/// How the two strided phases resolve a cell's block.
///
/// `BlockAligned` buckets cells into aligned cubes (`floor(coord / h)`), which
/// guarantees two-layer closure from every source. `AnchorRelative` is the
/// literal "offsets below `h` from `p`" reading, kept as a comparison mode;
/// it is not symmetric and loses closure at block boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StridedMode {
    #[default]
    BlockAligned,
    AnchorRelative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StridedPhase {
    Block,
    Lattice,
}

/// Configuration of a sparse variant: the kernel `h` used by the strided
/// phases, the spatial window radius `r` used by local attention, and whether
/// neighbors at later frames are filtered out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub variant: Variant,
    /// Strided kernel; the temporal axis uses `min(h, frames)`.
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// Local window radius.
    #[serde(default = "default_radius")]
    pub radius: usize,
    #[serde(default)]
    pub causal: bool,
    #[serde(default)]
    pub strided_mode: StridedMode,
}

fn default_kernel() -> usize {
    2
}

fn default_radius() -> usize {
    7
}

impl PatternSpec {
    pub fn new(variant: Variant) -> Self {
        PatternSpec {
            variant,
            kernel: default_kernel(),
            radius: default_radius(),
            causal: false,
            strided_mode: StridedMode::BlockAligned,
        }
    }

    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_radius(mut self, radius: usize) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn with_strided_mode(mut self, mode: StridedMode) -> Self {
        self.strided_mode = mode;
        self
    }

    pub fn validate(&self, dims: Dims3) -> Result<()> {
        if self.kernel == 0 {
            return Err(Error::InvalidConfig("kernel h must be >= 1".into()));
        }
        if self.variant == Variant::Strided && self.kernel > dims.height.max(dims.width) {
            return Err(Error::InvalidConfig(format!(
                "kernel h = {} exceeds max(H, W) = {}",
                self.kernel,
                dims.height.max(dims.width)
            )));
        }
        Ok(())
    }

    /// The concrete per-cell generators that make up one layer of this
    /// variant, in head-group order. Strided is the two phases, local-strided
    /// is the local window plus both phases.
    pub fn cell_patterns(&self) -> Vec<CellPattern> {
        match self.variant {
            Variant::Full => vec![CellPattern::Full],
            Variant::Grid => vec![CellPattern::Grid],
            Variant::Local => vec![CellPattern::Local {
                radius: self.radius,
            }],
            Variant::Strided => vec![
                CellPattern::StridedBlock {
                    kernel: self.kernel,
                    mode: self.strided_mode,
                },
                CellPattern::StridedLattice {
                    kernel: self.kernel,
                },
            ],
            Variant::LocalStrided => vec![
                CellPattern::Local {
                    radius: self.radius,
                },
                CellPattern::StridedBlock {
                    kernel: self.kernel,
                    mode: self.strided_mode,
                },
                CellPattern::StridedLattice {
                    kernel: self.kernel,
                },
            ],
        }
    }

    /// Pattern used by head `head` of `heads` total: the variant's head
    /// groups are assigned round-robin. `forced_phase` overrides the strided
    /// assignment for the layer-alternating comparison mode.
    pub fn head_pattern(&self, head: usize, forced_phase: Option<StridedPhase>) -> CellPattern {
        let groups = self.cell_patterns();
        match (self.variant, forced_phase) {
            (Variant::Strided, Some(StridedPhase::Block)) => groups[0],
            (Variant::Strided, Some(StridedPhase::Lattice)) => groups[1],
            _ => groups[head % groups.len()],
        }
    }

    /// Neighbor set of `p` for a whole layer of this variant: the union of
    /// its head-group patterns, deduplicated in first-seen order.
    pub fn layer_neighbors(&self, p: Coord3, dims: Dims3) -> Result<Vec<Coord3>> {
        let groups = self.cell_patterns();
        if groups.len() == 1 {
            let mut n = groups[0].neighbors(p, dims)?;
            if self.causal {
                n.retain(|q| q.t <= p.t);
            }
            return Ok(n);
        }
        let mut seen = vec![false; dims.cells()];
        let mut out = Vec::new();
        for g in groups {
            for q in g.neighbors(p, dims)? {
                let idx = dims.cell_index(q);
                if !seen[idx] {
                    seen[idx] = true;
                    out.push(q);
                }
            }
        }
        if self.causal {
            out.retain(|q| q.t <= p.t);
        }
        Ok(out)
    }
}

/// A concrete per-cell neighbor generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellPattern {
    /// Every cell.
    Full,
    /// Cells sharing at least two of `p`'s `(x, y, t)` coordinates:
    /// `p`'s full temporal ray, column, and row. Cardinality `T + H + W - 2`.
    Grid,
    /// All cells of `p`'s kernel-aligned cube (phase 1).
    StridedBlock { kernel: usize, mode: StridedMode },
    /// All cells congruent to `p` modulo the kernel on each axis (phase 2).
    StridedLattice { kernel: usize },
    /// Centered square window of the given radius, full temporal extent.
    Local { radius: usize },
}

impl CellPattern {
    /// Neighbor coordinates of `p`, in a fixed generation order. Includes `p`
    /// itself exactly once. Errors if `p` is out of bounds.
    pub fn neighbors(&self, p: Coord3, dims: Dims3) -> Result<Vec<Coord3>> {
        if !dims.contains(p) {
            return Err(Error::OutOfBounds {
                coord: p,
                dims: dims.as_tuple(),
            });
        }
        let mut out = Vec::with_capacity(self.len(p, dims));
        self.for_each_neighbor(p, dims, |q| out.push(q));
        Ok(out)
    }

    /// Applies `f` to each neighbor in generation order without allocating.
    pub fn for_each_neighbor(&self, p: Coord3, dims: Dims3, mut f: impl FnMut(Coord3)) {
        let (frames, height, width) = dims.as_tuple();
        match *self {
            CellPattern::Full => {
                for t in 0..frames {
                    for y in 0..height {
                        for x in 0..width {
                            f(Coord3::new(t, y, x));
                        }
                    }
                }
            }
            CellPattern::Grid => {
                // Temporal ray carries p; the row and column skip it.
                for t in 0..frames {
                    f(Coord3::new(t, p.y, p.x));
                }
                for y in 0..height {
                    if y != p.y {
                        f(Coord3::new(p.t, y, p.x));
                    }
                }
                for x in 0..width {
                    if x != p.x {
                        f(Coord3::new(p.t, p.y, x));
                    }
                }
            }
            CellPattern::StridedBlock { kernel, mode } => {
                let ht = kernel.min(frames);
                let (t0, t1) = block_range(p.t, ht, frames, mode);
                let (y0, y1) = block_range(p.y, kernel, height, mode);
                let (x0, x1) = block_range(p.x, kernel, width, mode);
                for t in t0..t1 {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            f(Coord3::new(t, y, x));
                        }
                    }
                }
            }
            CellPattern::StridedLattice { kernel } => {
                let ht = kernel.min(frames);
                for t in (p.t % ht..frames).step_by(ht) {
                    for y in (p.y % kernel..height).step_by(kernel) {
                        for x in (p.x % kernel..width).step_by(kernel) {
                            f(Coord3::new(t, y, x));
                        }
                    }
                }
            }
            CellPattern::Local { radius } => {
                let y0 = p.y.saturating_sub(radius);
                let y1 = (p.y + radius).min(height - 1);
                let x0 = p.x.saturating_sub(radius);
                let x1 = (p.x + radius).min(width - 1);
                for t in 0..frames {
                    for y in y0..=y1 {
                        for x in x0..=x1 {
                            f(Coord3::new(t, y, x));
                        }
                    }
                }
            }
        }
    }

    /// Exact neighbor count at `p`, boundary clamping included. Agrees with
    /// the length of [`neighbors`](Self::neighbors).
    pub fn len(&self, p: Coord3, dims: Dims3) -> usize {
        let (frames, height, width) = dims.as_tuple();
        match *self {
            CellPattern::Full => dims.cells(),
            CellPattern::Grid => frames + height + width - 2,
            CellPattern::StridedBlock { kernel, mode } => {
                let ht = kernel.min(frames);
                let (t0, t1) = block_range(p.t, ht, frames, mode);
                let (y0, y1) = block_range(p.y, kernel, height, mode);
                let (x0, x1) = block_range(p.x, kernel, width, mode);
                (t1 - t0) * (y1 - y0) * (x1 - x0)
            }
            CellPattern::StridedLattice { kernel } => {
                let ht = kernel.min(frames);
                lattice_count(p.t, ht, frames)
                    * lattice_count(p.y, kernel, height)
                    * lattice_count(p.x, kernel, width)
            }
            CellPattern::Local { radius } => {
                let wy = (p.y + radius).min(height - 1) - p.y.saturating_sub(radius) + 1;
                let wx = (p.x + radius).min(width - 1) - p.x.saturating_sub(radius) + 1;
                frames * wy * wx
            }
        }
    }
}

fn block_range(coord: usize, kernel: usize, extent: usize, mode: StridedMode) -> (usize, usize) {
    match mode {
        StridedMode::BlockAligned => {
            let start = (coord / kernel) * kernel;
            (start, (start + kernel).min(extent))
        }
        StridedMode::AnchorRelative => (coord, (coord + kernel).min(extent)),
    }
}

fn lattice_count(coord: usize, kernel: usize, extent: usize) -> usize {
    (extent - 1 - coord % kernel) / kernel + 1
}

/// Grid connectivity of `p`: every in-bounds cell sharing at least two of its
/// coordinates, `p` included. The set has exactly `T + H + W - 2` members.
pub fn grid_pattern(p: Coord3, dims: Dims3) -> Result<Vec<Coord3>> {
    CellPattern::Grid.neighbors(p, dims)
}

/// One strided phase at `p`: the block cube (phase 1) or the stride-`h`
/// lattice (phase 2), block-aligned by default.
pub fn strided_pattern(
    p: Coord3,
    dims: Dims3,
    kernel: usize,
    phase: StridedPhase,
) -> Result<Vec<Coord3>> {
    strided_pattern_mode(p, dims, kernel, phase, StridedMode::BlockAligned)
}

pub fn strided_pattern_mode(
    p: Coord3,
    dims: Dims3,
    kernel: usize,
    phase: StridedPhase,
    mode: StridedMode,
) -> Result<Vec<Coord3>> {
    if kernel == 0 {
        return Err(Error::InvalidConfig("kernel h must be >= 1".into()));
    }
    let pat = match phase {
        StridedPhase::Block => CellPattern::StridedBlock { kernel, mode },
        StridedPhase::Lattice => CellPattern::StridedLattice { kernel },
    };
    pat.neighbors(p, dims)
}

/// Local window at `p`: all cells within `radius` of it spatially, at every
/// frame of the buffer.
pub fn local_pattern(p: Coord3, dims: Dims3, radius: usize) -> Result<Vec<Coord3>> {
    CellPattern::Local { radius }.neighbors(p, dims)
}

/// Whether closure was reached and at which layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    At(usize),
    Never,
}

impl std::fmt::Display for Closure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Closure::At(n) => write!(f, "{n}"),
            Closure::Never => write!(f, "never"),
        }
    }
}

/// Result of propagating a source cell through a stack of layer patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityReport {
    pub dims: (usize, usize, usize),
    pub source: Coord3,
    /// Reached-cell count after each layer.
    pub per_layer_counts: Vec<usize>,
    pub layers_to_closure: Closure,
}

/// One layer of connectivity for the reachability analysis: the union of a
/// set of per-cell generators.
#[derive(Debug, Clone)]
pub struct LayerConnectivity {
    pub patterns: Vec<CellPattern>,
    pub causal: bool,
}

impl LayerConnectivity {
    pub fn single(pattern: CellPattern) -> Self {
        LayerConnectivity {
            patterns: vec![pattern],
            causal: false,
        }
    }
}

impl From<&PatternSpec> for LayerConnectivity {
    fn from(spec: &PatternSpec) -> Self {
        LayerConnectivity {
            patterns: spec.cell_patterns(),
            causal: spec.causal,
        }
    }
}

/// BFS closure over composed per-layer connectivity: the layer-k reached set
/// is the union, over every cell reached by layer k-1, of that cell's layer-k
/// pattern. Closure means every cell of the volume has been reached.
pub fn reachability(
    layers: &[LayerConnectivity],
    dims: Dims3,
    source: Coord3,
) -> Result<ReachabilityReport> {
    if !dims.contains(source) {
        return Err(Error::OutOfBounds {
            coord: source,
            dims: dims.as_tuple(),
        });
    }
    let total = dims.cells();
    let mut reached = vec![false; total];
    reached[dims.cell_index(source)] = true;
    let mut members = vec![source];

    let mut per_layer_counts = Vec::with_capacity(layers.len());
    let mut layers_to_closure = if total == 1 {
        Closure::At(0)
    } else {
        Closure::Never
    };

    for (li, layer) in layers.iter().enumerate() {
        let mut next = vec![false; total];
        for &p in &members {
            for pat in &layer.patterns {
                pat.for_each_neighbor(p, dims, |q| {
                    if !layer.causal || q.t <= p.t {
                        next[dims.cell_index(q)] = true;
                    }
                });
            }
        }
        // Patterns are reflexive, so the reached set never shrinks; keep the
        // union anyway in case a causal layer is composed with a later one.
        for (i, r) in next.iter().enumerate() {
            if *r && !reached[i] {
                reached[i] = true;
                members.push(dims.coord(i));
            }
        }
        let count = members.len();
        per_layer_counts.push(count);
        if count == total && layers_to_closure == Closure::Never {
            layers_to_closure = Closure::At(li + 1);
        }
    }

    Ok(ReachabilityReport {
        dims: dims.as_tuple(),
        source,
        per_layer_counts,
        layers_to_closure,
    })
}

/// Convenience: `layers` copies of the same variant spec.
pub fn reachability_for_spec(
    spec: &PatternSpec,
    layers: usize,
    dims: Dims3,
    source: Coord3,
) -> Result<ReachabilityReport> {
    spec.validate(dims)?;
    let layer: LayerConnectivity = spec.into();
    let stack: Vec<LayerConnectivity> = (0..layers).map(|_| layer.clone()).collect();
    reachability(&stack, dims, source)
}
