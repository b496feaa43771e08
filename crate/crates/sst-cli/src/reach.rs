//! `sst reach`: propagation closure report for a variant over stacked layers.

use clap::Args;
use serde::Serialize;
use sst_core::patterns::{reachability_for_spec, PatternSpec, ReachabilityReport, Variant};

use crate::config::resolve;
use crate::{emit, parse_coord, parse_dims, CommonArgs};

#[derive(Args, Debug)]
pub struct ReachArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub variant: Option<String>,
    /// Volume dims as TxHxW
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Strided kernel h
    #[arg(long)]
    pub h: Option<usize>,
    /// Local window radius r
    #[arg(long)]
    pub r: Option<usize>,
    /// Source cell as t,y,x
    #[arg(long, default_value = "0,0,0")]
    pub source: String,
    /// Drop neighbors at later frames
    #[arg(long)]
    pub causal: bool,
}

#[derive(Serialize)]
struct ReachOutput {
    variant: String,
    layers: usize,
    #[serde(flatten)]
    report: ReachabilityReport,
}

pub fn run(args: &ReachArgs) -> Result<(), String> {
    let file = args.common.file_config()?;
    let variant: Variant = resolve(args.variant.clone(), file.variant.clone(), "grid".into())
        .parse()
        .map_err(|e| format!("{e}"))?;
    let dims = parse_dims(&resolve(args.dims.clone(), None, "2x3x4".into()))?;
    let layers = resolve(args.layers, file.layers, 3);
    let spec = PatternSpec::new(variant)
        .with_kernel(resolve(args.h, file.h, 2))
        .with_radius(resolve(args.r, file.r, 7))
        .with_causal(args.causal);
    let source = parse_coord(&args.source)?;

    let report = reachability_for_spec(&spec, layers, dims, source).map_err(|e| e.to_string())?;

    let counts: Vec<String> = report
        .per_layer_counts
        .iter()
        .map(|c| c.to_string())
        .collect();
    let text = format!(
        "dims: {}x{}x{}\nvariant: {}\nsource: {},{},{}\nper_layer_counts: {}\nlayers_to_closure: {}\n",
        report.dims.0,
        report.dims.1,
        report.dims.2,
        variant.name(),
        source.t,
        source.y,
        source.x,
        counts.join(" "),
        report.layers_to_closure
    );
    let output = ReachOutput {
        variant: variant.name().to_string(),
        layers,
        report,
    };
    emit(&args.common, &output, text)
}
