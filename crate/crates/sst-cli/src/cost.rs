//! `sst cost`: analytic MAC and parameter table across attention variants.

use clap::Args;
use serde::Serialize;
use sst_core::costmodel::{count_macs, strided_grid_ratio, table_preset, CostDims, CostReport};
use sst_core::patterns::Variant;

use crate::config::resolve;
use crate::{emit, parse_dims, CommonArgs};

#[derive(Args, Debug)]
pub struct CostArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Variant to report, or "all"
    #[arg(long, default_value = "all")]
    pub variant: String,
    /// Volume dims as TxHxW
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Strided kernel h
    #[arg(long)]
    pub h: Option<usize>,
    /// Local window radius r
    #[arg(long)]
    pub r: Option<usize>,
    /// Use the runtime-analysis preset (3-frame buffer, 128 channels,
    /// 3 layers, 465x465 input at --stride)
    #[arg(long)]
    pub table1: bool,
    /// Backbone feature stride for the preset
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    /// Also report the strided/grid ratio diagnostic at 64 and 128
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Serialize)]
struct CostRow {
    #[serde(flatten)]
    report: CostReport,
    ratio_to_dense: f64,
}

#[derive(Serialize)]
struct CostOutput {
    rows: Vec<CostRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strided_grid_ratio_64: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strided_grid_ratio_128: Option<f64>,
}

pub fn run(args: &CostArgs) -> Result<(), String> {
    let file = args.common.file_config()?;
    let dims = build_dims(args)?;

    let variants: Vec<Variant> = if args.variant == "all" {
        vec![
            Variant::Grid,
            Variant::Strided,
            Variant::Local,
            Variant::LocalStrided,
            Variant::Full,
        ]
    } else {
        let name = resolve(
            Some(args.variant.clone()),
            file.variant.clone(),
            "grid".into(),
        );
        vec![name.parse().map_err(|e| format!("{e}"))?]
    };

    let dense = count_macs(Variant::Full, &dims);
    let rows: Vec<CostRow> = variants
        .iter()
        .map(|&v| {
            let report = count_macs(v, &dims);
            let ratio_to_dense = report.attention_macs as f64 / dense.attention_macs as f64;
            CostRow {
                report,
                ratio_to_dense,
            }
        })
        .collect();

    let (d64, d128) = if args.diagnostics {
        (
            Some(strided_grid_ratio(8, 64)),
            Some(strided_grid_ratio(8, 128)),
        )
    } else {
        (None, None)
    };

    let mut text = format!(
        "dims: C={} T={} H={} W={} L={} heads={} h={} r={}\n",
        dims.channels,
        dims.frames,
        dims.height,
        dims.width,
        dims.layers,
        dims.heads,
        dims.kernel,
        dims.radius
    );
    text.push_str(&format!(
        "{:<14} {:>18} {:>18} {:>20} {:>12} {:>16} {:>16}\n",
        "variant", "attention_macs", "total_macs", "ratio_to_dense", "params", "projection_macs", "ffn_macs"
    ));
    for row in &rows {
        text.push_str(&format!(
            "{:<14} {:>18} {:>18} {:>20} {:>12} {:>16} {:>16}\n",
            row.report.variant,
            row.report.attention_macs,
            row.report.total_macs,
            row.ratio_to_dense,
            row.report.params,
            row.report.projection_macs,
            row.report.ffn_macs
        ));
    }
    if let (Some(a), Some(b)) = (d64, d128) {
        text.push_str(&format!(
            "strided/grid attention ratio at T=8 H=W=64: {a}\n"
        ));
        text.push_str(&format!(
            "strided/grid attention ratio at T=8 H=W=128: {b}\n"
        ));
    }

    let output = CostOutput {
        rows,
        strided_grid_ratio_64: d64,
        strided_grid_ratio_128: d128,
    };
    emit(&args.common, &output, text)
}

fn build_dims(args: &CostArgs) -> Result<CostDims, String> {
    let file = args.common.file_config()?;
    if args.table1 {
        if args.stride == 0 {
            return Err("--stride must be >= 1".into());
        }
        let mut preset = table_preset(args.stride);
        // explicit overrides win over the preset
        preset.channels = resolve(args.channels, file.channels, preset.channels);
        preset.layers = resolve(args.layers, file.layers, preset.layers);
        preset.heads = resolve(args.heads, file.heads, preset.heads);
        preset.kernel = resolve(args.h, file.h, preset.kernel);
        preset.radius = resolve(args.r, file.r, preset.radius);
        return Ok(preset);
    }
    let dims_str = args.dims.clone().unwrap_or_else(|| "3x16x16".to_string());
    let d3 = parse_dims(&dims_str)?;
    let default_kernel = ((d3.height.max(d3.width)) as f64).sqrt().floor() as usize;
    Ok(CostDims {
        channels: resolve(args.channels, file.channels, 32),
        frames: d3.frames,
        height: d3.height,
        width: d3.width,
        layers: resolve(args.layers, file.layers, 3),
        heads: resolve(args.heads, file.heads, 2),
        kernel: resolve(args.h, file.h, default_kernel.max(1)),
        radius: resolve(args.r, file.r, 7),
    })
}
