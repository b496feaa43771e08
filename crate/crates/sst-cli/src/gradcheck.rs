//! `sst gradcheck`: analytic backward versus central finite differences.

use clap::Args;
use serde::Serialize;
use sst_core::gradcheck::{check_sparse_attention, GradCheckReport};
use sst_core::patterns::{PatternSpec, Variant};

use crate::config::resolve;
use crate::{emit, parse_dims, CommonArgs};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Variant to check, or "all"
    #[arg(long, default_value = "all")]
    pub variant: String,
    /// Volume dims as TxHxW
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Maximum allowed relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Strided kernel h
    #[arg(long)]
    pub h: Option<usize>,
    /// Local window radius r
    #[arg(long)]
    pub r: Option<usize>,
}

#[derive(Serialize)]
struct GradcheckOutput {
    reports: Vec<GradCheckReport>,
    max_rel_err: f64,
    pass: bool,
}

pub fn run(args: &GradcheckArgs) -> Result<(), String> {
    let file = args.common.file_config()?;
    let variants: Vec<Variant> = if args.variant == "all" {
        Variant::ALL.to_vec()
    } else {
        vec![args.variant.parse().map_err(|e| format!("{e}"))?]
    };
    let dims = parse_dims(&resolve(args.dims.clone(), None, "2x3x3".into()))?;
    let channels = resolve(args.channels, file.channels, 2);
    let kernel = resolve(args.h, file.h, 2);
    let radius = resolve(args.r, file.r, 1);

    let mut reports = Vec::new();
    for variant in variants {
        let spec = PatternSpec::new(variant)
            .with_kernel(kernel)
            .with_radius(radius);
        let report = check_sparse_attention(
            &spec,
            channels,
            dims,
            args.trials,
            args.step,
            args.tolerance,
            args.common.seed,
        )
        .map_err(|e| e.to_string())?;
        reports.push(report);
    }

    let max_rel_err = reports.iter().map(|r| r.max_rel_err()).fold(0.0, f64::max);
    let pass = reports.iter().all(|r| r.pass);
    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!(
            "variant {}: max_rel_err q={} k={} v={} {}\n",
            r.variant,
            r.max_rel_err_query,
            r.max_rel_err_key,
            r.max_rel_err_value,
            if r.pass { "pass" } else { "FAIL" }
        ));
    }
    text.push_str(&format!("max_rel_err: {max_rel_err}\n"));
    text.push_str(&format!("result: {}\n", if pass { "pass" } else { "FAIL" }));

    let output = GradcheckOutput {
        reports,
        max_rel_err,
        pass,
    };
    emit(&args.common, &output, text)?;
    if pass {
        Ok(())
    } else {
        Err(format!(
            "gradient check failed: max relative error {max_rel_err} exceeds {}",
            args.tolerance
        ))
    }
}
