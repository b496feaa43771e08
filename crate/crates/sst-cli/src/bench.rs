//! `sst bench`: micro-benchmarks of the attention and encoder forwards.
//!
//! Wall-clock numbers are informational and go to stderr; stdout carries
//! only the deterministic configuration echo and an output checksum, so
//! repeated runs produce byte-identical reports.

use std::time::Instant;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sst_core::attention::{sparse_attention, AttentionConfig};
use sst_core::encoder::{encode, EncoderConfig, EncoderParams, FrameValidity, ObjectMaskSequence};
use sst_core::patterns::{PatternSpec, Variant};
use sst_core::tensor::VideoFeatureTensor;

use crate::config::resolve;
use crate::{emit, parse_dims, CommonArgs};

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// What to time
    #[arg(long, value_parser = ["attention", "encoder"], default_value = "attention")]
    pub op: String,
    #[arg(long)]
    pub variant: Option<String>,
    /// Volume dims as TxHxW
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Timed repetitions after one warm-up (floor 5)
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Strided kernel h
    #[arg(long)]
    pub h: Option<usize>,
    /// Local window radius r
    #[arg(long)]
    pub r: Option<usize>,
}

#[derive(Serialize)]
struct BenchOutput {
    op: String,
    variant: String,
    dims: (usize, usize, usize),
    channels: usize,
    heads: usize,
    layers: usize,
    reps: usize,
    seed: u64,
    checksum: f64,
}

pub fn run(args: &BenchArgs) -> Result<(), String> {
    let file = args.common.file_config()?;
    let variant: Variant = resolve(args.variant.clone(), file.variant.clone(), "grid".into())
        .parse()
        .map_err(|e| format!("{e}"))?;
    let dims = parse_dims(&resolve(args.dims.clone(), None, "2x16x16".into()))?;
    let channels = resolve(args.channels, file.channels, 16);
    let heads = resolve(args.heads, file.heads, 2);
    let layers = resolve(args.layers, file.layers, 2);
    let reps = args.reps.max(5);
    let kernel = resolve(
        args.h,
        file.h,
        ((dims.height.max(dims.width)) as f64).sqrt() as usize,
    );
    let radius = resolve(args.r, file.r, 7);
    let spec = PatternSpec::new(variant)
        .with_kernel(kernel.max(1))
        .with_radius(radius);

    let mut rng = ChaCha8Rng::seed_from_u64(args.common.seed);
    let data: Vec<f64> = (0..channels * dims.cells())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let x = VideoFeatureTensor::from_data(channels, dims, data).map_err(|e| e.to_string())?;

    let run_once: Box<dyn Fn() -> Result<f64, String>> = match args.op.as_str() {
        "attention" => Box::new(move || {
            let out = sparse_attention(&x, &x, &x, &spec).map_err(|e| e.to_string())?;
            Ok(out.values.data().iter().sum())
        }),
        _ => {
            if channels % heads != 0 {
                return Err(format!(
                    "channels {channels} not divisible by heads {heads}"
                ));
            }
            let attn = AttentionConfig::new(heads, channels / heads, spec);
            let cfg = EncoderConfig::new(layers, attn, dims.frames);
            let params = EncoderParams::seeded(&cfg, args.common.seed);
            let masks = ObjectMaskSequence::new(
                dims,
                1,
                vec![0; dims.cells()],
                vec![FrameValidity::Reference; dims.frames],
            )
            .map_err(|e| e.to_string())?;
            Box::new(move || {
                let out = encode(&x, &cfg, &params, &masks).map_err(|e| e.to_string())?;
                Ok(out.features.data().iter().sum())
            })
        }
    };

    // warm-up
    let checksum = run_once()?;
    let mut micros: Vec<u128> = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let c = run_once()?;
        micros.push(start.elapsed().as_micros());
        debug_assert_eq!(c.to_bits(), checksum.to_bits());
    }
    micros.sort_unstable();
    let median = micros[micros.len() / 2];
    eprintln!(
        "timings_us: median={} min={} max={} reps={}",
        median,
        micros[0],
        micros[micros.len() - 1],
        reps
    );

    let output = BenchOutput {
        op: args.op.clone(),
        variant: variant.name().to_string(),
        dims: dims.as_tuple(),
        channels,
        heads,
        layers,
        reps,
        seed: args.common.seed,
        checksum,
    };
    let text = format!(
        "op: {}\nvariant: {}\ndims: {}x{}x{}\nchannels: {}\nheads: {}\nlayers: {}\nreps: {}\nseed: {}\nchecksum: {}\n",
        output.op,
        output.variant,
        output.dims.0,
        output.dims.1,
        output.dims.2,
        output.channels,
        output.heads,
        output.layers,
        output.reps,
        output.seed,
        output.checksum
    );
    emit(&args.common, &output, text)
}
