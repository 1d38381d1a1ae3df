use std::path::PathBuf;

use clap::Args;
use hsnn_core::events::{synth_gestures, write_dataset};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::failure::CmdResult;
use crate::manifest::RunManifest;

#[derive(Args, Debug, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    /// Sample shape `C,H,W,T`.
    #[arg(long, default_value = "2,32,32,20", value_parser = crate::parse_shape)]
    pub shape: [usize; 4],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frame width in microseconds.
    #[arg(long, default_value_t = 10_000)]
    pub bin_us: u32,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_data(a: GenDataArgs) -> CmdResult {
    let manifest = RunManifest::begin("gen-data", &a, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (sample_seed, jitter_seed) = (rng.next_u64(), rng.next_u64());
    let samples = synth_gestures::<f32>(a.classes, a.count, a.shape, sample_seed)?;
    let m = write_dataset(&a.out, &samples, a.shape, a.classes, a.bin_us, jitter_seed)?;
    let path = manifest.finish(&a.out)?;
    println!(
        "wrote {} samples ({} classes, shape {:?}) to {}; manifest {}",
        m.entries.len(),
        a.classes,
        a.shape,
        a.out.display(),
        path.display()
    );
    Ok(())
}
