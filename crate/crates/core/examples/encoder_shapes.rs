//! Branch shapes of the multi-resolution encoder and parameter counts for a
//! few widths.
//!
//! cargo run --release --example encoder_shapes

use ecgcl::autograd::Mode;
use ecgcl::encoder::EncoderConfig;
use ecgcl::network::{Network, TaskShape};
use ecgcl::nn::Forward;
use ecgcl::params::{ParamSpec, ParamStore};
use ecgcl::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ecgcl::Result<()> {
    let cfg = EncoderConfig::default();
    let net = Network::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &len in &[1000usize, 2500, 5000] {
        let task = TaskShape::seg(1, len);
        let store: ParamStore<f32> = ParamStore::init_from_specs(&net.specs(&task), &mut rng);
        let mut stats = net.init_stats(&task);
        let mut f = Forward::new(&store, &mut stats, Mode::Eval);
        let x = f.graph.input(Tensor::zeros(&[1, 1, len]));
        let branches = net.encoder.forward(&mut f, x)?;
        let dims: Vec<String> = branches
            .iter()
            .map(|&b| {
                let s = f.graph.value(b).shape();
                format!("{}×{}", s[1], s[2])
            })
            .collect();
        println!("L={len:5}: {}", dims.join("  "));
    }

    println!();
    println!("{:>3} {:>6} {:>10} {:>10}", "C", "blocks", "seg (12)", "cls (12,9)");
    for &c in &[4usize, 8, 12, 18] {
        let net = Network::new(EncoderConfig {
            base_channels: c,
            ..cfg
        })?;
        let count = |t: TaskShape| net.specs(&t).iter().map(ParamSpec::numel).sum::<usize>();
        println!(
            "{c:>3} {:>6} {:>10} {:>10}",
            cfg.blocks_per_stage,
            count(TaskShape::seg(12, 5000)),
            count(TaskShape::cls(12, 9, 5000))
        );
    }
    Ok(())
}
