use std::time::Instant;

use dcan::labels::{GroundTruth, LabelConfig, VideoAnnotation};
use dcan::loss::{total_loss, LossConfig};
use dcan::model::{Dcan, ModelConfig};
use dcan::tensor::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap())
        .collect();
    let cfg = ModelConfig {
        temporal_len: 100,
        max_duration: 100,
        rgb_dim: 16,
        flow_dim: 16,
        base_channels: args.first().copied().unwrap_or(16),
        n_blocks: 4,
        n_sample: args.get(1).copied().unwrap_or(8),
        sample_channels: args.get(2).copied().unwrap_or(8),
        c_group: args.get(3).copied().unwrap_or(32),
        c_hidden: args.get(4).copied().unwrap_or(16),
        ..ModelConfig::default()
    };
    let b = args.get(5).copied().unwrap_or(8);
    let model = Dcan::<f64>::new(cfg, 0).unwrap();
    println!("params {}", model.params().num_elements());
    let ann = VideoAnnotation::new(vec![(0.2, 0.4), (0.6, 0.9)], 50.0).unwrap();
    let gt = GroundTruth::new(&ann, 100, 100, &LabelConfig::default()).unwrap();
    let gts = vec![gt; b];
    let rgb = Tensor::from_fn(vec![b, 16, 100], |i| ((i * 7) % 13) as f64 / 13.0);
    for _ in 0..3 {
        let t0 = Instant::now();
        let g = Graph::new();
        let p = model.params().bind(&g);
        let out = model
            .forward(&p, g.constant(rgb.clone()), g.constant(rgb.clone()))
            .unwrap();
        let t1 = t0.elapsed();
        let (l, _) = total_loss(
            &out,
            &gts,
            &p,
            &LossConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        l.backward().unwrap();
        println!("batch {b}: forward {:?} total {:?}", t1, t0.elapsed());
    }
}
