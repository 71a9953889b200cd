use std::time::Instant;

use rand::SeedableRng;
use spatiospatial::models::{build_model, ArchitectureKind, ModelConfig};
use spatiospatial::tensor::{Tape, Tensor};

fn main() {
    for kind in ArchitectureKind::ALL {
        let mut m = build_model::<f32>(kind, ModelConfig::default(), 0).unwrap();
        println!("{kind}: {}", m.count_parameters());
        let x = Tensor::from_fn(&[1, 1, 32, 32, 32], |i| ((i * 7919) % 1000) as f32 / 1000.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t0 = Instant::now();
        let tape = Tape::new();
        let xv = tape.constant(x);
        let y = m.forward(xv, true, &mut rng).unwrap();
        let t1 = t0.elapsed();
        let g = tape.backward(y.sum()).unwrap();
        m.store.accumulate(&g);
        println!("  fwd {:?} fwd+bwd {:?}", t1, t0.elapsed());
    }
}
