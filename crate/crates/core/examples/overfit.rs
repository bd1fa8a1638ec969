use std::time::Instant;
use sarfl::datasim::generate_chip;
use sarfl::model::{backward, init_params, Batch, NetShape};
use sarfl::numerics::{RngStream, StreamId};

fn main() {
    let shape = NetShape::new(10, 32, 32);
    let mut rng = RngStream::new(1, StreamId::ModelInit);
    let params = init_params(&shape, &mut rng);
    let mut data_rng = RngStream::new(1, StreamId::TrainData);
    let chips: Vec<_> = (0..32)
        .map(|i| generate_chip(i % 10, 10, 32, 3.0, &mut data_rng).unwrap())
        .collect();
    let labels: Vec<usize> = (0..32).map(|i| i % 10).collect();
    let batch = Batch::new(chips.iter().map(|c| &c.grid).collect(), labels);
    let t0 = Instant::now();
    let mut sink = 0.0;
    let reps = 100;
    for _ in 0..reps {
        let (loss, grad) = backward(&params, &batch);
        sink += loss + grad[0];
    }
    let per_sample = t0.elapsed().as_secs_f64() / (reps * 32) as f64;
    println!("backward: {:.1} us/sample ({sink:.3})", per_sample * 1e6);
}
