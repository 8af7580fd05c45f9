//! Reduced-rank regression: best attainable training loss at every rank for
//! a noiseless synthetic client of true rank 3.

use fedlora::models::rrr_best_fit;
use fedlora::synthdata::SyntheticSpec;

pub fn run_example() -> fedlora::Result<()> {
    let spec = SyntheticSpec {
        true_ranks: vec![3],
        noise_levels: vec![0.0],
        ..SyntheticSpec::default()
    };
    let client = spec.generate(0)?.remove(0);
    for rank in 1..=5 {
        let fit = rrr_best_fit(&client.train, rank)?;
        println!("rank {rank}: loss {:.3e}, truncation error {:.3e}", fit.loss, fit.truncation_error);
    }
    Ok(())
}

fn main() -> fedlora::Result<()> {
    run_example()
}
