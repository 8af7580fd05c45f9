//! Short runs of all four algorithms on the same synthetic task, compared by
//! mean final test loss.

use fedlora::experiments::{run_in_memory, synth_defaults};
use fedlora::federation::Algorithm;

pub fn run_example() -> fedlora::Result<()> {
    for alg in Algorithm::ALL {
        let mut cfg = synth_defaults(alg, 1);
        cfg.federation.total_steps = 300;
        let records = run_in_memory(&cfg, None)?;
        let last_round = records.iter().map(|r| r.round).max().unwrap_or(0);
        let last: Vec<_> = records.iter().filter(|r| r.round == last_round).collect();
        let mean = last.iter().map(|r| r.test_loss).sum::<f64>() / last.len() as f64;
        println!("{alg:?}: mean test loss {mean:.4} after {} steps", last[0].step);
    }
    Ok(())
}

fn main() -> fedlora::Result<()> {
    run_example()
}
