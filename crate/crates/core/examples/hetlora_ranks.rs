//! HETLoRA with rank self-pruning: prints each client's local rank at every
//! synchronization.

use fedlora::experiments::{run_in_memory, synth_defaults};
use fedlora::federation::Algorithm;

pub fn run_example() -> fedlora::Result<()> {
    let mut cfg = synth_defaults(Algorithm::Hetlora, 2);
    cfg.federation.total_steps = 200;
    let records = run_in_memory(&cfg, None)?;
    for k in 0..cfg.federation.clients {
        let ranks: Vec<String> = records
            .iter()
            .filter(|r| r.client_id == k)
            .map(|r| r.current_rank_k.map_or("-".into(), |v| v.to_string()))
            .collect();
        println!("client {k} ranks: {}", ranks.join(" "));
    }
    Ok(())
}

fn main() -> fedlora::Result<()> {
    run_example()
}
