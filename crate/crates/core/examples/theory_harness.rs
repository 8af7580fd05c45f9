//! Deterministic bilevel runs on random quadratic instances: decay of the
//! hyper-objective gradient and per-step checks of the lemma bounds.

use fedlora::experiments::{run_theory, TheoryStudy};

pub fn run_example() -> fedlora::Result<()> {
    let study = TheoryStudy {
        instances: 3,
        ..TheoryStudy::default()
    };
    let (_, summary) = run_theory(&study)?;
    for s in &summary.instances {
        println!(
            "instance {}: mu {:.3}, L {:.3}, eta {:.3e}, decay ratio {:?}, violations {}/{}",
            s.instance, s.mu, s.smoothness, s.eta, s.decay_ratio, s.contraction_violations, s.bias_violations
        );
    }
    println!("decay {} / lemmas {}", summary.decay_pass, summary.lemma_pass);
    Ok(())
}

fn main() -> fedlora::Result<()> {
    run_example()
}
