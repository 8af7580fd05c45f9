//! Federation protocol: synchronization, degenerate configurations, error
//! propagation and determinism.

use fedlora::experiments::{build_setups, run_in_memory, synth_defaults, RunConfig};
use fedlora::federation::{init_clients, run_federation, Algorithm, ClientSetup, PruneMode};
use fedlora::models::adapter_sum;
use fedlora::numerics::numerical_rank;
use fedlora::Error;

fn short(alg: Algorithm, steps: usize) -> RunConfig {
    let mut cfg = synth_defaults(alg, 5);
    cfg.federation.total_steps = steps;
    cfg
}

#[test]
fn partial_final_round_and_single_round() {
    let cfg = short(Algorithm::Homlora, 25);
    let records = run_in_memory(&cfg, None).unwrap();
    let steps: Vec<usize> = records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![10, 10, 20, 20, 25, 25]);

    let mut one = short(Algorithm::Pf2lora, 10);
    one.federation.interval = 10;
    assert_eq!(run_in_memory(&one, None).unwrap().len(), 2);
}

#[test]
fn identical_clients_match_a_single_client() {
    let single = {
        let mut cfg = short(Algorithm::Homlora, 40);
        cfg.federation.clients = 1;
        cfg
    };
    let base = build_setups(&short(Algorithm::Homlora, 40)).unwrap();
    let one = vec![base[0].clone()];
    let three = vec![base[0].clone(), base[0].clone(), base[0].clone()];
    let collect = |clients: usize, setups: &[ClientSetup]| {
        let mut cfg = single.federation.clone();
        cfg.clients = clients;
        let mut out = Vec::new();
        run_federation(&cfg, setups, None, &mut |log| {
            out.push(log.records.clone());
            Ok(())
        })
        .unwrap();
        out
    };
    let reference = collect(1, &one);
    for (round, records) in collect(3, &three).iter().enumerate() {
        for r in records {
            let mut expected = reference[round][0].clone();
            expected.client_id = r.client_id;
            assert_eq!(r, &expected);
        }
    }
}

#[test]
fn perfedavg_without_inner_step_is_homlora() {
    let mut hom = short(Algorithm::Homlora, 30);
    hom.federation.batch_size = Some(50);
    let mut per = hom.clone();
    per.federation.algorithm = Algorithm::Perfedavg;
    per.federation.lower_rate = 0.0;
    assert_eq!(run_in_memory(&hom, None).unwrap(), run_in_memory(&per, None).unwrap());
}

#[test]
fn perfedavg_modes_agree_for_small_inner_steps() {
    let mut fo = short(Algorithm::Perfedavg, 20);
    fo.federation.lower_rate = 1e-6;
    let mut exact = fo.clone();
    exact.federation.maml_mode = fedlora::federation::MamlMode::Exact;
    let a = run_in_memory(&fo, None).unwrap();
    let b = run_in_memory(&exact, None).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x.test_loss - y.test_loss).abs() <= 1e-4 * x.test_loss);
    }
}

#[test]
fn pf2lora_synchronizes_only_the_common_adapter() {
    let cfg = short(Algorithm::Pf2lora, 50);
    let setups = build_setups(&cfg).unwrap();
    let f = &cfg.federation;

    for s in init_clients(f, &setups).unwrap() {
        let sum = adapter_sum(&s.common, s.client.as_ref());
        let common_rank = numerical_rank(&s.common.product()).unwrap();
        assert_eq!(numerical_rank(&sum).unwrap(), common_rank + f.client_rank);
    }

    let mut envelope_ok = true;
    let outcome = run_federation(f, &setups, None, &mut |_| Ok(())).unwrap();
    for s in &outcome.states {
        let sum = adapter_sum(&s.common, s.client.as_ref());
        envelope_ok &= numerical_rank(&sum).unwrap() <= f.rank + f.client_rank;
    }
    assert!(envelope_ok);
    assert_eq!(outcome.states[0].common, outcome.states[1].common);
    assert_ne!(outcome.states[0].client, outcome.states[1].client);
    assert_eq!(outcome.rounds, 5);
}

#[test]
fn hetlora_with_fixed_rank_never_prunes() {
    for mode in [PruneMode::TrailingPenalty, PruneMode::RankDecay] {
        let mut cfg = short(Algorithm::Hetlora, 60);
        let h = &mut cfg.federation.hetlora;
        h.prune_mode = mode;
        h.r_min = 3;
        h.r_max = 3;
        h.initial_ranks = None;
        let records = run_in_memory(&cfg, None).unwrap();
        assert!(records.iter().all(|r| r.current_rank_k == Some(3)));
    }
}

#[test]
fn client_failure_names_the_client() {
    let cfg = short(Algorithm::Homlora, 20);
    let mut setups = build_setups(&cfg).unwrap();
    setups[1].train.x[(0, 0)] = f64::NAN;
    let err = run_federation(&cfg.federation, &setups, None, &mut |_| Ok(())).unwrap_err();
    match &err {
        Error::Client { client_id, step, .. } => {
            assert_eq!(*client_id, 1);
            assert_eq!(*step, 1, "{err}");
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn runs_are_pure_functions_of_the_config() {
    for alg in Algorithm::ALL {
        let mut cfg = short(alg, 30);
        cfg.federation.batch_size = Some(32);
        assert_eq!(run_in_memory(&cfg, Some(1)).unwrap(), run_in_memory(&cfg, Some(4)).unwrap());
        let mut other = cfg.clone();
        other.federation.seed += 1;
        assert_ne!(run_in_memory(&cfg, None).unwrap(), run_in_memory(&other, None).unwrap());
    }
}
