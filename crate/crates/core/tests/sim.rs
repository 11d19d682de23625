mod common;

use common::small_env;
use mplx::metrics::Scenario;
use mplx::sim::dataset::{generate_dataset, sha256_hex, Dataset, Split};
use mplx::sim::{simulate_episode, EnvConfig};
use proptest::prelude::*;

#[test]
fn dataset_file_matches_manifest() {
    let env = small_env(4, 6, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eps.jsonl");
    let (data, manifest) = generate_dataset(&env, 30, 77, &path, 2).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(manifest.digest, sha256_hex(&bytes));
    assert_eq!(manifest.count, 30);
    let loaded = Dataset::load(&path).unwrap();
    assert_eq!(loaded.header, data.header);
    for (a, b) in loaded.episodes.iter().zip(&data.episodes) {
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.leader, b.leader);
        assert_eq!(a.seed, b.seed);
    }
    let sizes: Vec<usize> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|&s| loaded.split(s).len())
        .collect();
    assert_eq!(sizes, vec![24, 3, 3]);

    // a regenerated file is byte-identical
    let again = dir.path().join("again.jsonl");
    generate_dataset(&env, 30, 77, &again, 1).unwrap();
    assert_eq!(bytes, std::fs::read(&again).unwrap());
}

#[test]
fn scenarios_produce_valid_episodes() {
    let base = EnvConfig::default();
    for s in Scenario::ALL {
        let cfg = s.apply(&base);
        cfg.validate().unwrap();
        let ep = simulate_episode(&cfg, 3).unwrap();
        assert_eq!(ep.n_agents(), cfg.n_agents);
        assert!(ep.max_step() <= cfg.max_speed() * cfg.dt + 1e-9, "{}", s.name());
        assert!(ep.min_pairwise_distance() >= 2.0 * cfg.agent_radius - 0.05, "{}", s.name());
    }
}

#[test]
fn overcrowded_arena_is_rejected() {
    let cfg = EnvConfig {
        n_agents: 200,
        ..EnvConfig::default()
    };
    assert!(cfg.validate().is_err());
    assert!(simulate_episode(&cfg, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn episodes_respect_safety_and_speed(seed in any::<u64>(), n in 2usize..8, speed in 0.5f64..2.0) {
        let cfg = EnvConfig { n_agents: n, speed_multiplier: speed, ..EnvConfig::default() };
        let ep = simulate_episode(&cfg, seed).unwrap();
        prop_assert_eq!(ep.n_frames(), cfg.horizon());
        prop_assert!(ep.min_pairwise_distance() >= 2.0 * cfg.agent_radius - 0.05);
        prop_assert!(ep.max_step() <= cfg.max_speed() * cfg.dt + 1e-9);
        for (i, &l) in ep.leader.leader.iter().enumerate() {
            prop_assert!(l != i && l < n);
        }
    }
}
