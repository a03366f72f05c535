use idtrace_core::extraction::Criterion;
use idtrace_core::gateway::{Gateway, GatewayConfig, GatewayError};
use idtrace_core::prompt::PromptSet;
use idtrace_core::sfslab::{
    builtin_formats, evaluate_sfs_strength, generate_pairs, instantiate_trial, judge_criterion_bench,
    recompute_scores, resume_search, search_sfs, FeatureCatalog, PairGenConfig, PruneRule,
    SearchBudget, SearchConfig, SfsError, StrengthConfig, TrialMode, TrialSpec,
};
use idtrace_core::Execution;
use proptest::prelude::*;

fn gateway(name: &str) -> Gateway {
    Gateway::new(&GatewayConfig::mock(name)).unwrap()
}

fn small_budget() -> SearchBudget {
    SearchBudget {
        max_n: 2,
        formats_per_combination: 2,
        max_combinations: 40,
        ..SearchBudget::default()
    }
}

#[test]
fn planted_feature_is_recovered() {
    let catalog = FeatureCatalog::builtin();
    let formats = builtin_formats();
    let prompts = PromptSet::builtin();
    let config = SearchConfig {
        catalog: &catalog,
        formats: &formats,
        budget: small_budget(),
        prune: PruneRule::default(),
        judge_prompt: prompts.get("sfs_trial").unwrap(),
        execution: Execution::Parallel,
    };
    let out = search_sfs(&config, &gateway("planted:hair color")).unwrap();
    assert_eq!(out.sfs, ["hair color"]);
    let again = search_sfs(&config, &gateway("planted:hair color")).unwrap();
    assert_eq!(out.state.trace_hash(), again.state.trace_hash());
    assert_eq!(out, again);
}

#[test]
fn no_pruning_keeps_full_catalog() {
    let catalog = FeatureCatalog::builtin();
    let formats = builtin_formats();
    let prompts = PromptSet::builtin();
    let config = SearchConfig {
        catalog: &catalog,
        formats: &formats,
        budget: SearchBudget { max_n: 1, ..small_budget() },
        prune: PruneRule::default(),
        judge_prompt: prompts.get("sfs_trial").unwrap(),
        execution: Execution::Sequential,
    };
    let out = search_sfs(&config, &gateway("profile")).unwrap();
    assert_eq!(out.sfs.len(), catalog.features.len());
    assert!(out.state.pruned.is_empty());
}

#[test]
fn scores_recount_from_trace() {
    let catalog = FeatureCatalog::builtin();
    let formats = builtin_formats();
    let prompts = PromptSet::builtin();
    let config = SearchConfig {
        catalog: &catalog,
        formats: &formats,
        budget: small_budget(),
        prune: PruneRule::default(),
        judge_prompt: prompts.get("sfs_trial").unwrap(),
        execution: Execution::Parallel,
    };
    let out = search_sfs(&config, &gateway("planted:eyewear")).unwrap();
    let mut survivors: Vec<String> = catalog.names().map(str::to_string).collect();
    for round in &out.state.rounds {
        assert_eq!(round.m, survivors.len());
        assert_eq!(recompute_scores(&out.state.trace, round.n, &survivors), round.scores);
        for s in round.scores.values() {
            for v in [s.base, s.contrast, s.mixture, s.mixture_contrast].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        let dropped: Vec<&str> = out.state.pruned.iter().filter(|p| p.round == round.n).map(|p| p.feature.as_str()).collect();
        survivors.retain(|f| !dropped.contains(&f.as_str()));
    }
    assert_eq!(survivors, out.sfs);
}

#[test]
fn interrupted_search_resumes_to_same_result() {
    let catalog = FeatureCatalog::builtin();
    let formats = builtin_formats();
    let prompts = PromptSet::builtin();
    let dir = tempfile::tempdir().unwrap();
    let config = SearchConfig {
        catalog: &catalog,
        formats: &formats,
        budget: small_budget(),
        prune: PruneRule::default(),
        judge_prompt: prompts.get("sfs_trial").unwrap(),
        execution: Execution::Sequential,
    };
    let recording = Gateway::new(&GatewayConfig {
        cache_dir: Some(dir.path().to_path_buf()),
        ..GatewayConfig::mock("planted:hair color")
    })
    .unwrap();
    let full = search_sfs(&config, &recording).unwrap();

    // Drop some fixtures so a replay-only run stops part way.
    let mut files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    let removed: Vec<_> = files.iter().step_by(7).cloned().collect();
    let saved: Vec<_> = removed.iter().map(|p| std::fs::read(p).unwrap()).collect();
    for p in &removed {
        std::fs::remove_file(p).unwrap();
    }
    let replay = Gateway::new(&GatewayConfig {
        model: "mock-planted:hair color".into(),
        ..GatewayConfig::replay(dir.path())
    })
    .unwrap();
    let state = match search_sfs(&config, &replay) {
        Err(SfsError::Interrupted { source: GatewayError::Unrecorded { .. }, state }) => {
            assert!(!state.trace.is_empty());
            state
        }
        other => panic!("expected interruption, got {other:?}"),
    };
    for (p, bytes) in removed.iter().zip(saved) {
        std::fs::write(p, bytes).unwrap();
    }
    let resumed = resume_search(&config, &replay, *state).unwrap();
    assert_eq!(resumed.sfs, full.sfs);
    assert_eq!(resumed.state.rounds, full.state.rounds);
}

fn strength(policy: &str) -> idtrace_core::sfslab::StrengthScores {
    let catalog = FeatureCatalog::builtin();
    let prompts = PromptSet::builtin();
    evaluate_sfs_strength(
        &catalog.sfs,
        &catalog,
        &builtin_formats(),
        &StrengthConfig::default(),
        prompts.get("sfs_trial").unwrap(),
        &gateway(policy),
        Execution::Parallel,
    )
    .unwrap()
}

#[test]
fn strength_battery_under_mocks() {
    let s = strength("profile");
    assert_eq!((s.base, s.mixture, s.mixture_contrast), (1.0, 1.0, 1.0));
    let e = strength("extras");
    assert_eq!(e.mixture_contrast, 0.0);
    assert_eq!(e.base, 1.0);
}

#[test]
fn features_criterion_is_exact_on_synthetic_pairs() {
    let pairs = generate_pairs(&FeatureCatalog::builtin(), &PairGenConfig::default()).unwrap();
    let r = judge_criterion_bench(&pairs, Criterion::FeaturesOnly, &PromptSet::builtin(), &gateway("profile"), Execution::Parallel).unwrap();
    assert_eq!((r.precision, r.recall), (1.0, 1.0));
}

#[test]
fn environment_criterion_tracks_scene_collisions() {
    let pairs = generate_pairs(&FeatureCatalog::builtin(), &PairGenConfig { n_pairs: 400, ..PairGenConfig::default() }).unwrap();
    // Oracle: the environment judge says "same" exactly when the scene
    // phrases coincide.
    let scene = |s: &str| s.rsplit_once(" in the ").unwrap().1.to_string();
    let collide: Vec<bool> = pairs.iter().map(|p| scene(&p.a) == scene(&p.b)).collect();
    let predicted = collide.iter().filter(|c| **c).count();
    let tp = pairs.iter().zip(&collide).filter(|(p, c)| **c && p.same).count();
    let actual = pairs.iter().filter(|p| p.same).count();
    let r = judge_criterion_bench(&pairs, Criterion::Environment, &PromptSet::builtin(), &gateway("profile"), Execution::Sequential).unwrap();
    assert_eq!(r.precision, tp as f64 / predicted as f64);
    assert_eq!(r.recall, tp as f64 / actual as f64);
    assert!(r.recall < 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn anchors_follow_mode_rules(seed in any::<u64>(), fi in 0usize..8, n in 1usize..=3, mode_i in 0usize..5) {
        let catalog = FeatureCatalog::builtin();
        let formats = builtin_formats();
        let format = &formats[fi % formats.len()];
        let mode = TrialMode::ALL[mode_i];
        let names: Vec<String> = catalog.names().map(str::to_string).collect();
        let probe: Vec<String> = names[..n].to_vec();
        let extras: Vec<String> = if mode.uses_extras() { names[10..15].to_vec() } else { Vec::new() };
        let spec = TrialSpec { format_id: format.id.clone(), mode, probe_features: probe.clone(), extra_features: extras, seed };
        let t = instantiate_trial(format, &spec, &catalog).unwrap();
        prop_assert_eq!(&t, &instantiate_trial(format, &spec, &catalog).unwrap());
        let (a, b) = t.anchor_texts();
        match mode {
            TrialMode::Base => prop_assert_eq!(a, b),
            TrialMode::Contrast => {
                for f in &probe {
                    prop_assert_ne!(t.anchor_first.get(f), t.anchor_last.get(f));
                }
                prop_assert_eq!(t.anchor_first.names().collect::<Vec<_>>(), t.anchor_last.names().collect::<Vec<_>>());
            }
            _ => {
                for f in &probe {
                    prop_assert_eq!(t.anchor_first.get(f), t.anchor_last.get(f));
                }
            }
        }
        prop_assert_eq!(t.expected_same, mode != TrialMode::Contrast);
    }
}
