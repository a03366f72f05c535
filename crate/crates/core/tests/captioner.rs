use std::collections::{BTreeMap, BTreeSet};

use idtrace_core::captioner::{
    plan_windows, run_pipeline, summarize_windows, CaptionMode, PipelineConfig, WindowCaption,
    WindowCharacter,
};
use idtrace_core::dataset::synthesize_clip;
use idtrace_core::extraction::{Criterion, ProfileEqualityJudge};
use idtrace_core::gateway::{mock, Gateway, GatewayConfig};
use idtrace_core::metrics::{evaluate_clip, sequence_similarity};
use idtrace_core::prompt::PromptSet;
use idtrace_core::sfslab::FeatureCatalog;
use idtrace_core::{AnnotatedClip, CharacterDescription, Execution, FeatureProfile};
use proptest::prelude::*;

fn vision(clips: &[AnnotatedClip]) -> Gateway {
    Gateway::with_backend(&GatewayConfig::mock("vision"), mock::builtin("vision", Some(clips)).unwrap()).unwrap()
}

fn rice_config() -> PipelineConfig {
    PipelineConfig {
        sfs: FeatureCatalog::builtin().sfs,
        judge: "profile".into(),
        ..PipelineConfig::default()
    }
}

#[test]
fn rice_with_vision_mock_recovers_ground_truth() {
    let clip = synthesize_clip(3, 12, 3, 0.5).unwrap();
    let gw = vision(std::slice::from_ref(&clip));
    let out = run_pipeline(&clip, &rice_config(), &PromptSet::builtin(), &gw, Execution::Parallel).unwrap();
    assert!(out.audit.is_complete());
    assert_eq!(out.audit.windows.len(), 3);
    assert_eq!(sequence_similarity(&out.sequences, &clip.ground_truth).unwrap(), 1.0);
}

#[test]
fn rice_registry_is_referentially_consistent() {
    let clip = synthesize_clip(8, 20, 5, 0.4).unwrap();
    let gw = vision(std::slice::from_ref(&clip));
    let out = run_pipeline(&clip, &rice_config(), &PromptSet::builtin(), &gw, Execution::Sequential).unwrap();
    let labels: BTreeSet<&str> = out.caption.registry.iter().map(|r| r.label.as_str()).collect();
    let marker = regex::Regex::new(r"\[frame (\d+)\]([^\[]*)").unwrap();
    let mention = regex::Regex::new(r"<([^<>]+)>").unwrap();
    let mut seen: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for c in marker.captures_iter(&out.caption.caption) {
        let f: u32 = c[1].parse().unwrap();
        for m in mention.captures_iter(&c[2]) {
            assert!(labels.contains(&m[1]), "unknown label {}", &m[1]);
            seen.entry(m[1].to_string()).or_default().push(f);
        }
    }
    for r in &out.caption.registry {
        assert_eq!(seen[&r.label], r.frames);
    }
}

#[test]
fn rice_links_only_on_profiles() {
    let clip = synthesize_clip(4, 9, 3, 0.6).unwrap();
    let gw = vision(std::slice::from_ref(&clip));
    let out = run_pipeline(&clip, &rice_config(), &PromptSet::builtin(), &gw, Execution::Sequential).unwrap();
    let person = regex::Regex::new(r"^a person \([^()]*\)$").unwrap();
    assert!(!out.audit.links.is_empty());
    for l in &out.audit.links {
        assert!(person.is_match(&l.judged_text), "judge saw {:?}", l.judged_text);
    }
}

#[test]
fn every_mode_runs_offline() {
    let clip = synthesize_clip(5, 8, 3, 0.5).unwrap();
    let gw = vision(std::slice::from_ref(&clip));
    for mode in CaptionMode::ALL {
        let config = PipelineConfig { mode, ..rice_config() };
        let out = run_pipeline(&clip, &config, &PromptSet::builtin(), &gw, Execution::Sequential).unwrap();
        assert!(out.audit.is_complete(), "{mode}: {:?}", out.audit.errors);
        let report = evaluate_clip(&clip.clip_id, &out.sequences, &clip.ground_truth).unwrap();
        if mode != CaptionMode::Baseline {
            assert_eq!(report.sequence_similarity, 1.0, "{mode}");
        }
    }
}

#[test]
fn rice_config_invariants() {
    let bad_window = PipelineConfig { window_len: 1, ..rice_config() };
    assert!(bad_window.validate().is_err());
    let no_sfs = PipelineConfig { sfs: Vec::new(), ..rice_config() };
    assert!(no_sfs.validate().is_err());
    assert!("RICE".parse::<CaptionMode>().is_ok());
    assert!("fancy".parse::<CaptionMode>().is_err());
}

fn window(index: usize, frame: u32, profile: FeatureProfile) -> WindowCaption {
    WindowCaption {
        window_index: index,
        frame_indices: vec![frame],
        frame_texts: vec![(frame, "<person 1> waits.".into())],
        characters: vec![WindowCharacter {
            name: "person 1".into(),
            description: CharacterDescription::new(format!("{profile} waiting")).unwrap().with_features(profile),
            frames: vec![frame],
        }],
    }
}

#[test]
fn summarize_merges_identical_profiles() {
    let p = FeatureProfile::new().with("hair color", "red");
    let q = FeatureProfile::new().with("hair color", "black");
    let same = summarize_windows(&[window(0, 1, p.clone()), window(1, 2, p.clone())], &ProfileEqualityJudge, 0.5, Criterion::FeaturesOnly).unwrap();
    assert_eq!(same.registry.len(), 1);
    assert_eq!(same.registry[0].frames, vec![1, 2]);
    assert_eq!(same.caption, "[frame 1] <P1> waits. [frame 2] <P1> waits.");
    let apart = summarize_windows(&[window(0, 1, p), window(1, 2, q)], &ProfileEqualityJudge, 0.5, Criterion::FeaturesOnly).unwrap();
    assert_eq!(apart.registry.len(), 2);
}

#[test]
fn single_window_keeps_its_characters() {
    let p = FeatureProfile::new().with("eyewear", "none");
    let s = summarize_windows(&[window(0, 1, p.clone())], &ProfileEqualityJudge, 0.5, Criterion::FeaturesOnly).unwrap();
    assert_eq!(s.registry.len(), 1);
    assert_eq!(s.registry[0].profile, p);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn windows_partition_frames(n in 1u32..=64, len in 1u32..=64) {
        let windows = plan_windows(n, len);
        let covered: Vec<u32> = windows.iter().flat_map(|w| w.clone()).collect();
        prop_assert_eq!(covered, (1..=n).collect::<Vec<_>>());
        for w in &windows[..windows.len() - 1] {
            prop_assert_eq!(w.end() - w.start() + 1, len);
        }
    }
}
