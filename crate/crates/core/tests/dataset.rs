use idtrace_core::dataset::{
    load_dataset, load_predictions, parse_dataset, synthesize_clip, write_atomic, write_dataset,
    DatasetError, MissingImagePolicy, PredictionFile,
};
use proptest::prelude::*;

#[test]
fn manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let clips: Vec<_> = (0..4).map(|s| synthesize_clip(s, 12, 3, 0.5).unwrap()).collect();
    let path = dir.path().join("data.json");
    write_dataset(&path, &clips).unwrap();
    assert_eq!(load_dataset(&path, MissingImagePolicy::Fail).unwrap(), clips);
}

#[test]
fn missing_image_policy() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"clips":[{"clip_id":"a","frames":[{"index":1,"image":"f1.jpg"}],"identities":[{"label":"x","frames":[1]}]}]}"#;
    let path = dir.path().join("m.json");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(load_dataset(&path, MissingImagePolicy::Fail), Err(DatasetError::MissingImage { .. })));
    std::fs::write(dir.path().join("f1.jpg"), b"img").unwrap();
    let clips = load_dataset(&path, MissingImagePolicy::Fail).unwrap();
    assert!(clips[0].frames[0].image_key.ends_with("f1.jpg"));
}

#[test]
fn schema_errors_name_the_clip() {
    let text = r#"{"clips":[{"clip_id":"bad","frames":[{"index":2,"image":"synthetic://x"}],"identities":[]}]}"#;
    let err = parse_dataset(text, None, MissingImagePolicy::Ignore).unwrap_err().to_string();
    assert!(err.contains("bad"), "{err}");
}

#[test]
fn predictions_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    for s in 0..3 {
        let clip = synthesize_clip(s, 6, 2, 0.5).unwrap();
        let p = PredictionFile::from_sequences(&clip.clip_id, &clip.ground_truth);
        write_atomic(&dir.path().join(format!("{s}.json")), serde_json::to_string(&p).unwrap().as_bytes()).unwrap();
    }
    let loaded = load_predictions(dir.path()).unwrap();
    assert_eq!(loaded.len(), 3);
    assert_eq!(loaded[2].clip_id, "synth-2");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn synthetic_clips_are_valid_and_deterministic(seed in any::<u64>(), n in 2u32..40, ids in 1u32..8, rate in 0.0f64..=1.0) {
        let a = synthesize_clip(seed, n, ids, rate).unwrap();
        prop_assert_eq!(&a, &synthesize_clip(seed, n, ids, rate).unwrap());
        prop_assert!(a.validate().is_ok());
        prop_assert_eq!(a.ground_truth.len() as u32, ids);
    }
}
