//! Client-against-mock-server tests over loopback HTTP.

use steerlab_core::eval::AnnotationList;
use steerlab_judge::{
    Attribute, JudgeClient, JudgeConfig, MockBehavior, MockJudgeServer, MockRules,
};

fn rules() -> MockRules {
    MockRules::new(
        AnnotationList::from_targets(vec![
            "stout".into(),
            "tall".into(),
            "black".into(),
            "white".into(),
        ])
        .unwrap(),
    )
}

fn client_for(server: &MockJudgeServer, cache_dir: Option<&std::path::Path>) -> JudgeClient {
    JudgeClient::new(JudgeConfig {
        endpoint: server.url(),
        api_key_env: None,
        model: "mock-judge".into(),
        timeout_secs: 10,
        max_concurrency: 4,
        max_retries: 2,
        backoff_base_ms: 10,
        cache_dir: cache_dir.map(std::path::Path::to_path_buf),
    })
    .unwrap()
}

#[test]
fn annotate_count_round_trip() {
    let server = MockJudgeServer::start(rules()).unwrap();
    let client = client_for(&server, None);
    let ann = client.annotate_count("a stout man", Attribute::Race).unwrap();
    assert_eq!(ann.count, 1);
    assert_eq!(ann.spans, vec!["stout"]);
}

#[test]
fn few_shot_exemplar_text_counts_two() {
    let server = MockJudgeServer::start(rules()).unwrap();
    let client = client_for(&server, None);
    let ann = client
        .annotate_count("A black woman and a white man", Attribute::Race)
        .unwrap();
    assert_eq!(ann.count, 2);
    assert_eq!(ann.spans, vec!["black", "white"]);
}

#[test]
fn judge_match_yes_and_no() {
    let server = MockJudgeServer::start(rules()).unwrap();
    let client = client_for(&server, None);
    let yes = client
        .judge_match("a person", "a calm person with a tidy manner")
        .unwrap();
    assert!(yes.matches);
    let no = client.judge_match("a person", "empty scene").unwrap();
    assert!(!no.matches);
}

#[test]
fn retry_recovers_from_transient_failures() {
    let server = MockJudgeServer::start_with(
        rules(),
        MockBehavior {
            fail_first: 2,
            ..MockBehavior::default()
        },
    )
    .unwrap();
    let client = client_for(&server, None);
    let ann = client.annotate_count("a tall person", Attribute::Race).unwrap();
    assert_eq!(ann.count, 1);
    assert_eq!(server.request_count(), 3);
}

#[test]
fn exhausted_retries_report_unavailable() {
    let server = MockJudgeServer::start_with(
        rules(),
        MockBehavior {
            fail_first: usize::MAX,
            ..MockBehavior::default()
        },
    )
    .unwrap();
    let client = client_for(&server, None);
    match client.annotate_count("a tall person", Attribute::Race) {
        Err(steerlab_judge::JudgeError::Unavailable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected Unavailable, got {other:?}"),
    }
}

#[test]
fn corpus_annotation_preserves_order_and_tolerates_failures() {
    let server = MockJudgeServer::start_with(
        rules(),
        MockBehavior {
            fail_contains: Some("poison".into()),
            ..MockBehavior::default()
        },
    )
    .unwrap();
    let client = client_for(&server, None);
    let texts: Vec<String> = (0..20)
        .map(|i| {
            if i == 7 || i == 13 {
                format!("poison item {i}")
            } else {
                format!("item {i} shows a tall person and a stout person")
            }
        })
        .collect();
    let out = client.annotate_corpus(&texts, Attribute::Race).unwrap();
    assert_eq!(out.annotations.len(), 20);
    assert_eq!(out.failures.len(), 2);
    assert_eq!(out.failures[0].0, 7);
    assert_eq!(out.failures[1].0, 13);
    for (i, ann) in out.annotations.iter().enumerate() {
        if i == 7 || i == 13 {
            assert!(ann.is_none());
        } else {
            assert_eq!(ann.as_ref().unwrap().count, 2, "item {i}");
        }
    }
}

#[test]
fn too_many_failures_abort_the_corpus() {
    let server = MockJudgeServer::start_with(
        rules(),
        MockBehavior {
            fail_contains: Some("poison".into()),
            ..MockBehavior::default()
        },
    )
    .unwrap();
    let client = client_for(&server, None);
    let texts: Vec<String> = (0..10)
        .map(|i| {
            if i < 3 {
                format!("poison {i}")
            } else {
                "a tall person".to_string()
            }
        })
        .collect();
    match client.annotate_corpus(&texts, Attribute::Race) {
        Err(steerlab_judge::JudgeError::CorpusAnnotationFailed { failed, total }) => {
            assert_eq!(failed, 3);
            assert_eq!(total, 10);
        }
        other => panic!("expected CorpusAnnotationFailed, got {other:?}"),
    }
}

#[test]
fn cached_rerun_makes_zero_requests() {
    let server = MockJudgeServer::start(rules()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let texts: Vec<String> = (0..8).map(|i| format!("generation {i} a tall person")).collect();

    let client = client_for(&server, Some(dir.path()));
    let first = client.annotate_corpus(&texts, Attribute::Race).unwrap();
    let after_first = server.request_count();
    assert_eq!(after_first, 8);

    // same client: in-memory + disk cache both hot
    let second = client.annotate_corpus(&texts, Attribute::Race).unwrap();
    assert_eq!(server.request_count(), after_first);

    // fresh client reloads the disk cache
    let fresh = client_for(&server, Some(dir.path()));
    let third = fresh.annotate_corpus(&texts, Attribute::Race).unwrap();
    assert_eq!(server.request_count(), after_first);

    for ((a, b), c) in first
        .annotations
        .iter()
        .zip(&second.annotations)
        .zip(&third.annotations)
    {
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
