//! Remote judge behavior against a local scripted chat endpoint: parsing,
//! retries, caching, presentation-order fairness, and generation.

mod common;

use std::sync::Arc;

use common::{prompt_of, write_templates, MockChatServer, MockReply};
use smoothctl_core::judge::{
    DuelSide, Generator, JudgeError, PairwiseJudge, PromptTemplateSet, RelevanceJudge,
    RemoteClient, RemoteEndpoint, RemoteGenerator, RemoteJudge, RemoteJudgeConfig, VerdictCache,
};
use smoothctl_core::rating::Outcome;

fn harness(
    server: &MockChatServer,
    config: RemoteJudgeConfig,
) -> (RemoteJudge, Arc<VerdictCache>) {
    let dir = tempfile::tempdir().unwrap();
    let (pairwise, relevance, generation) = write_templates(dir.path());
    let templates = Arc::new(PromptTemplateSet::load(pairwise, relevance, generation).unwrap());
    let mut endpoint = RemoteEndpoint::new(server.url(), "mock-model");
    endpoint.backoff_base_ms = 1;
    let client = Arc::new(RemoteClient::new(endpoint));
    let cache = Arc::new(VerdictCache::in_memory());
    (
        RemoteJudge::new(client, templates, Arc::clone(&cache), config),
        cache,
    )
}

#[test]
fn parses_letters_and_derandomizes_against_position_bias() {
    // The mock always prefers whichever response is shown first. With
    // seeded presentation randomization, de-randomized outcomes are 50/50.
    let server = MockChatServer::always_first();
    let (mut judge, _cache) = harness(&server, RemoteJudgeConfig::default());

    let calls = 10_000;
    let mut a_wins = 0usize;
    for i in 0..calls {
        let left = format!("left text {i}");
        let right = format!("right text {i}");
        let verdict = judge
            .judge_pair(
                DuelSide::new("a", &left),
                DuelSide::new("b", &right),
                "anger",
            )
            .unwrap();
        if verdict.outcome == Outcome::AWins {
            a_wins += 1;
        }
    }
    let fraction = a_wins as f64 / calls as f64;
    assert!(
        (fraction - 0.5).abs() <= 0.02,
        "position bias not cancelled: A wins {fraction}"
    );
    assert_eq!(server.request_count(), calls);
}

#[test]
fn disabling_randomization_exposes_position_bias() {
    let server = MockChatServer::always_first();
    let config = RemoteJudgeConfig {
        randomize_order: false,
        ..RemoteJudgeConfig::default()
    };
    let (mut judge, _cache) = harness(&server, config);
    for i in 0..50 {
        let left = format!("L{i}");
        let right = format!("R{i}");
        let verdict = judge
            .judge_pair(DuelSide::new("a", &left), DuelSide::new("b", &right), "x")
            .unwrap();
        assert_eq!(verdict.outcome, Outcome::AWins);
    }
}

#[test]
fn verdicts_cache_by_content_and_replay_identically() {
    let server = MockChatServer::start(|_| MockReply::Content("0".into()));
    let (mut judge, _cache) = harness(&server, RemoteJudgeConfig::default());

    let first = judge.judge_relevance("the query", "the response").unwrap();
    assert_eq!(first.score, 0);
    assert!(!first.cached);
    assert_eq!(server.request_count(), 1);

    let second = judge.judge_relevance("the query", "the response").unwrap();
    assert_eq!(second.score, 0);
    assert!(second.cached);
    assert_eq!(second.raw_reply, first.raw_reply);
    assert_eq!(server.request_count(), 1, "cache hit must not call out");
}

#[test]
fn pairwise_cache_hit_skips_http() {
    let server = MockChatServer::start(|_| MockReply::Content("B".into()));
    let (mut judge, cache) = harness(&server, RemoteJudgeConfig::default());

    let verdict = judge
        .judge_pair(DuelSide::new("x", "tx"), DuelSide::new("y", "ty"), "anger")
        .unwrap();
    assert!(!verdict.cached);
    let requests_after_first = server.request_count();

    let replay = judge
        .judge_pair(DuelSide::new("x", "tx"), DuelSide::new("y", "ty"), "anger")
        .unwrap();
    assert_eq!(replay.outcome, verdict.outcome);
    assert!(replay.cached);
    assert_eq!(server.request_count(), requests_after_first);
    assert_eq!(cache.len(), 1);
}

#[test]
fn unparseable_reply_retries_once_with_reformulation() {
    let mut call = 0;
    let server = MockChatServer::start(move |body| {
        call += 1;
        if call == 1 {
            MockReply::Content("the first one seems angrier".into())
        } else {
            assert!(
                prompt_of(body).contains("Answer with a single letter"),
                "retry must reformulate"
            );
            MockReply::Content("B".into())
        }
    });
    let (mut judge, _cache) = harness(&server, RemoteJudgeConfig::default());
    let verdict = judge
        .judge_pair(DuelSide::new("x", "tx"), DuelSide::new("y", "ty"), "anger")
        .unwrap();
    assert!(matches!(verdict.outcome, Outcome::AWins | Outcome::BWins));
    assert_eq!(server.request_count(), 2);
}

#[test]
fn persistent_garbage_is_a_protocol_error() {
    let server = MockChatServer::start(|_| MockReply::Content("unsure".into()));
    let (mut judge, _cache) = harness(&server, RemoteJudgeConfig::default());
    let err = judge
        .judge_pair(DuelSide::new("x", "tx"), DuelSide::new("y", "ty"), "anger")
        .unwrap_err();
    assert!(matches!(err, JudgeError::UnparseableReply { .. }));
    assert_eq!(server.request_count(), 2, "exactly one parse retry");
}

#[test]
fn transient_server_errors_retry_with_backoff() {
    let mut call = 0;
    let server = MockChatServer::start(move |_| {
        call += 1;
        if call <= 2 {
            MockReply::Status(500)
        } else {
            MockReply::Content("A".into())
        }
    });
    let config = RemoteJudgeConfig {
        randomize_order: false,
        ..RemoteJudgeConfig::default()
    };
    let (mut judge, _cache) = harness(&server, config);
    let verdict = judge
        .judge_pair(DuelSide::new("x", "tx"), DuelSide::new("y", "ty"), "anger")
        .unwrap();
    assert_eq!(verdict.outcome, Outcome::AWins);
    assert_eq!(server.request_count(), 3);
}

#[test]
fn client_errors_fail_fast() {
    let server = MockChatServer::start(|_| MockReply::Status(401));
    let (mut judge, _cache) = harness(&server, RemoteJudgeConfig::default());
    let err = judge
        .judge_pair(DuelSide::new("x", "tx"), DuelSide::new("y", "ty"), "anger")
        .unwrap_err();
    assert!(matches!(err, JudgeError::Transport { attempts: 1, .. }));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn tie_requires_the_flag() {
    let server = MockChatServer::start(|_| MockReply::Content("TIE".into()));
    let config = RemoteJudgeConfig {
        allow_tie: true,
        ..RemoteJudgeConfig::default()
    };
    let (mut judge, _cache) = harness(&server, config);
    let verdict = judge
        .judge_pair(DuelSide::new("x", "tx"), DuelSide::new("y", "ty"), "anger")
        .unwrap();
    assert_eq!(verdict.outcome, Outcome::Tie);

    let server = MockChatServer::start(|_| MockReply::Content("TIE".into()));
    let (mut judge, _cache) = harness(&server, RemoteJudgeConfig::default());
    assert!(matches!(
        judge.judge_pair(DuelSide::new("x", "tx"), DuelSide::new("y", "ty"), "anger"),
        Err(JudgeError::UnparseableReply { .. })
    ));
}

#[test]
fn empty_duel_texts_are_rejected_before_any_call() {
    let server = MockChatServer::always_first();
    let (mut judge, _cache) = harness(&server, RemoteJudgeConfig::default());
    assert!(matches!(
        judge.judge_pair(DuelSide::new("x", ""), DuelSide::new("y", "ty"), "anger"),
        Err(JudgeError::EmptyDuelText)
    ));
    assert_eq!(server.request_count(), 0);
}

#[test]
fn api_key_env_overrides_configured_key() {
    // The only test touching JUDGE_API_KEY; safe to mutate process env here.
    let server = MockChatServer::always_first();
    let dir = tempfile::tempdir().unwrap();
    let (pairwise, relevance, generation) = write_templates(dir.path());
    let templates = Arc::new(PromptTemplateSet::load(pairwise, relevance, generation).unwrap());
    let mut endpoint = RemoteEndpoint::new(server.url(), "mock-model");
    endpoint.api_key = Some("file-key".into());
    endpoint.backoff_base_ms = 1;
    let client = Arc::new(RemoteClient::new(endpoint));
    let cache = Arc::new(VerdictCache::in_memory());
    let mut judge = RemoteJudge::new(
        client,
        templates,
        cache,
        RemoteJudgeConfig {
            randomize_order: false,
            ..RemoteJudgeConfig::default()
        },
    );

    judge
        .judge_pair(DuelSide::new("a", "t1"), DuelSide::new("b", "t2"), "x")
        .unwrap();
    assert_eq!(
        server.last_authorization().as_deref(),
        Some("Bearer file-key")
    );

    std::env::set_var("JUDGE_API_KEY", "env-key");
    judge
        .judge_pair(DuelSide::new("a", "t3"), DuelSide::new("b", "t4"), "x")
        .unwrap();
    std::env::remove_var("JUDGE_API_KEY");
    assert_eq!(
        server.last_authorization().as_deref(),
        Some("Bearer env-key"),
        "environment key must override the configured one"
    );
}

#[test]
fn generator_fills_template_and_caches() {
    // Echo endpoint: the generation output is the prompt itself, so the
    // filled template must contain query and description verbatim.
    let server = MockChatServer::start(|body| MockReply::Content(prompt_of(body)));
    let dir = tempfile::tempdir().unwrap();
    let (pairwise, relevance, generation) = write_templates(dir.path());
    let templates = Arc::new(PromptTemplateSet::load(pairwise, relevance, generation).unwrap());
    let mut endpoint = RemoteEndpoint::new(server.url(), "mock-model");
    endpoint.backoff_base_ms = 1;
    let client = Arc::new(RemoteClient::new(endpoint));
    let cache = Arc::new(VerdictCache::in_memory());
    let mut generator = RemoteGenerator::new(client, templates, Arc::clone(&cache), 0.7)
        .with_candidates(vec!["very".into(), "somewhat".into()]);

    let text = generator.generate("How do magnets work?", "very").unwrap();
    assert!(text.contains("How do magnets work?"));
    assert!(text.contains("very"));
    assert_eq!(server.request_count(), 1);

    let again = generator.generate("How do magnets work?", "very").unwrap();
    assert_eq!(again, text);
    assert_eq!(server.request_count(), 1, "generation cache hit");

    assert!(matches!(
        generator.generate("How do magnets work?", "extremely"),
        Err(JudgeError::DescriptorNotInCandidates(_))
    ));
}
