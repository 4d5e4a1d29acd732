use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use hvc_core::attack::{
    accepted_indices, calibrate_threshold, distance_profile, generic_attack, improved_attack,
    matched_white_noise, rank_by_distortion, rank_params, tune_threshold, AttackCandidate,
    AttackOutcome, ExhaustionReason, ImprovedOptions, MockOracle, RemoteConfig, RemoteTranscriber,
    TranscriberBackend,
};
use hvc_core::audio::write_wav;
use hvc_core::features::FeatureConfig;
use hvc_core::perturb::{expand_grid, ParamGrid, PerturbationParams};
use hvc_core::{synth, AudioBuffer, Error};

fn tdi_schedule() -> Vec<PerturbationParams> {
    expand_grid(&ParamGrid::default_tdi_schedule()).unwrap()
}

fn tdi(ms: f64) -> PerturbationParams {
    PerturbationParams {
        tdi_window_ms: Some(ms),
        ..PerturbationParams::default()
    }
}

#[test]
fn oracle_basics() {
    let a = synth::utterance(1, 0.5, 16000);
    let mut strict = MockOracle::new(&a, "pay money", 0.0).unwrap();
    let v = strict.transcribe(&a).unwrap();
    assert!(v.accepted);
    assert_eq!(v.transcript, "pay money");
    assert_eq!(v.query_index, 1);
    assert!(
        !strict
            .transcribe(&matched_white_noise(&a, 1))
            .unwrap()
            .accepted
    );
    assert_eq!(strict.transcribe(&a).unwrap().query_index, 3);
    assert!(MockOracle::new(&a, "x", -1.0).is_err());

    let mut open = MockOracle::new(&a, "x", f64::INFINITY).unwrap();
    let outcome = generic_attack(&a, &mut open, &tdi_schedule()).unwrap();
    assert_eq!(outcome.queries(), 1);
    assert_eq!(outcome.candidate().unwrap().params, vec![tdi(1.0)]);
}

#[test]
fn calibrated_threshold_rejects_noise() {
    let fixtures: Vec<AudioBuffer> = (0..4).map(|s| synth::utterance(s, 1.0, 16000)).collect();
    let cal = calibrate_threshold(&fixtures, &FeatureConfig::default(), &[1, 2], 50).unwrap();
    assert!(cal.max_perturbed_distance < cal.threshold && cal.threshold < cal.min_noise_distance);
    for (i, fx) in fixtures.iter().enumerate() {
        let mut oracle = MockOracle::new(fx, "x", cal.threshold).unwrap();
        for seed in 200..203 {
            let noise = matched_white_noise(fx, seed + i as u64);
            assert!(!oracle.transcribe(&noise).unwrap().accepted);
        }
        assert!(oracle.transcribe(fx).unwrap().accepted);
    }
}

#[test]
fn tuned_threshold_accepts_at_two_ms_after_three_queries() {
    let a = synth::utterance(11, 1.0, 16000);
    let schedule = rank_params(&tdi_schedule());
    let probe = MockOracle::new(&a, "x", 0.0).unwrap();
    let profile = distance_profile(&probe, &a, &schedule).unwrap();
    let t = tune_threshold(&profile, 2).expect("fixture allows a 2.0 ms start");
    assert_eq!(accepted_indices(&profile, t)[0], 2);
    let mut oracle = MockOracle::new(&a, "x", t).unwrap();
    let outcome = generic_attack(&a, &mut oracle, &schedule).unwrap();
    let AttackOutcome::Accepted { candidate, history } = &outcome else {
        panic!("expected acceptance, got {outcome:?}");
    };
    assert_eq!(history.len(), 3);
    assert_eq!(oracle.queries_used(), 3);
    assert_eq!(candidate.params, vec![tdi(2.0)]);
    assert_eq!(candidate.distortion_rank, 2);
    let windows: Vec<f64> = history
        .iter()
        .map(|r| r.params[0].tdi_window_ms.unwrap())
        .collect();
    assert_eq!(windows, vec![1.0, 1.5, 2.0]);
    assert!(!history[0].verdict.accepted && !history[1].verdict.accepted);

    let mut again = MockOracle::new(&a, "x", t).unwrap();
    let repeat = generic_attack(&a, &mut again, &schedule).unwrap();
    assert_eq!(
        write_wav(&repeat.candidate().unwrap().audio),
        write_wav(&candidate.audio)
    );
}

#[test]
fn budget_is_never_exceeded() {
    let a = synth::utterance(2, 0.5, 16000);
    let long: Vec<PerturbationParams> = (0..15).map(|i| tdi(1.0 + 0.5 * i as f64)).collect();
    let mut oracle = MockOracle::new(&a, "x", 0.0).unwrap();
    let AttackOutcome::Exhausted(report) = generic_attack(&a, &mut oracle, &long).unwrap() else {
        panic!("threshold 0 cannot accept a perturbed sample");
    };
    assert_eq!(report.reason, ExhaustionReason::BudgetSpent);
    assert_eq!(report.verdicts.len(), 10);
    assert_eq!(oracle.queries_used(), 10);
    assert!(matches!(
        oracle.transcribe(&a),
        Err(Error::BudgetExhausted(10))
    ));

    let mut fresh = MockOracle::new(&a, "x", 0.0).unwrap();
    let AttackOutcome::Exhausted(report) = generic_attack(&a, &mut fresh, &long[..3]).unwrap()
    else {
        panic!("expected exhaustion");
    };
    assert_eq!(report.reason, ExhaustionReason::ScheduleExhausted);
    assert_eq!(report.verdicts.len(), 3);
    let indices: Vec<usize> = report
        .verdicts
        .iter()
        .map(|r| r.verdict.query_index)
        .collect();
    assert_eq!(indices, vec![1, 2, 3]);
}

#[test]
fn ranking_rule() {
    let cand = |p: PerturbationParams| AttackCandidate {
        params: vec![p],
        audio: AudioBuffer::silence(1, 16000),
        distortion_rank: 0,
        verdict: None,
    };
    let with_ts = |ms: f64, ts: f64| PerturbationParams {
        ts_factor_percent: Some(ts),
        ..tdi(ms)
    };
    let ranked = rank_by_distortion(vec![
        cand(tdi(2.0)),
        cand(with_ts(1.0, 150.0)),
        cand(tdi(1.0)),
        cand(with_ts(1.0, 300.0)),
    ]);
    let keys: Vec<(f64, Option<f64>)> = ranked
        .iter()
        .map(|c| {
            (
                c.params[0].tdi_window_ms.unwrap(),
                c.params[0].ts_factor_percent,
            )
        })
        .collect();
    assert_eq!(
        keys,
        vec![
            (1.0, Some(300.0)),
            (1.0, Some(150.0)),
            (1.0, None),
            (2.0, None)
        ]
    );
    assert_eq!(
        ranked.iter().map(|c| c.distortion_rank).collect::<Vec<_>>(),
        vec![0, 1, 2, 3]
    );

    // Equal keys keep their input order.
    let mut first = cand(tdi(1.0));
    first.audio = AudioBuffer::silence(2, 16000);
    let ranked = rank_by_distortion(vec![first.clone(), cand(tdi(1.0))]);
    assert_eq!(ranked[0].audio, first.audio);
}

#[test]
fn improved_attack_enumerates_word_combinations() {
    let utterance = synth::utterance(5, 0.8, 16000);
    let words = utterance.split_at_samples(&[6000]).unwrap();
    let options = ImprovedOptions::default();
    let schedule = tdi_schedule();

    let mut strict = MockOracle::new(&utterance, "pay money", 0.0)
        .unwrap()
        .with_budget(20);
    let AttackOutcome::Exhausted(report) =
        improved_attack(&words, &options, &mut strict, &schedule).unwrap()
    else {
        panic!("threshold 0 cannot accept");
    };
    assert_eq!(report.reason, ExhaustionReason::ScheduleExhausted);
    let combos: Vec<(f64, f64)> = report
        .verdicts
        .iter()
        .map(|r| {
            (
                r.params[0].tdi_window_ms.unwrap(),
                r.params[1].tdi_window_ms.unwrap(),
            )
        })
        .collect();
    assert_eq!(
        combos,
        vec![
            (1.0, 1.0),
            (1.0, 1.5),
            (1.0, 2.0),
            (1.5, 1.0),
            (1.5, 1.5),
            (1.5, 2.0),
            (2.0, 1.0),
            (2.0, 1.5),
            (2.0, 2.0),
        ]
    );

    let single = ImprovedOptions {
        per_word_variants: 1,
        ..options.clone()
    };
    let mut open = MockOracle::new(&utterance, "x", f64::INFINITY).unwrap();
    let outcome = improved_attack(&words[..1], &single, &mut open, &schedule).unwrap();
    assert_eq!(outcome.queries(), 1);
    assert_eq!(outcome.candidate().unwrap().audio.len(), 6000);
}

/// Request head and body of one captured request.
type Request = (String, Vec<u8>);

/// Minimal HTTP/1.1 server: answers each connection with the next canned
/// `(status, body)` and records the request head and body.
struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<Request>>>,
    handle: JoinHandle<()>,
}

fn stub_server(responses: Vec<(u16, &'static str)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/transcribe", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&requests);
    let handle = thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                head.push_str(&line);
            }
            let mut payload = vec![0; length];
            reader.read_exact(&mut payload).unwrap();
            log.lock().unwrap().push((head, payload));
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Stub {
        url,
        requests,
        handle,
    }
}

fn remote(url: &str, extra: &str) -> RemoteConfig {
    RemoteConfig::parse(&format!(
        "url = {url}\ntranscript_json_path = results.0.transcript\n{extra}"
    ))
    .unwrap()
}

#[test]
fn remote_backend_against_stub_server() {
    let stub = stub_server(vec![
        (200, r#"{"results":[{"transcript":"Open the dor."}]}"#),
        (200, r#"{"results":[{"transcript":"close the window"}]}"#),
        (500, r#"{"error":"busy"}"#),
        (200, r#"{"unexpected":true}"#),
    ]);
    // SAFETY: no other test in this binary reads or writes this variable.
    unsafe { std::env::set_var("HVC_TEST_ASR_TOKEN", "s3cret") };
    let cfg = remote(&stub.url, "auth_env = HVC_TEST_ASR_TOKEN\nbudget = 3");
    let mut backend = RemoteTranscriber::new(cfg, "open the door").unwrap();
    let audio = synth::utterance(1, 0.2, 16000);

    let v = backend.transcribe(&audio).unwrap();
    assert!(v.accepted);
    assert_eq!(v.transcript, "Open the dor.");
    let v = backend.transcribe(&audio).unwrap();
    assert!(!v.accepted);
    assert_eq!(v.query_index, 2);
    assert!(matches!(backend.transcribe(&audio), Err(Error::Backend(_))));
    assert!(matches!(backend.transcribe(&audio), Err(Error::Backend(_))));
    assert_eq!(backend.queries_used(), 2);
    stub.handle.join().unwrap();

    let requests = stub.requests.lock().unwrap();
    assert_eq!(requests.len(), 4);
    let (head, body) = &requests[0];
    assert!(head.starts_with("POST /transcribe "));
    assert!(head
        .to_ascii_lowercase()
        .contains("authorization: bearer s3cret"));
    assert!(head
        .to_ascii_lowercase()
        .contains("content-type: audio/wav"));
    assert_eq!(body, &write_wav(&audio));
}

#[test]
fn remote_budget_and_unreachable_host() {
    let stub = stub_server(vec![(200, r#"{"results":[{"transcript":"pay money"}]}"#)]);
    let mut backend = RemoteTranscriber::new(remote(&stub.url, "budget = 1"), "pay money").unwrap();
    let audio = synth::utterance(2, 0.2, 16000);
    assert!(backend.transcribe(&audio).unwrap().accepted);
    assert!(matches!(
        backend.transcribe(&audio),
        Err(Error::BudgetExhausted(1))
    ));
    stub.handle.join().unwrap();

    // A port that was just released refuses connections.
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let cfg = remote(&format!("http://127.0.0.1:{port}/asr"), "timeout_s = 2");
    let mut dead = RemoteTranscriber::new(cfg, "pay money").unwrap();
    assert!(matches!(dead.transcribe(&audio), Err(Error::Backend(_))));
    assert_eq!(dead.queries_used(), 0);
    let outcome = generic_attack(&audio, &mut dead, &tdi_schedule());
    assert!(matches!(outcome, Err(Error::Backend(_))));
    assert_eq!(dead.queries_used(), 0);
}
