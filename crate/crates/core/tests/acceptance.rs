//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every expected value is computed here independently of the
//! library code under test.

use std::io::{BufRead, BufReader, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use toolloop_core::advantage::{
    clipped_surrogate, group_seq_advantages, AdvantageConfig, SurrogateInput,
};
use toolloop_core::analytics::{aggregate_metrics, detect_vacuous, HackReason};
use toolloop_core::grammar::{
    parse_rollout, parse_rollout_lenient, serialize_rollout, GrammarError, SegmentKind,
};
use toolloop_core::reward::{difficulty_scale, discounted_returns, sign_threshold, RewardConfig};
use toolloop_core::sandbox::protocol::{Response, WireStatus};
use toolloop_core::sandbox::{open_session, ExecResult, ExecStatus, SandboxConfig, SandboxError};
use toolloop_core::scoring::GroupBatch;
use toolloop_core::sim::{
    run_suite, synthetic_suite, Difficulty, GroupSettings, PolicyOptions, ScriptedPolicyKind,
};
use toolloop_core::trajectory::{Action, QueryState, Trajectory};

const MOCK_GUEST: &str = env!("CARGO_BIN_EXE_toolloop-mock-guest");

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn d_oracle(mu: f64, gamma: f64, delta: f64) -> f64 {
    logistic(gamma * (0.5 - mu)) - delta
}

fn reward_cfg(gamma: f64, delta: f64) -> RewardConfig {
    RewardConfig {
        gamma,
        delta,
        ..RewardConfig::default()
    }
}

fn difficulty_scale_exactness() {
    let cfg = reward_cfg(4.0, 0.2);
    assert_eq!(difficulty_scale(0.5, &cfg).unwrap(), 0.3);
    let d0 = difficulty_scale(0.0, &cfg).unwrap();
    let d1 = difficulty_scale(1.0, &cfg).unwrap();
    assert!((d0 - d_oracle(0.0, 4.0, 0.2)).abs() < 1e-6 && (d0 - 0.680797).abs() < 1e-6);
    assert!((d1 - d_oracle(1.0, 4.0, 0.2)).abs() < 1e-6 && (d1 + 0.080797).abs() < 1e-6);
    for gamma in [3.0, 4.0, 5.0] {
        for delta in [0.1, 0.2, 0.3] {
            let cfg = reward_cfg(gamma, delta);
            for i in 0..=1000 {
                let mu = i as f64 / 1000.0;
                let d = difficulty_scale(mu, &cfg).unwrap();
                assert!(
                    -delta < d && d < 1.0 - delta,
                    "d({mu}; {gamma}, {delta}) = {d}"
                );
                assert!((d - d_oracle(mu, gamma, delta)).abs() < 1e-12);
            }
        }
    }
}

fn bisect_root(gamma: f64, delta: f64) -> f64 {
    // d is strictly decreasing in mu.
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d_oracle(mid, gamma, delta) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sign_threshold_matches_bisection() {
    let t = sign_threshold(&reward_cfg(4.0, 0.2)).unwrap();
    assert!((t - 0.846574).abs() < 1e-6, "{t}");
    for gamma in [3.0, 4.0, 5.0] {
        for delta in [0.1, 0.2, 0.3, 0.4] {
            let t = sign_threshold(&reward_cfg(gamma, delta)).unwrap();
            let root = bisect_root(gamma, delta);
            assert!((t - root).abs() < 1e-9, "{gamma} {delta}: {t} vs {root}");
        }
        assert_eq!(sign_threshold(&reward_cfg(gamma, 0.5)).unwrap(), 0.5);
    }
}

fn turn_return_recursion() {
    assert_eq!(
        discounted_returns(&[-0.5, 0.0, -0.5], 0.2),
        vec![-0.52, -0.1, -0.5]
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let len = rng.gen_range(0..=10);
        let beta = [0.1, 0.2, 0.5][rng.gen_range(0..3)];
        let r: Vec<f64> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let got = discounted_returns(&r, beta);
        assert_eq!(got.len(), len);
        for (m, g) in got.iter().enumerate() {
            let brute: f64 = (m..len).map(|k| beta.powi((k - m) as i32) * r[k]).sum();
            assert!((g - brute).abs() < 1e-12, "{r:?} beta {beta}");
        }
    }
}

fn grpo_normalization() {
    assert_eq!(
        group_seq_advantages(&[1.0, 0.0, 1.0, 0.0], 1e-8).unwrap(),
        vec![1.0, -1.0, 1.0, -1.0]
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let g = [2, 4, 8][i % 3];
        let rs: Vec<f64> = if i % 10 == 0 {
            vec![rng.gen_range(-2.0..2.0); g]
        } else {
            (0..g).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        let a = group_seq_advantages(&rs, 1e-8).unwrap();
        let mean_r = rs.iter().sum::<f64>() / g as f64;
        let var_r = rs.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / g as f64;
        if var_r.sqrt() < 1e-8 {
            assert!(a.iter().all(|x| *x == 0.0), "{rs:?} -> {a:?}");
            continue;
        }
        let mean = a.iter().sum::<f64>() / g as f64;
        let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g as f64).sqrt();
        assert!(
            mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9,
            "{rs:?} -> {a:?}"
        );
    }
}

fn surrogate(old: &[f64], new: &[f64], adv: &[f64]) -> f64 {
    clipped_surrogate(&SurrogateInput {
        old_prob: old.to_vec(),
        new_prob: new.to_vec(),
        advantage: adv.to_vec(),
        clip_eps: 0.2,
    })
    .unwrap()
}

fn clipped_surrogate_cases() {
    assert!((surrogate(&[0.4], &[0.8], &[1.0]) - 1.2).abs() < 1e-12);
    assert!((surrogate(&[0.8], &[0.4], &[-1.0]) + 0.8).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let n = rng.gen_range(1..16);
        let old: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..=1.0)).collect();
        let new: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..=1.0)).collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let mean_adv = adv.iter().sum::<f64>() / n as f64;
        assert!((surrogate(&old, &old, &adv) - mean_adv).abs() < 1e-12);

        let j = surrogate(&old, &new, &adv);
        let unclipped = old
            .iter()
            .zip(&new)
            .zip(&adv)
            .map(|((o, p), a)| p / o * a)
            .sum::<f64>()
            / n as f64;
        assert!(j <= unclipped + 1e-12, "{j} > {unclipped}");
        let any_clipped = old
            .iter()
            .zip(&new)
            .zip(&adv)
            .any(|((o, p), a)| p / o > 1.2 && *a > 0.0);
        if !any_clipped {
            assert!((j - unclipped).abs() < 1e-12);
        } else {
            assert!(j < unclipped);
        }
    }
}

fn mock_sandbox(root: &Path, flags: &[&str]) -> SandboxConfig {
    let mut guest_command = vec![MOCK_GUEST.to_string()];
    guest_command.extend(flags.iter().map(|f| f.to_string()));
    SandboxConfig {
        workdir_root: root.to_path_buf(),
        guest_command,
        ..SandboxConfig::default()
    }
}

fn mean_composite(
    batches: &[GroupBatch],
    difficulty: Difficulty,
    suite_hard: &dyn Fn(&str) -> bool,
) -> f64 {
    let vals: Vec<f64> = batches
        .iter()
        .filter(|g| suite_hard(&g.query_id) == (difficulty == Difficulty::Hard))
        .flat_map(|g| g.members.iter().map(|m| m.rewards.composite))
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn adaptive_reward_behavior() {
    let root = tempfile::tempdir().unwrap();
    let tasks = synthetic_suite(20, 20, 2024);
    let hard_ids: Vec<String> = tasks
        .iter()
        .filter(|t| t.difficulty == Difficulty::Hard)
        .map(|t| t.query.query_id.clone())
        .collect();
    let is_hard = |id: &str| hard_ids.iter().any(|h| h == id);
    let settings = GroupSettings {
        sandbox: mock_sandbox(root.path(), &[]),
        reward: RewardConfig::default(),
        advantage: AdvantageConfig::default(),
        max_turns: 6,
    };
    let run = |kind| run_suite(kind, &tasks, 8, 11, &PolicyOptions::default(), &settings).unwrap();
    let (adaptive, adaptive_h) = run(ScriptedPolicyKind::Adaptive);
    let (spammer, spammer_h) = run(ScriptedPolicyKind::ToolSpammer);
    let (avoider, _) = run(ScriptedPolicyKind::ToolAvoider);

    let easy_adaptive = mean_composite(&adaptive, Difficulty::Easy, &is_hard);
    let easy_spammer = mean_composite(&spammer, Difficulty::Easy, &is_hard);
    let hard_adaptive = mean_composite(&adaptive, Difficulty::Hard, &is_hard);
    let hard_avoider = mean_composite(&avoider, Difficulty::Hard, &is_hard);
    assert!(
        easy_adaptive > easy_spammer,
        "easy: {easy_adaptive} vs {easy_spammer}"
    );
    assert!(
        hard_adaptive > hard_avoider,
        "hard: {hard_adaptive} vs {hard_avoider}"
    );

    let spam_metrics = aggregate_metrics(&spammer, &spammer_h).unwrap();
    let adaptive_metrics = aggregate_metrics(&adaptive, &adaptive_h).unwrap();
    assert_eq!(spam_metrics.avg_turns, 6.0);
    assert!(
        adaptive_metrics.avg_turns <= 2.0,
        "{}",
        adaptive_metrics.avg_turns
    );
    assert_eq!(adaptive_metrics.accuracy, 1.0);

    // Deterministic: a second run reproduces every composite.
    let (again, _) = run(ScriptedPolicyKind::Adaptive);
    let composites = |b: &[GroupBatch]| -> Vec<f64> {
        b.iter()
            .flat_map(|g| g.members.iter().map(|m| m.rewards.composite))
            .collect()
    };
    assert_eq!(composites(&adaptive), composites(&again));
}

/// Characters that never form a known tag or a fence.
fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    const ALPHABET: &[&str] = &[
        "a", "b", "z", "0", "7", " ", "\n", ".", ",", "=", "x < y", "<b>", "</i>", "&", "é", "'",
        "\"",
    ];
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

fn random_body(rng: &mut ChaCha8Rng) -> String {
    const LINES: &[&str] = &[
        "x = 1",
        "print(x)",
        "# note",
        "",
        "  y = x * 2",
        "s = 'a#b'",
        "import os",
    ];
    let n = rng.gen_range(0..5);
    (0..n)
        .map(|_| LINES[rng.gen_range(0..LINES.len())])
        .collect::<Vec<_>>()
        .join("\n")
}

fn random_rollout(rng: &mut ChaCha8Rng) -> (String, Vec<(SegmentKind, String)>) {
    let mut src = random_text(rng, 4);
    let mut expected = Vec::new();
    let mut answered = false;
    for _ in 0..rng.gen_range(0..7) {
        let kind = match rng.gen_range(0..4) {
            0 => SegmentKind::Think,
            1 => SegmentKind::Code,
            2 => SegmentKind::Interpreter,
            _ if !answered => SegmentKind::Answer,
            _ => SegmentKind::Think,
        };
        answered |= kind == SegmentKind::Answer;
        let tag = kind.tag();
        let text = if kind == SegmentKind::Code {
            let body = random_body(rng);
            let lead = ["", "\n", "  ", "\n  "][rng.gen_range(0..4)];
            let lang = ["python", "", "py"][rng.gen_range(0..3)];
            let trail = ["", "\n", " \n"][rng.gen_range(0..3)];
            let close = if body.is_empty() && rng.gen_bool(0.5) {
                "```"
            } else {
                "\n```"
            };
            src.push_str(&format!(
                "<{tag}>{lead}```{lang}\n{body}{close}{trail}</{tag}>"
            ));
            body
        } else {
            let text = random_text(rng, 12);
            src.push_str(&format!("<{tag}>{text}</{tag}>"));
            text
        };
        expected.push((kind, text));
        src.push_str(&random_text(rng, 3));
    }
    (src, expected)
}

const PROMPT_TEMPLATE: &str = "<think>Inspect the region first.</think>\n<code>\n```python\ncode snippet\n```\n</code>\n<interpreter> execution results</interpreter>\n<answer> </answer>";

fn grammar_round_trip() {
    let r = parse_rollout(PROMPT_TEMPLATE).unwrap();
    let kinds: Vec<_> = r.segments.iter().map(|s| s.kind).collect();
    assert_eq!(
        kinds,
        vec![
            SegmentKind::Think,
            SegmentKind::Code,
            SegmentKind::Interpreter,
            SegmentKind::Answer
        ]
    );
    assert_eq!(r.segments[1].text, "code snippet");
    assert_eq!(serialize_rollout(&r), PROMPT_TEMPLATE);

    // Cold-start style: code not fenced. Strict parsing refuses it, lenient
    // parsing keeps it byte for byte.
    let cold = "The image shows..., Let's call execute_python_code: \n <code>from PIL import Image \n img = Image.open('img.jpg')...</code>.\nAppending compiling results... \n <answer>blue and yellow</answer>";
    assert!(matches!(
        parse_rollout(cold),
        Err(GrammarError::MalformedFence { .. })
    ));
    let lenient = parse_rollout_lenient(cold).unwrap();
    assert_eq!(serialize_rollout(&lenient), cold);
    assert_eq!(lenient.answer().unwrap().text, "blue and yellow");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let (src, expected) = random_rollout(&mut rng);
        let parsed = parse_rollout(&src).unwrap_or_else(|e| panic!("{src:?}: {e}"));
        let got: Vec<(SegmentKind, String)> = parsed
            .segments
            .iter()
            .map(|s| (s.kind, s.text.clone()))
            .collect();
        assert_eq!(got, expected, "{src:?}");
        assert_eq!(serialize_rollout(&parsed), src);
    }

    assert!(matches!(
        parse_rollout("<think>open"),
        Err(GrammarError::UnbalancedTag { .. })
    ));
    assert!(matches!(
        parse_rollout("</answer>"),
        Err(GrammarError::UnbalancedTag { .. })
    ));
    assert!(matches!(
        parse_rollout("<think><code>```\nx\n```</code></think>"),
        Err(GrammarError::NestedTag { .. })
    ));
    assert!(matches!(
        parse_rollout("<code>x = 1</code>"),
        Err(GrammarError::MalformedFence { .. })
    ));
    assert!(matches!(
        parse_rollout("<answer>1</answer><answer>2</answer>"),
        Err(GrammarError::MultipleAnswers { .. })
    ));
}

fn comment_only_snippet(rng: &mut ChaCha8Rng) -> String {
    const LINES: &[&str] = &[
        "# step 1",
        "#",
        "   # indented",
        "",
        "  ",
        "# it's fine",
        "#!/usr/bin/env python",
        "# x = 1",
        "\t# tab",
    ];
    let n = rng.gen_range(1..6);
    (0..n)
        .map(|_| LINES[rng.gen_range(0..LINES.len())])
        .collect::<Vec<_>>()
        .join("\n")
}

fn executable_snippet(rng: &mut ChaCha8Rng) -> String {
    const CODE: &[&str] = &[
        "x = 1",
        "print(\"# not a comment\")",
        "y = '#'  # trailing",
        "s = '''\n# inside a string\n'''",
        "import os",
        "pass",
        "img.crop((0, 0, 10, 10))",
    ];
    let mut lines: Vec<String> = (0..rng.gen_range(0..4))
        .map(|_| comment_only_snippet(rng))
        .collect();
    let at = rng.gen_range(0..=lines.len());
    lines.insert(at, CODE[rng.gen_range(0..CODE.len())].to_string());
    lines.join("\n")
}

fn hacking_detector() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let corpus: Vec<(String, bool)> = (0..500)
        .map(|i| {
            if i % 2 == 0 {
                (comment_only_snippet(&mut rng), true)
            } else {
                (executable_snippet(&mut rng), false)
            }
        })
        .collect();
    let (mut hit, mut false_alarm) = (0, 0);
    for (i, (snippet, vacuous)) in corpus.iter().enumerate() {
        let mut t = Trajectory::new(QueryState::new("q", "p"), 2);
        t.record_turn(
            "",
            Action::ToolCall(snippet.clone()),
            Some(ExecResult::new(ExecStatus::Ok, "", "")),
        )
        .unwrap();
        let flagged = detect_vacuous(i, &t)
            .iter()
            .any(|f| f.reason == HackReason::VacuousCode);
        match (vacuous, flagged) {
            (true, true) => hit += 1,
            (false, true) => false_alarm += 1,
            (true, false) => panic!("missed comment-only snippet {snippet:?}"),
            (false, false) => {}
        }
    }
    assert_eq!((hit, false_alarm), (250, 0));
}

fn wire_conformance() {
    // Raw framing: handshake line, then id echo for each op, tolerant of
    // unknown request fields.
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(MOCK_GUEST)
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    assert_eq!(lines.next().unwrap().unwrap(), r#"{"proto":1}"#);
    let requests = [
        (r#"{"op":"ping","id":"p-1"}"#, "p-1"),
        (
            r#"{"op":"exec","id":"e-2","snippet":"print(2+2)","priority":"high"}"#,
            "e-2",
        ),
        (
            r#"{"op":"reset","id":"r-3","reason":{"nested":true}}"#,
            "r-3",
        ),
    ];
    for (req, id) in requests {
        writeln!(stdin, "{req}").unwrap();
        let resp: Response = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
        assert_eq!(resp.id, id);
        assert_eq!(resp.status, WireStatus::Ok);
        if id == "e-2" {
            assert_eq!(resp.stdout, "4\n");
            assert!(resp.artifacts.is_empty());
        }
    }
    drop(stdin);
    child.wait().unwrap();

    let root = tempfile::tempdir().unwrap();
    // Host tolerates unknown response fields.
    let s = open_session(&mock_sandbox(root.path(), &["--extra-fields"]), &[]).unwrap();
    assert_eq!(s.execute("print(2+2)").unwrap().stdout, "4\n");
    drop(s);
    // Host rejects a mismatched echo and another protocol version.
    for flags in [&["--wrong-id"][..], &["--proto", "2"][..]] {
        match open_session(&mock_sandbox(root.path(), flags), &[]) {
            Err(SandboxError::GuestSpawnFailure(_)) => {}
            other => panic!("{flags:?}: {other:?}"),
        }
    }
    // Stalling guest: Timeout within timeout + 2 s.
    let cfg = SandboxConfig {
        timeout_seconds: 2.0,
        ..mock_sandbox(root.path(), &["--stall"])
    };
    let s = open_session(&cfg, &[]).unwrap();
    let started = Instant::now();
    let r = s.execute("print(1)").unwrap();
    let waited = started.elapsed();
    assert_eq!(r.status, ExecStatus::Timeout);
    assert!(r.duration_seconds >= 2.0);
    assert!(waited < Duration::from_secs(4), "{waited:?}");
}

struct Criterion {
    number: u32,
    name: &'static str,
    limit: Duration,
    check: fn(),
}

fn main() {
    let criteria = [
        Criterion {
            number: 1,
            name: "difficulty scale exactness and bounds",
            limit: Duration::from_secs(1),
            check: difficulty_scale_exactness,
        },
        Criterion {
            number: 2,
            name: "sign threshold vs bisection",
            limit: Duration::from_secs(1),
            check: sign_threshold_matches_bisection,
        },
        Criterion {
            number: 3,
            name: "turn-return recursion vs brute force",
            limit: Duration::from_secs(1),
            check: turn_return_recursion,
        },
        Criterion {
            number: 4,
            name: "group normalization",
            limit: Duration::from_secs(1),
            check: grpo_normalization,
        },
        Criterion {
            number: 5,
            name: "clipped surrogate",
            limit: Duration::from_secs(1),
            check: clipped_surrogate_cases,
        },
        Criterion {
            number: 6,
            name: "adaptive reward ranking on synthetic suite",
            limit: Duration::from_secs(30),
            check: adaptive_reward_behavior,
        },
        Criterion {
            number: 7,
            name: "grammar round trip and errors",
            limit: Duration::from_secs(5),
            check: grammar_round_trip,
        },
        Criterion {
            number: 8,
            name: "vacuous-code detector on 500 snippets",
            limit: Duration::from_secs(1),
            check: hacking_detector,
        },
        Criterion {
            number: 9,
            name: "wire protocol conformance with mock guest",
            limit: Duration::from_secs(20),
            check: wire_conformance,
        },
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.check));
        let elapsed = started.elapsed();
        let verdict = match outcome {
            Ok(()) if elapsed <= c.limit => "PASS".to_string(),
            Ok(()) => format!("FAIL (over {:?} limit)", c.limit),
            Err(_) => "FAIL".to_string(),
        };
        if verdict != "PASS" {
            failed += 1;
        }
        println!(
            "criterion {}: {} ... {verdict} [{:.3}s]",
            c.number,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
