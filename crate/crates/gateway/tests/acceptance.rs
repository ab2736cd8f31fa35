//! Acceptance run: one PASS/FAIL line per criterion, offline, fixed seeds.
//! Exits non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::{Method, StatusCode};
use musicagent_core::agent::{ChatResult, MusicAgent};
use musicagent_core::clock::SteppingClock;
use musicagent_core::executor::{schedule, EventKind, FailureClass, LedgerError, LedgerEvent, ResourceLedger, RunContext, SubtaskStatus};
use musicagent_core::llm::{MockEntry, MockLlm};
use musicagent_core::media::{
    mix, read_midi, read_wav, render_score_preview, trim_to_segment, write_midi, write_wav, AudioBuffer, NoteEvent,
    Score, SegmentLimit, SUPPORTED_SAMPLE_RATES,
};
use musicagent_core::planner::{parse_plan, serialize_plan, validate_graph, ArgValue, SubTask, SubTaskId, TaskGraph};
use musicagent_core::registry::{select_deterministic, AdapterKind, SelectionPolicy, ToolDescriptor};
use musicagent_core::store::ArtifactStore;
use musicagent_core::taxonomy::{ArtifactId, Modality, TaskCategory, TaskRegistry, TaskSpec};
use musicagent_gateway::repl::{Outcome, Repl};
use musicagent_gateway::router;
use musicagent_oracles as oracle;
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngExt, SeedableRng};
use serde_json::json;

type Check = fn(&mut StdRng) -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, f64, Check); 9] = [
        ("taxonomy fidelity", 1.0, taxonomy),
        ("plan round-trip and validation oracle", 10.0, plans),
        ("scheduler order and failure propagation", 10.0, scheduler),
        ("selector determinism and semantics", 5.0, selector),
        ("resource ledger safety", 5.0, ledger),
        ("media round-trips", 20.0, media),
        ("end-to-end scenario", 10.0, end_to_end),
        ("degradation", f64::INFINITY, degradation),
        ("API/REPL equivalence", f64::INFINITY, equivalence),
    ];
    let mut failed = 0;
    for (k, (name, limit, check)) in criteria.iter().enumerate() {
        let mut rng = StdRng::seed_from_u64(0x5eed_0000 + k as u64);
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut rng)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let bound = if limit.is_finite() { format!(" < {limit} s") } else { String::new() };
        let outcome = match outcome {
            Ok(detail) if secs >= *limit => Err(format!("{detail}; took {secs:.3} s, limit {limit} s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.3} s{bound}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.3} s{bound}): {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// Taxonomy -------------------------------------------------------------------

const TABLE: [(&str, Modality, Modality, TaskCategory); 13] = {
    use Modality::*;
    use TaskCategory::*;
    [
        ("text-to-symbolic-music", Text, SymbolicMusic, Generation),
        ("lyric-to-melody", Text, SymbolicMusic, Generation),
        ("singing-voice-synthesis", Text, Audio, Generation),
        ("text-to-audio", Text, Audio, Generation),
        ("timbre-transfer", Audio, Audio, Generation),
        ("accompaniment", SymbolicMusic, SymbolicMusic, Generation),
        ("music-classification", Audio, Text, Understanding),
        ("music-separation", Audio, Audio, Understanding),
        ("lyric-recognition", Audio, Text, Understanding),
        ("score-transcription", Audio, Text, Understanding),
        ("artist/track-search", Text, Audio, Auxiliary),
        ("lyric-generation", Text, Text, Auxiliary),
        ("web-search", Text, Text, Auxiliary),
    ]
};

fn taxonomy(_: &mut StdRng) -> Result<String, String> {
    let reg = TaskRegistry::seeded();
    ensure!(reg.list().len() == 13, "{} tasks registered", reg.list().len());
    for (name, input, output, category) in TABLE {
        let spec = reg.lookup(name).map_err(|e| e.to_string())?;
        ensure!(
            (spec.input, spec.output, spec.category) == (input, output, category),
            "{name}: got ({}, {}, {}), want ({input}, {output}, {category})",
            spec.input,
            spec.output,
            spec.category
        );
    }
    Ok("13 rows match".into())
}

// Plans ----------------------------------------------------------------------

const TASK_POOL: &[&str] = &[
    "text-to-symbolic-music",
    "lyric-to-melody",
    "singing-voice-synthesis",
    "text-to-audio",
    "timbre-transfer",
    "accompaniment",
    "music-classification",
    "music-separation",
    "lyric-recognition",
    "score-transcription",
    "artist/track-search",
    "lyric-generation",
    "web-search",
    "not-a-task",
];

#[derive(Debug, Clone, Copy)]
enum Input {
    Missing,
    Literal,
    From(usize),
    Dangling,
    Artifact,
}

type RawGraph = Vec<(usize, Input, Vec<usize>)>;

/// Up to 8 nodes; references may point forward, backward or nowhere.
fn raw_graph(rng: &mut StdRng) -> RawGraph {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| {
            // Mostly known tasks wired to earlier nodes, so acceptance is common.
            let task = if rng.random_ratio(1, 20) { TASK_POOL.len() - 1 } else { rng.random_range(0..TASK_POOL.len() - 1) };
            let input = match rng.random_range(0..20) {
                0 => Input::Missing,
                1 => Input::Dangling,
                2 => Input::Artifact,
                3..=8 => Input::Literal,
                _ => Input::From(rng.random_range(0..n)),
            };
            let deps = (0..rng.random_range(0..2)).map(|_| rng.random_range(0..n)).collect();
            (task, input, deps)
        })
        .collect()
}

/// Valid by construction: each node reads a literal (text-input tasks) or
/// the output of an earlier node whose modality it accepts.
fn valid_raw_graph(rng: &mut StdRng, tasks: &TaskRegistry) -> RawGraph {
    let known = TASK_POOL.len() - 1;
    let spec = |t: usize| tasks.lookup(TASK_POOL[t]).expect("pool task is seeded");
    let n = rng.random_range(1..=8);
    let mut raw: RawGraph = Vec::new();
    for i in 0..n {
        let upstream: Vec<(usize, usize)> = (0..i)
            .flat_map(|j| (0..known).map(move |t| (j, t)))
            .filter(|&(j, t)| spec(t).input == spec(raw[j].0).output)
            .collect();
        let node = match upstream.choose(rng) {
            Some(&(j, t)) if rng.random_ratio(2, 3) => (t, Input::From(j), Vec::new()),
            _ => {
                let text: Vec<usize> = (0..known).filter(|&t| spec(t).input == Modality::Text).collect();
                (*text.choose(rng).unwrap(), Input::Literal, Vec::new())
            }
        };
        raw.push(node);
    }
    raw
}

fn build(raw: &RawGraph) -> TaskGraph {
    let id = |i: usize| format!("t{}", i + 1);
    TaskGraph::new(
        raw.iter()
            .enumerate()
            .map(|(i, (task, inp, deps))| {
                let mut st = SubTask::new(id(i), TASK_POOL[*task]);
                st = match inp {
                    Input::Missing => st,
                    Input::Literal => st.arg("input", ArgValue::literal(format!("text \"{i}\" ♪"))),
                    Input::From(j) => st.arg("input", ArgValue::from_task(id(*j))),
                    Input::Dangling => st.arg("input", ArgValue::from_task("ghost")),
                    Input::Artifact => st.arg("input", ArgValue::ArtifactRef(ArtifactId::from_index(1))),
                };
                for &d in deps {
                    st = st.dep(id(d));
                }
                st
            })
            .collect(),
    )
}

/// (accepted, cyclic) decided from the raw description alone.
fn plan_oracle(raw: &RawGraph, tasks: &TaskRegistry) -> (bool, bool) {
    let n = raw.len();
    let spec = |i: usize| tasks.lookup(TASK_POOL[raw[i].0]).ok();
    let mut ok = true;
    let mut edges = Vec::new();
    for (i, (_, inp, deps)) in raw.iter().enumerate() {
        edges.extend(deps.iter().map(|&d| (d, i)));
        if let Input::From(j) = inp {
            edges.push((*j, i));
        }
        let Some(me) = spec(i) else {
            ok = false;
            continue;
        };
        match inp {
            Input::Missing | Input::Dangling => ok = false,
            Input::Literal => ok &= me.input == Modality::Text,
            Input::From(j) => ok &= spec(*j).is_none_or(|p| p.output == me.input),
            Input::Artifact => {}
        }
    }
    let cyclic = oracle::has_cycle_by_path_enumeration(n, &edges);
    (ok && !cyclic, cyclic)
}

fn plans(rng: &mut StdRng) -> Result<String, String> {
    let tasks = TaskRegistry::seeded();
    let mut accepted = 0;
    for k in 0..200 {
        let raw = if k % 2 == 0 { valid_raw_graph(rng, &tasks) } else { raw_graph(rng) };
        let graph = build(&raw);
        let back = parse_plan(&serialize_plan(&graph)).map_err(|e| format!("graph {k}: {e}"))?;
        ensure!(back == graph, "graph {k} changed in round-trip");
        let report = validate_graph(&graph, &tasks);
        let (ok, cyclic) = plan_oracle(&raw, &tasks);
        ensure!(report.is_accepted() == ok, "graph {k}: engine {} oracle {ok}: {}", report.is_accepted(), report.summary());
        ensure!(report.has_cycle() == cyclic, "graph {k}: cycle engine {} oracle {cyclic}", report.has_cycle());
        ensure!(ok || k % 2 == 1, "graph {k} was built valid but rejected: {}", report.summary());
        accepted += ok as usize;
    }
    Ok(format!("200 graphs, {accepted} accepted, verdicts match"))
}

// Scheduler ------------------------------------------------------------------

fn dag_graph(n: usize, edges: &[(usize, usize)], failing: &[usize]) -> TaskGraph {
    let id = |i: usize| format!("t{i}");
    TaskGraph::new(
        (0..n)
            .map(|i| {
                let task = if failing.contains(&i) { "always-fails" } else { "lyric-generation" };
                let preds: Vec<usize> = edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect();
                let mut st = SubTask::new(id(i), task);
                st = match preds.first() {
                    Some(&p) => st.arg("input", ArgValue::from_task(id(p))),
                    None => st.arg("input", ArgValue::literal(format!("seed {i}"))),
                };
                for p in preds {
                    st = st.dep(id(p));
                }
                st
            })
            .collect(),
    )
}

fn scheduler(rng: &mut StdRng) -> Result<String, String> {
    let mut tasks = TaskRegistry::seeded();
    tasks
        .register(TaskSpec::new("always-fails", Modality::Text, Modality::Text, TaskCategory::Auxiliary, ""), false)
        .map_err(|e| e.to_string())?;
    let mut tools = musicagent_core::registry::ToolRegistry::seeded(&tasks);
    // A builtin tool with no implementation for its task fails every call.
    tools
        .register_tool(ToolDescriptor::new("no-impl", &["always-fails"], AdapterKind::Builtin), &tasks)
        .map_err(|e| e.to_string())?;
    let policy = SelectionPolicy::default();
    let executor = musicagent_core::executor::Executor::new(
        musicagent_core::executor::ExecutorConfig {
            parallelism: 4,
            timeout: Duration::from_secs(10),
        },
        Arc::new(ResourceLedger::new(16, Duration::from_secs(5))),
    );
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut skipped_total = 0;
    for k in 0..200 {
        let n = rng.random_range(1..=8);
        let edges = oracle::random_dag(rng, n, 35);
        let levels = schedule(&dag_graph(n, &edges, &[])).map_err(|e| format!("dag {k}: {e}"))?;
        let index = |id: &SubTaskId| id.as_str()[1..].parse::<usize>().unwrap();
        let mut level_of = vec![usize::MAX; n];
        for (l, level) in levels.iter().enumerate() {
            for id in level {
                level_of[index(id)] = l;
            }
        }
        let order: Vec<usize> = levels.iter().flatten().map(index).collect();
        ensure!(oracle::is_topological_order(n, &edges, &order), "dag {k}: {order:?} not topological");
        let reach = oracle::reachability(n, &edges);
        for a in 0..n {
            for b in 0..n {
                ensure!(!reach[a][b] || level_of[a] < level_of[b], "dag {k}: {a} reaches {b} but is not scheduled earlier");
            }
        }

        let failing: Vec<usize> = (0..n).filter(|_| rng.random_ratio(1, 5)).collect();
        let mut store = ArtifactStore::new(tmp.path().join(k.to_string()), SegmentLimit::default(), Arc::new(SteppingClock::epoch()));
        let ctx = RunContext {
            tasks: &tasks,
            tools: &tools,
            policy: &policy,
            request: "",
            llm: None,
        };
        let state = executor.run(&dag_graph(n, &edges, &failing), &mut store, ctx);
        let expected = oracle::transitive_dependents(n, &edges, &failing);
        let actual: BTreeSet<usize> = (0..n)
            .filter(|&i| state.failure_of(&SubTaskId::new(format!("t{i}"))).is_some_and(|f| f.is_skipped()))
            .collect();
        ensure!(actual == expected, "dag {k} failing {failing:?}: skipped {actual:?}, closure {expected:?}");
        for i in 0..n {
            let status = &state.status[&SubTaskId::new(format!("t{i}"))];
            let fine = match status {
                SubtaskStatus::Done { .. } => !failing.contains(&i) && !expected.contains(&i),
                SubtaskStatus::Failed(f) if f.class == FailureClass::UnsupportedTask => failing.contains(&i),
                SubtaskStatus::Failed(f) => f.is_skipped(),
                _ => false,
            };
            ensure!(fine, "dag {k}: t{i} ended as {status:?}");
        }
        skipped_total += expected.len();
    }
    Ok(format!("200 DAGs, {skipped_total} skipped nodes match the closure"))
}

// Selector -------------------------------------------------------------------

const ATTRS: [&str; 3] = ["downloads", "likes", "stars"];

fn tools_from(values: &[[f64; 3]]) -> Vec<ToolDescriptor> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut t = ToolDescriptor::new(format!("tool-{i:02}"), &["text-to-audio"], AdapterKind::Builtin);
            for (a, x) in ATTRS.iter().zip(v) {
                t = t.with_attr(*a, *x);
            }
            t
        })
        .collect()
}

fn pick(tools: &[ToolDescriptor], policy: &SelectionPolicy) -> Result<String, String> {
    let refs: Vec<&ToolDescriptor> = tools.iter().collect();
    select_deterministic("text-to-audio", &refs, policy)
        .map(|s| s.tool_id)
        .map_err(|e| e.to_string())
}

fn selector(rng: &mut StdRng) -> Result<String, String> {
    let mut ties = 0;
    for k in 0..100 {
        let n = rng.random_range(2..=8);
        // Small integer ranges make ties frequent.
        let values: Vec<[f64; 3]> = (0..n)
            .map(|_| [0, 1, 2].map(|_| rng.random_range(0..6) as f64 * 100.0))
            .collect();
        let attr = rng.random_range(0..3);
        let policy = SelectionPolicy::emphasize(ATTRS[attr]);
        let column: Vec<f64> = values.iter().map(|v| v[attr]).collect();
        let best = oracle::argmax_all(&column);
        ties += (best.len() > 1) as usize;
        let expected = format!("tool-{:02}", best[0]);
        let tools = tools_from(&values);
        let chosen = pick(&tools, &policy)?;
        ensure!(chosen == expected, "registry {k}: chose {chosen}, argmax {expected} on {}", ATTRS[attr]);

        let factors = [0, 1, 2].map(|_| 10f64.powf(rng.random_range(-3.0..3.0)));
        let scaled: Vec<[f64; 3]> = values.iter().map(|v| [v[0] * factors[0], v[1] * factors[1], v[2] * factors[2]]).collect();
        let mixed = SelectionPolicy::default();
        let plain = pick(&tools, &mixed)?;
        ensure!(pick(&tools_from(&scaled), &mixed)? == plain, "registry {k}: scaling changed the choice");

        for run in 0..10 {
            let mut shuffled = tools.clone();
            shuffled.shuffle(rng);
            let again = pick(&shuffled, &policy)?;
            ensure!(again == chosen, "registry {k} run {run}: {again} != {chosen}");
        }
    }
    Ok(format!("100 registries ({ties} with ties), argmax, scale invariance and 10-run stability hold"))
}

// Ledger ---------------------------------------------------------------------

fn replay_within_budget(events: &[LedgerEvent], budget: u32) -> Result<(), String> {
    let mut loaded: BTreeMap<&str, u32> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        match e {
            LedgerEvent::Load { tool, cost } => {
                loaded.insert(tool, *cost);
            }
            LedgerEvent::Evict { tool, .. } => {
                loaded.remove(tool.as_str());
            }
        }
        let sum: u32 = loaded.values().sum();
        ensure!(sum <= budget, "event {i}: {sum} loaded over budget {budget}");
    }
    Ok(())
}

fn ledger(rng: &mut StdRng) -> Result<String, String> {
    let budget = 10;
    let ledger = ResourceLedger::new(budget, Duration::from_millis(1));
    let mut leases = Vec::new();
    let (mut granted, mut timeouts, mut too_big) = (0, 0, 0);
    for i in 0..1000 {
        if leases.is_empty() || rng.random_ratio(3, 5) {
            let tool = format!("tool{}", rng.random_range(0..6));
            match ledger.acquire(&tool, rng.random_range(0..=12)) {
                Ok(l) => {
                    granted += 1;
                    leases.push(l);
                }
                Err(LedgerError::ResourceTimeout { .. }) => timeouts += 1,
                Err(LedgerError::CostExceedsBudget { .. }) => too_big += 1,
            }
        } else {
            let k = rng.random_range(0..leases.len());
            leases.swap_remove(k);
        }
        ensure!(ledger.used() <= budget, "event {i}: used {} > {budget}", ledger.used());
    }
    drop(leases);
    replay_within_budget(&ledger.events(), budget)?;

    // Concurrent holders and a waiter that must time out.
    let shared = ResourceLedger::new(budget, Duration::from_millis(50));
    let holder = shared.acquire("big", budget).map_err(|e| e.to_string())?;
    let blocked = std::thread::scope(|s| {
        let workers: Vec<_> = (0..4)
            .map(|w| {
                let shared = &shared;
                s.spawn(move || {
                    let mut results = Vec::new();
                    for j in 0..5 {
                        let r = shared.acquire(&format!("w{w}-{j}"), 1 + (j as u32 % 3));
                        results.push(matches!(r, Err(LedgerError::ResourceTimeout { .. })));
                        assert!(shared.used() <= budget);
                    }
                    results
                })
            })
            .collect();
        workers.into_iter().flat_map(|h| h.join().unwrap()).collect::<Vec<bool>>()
    });
    ensure!(blocked.iter().all(|&b| b), "an acquire succeeded while the budget was held");
    drop(holder);
    ensure!(shared.acquire("after", 3).is_ok(), "budget not reusable after release");
    replay_within_budget(&shared.events(), budget)?;
    Ok(format!(
        "1000 events ({granted} granted, {timeouts} timed out, {too_big} over budget), 20 blocked acquires timed out"
    ))
}

// Media ----------------------------------------------------------------------

fn random_audio(rng: &mut StdRng) -> AudioBuffer {
    let rate = *SUPPORTED_SAMPLE_RATES.choose(rng).unwrap();
    let channels = rng.random_range(1..=2);
    let frames = rng.random_range(0..4000);
    let data = (0..channels).map(|_| (0..frames).map(|_| rng.random::<i16>()).collect()).collect();
    AudioBuffer::new(rate, data).unwrap()
}

/// Tracks without overlapping same-pitch notes, sorted canonically.
fn random_score(rng: &mut StdRng) -> Score {
    let mut s = Score::new(rng.random_range(1..=960));
    s.tempo = rng.random_range(1..=0xff_ffff);
    s.tracks = (0..rng.random_range(1..=3))
        .map(|_| {
            let mut kept: Vec<NoteEvent> = Vec::new();
            for _ in 0..rng.random_range(0..24) {
                let n = NoteEvent::new(
                    rng.random_range(0..=127),
                    rng.random_range(1..=127),
                    rng.random_range(0..5000),
                    rng.random_range(1..2000),
                );
                if !kept.iter().any(|k| k.pitch == n.pitch && n.start_tick < k.end_tick() && k.start_tick < n.end_tick()) {
                    kept.push(n);
                }
            }
            kept
        })
        .collect();
    canonical(s)
}

fn canonical(mut s: Score) -> Score {
    for t in &mut s.tracks {
        t.sort_by_key(|n| (n.start_tick, n.pitch, n.duration_ticks, n.velocity));
    }
    s
}

fn media(rng: &mut StdRng) -> Result<String, String> {
    for k in 0..200 {
        let buf = random_audio(rng);
        let back = read_wav(&write_wav(&buf)).map_err(|e| format!("wav {k}: {e}"))?;
        ensure!(back == buf, "wav {k} changed in round-trip");

        let limit = SegmentLimit::new(rng.random_range(0.001..0.2));
        let once = trim_to_segment(buf.clone(), limit);
        ensure!(trim_to_segment(once.clone(), limit) == once, "trim {k} not idempotent");

        let frames = rng.random_range(0..4000);
        let other = AudioBuffer::new(
            buf.sample_rate(),
            (0..buf.channel_count())
                .map(|_| (0..frames).map(|_| rng.random::<i16>()).collect())
                .collect(),
        )
        .unwrap();
        ensure!(mix(&buf, &other).ok() == mix(&other, &buf).ok(), "mix {k} not commutative");
    }
    for k in 0..200 {
        let score = random_score(rng);
        let bytes = write_midi(&score).map_err(|e| format!("midi {k}: {e}"))?;
        let back = read_midi(&bytes).map_err(|e| format!("midi {k}: {e}"))?;
        ensure!(canonical(back) == score, "midi {k} changed in round-trip");
    }
    let freq = |pitch: u8| {
        let score = Score::with_track(480, vec![NoteEvent::new(pitch, 100, 0, 960)]);
        let audio = render_score_preview(&score, SegmentLimit::default()).unwrap();
        oracle::zero_crossing_frequency(audio.channel(0), audio.sample_rate())
    };
    let ratio = freq(81) / freq(69);
    ensure!((ratio - 2.0).abs() <= 0.04, "zero-crossing ratio {ratio:.4} outside 2.0 ± 2%");
    Ok(format!("200 WAV + 200 MIDI round-trips, trim and mix laws hold, octave ratio {ratio:.4}"))
}

// Agent scenarios ------------------------------------------------------------

fn trace_ordered(result: &ChatResult) -> Result<(), String> {
    let pos = |id: &SubTaskId, kind: EventKind| {
        result.trace.iter().position(|e| &e.subtask == id && e.event == kind)
    };
    for st in &result.plan.subtasks {
        let (Some(ready), Some(running), Some(done)) =
            (pos(&st.id, EventKind::Ready), pos(&st.id, EventKind::Running), pos(&st.id, EventKind::Done))
        else {
            return Err(format!("{} lacks ready/running/done events", st.id));
        };
        ensure!(ready < running && running < done, "{} events out of order", st.id);
        for dep in &st.deps {
            let dep_done = pos(dep, EventKind::Done).ok_or(format!("{dep} never finished"))?;
            ensure!(dep_done < ready, "{} became ready before {dep} finished", st.id);
        }
    }
    Ok(())
}

fn end_to_end(_: &mut StdRng) -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let agent = common::agent(tmp.path(), common::e2e_script());
    let result = agent
        .chat(Some("e2e"), "generate a song from these lyrics then classify it: rain falls soft on the city")
        .map_err(|e| e.to_string())?;
    let tasks: Vec<&str> = result.plan.subtasks.iter().map(|s| s.task.as_str()).collect();
    ensure!(
        tasks == ["lyric-to-melody", "render-preview", "music-classification"],
        "plan {tasks:?}"
    );
    ensure!(!result.degraded, "degraded");
    ensure!(result.artifacts.len() >= 3, "{} artifacts", result.artifacts.len());
    let count = |m: Modality| result.artifacts.iter().filter(|a| a.modality == m).count();
    ensure!(
        count(Modality::SymbolicMusic) >= 1 && count(Modality::Audio) >= 1 && count(Modality::Text) >= 1,
        "modalities {:?}",
        result.artifacts.iter().map(|a| a.modality).collect::<Vec<_>>()
    );
    for a in result.artifacts.iter().filter(|a| a.modality == Modality::Audio) {
        let secs = a.duration_seconds.ok_or("audio without duration")?;
        ensure!(secs <= 30.0, "{} lasts {secs} s", a.id);
    }
    trace_ordered(&result)?;
    for a in &result.artifacts {
        ensure!(result.response.contains(a.id.as_str()), "response does not cite {}", a.id);
        agent.artifact(Some("e2e"), a.id.as_str()).map_err(|e| e.to_string())?;
    }
    Ok(format!(
        "3-node plan, artifacts {}",
        result.artifacts.iter().map(|a| a.id.as_str()).collect::<Vec<_>>().join(", ")
    ))
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn degradation(_: &mut StdRng) -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let app = router(common::agent_with(tmp.path(), Arc::new(MockLlm::unavailable())));
    runtime().block_on(async {
        for text in ["write a song about rain", "hello?"] {
            let r = common::json(&app, Method::POST, "/chat", json!({"session_id": "down", "text": text})).await;
            ensure!(r.status == StatusCode::OK, "chat returned {}", r.status);
            let body = r.json();
            ensure!(body["degraded"] == true, "not flagged degraded");
            ensure!(!body["response"].as_str().unwrap_or("").is_empty(), "empty fallback response");
            let health = common::get(&app, "/healthz").await;
            ensure!(health.status == StatusCode::OK, "healthz returned {}", health.status);
        }
        Ok("fallback responses flagged degraded, /healthz OK after each".to_string())
    })
}

fn equivalence(_: &mut StdRng) -> Result<String, String> {
    let script = || {
        let mut s = common::e2e_script();
        s.push(MockEntry::any("unused"));
        s
    };
    let text = "write a song about rain";

    let api_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let app = router(common::agent(api_dir.path(), script()));
    let api = runtime().block_on(async {
        common::json(&app, Method::POST, "/chat", json!({"session_id": "same", "text": text})).await.json()
    });

    let repl_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let agent: Arc<MusicAgent> = common::agent(repl_dir.path(), script());
    let mut out = Vec::new();
    let Outcome::Chat(repl) = Repl::new(&agent, "same").handle_line(text, &mut out).map_err(|e| e.to_string())? else {
        return Err("REPL did not run the chat".into());
    };
    let repl = serde_json::to_value(&*repl).map_err(|e| e.to_string())?;

    ensure!(api["plan"] == repl["plan"], "plans differ:\n{}\n{}", api["plan"], repl["plan"]);
    ensure!(api["trace"] == repl["trace"], "event sequences differ");
    let ids = |v: &serde_json::Value| -> BTreeSet<String> {
        v["artifacts"].as_array().into_iter().flatten().map(|a| a["id"].as_str().unwrap_or("").to_string()).collect()
    };
    ensure!(ids(&api) == ids(&repl), "artifact ids differ: {:?} vs {:?}", ids(&api), ids(&repl));
    ensure!(!ids(&api).is_empty(), "no artifacts produced");
    let printed = String::from_utf8_lossy(&out);
    for id in ids(&repl) {
        ensure!(printed.contains(&id), "REPL output does not list {id}");
    }
    Ok(format!(
        "plan, {} trace events and artifact ids {:?} identical",
        api["trace"].as_array().map_or(0, |t| t.len()),
        ids(&api)
    ))
}
