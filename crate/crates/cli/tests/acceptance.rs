//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p agentguard-cli --test acceptance`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use agentguard_core::checker::{check, CheckSettings, Value};
use agentguard_core::config::{load_config, GuardConfig, QueueFullPolicy};
use agentguard_core::engine::{replay_trace, Analyzer, Guard, ReplayOptions};
use agentguard_core::mdp::{LearnedMdp, ModelSnapshot, TransitionEvent};
use agentguard_core::pctl::{format_property, parse_property, Bound, Comparison, Extremum, Opt, PathFormula, Property, Query, StateFormula};
use agentguard_core::prism::{export_prism, import_prism, transition_matrix};
use agentguard_core::sim::{generate_trace, Scenario};
use agentguard_core::trace::{write_trace, TraceReader, TraceRecord};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("learner convergence to the 75/25 split", c1_learner_convergence),
        ("checker vs brute-force oracle", c2_oracle_equivalence),
        ("toy3 golden values", c3_toy3_golden),
        ("duality and bounded monotonicity", c4_duality),
        ("determinism and round trips", c5_round_trips),
        ("end-to-end alerting on drift", c6_alerting),
        ("desk-scale performance", c7_performance),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} PASS: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL: {name} ({why})", i + 1);
            }
        }
    }
    std::io::stdout().flush().unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn agentguard(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_agentguard"))
        .args(args)
        .output()
        .expect("agentguard binary runs")
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn c1_learner_convergence() -> Outcome {
    let started = Instant::now();
    let sc = config("repairagent_sim.yaml");
    let out = agentguard(&["simulate", "--scenario", sc.to_str().unwrap(), "--events", "20000"]);
    ensure(out.status.success(), || format!("simulate exited {:?}", out.status.code()))?;
    let mut from_hypothesis = 0;
    let mut records = Vec::new();
    for rec in TraceReader::new(out.stdout.as_slice(), true) {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.state == "hypothesis" {
            from_hypothesis += 1;
        }
        records.push(rec);
        if from_hypothesis == 1000 {
            break;
        }
    }
    ensure(from_hypothesis == 1000, || format!("only {from_hypothesis} hypothesis events"))?;
    let mut trace = Vec::new();
    write_trace(&mut trace, &records).unwrap();
    let cfg = GuardConfig::from_path(config("repairagent.yaml")).map_err(|e| e.to_string())?;
    let guard = Guard::with_queue_policy(cfg, Some(QueueFullPolicy::Block));
    let report = replay_trace(&guard, trace.as_slice(), ReplayOptions::default()).map_err(|e| e.to_string())?;
    let snap = report.snapshot.ok_or("no snapshot")?;
    let h = snap.state_id("hypothesis").ok_or("no hypothesis state")?;
    let a = snap.action_id("search_code_base").ok_or("no action")?;
    let pi = snap.empirical_policy(h).map_err(|e| e.to_string())?[&a];
    let secs = started.elapsed().as_secs_f64();
    ensure((0.70..=0.80).contains(&pi), || format!("pi = {pi:.4}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("pi(search_code_base|hypothesis) = {pi:.4}, {} events, {secs:.2} s", records.len()))
}

const ACTIONS: [&str; 3] = ["a", "b", "c"];

/// Random learned MDP: up to 6 states, 3 actions and 4 successors per
/// choice, state `s0` always observed.
fn random_model(rng: &mut ChaCha8Rng) -> ModelSnapshot {
    let n = rng.random_range(2..=6);
    let states: Vec<usize> = (0..n).collect();
    let mut m = LearnedMdp::open("s0");
    for s in 0..n {
        for (i, a) in ACTIONS.iter().enumerate() {
            let forced = s == 0 && i == 0;
            if !forced && !rng.random_bool(0.5) {
                continue;
            }
            let k = rng.random_range(1..=4.min(n));
            for &t in states.choose_multiple(rng, k) {
                for _ in 0..rng.random_range(1..=5) {
                    m.record_transition(&TransitionEvent::new(format!("s{s}"), *a, format!("s{t}"))).unwrap();
                }
            }
        }
    }
    m.snapshot()
}

fn value(snap: &ModelSnapshot, text: &str) -> Result<f64, String> {
    let p = Property::parse("p", text).map_err(|e| e.to_string())?;
    let r = check(snap, &p, &CheckSettings::default()).map_err(|e| e.to_string())?;
    match r.value {
        Value::Number(x) => Ok(x),
        Value::Infinity => Ok(f64::INFINITY),
        Value::Undefined => Err(format!("{text} undefined")),
    }
}

fn deviation(got: f64, want: f64) -> f64 {
    match (got.is_infinite(), want.is_infinite()) {
        (true, true) => 0.0,
        (false, false) => (got - want).abs(),
        _ => f64::INFINITY,
    }
}

fn c2_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut infinite = 0;
    for case in 0..500 {
        let snap = random_model(&mut rng);
        let g = snap.states().choose(&mut rng).unwrap().clone();
        let goal: Vec<bool> = snap.states().iter().map(|s| *s == g).collect();
        let init = snap.initial().unwrap().0;
        let (pmin, pmax) = oracle::extremal_reach(&snap, &goal, init);
        let (rmin, _) = oracle::extremal_steps(&snap, &goal, init);
        let bounded = oracle::bounded_reach(&snap, &goal, 3, true)[init];
        if rmin.is_infinite() {
            infinite += 1;
        }
        for (text, want) in [
            (format!(r#"Pmax=? [ F "{g}" ]"#), pmax),
            (format!(r#"Pmin=? [ F "{g}" ]"#), pmin),
            (format!(r#"Pmax=? [ F<=3 "{g}" ]"#), bounded),
            (format!(r#"Rmin=? [ F "{g}" ]"#), rmin),
        ] {
            let d = deviation(value(&snap, &text)?, want);
            ensure(d <= 1e-6, || format!("case {case}: {text} off by {d}"))?;
            worst = worst.max(d);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("500 models, max deviation {worst:.1e}, {infinite} infinite Rmin, {secs:.2} s"))
}

fn toy3() -> ModelSnapshot {
    let mut m = LearnedMdp::open("s0");
    let mut add = |a: &str, t: &str, n: usize| {
        for _ in 0..n {
            m.record_transition(&TransitionEvent::new("s0", a, t)).unwrap();
        }
    };
    add("a", "goal", 1);
    add("a", "fail", 1);
    add("b", "s0", 9);
    add("b", "goal", 1);
    m.snapshot()
}

fn c3_toy3_golden() -> Outcome {
    let snap = toy3();
    let golden = [
        (r#"Pmax=? [ F "goal" ]"#, 1.0),
        (r#"Pmin=? [ F "goal" ]"#, 0.5),
        (r#"Pmax=? [ F<=2 "goal" ]"#, 0.55),
        (r#"R{"steps"}min=? [ F "goal" ]"#, 10.0),
        (r#"R{"steps"}max=? [ F "goal" ]"#, f64::INFINITY),
        (r#"Pmax=? [ G !"fail" ]"#, 1.0),
    ];
    for (text, want) in golden {
        let got = value(&snap, text)?;
        ensure(deviation(got, want) <= 1e-6, || format!("{text} = {got}, want {want}"))?;
    }
    Ok("6 values within 1e-6".into())
}

fn c4_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = CheckSettings::default().epsilon;
    for case in 0..200 {
        let snap = random_model(&mut rng);
        let k = rng.random_range(1..=snap.num_states());
        let phi = snap
            .states()
            .choose_multiple(&mut rng, k)
            .map(|s| format!("\"{s}\""))
            .collect::<Vec<_>>()
            .join(" | ");
        for (g, f) in [("max", "min"), ("min", "max")] {
            let gv = value(&snap, &format!("P{g}=? [ G ({phi}) ]"))?;
            let fv = value(&snap, &format!("P{f}=? [ F !({phi}) ]"))?;
            ensure((gv - (1.0 - fv)).abs() <= 1e-9, || format!("case {case}: P{g}[G] = {gv}, P{f}[F] = {fv}"))?;
        }
        let target = format!("!({phi})");
        let unbounded = value(&snap, &format!("Pmax=? [ F {target} ]"))?;
        let mut prev = 0.0;
        for k in 1..=10 {
            let v = value(&snap, &format!("Pmax=? [ F<={k} {target} ]"))?;
            ensure(v >= prev, || format!("case {case}: F<={k} decreased {prev} -> {v}"))?;
            prev = v;
        }
        ensure(prev <= unbounded + eps, || format!("case {case}: F<=10 = {prev} exceeds F = {unbounded}"))?;
    }
    Ok("200 models".into())
}

#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(b);
        Ok(b.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn results_of(report: &agentguard_core::engine::StopReport) -> Vec<(String, String)> {
    report
        .results
        .iter()
        .map(|r| (r.property.clone(), serde_json::to_string(&r.value).unwrap()))
        .collect()
}

fn random_formula(rng: &mut ChaCha8Rng, depth: u32) -> StateFormula {
    let leaf = depth == 0 || rng.random_bool(0.3);
    if leaf {
        return match rng.random_range(0..6) {
            0 => StateFormula::True,
            1 => StateFormula::False,
            i => StateFormula::label(format!("l{i}")),
        };
    }
    match rng.random_range(0..3) {
        0 => StateFormula::not(random_formula(rng, depth - 1)),
        1 => StateFormula::and(random_formula(rng, depth - 1), random_formula(rng, depth - 1)),
        _ => StateFormula::or(random_formula(rng, depth - 1), random_formula(rng, depth - 1)),
    }
}

fn random_query(rng: &mut ChaCha8Rng) -> Query {
    let bound = |rng: &mut ChaCha8Rng| rng.random_bool(0.4).then(|| rng.random_range(1..50));
    let path = match rng.random_range(0..3) {
        0 => PathFormula::Eventually { target: random_formula(rng, 3), bound: bound(rng) },
        1 => PathFormula::Globally { invariant: random_formula(rng, 3), bound: bound(rng) },
        _ => PathFormula::Until {
            hold: random_formula(rng, 3),
            target: random_formula(rng, 3),
            bound: bound(rng),
        },
    };
    let opt = *[Opt::Max, Opt::Min, Opt::Policy].choose(rng).unwrap();
    let ext = *[Extremum::Max, Extremum::Min].choose(rng).unwrap();
    let op = *[Comparison::Ge, Comparison::Gt, Comparison::Le, Comparison::Lt].choose(rng).unwrap();
    let structure = rng.random_bool(0.5).then(|| "tests".to_owned());
    match rng.random_range(0..4) {
        0 => Query::Probability { opt, path },
        1 => Query::ProbabilityBound {
            opt: ext,
            bound: Bound { op, value: rng.random_range(0..=1000) as f64 / 1000.0 },
            path,
        },
        2 => Query::Reward { opt, structure, target: random_formula(rng, 3) },
        _ => Query::RewardBound {
            opt: ext,
            structure,
            bound: Bound { op, value: rng.random_range(0..100_000) as f64 / 100.0 },
            target: random_formula(rng, 3),
        },
    }
}

fn c5_round_trips() -> Outcome {
    // (a) record then replay
    let cfg = GuardConfig::from_path(config("repairagent.yaml")).map_err(|e| e.to_string())?;
    let sc = Scenario::from_path(config("repairagent_sim.yaml")).map_err(|e| e.to_string())?;
    let live = Guard::new(cfg.clone());
    let log = SharedBuf::default();
    live.set_trace_log(Box::new(log.clone()));
    live.start().map_err(|e| e.to_string())?;
    for rec in generate_trace(&sc, 5000) {
        live.log_event(rec.event()).map_err(|e| e.to_string())?;
    }
    let a = live.stop().map_err(|e| e.to_string())?;
    let recorded = log.0.lock().unwrap().clone();
    let replayer = Guard::with_queue_policy(cfg, Some(QueueFullPolicy::Block));
    let b = replay_trace(&replayer, recorded.as_slice(), ReplayOptions::default()).map_err(|e| e.to_string())?;
    let prism_a = export_prism(a.snapshot.as_ref().ok_or("no live snapshot")?).map_err(|e| e.to_string())?;
    let prism_b = export_prism(b.snapshot.as_ref().ok_or("no replay snapshot")?).map_err(|e| e.to_string())?;
    ensure(prism_a == prism_b, || "exported PRISM text differs".into())?;
    ensure(results_of(&a) == results_of(&b), || "result values differ".into())?;
    ensure(a.cycles == b.cycles && a.cycles == 200, || format!("cycles {} vs {}", a.cycles, b.cycles))?;

    // (b) PRISM export/import
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let mut m = LearnedMdp::open("q0");
        let n = rng.random_range(1..12);
        let mut names: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
        names.shuffle(&mut rng);
        for _ in 0..rng.random_range(1..200) {
            let s = names.choose(&mut rng).unwrap();
            let t = names.choose(&mut rng).unwrap();
            let act = ["go", "read", "write_fix", "run_tests"].choose(&mut rng).unwrap();
            m.record_transition(&TransitionEvent::new(s.as_str(), *act, t.as_str())).unwrap();
        }
        let snap = m.snapshot();
        let text = export_prism(&snap).map_err(|e| e.to_string())?;
        let back = import_prism(&text).map_err(|e| format!("case {case}: {e}"))?;
        ensure(transition_matrix(&back) == transition_matrix(&snap), || format!("case {case}: matrix differs"))?;
        ensure(back.labels() == snap.labels(), || format!("case {case}: labels differ"))?;
    }

    // (c) property printer and parser
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for case in 0..1000 {
        let q = random_query(&mut rng);
        let text = format_property(&q);
        let back = parse_property(&text).map_err(|e| format!("case {case}: `{text}`: {e}"))?;
        ensure(back == q, || format!("case {case}: `{text}` parsed differently"))?;
    }
    Ok(format!("{} byte PRISM text identical; 100 PRISM round trips; 1000 property round trips", prism_a.len()))
}

fn c6_alerting() -> Outcome {
    let guard_cfg = config("drift_guard.yaml");
    let sim_cfg = config("drift_sim.yaml");
    let cfg = GuardConfig::from_path(&guard_cfg).map_err(|e| e.to_string())?;
    let sc = Scenario::from_path(&sim_cfg).map_err(|e| e.to_string())?;
    let drift_at = sc.drift[0].after_events;
    let drift_cycle = drift_at / cfg.analysis.every_events;
    let trace: Vec<TraceRecord> = generate_trace(&sc, 4000);

    let guard = Guard::new(cfg);
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    guard.register_actuator("pause", move |d| {
        assert!(d.alert.is_some());
        c.fetch_add(1, Ordering::SeqCst);
        Ok(())
    });
    guard.start().map_err(|e| e.to_string())?;
    for rec in &trace {
        guard.log_event(rec.event()).map_err(|e| e.to_string())?;
    }
    let report = guard.stop().map_err(|e| e.to_string())?;
    ensure(report.alerts.len() == 1, || format!("{} alerts", report.alerts.len()))?;
    let alert = &report.alerts[0];
    ensure(alert.cycle > drift_cycle && alert.cycle <= drift_cycle + 1, || {
        format!("alert at cycle {}, drift after cycle {drift_cycle}", alert.cycle)
    })?;
    ensure(calls.load(Ordering::SeqCst) == 1, || format!("callback ran {} times", calls.load(Ordering::SeqCst)))?;
    ensure(alert.callback_error.is_none(), || "callback failed".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("drift.jsonl");
    write_trace(std::fs::File::create(&path).map_err(|e| e.to_string())?, &trace).map_err(|e| e.to_string())?;
    let out = agentguard(&["replay", "--config", guard_cfg.to_str().unwrap(), "--trace", path.to_str().unwrap()]);
    ensure(out.status.code() == Some(4), || format!("replay exited {:?}", out.status.code()))?;
    Ok(format!(
        "one alert at cycle {} (value {}), callback ran once, replay exit 4",
        alert.cycle,
        serde_json::to_string(&alert.value).unwrap()
    ))
}

fn c7_performance() -> Outcome {
    // synthetic model with the RepairAgent properties
    let text = std::fs::read_to_string(config("repairagent.yaml")).map_err(|e| e.to_string())?;
    let mut cfg: GuardConfig = load_config(&text).map_err(|e| e.to_string())?;
    cfg.learner.mode = agentguard_core::mdp::Registration::Open;
    let mut analyzer = Analyzer::new(Arc::new(cfg));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut names: Vec<String> = (0..998).map(|i| format!("w{i}")).collect();
    names.push("fix_success".into());
    names.push("fix_failed".into());
    let actions = ["read_range", "search_code_base", "write_fix", "run_tests", "express_hypothesis"];
    let start = "understand_bug";
    for (i, s) in std::iter::once(start).chain(names.iter().map(String::as_str)).enumerate() {
        if s == "fix_success" || s == "fix_failed" {
            continue;
        }
        for a in actions {
            for _ in 0..rng.random_range(1..=8) {
                let t = if i % 7 == 0 && a == "run_tests" {
                    ["fix_success", "fix_failed"].choose(&mut rng).unwrap().to_string()
                } else {
                    names.choose(&mut rng).unwrap().clone()
                };
                let ev = TransitionEvent::new(s, a, t.as_str()).with_reward(1.0);
                analyzer.apply(&ev).map_err(|e| e.to_string())?;
            }
        }
    }
    let started = Instant::now();
    let report = analyzer.run_cycle();
    let cycle_secs = started.elapsed().as_secs_f64();
    for r in &report.results {
        ensure(r.error.is_none(), || format!("{}: {:?}", r.property, r.error))?;
    }
    let states = report.snapshot.num_states();
    ensure(states >= 1000, || format!("only {states} states"))?;
    ensure(cycle_secs < 1.0, || format!("cycle took {cycle_secs:.3} s"))?;

    // replay ingestion
    let cfg = GuardConfig::from_path(config("repairagent.yaml")).map_err(|e| e.to_string())?;
    let sc = Scenario::from_path(config("repairagent_sim.yaml")).map_err(|e| e.to_string())?;
    let n = 200_000;
    let mut trace = Vec::new();
    write_trace(&mut trace, &generate_trace(&sc, n)).unwrap();
    let guard = Guard::with_queue_policy(cfg, Some(QueueFullPolicy::Block));
    let started = Instant::now();
    let r = replay_trace(&guard, trace.as_slice(), ReplayOptions::default()).map_err(|e| e.to_string())?;
    let rate = n as f64 / started.elapsed().as_secs_f64();
    ensure(r.applied == n, || format!("applied {} of {n}", r.applied))?;
    ensure(rate >= 50_000.0, || format!("{rate:.0} events/s"))?;
    Ok(format!("{states}-state cycle in {:.0} ms; replay at {:.0} events/s", cycle_secs * 1e3, rate))
}
