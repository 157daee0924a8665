use super::*;
use crate::mdp::{LearnedMdp, RewardOverride, RewardStructure, TransitionEvent};
use proptest::prelude::*;

fn toy3() -> LearnedMdp {
    let mut m = LearnedMdp::open("s0");
    let mut add = |a: &str, t: &str| m.record_transition(&TransitionEvent::new("s0", a, t)).unwrap();
    add("a", "fail");
    add("a", "goal");
    for _ in 0..9 {
        add("b", "s0");
    }
    add("b", "goal");
    m.add_label("done", "goal");
    m
}

#[test]
fn toy3_export_is_normative() {
    let text = export_prism(&toy3().snapshot()).unwrap();
    assert!(text.starts_with("mdp\n"), "{text}");
    assert!(text.contains("  s : [0..2] init 0;\n"));
    assert!(text.contains("[b] s=0 -> 9/10:(s'=0) + 1/10:(s'=2);"), "{text}");
    assert!(text.contains("[a] s=0 -> 1/2:(s'=1) + 1/2:(s'=2);"));
    assert!(text.contains("[__self__] s=1 -> 1/1:(s'=1);"));
    assert!(text.contains("label \"done\" = s=2;"));
    assert!(text.contains("rewards \"steps\"\n  [a] s=0 : 1;\n  [b] s=0 : 1;\nendrewards"));
}

#[test]
fn single_absorbing_state() {
    let mut m = LearnedMdp::open("x");
    m.declare_state("x").unwrap();
    let text = export_prism(&m.snapshot()).unwrap();
    assert!(text.contains("[__self__] s=0 -> 1/1:(s'=0);"), "{text}");
}

#[test]
fn empty_snapshot_is_rejected() {
    assert_eq!(export_prism(&LearnedMdp::open("x").snapshot()), Err(PrismError::EmptyModel));
}

#[test]
fn export_is_deterministic() {
    assert_eq!(export_prism(&toy3().snapshot()), export_prism(&toy3().snapshot()));
}

#[test]
fn toy3_round_trip() {
    let snap = toy3().snapshot();
    let back = import_prism(&export_prism(&snap).unwrap()).unwrap();
    assert_eq!(transition_matrix(&back), transition_matrix(&snap));
    assert_eq!(back.states(), snap.states());
    assert_eq!(back.label_states("done"), snap.label_states("done"));
    assert_eq!(back.initial(), snap.initial());
    let p = crate::pctl::Property::parse("r", r#"Rmin=? [ F "goal" ]"#).unwrap();
    let settings = crate::checker::CheckSettings::default();
    assert_eq!(
        crate::checker::check(&snap, &p, &settings).unwrap().value,
        crate::checker::check(&back, &p, &settings).unwrap().value
    );
}

#[test]
fn fractions_and_decimals_agree() {
    let frac = "mdp\nmodule agent\n  s : [0..1] init 0;\n  [a] s=0 -> 3/4:(s'=0) + 1/4:(s'=1);\nendmodule\n";
    let dec = "mdp\nmodule agent\n  s : [0..1] init 0;\n  [a] s=0 -> 0.75:(s'=0) + 0.25:(s'=1);\nendmodule\n";
    assert_eq!(transition_matrix(&import_prism(frac).unwrap()), transition_matrix(&import_prism(dec).unwrap()));
}

#[test]
fn unsupported_constructs_report_lines() {
    assert_eq!(
        import_prism("// hello\nctmc\n"),
        Err(PrismError::UnsupportedConstruct { line: 2, text: "ctmc".into() })
    );
    let e = import_prism("mdp\nmodule agent\n  s : [0..1] init 0;\n  x : bool;\nendmodule\n").unwrap_err();
    assert!(matches!(e, PrismError::UnsupportedConstruct { line: 4, .. }), "{e:?}");
    let e = import_prism("mdp\nmodule agent\n  s : [0..1] init 0;\n  [a] s=0 -> 1/2:(s'=0);\nendmodule\n").unwrap_err();
    assert!(matches!(e, PrismError::Invalid { line: 4, .. }), "{e:?}");
}

#[test]
fn decayed_weights_export_as_decimals() {
    let mut m = toy3();
    m.apply_forgetting(0.3).unwrap();
    let snap = m.snapshot();
    let text = export_prism(&snap).unwrap();
    assert!(text.contains("[b] s=0 -> 9.0000000000000002e-1:(s'=0)") || text.contains("[b] s=0 -> 8.9999999999999991e-1:(s'=0)"), "{text}");
    let back = import_prism(&text).unwrap();
    let (x, y) = (transition_matrix(&snap), transition_matrix(&back));
    assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>());
    for (k, row) in &x {
        for (a, b) in row.iter().zip(&y[k]) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-15);
        }
    }
}

fn arb_model() -> impl Strategy<Value = LearnedMdp> {
    let event = (0usize..5, 0usize..3, 0usize..5, prop::option::of(-3i32..4));
    (prop::collection::vec(event, 1..60), any::<bool>()).prop_map(|(events, labelled)| {
        let mut m = LearnedMdp::open(format!("q{}", events[0].0));
        for (s, a, t, r) in events {
            let mut ev = TransitionEvent::new(format!("q{s}"), format!("act{a}"), format!("q{t}"));
            ev.reward = r.map(f64::from);
            m.record_transition(&ev).unwrap();
        }
        if labelled {
            m.add_label("odd", "q1");
            m.add_label("odd", "q3");
            m.set_action_label("act2", "used2");
            m.add_terminal("q4");
        }
        m.add_reward_structure(
            RewardStructure::new("cost", 0.5).with_override(RewardOverride {
                state: None,
                action: Some("act1".into()),
                next_state: None,
                value: 2.0,
            }),
        )
        .unwrap();
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn import_export_is_matrix_equal(m in arb_model()) {
        let snap = m.snapshot();
        let text = export_prism(&snap).unwrap();
        let back = import_prism(&text).unwrap();
        prop_assert_eq!(transition_matrix(&back), transition_matrix(&snap));
        prop_assert_eq!(back.labels(), snap.labels());
        prop_assert_eq!(back.states(), snap.states());
        // exporting an imported model is a fixed point
        let again = export_prism(&back).unwrap();
        prop_assert_eq!(export_prism(&import_prism(&again).unwrap()).unwrap(), again);
    }
}
