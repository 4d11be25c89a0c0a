mod support;

use nerqa_core::answer::{dedup, parse_response, serialize_answer, Diagnostic};
use proptest::prelude::*;
use support::{random_mentions, random_utf8, Gen};

#[test]
fn total_on_100k_seeded_strings() {
    let mut g = Gen::new(7);
    for _ in 0..100_000 {
        let s = random_utf8(&mut g);
        let out = parse_response(&s);
        assert!(!out.diagnostics.is_empty(), "{s:?}");
    }
}

#[test]
fn round_trip_on_1000_seeded_lists() {
    let mut g = Gen::new(11);
    for _ in 0..1000 {
        let m = random_mentions(&mut g);
        let text = serialize_answer(&m);
        let out = parse_response(&text);
        assert_eq!(out.mentions, dedup(&m), "{text}");
        assert!(out.has(Diagnostic::Clean), "{text}");
    }
}

#[test]
fn accepts_json_quoting_and_prose() {
    let out =
        parse_response("Sure! The answer is:\n[{\"Tony Blair\": \"Person\"}]\nHope this helps.");
    assert_eq!(out.mentions.len(), 1);
    assert!(out.has(Diagnostic::RecoveredFromProse));
    let fenced = parse_response("```json\n[{\"UN\": \"Organization\"}]\n```");
    assert_eq!(fenced.mentions.len(), 1);
    assert!(fenced.has(Diagnostic::CodeFenceStripped));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn never_panics(s in any::<String>()) {
        let _ = parse_response(&s);
    }

    #[test]
    fn never_panics_near_list_syntax(s in r"[\[\]{}'\x22:, a-z京\\]{0,60}") {
        let _ = parse_response(&s);
    }

    #[test]
    fn reparse_is_stable(seed in any::<u64>()) {
        let s = random_utf8(&mut Gen::new(seed));
        let first = parse_response(&s);
        let again = parse_response(&serialize_answer(&first.mentions));
        prop_assert_eq!(&again.mentions, &first.mentions);
        prop_assert_eq!(parse_response(&s), first);
    }

    #[test]
    fn round_trip(seed in any::<u64>()) {
        let m = random_mentions(&mut Gen::new(seed));
        prop_assert_eq!(parse_response(&serialize_answer(&m)).mentions, dedup(&m));
    }
}
