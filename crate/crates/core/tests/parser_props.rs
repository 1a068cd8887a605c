mod support;

use causalkg::parse::{parse_concepts, parse_match, parse_verdict, ParseError, Verdict};
use proptest::prelude::*;
use support::{parser_violations, strategies};

fn candidates() -> Vec<String> {
    ["Asthma", "Hypoxia", "Status asthmaticus"].map(String::from).to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn parser_invariants_hold(pieces in strategies::answer(), limit in 1usize..5) {
        let bad = parser_violations(&pieces, limit, &candidates());
        prop_assert!(bad.is_empty(), "{:?}", bad);
    }
}

proptest! {
    #[test]
    fn bracket_free_text_never_parses(text in "[a-zA-Z ,.\n]{1,40}") {
        prop_assume!(!text.trim().is_empty());
        prop_assert_eq!(parse_concepts(&text, 3), Err(ParseError::NoBrackets));
        prop_assert_eq!(parse_verdict(&text), Err(ParseError::NoVerdict));
        prop_assert_eq!(parse_match(&text, &candidates()), Err(ParseError::NoBrackets));
    }
}

#[test]
fn verdict_after_reasoning() {
    let raw = "Smoking damages lungs [yes]. On reflection, directly? [no]";
    assert_eq!(parse_verdict(raw), Ok(Verdict::No));
}
