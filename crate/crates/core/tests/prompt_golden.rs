use causalkg::prompts::{PromptSet, PromptTemplate, TemplateName};
use std::path::PathBuf;

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.rendered.txt"));
    std::fs::read_to_string(path).unwrap()
}

fn edges() -> &'static str {
    "['Asthma causes Airway Inflammation', 'Allergen Exposure causes Asthma']"
}

fn retrieved() -> Vec<String> {
    [
        "Asthma",
        "Asthma attack",
        "Allergic asthma",
        "Status asthmaticus",
        "Bronchitis",
    ]
    .map(String::from)
    .to_vec()
}

/// Every template rendered with the fixture values, by name.
fn rendered() -> Vec<(TemplateName, String)> {
    let p = PromptSet::default();
    vec![
        (TemplateName::System, p.system()),
        (
            TemplateName::ExpandCausedBy,
            p.expand_caused_by(edges(), "Asthma", 3).unwrap(),
        ),
        (
            TemplateName::ExpandCausing,
            p.expand_causing(edges(), "Asthma", 3).unwrap(),
        ),
        (TemplateName::EdgeCheck, p.edge_check("HIV", "Dementia").unwrap()),
        (TemplateName::NnMatch, p.nn_match("Asthma", &retrieved()).unwrap()),
    ]
}

#[test]
fn rendered_templates_match_goldens_byte_for_byte() {
    for (name, text) in rendered() {
        assert_eq!(text, golden(name.as_str()), "{name}");
    }
}

#[test]
fn no_placeholder_survives_rendering() {
    for (name, text) in rendered() {
        for ph in PromptTemplate::builtin(name).placeholders() {
            assert!(!text.contains(&format!("{{{ph}}}")), "{name}: {ph}");
            assert!(!text.contains(&format!("{{{ph}:}}")), "{name}: {ph}");
        }
    }
}
