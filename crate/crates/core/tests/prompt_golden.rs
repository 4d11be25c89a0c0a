//! Rendered prompts must equal fixtures transcribed by hand from the
//! published prompt examples, byte for byte.

mod support;

use std::path::Path;

use nerqa_core::prompt::TemplatePack;
use support::golden::Golden;

fn root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn every_fixture_renders_byte_identical() {
    let g = Golden::load(root());
    let transcribed = g.transcribed();
    assert!(transcribed >= 16, "only {transcribed} transcribed fixtures");
    for lang in ["zh", "en"] {
        assert!(g.fixtures.iter().any(|f| f.language == lang));
    }
    let failures = g.mismatches();
    assert!(
        failures.is_empty(),
        "{} mismatches:\n{}",
        failures.len(),
        failures.join("\n")
    );
}

#[test]
fn rendering_is_deterministic() {
    let g = Golden::load(root());
    let fx = g
        .fixtures
        .iter()
        .find(|f| f.name == "zh_tool_dependency_back_tool")
        .unwrap();
    assert_eq!(g.render(fx), g.render(fx));
}

#[test]
fn shipped_packs_load_and_respect_language_slots() {
    let templates = root().join("../../templates");
    let en = TemplatePack::load(&templates.join("en")).unwrap();
    let zh = TemplatePack::load(&templates.join("zh")).unwrap();
    assert_eq!(en.language.as_str(), "en");
    assert_eq!(zh.language.as_str(), "zh");
    assert!(!templates.join("en/tool_block.segmentation.txt").exists());
    assert!(templates.join("zh/tool_block.segmentation.txt").exists());
}

#[test]
fn missing_pack_reports_path() {
    let err = TemplatePack::load(Path::new("/nonexistent/pack")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/pack"), "{err}");
}
