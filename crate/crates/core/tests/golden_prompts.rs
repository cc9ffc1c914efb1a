//! Frozen prompt references. The rendered text of each prompt family is
//! pinned byte-for-byte; any template or rendering change must be deliberate
//! and re-frozen with FSKT_REGEN_GOLDEN=1.

mod common;

use std::path::PathBuf;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn golden_prompts_match_frozen_references() {
    let regen = std::env::var("FSKT_REGEN_GOLDEN").is_ok();
    let rendered = common::golden_prompts();
    let rendered_again = common::golden_prompts();
    for ((name, text), (_, text2)) in rendered.iter().zip(&rendered_again) {
        assert_eq!(text, text2, "{name} not byte-stable across renders");
        let path = golden_dir().join(name);
        if regen {
            std::fs::write(&path, text).unwrap();
            continue;
        }
        let frozen = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("missing golden file {name}: {e}"));
        assert_eq!(
            text, &frozen,
            "{name} drifted from the frozen reference; regenerate deliberately if intended"
        );
    }
}
