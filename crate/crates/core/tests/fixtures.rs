//! The repository ships a miniature 64-dimension vector table so tests and
//! examples can run without an external embedding file.

use std::path::Path;

use geoevent::embedding::{embed_keywords, VectorTable};

fn fixture_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/mini-vectors.txt")
}

#[test]
fn mini_table_loads_with_64_dimensions() {
    let table = VectorTable::load(&fixture_path()).unwrap();
    assert_eq!(table.dimension(), 64);
    assert_eq!(table.len(), 16);
    for word in ["fire", "flood", "parade", "blackout"] {
        let v = table.get(word).unwrap_or_else(|| panic!("missing {word}"));
        assert_eq!(v.len(), 64);
        assert!(v.iter().all(|x| x.is_finite()));
    }
    assert!(table.get("unlisted").is_none());
}

#[test]
fn mini_table_embeds_keywords() {
    let table = VectorTable::load(&fixture_path()).unwrap();
    let keywords = vec!["fire".to_string(), "smoke".to_string(), "unknown".to_string()];
    let tv = embed_keywords("t1", &keywords, &table).expect("two known keywords");
    assert_eq!(tv.vector.len(), 64);
    assert_eq!(tv.keyword_count, 2);
    // mean of the two known vectors
    let fire = table.get("fire").unwrap();
    let smoke = table.get("smoke").unwrap();
    for i in 0..64 {
        assert!((tv.vector[i] - 0.5 * (fire[i] + smoke[i])).abs() < 1e-12);
    }
}
