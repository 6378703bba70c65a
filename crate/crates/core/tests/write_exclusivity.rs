//! Only the memory manager may mutate semantic memory.

use std::path::Path;

const WRITERS: [&str; 3] = ["add_entry(", "delete_entry(", ".import("];
const ALLOWED: [&str; 2] = ["memory_manager.rs", "semantic_store.rs"];

fn visit(dir: &Path, hits: &mut Vec<String>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            visit(&path, hits);
            continue;
        }
        if path.extension().is_none_or(|e| e != "rs") {
            continue;
        }
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if ALLOWED.contains(&name.as_str()) {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        for (n, line) in text.lines().enumerate() {
            if line.trim_start().starts_with("//") {
                continue;
            }
            if WRITERS.iter().any(|w| line.contains(w)) {
                hits.push(format!("{}:{}: {}", path.display(), n + 1, line.trim()));
            }
        }
    }
}

#[test]
fn semantic_writes_are_confined_to_the_memory_manager() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    let mut hits = Vec::new();
    visit(&root, &mut hits);
    assert!(hits.is_empty(), "semantic store written outside the memory manager:\n{}", hits.join("\n"));
}
