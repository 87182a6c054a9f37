//! JSON Lines helpers.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut w: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut buf = Vec::new();
    write_jsonl(items, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Parses one value per non-blank line; errors carry the 1-based line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(r: R) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
