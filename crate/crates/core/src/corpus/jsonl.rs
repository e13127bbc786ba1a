//! JSONL dataset and wordlist files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::PromptSample;

/// Order-preserving parse of `{prompt, marker?, label?, generation?}` lines.
/// Unknown fields are ignored; errors carry 1-based line numbers.
pub fn load_jsonl_dataset(path: &Path) -> Result<Vec<PromptSample>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::ParseError {
                line: lineno,
                msg: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| Error::SchemaError {
            line: lineno,
            msg: "expected a JSON object".into(),
        })?;
        let prompt = obj
            .get("prompt")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::SchemaError {
                line: lineno,
                msg: "missing string field `prompt`".into(),
            })?;
        if prompt.is_empty() {
            return Err(Error::SchemaError {
                line: lineno,
                msg: "`prompt` must be nonempty".into(),
            });
        }
        let get_str = |key: &str| obj.get(key).and_then(|v| v.as_str()).map(str::to_string);
        samples.push(PromptSample {
            prompt: prompt.to_string(),
            marker: get_str("marker"),
            label: get_str("label"),
            generation: get_str("generation"),
        });
    }
    Ok(samples)
}

/// Write any serializable records as one JSON object per line.
pub fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// One lowercase token per line; `#` starts a comment.
pub fn load_wordlist(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

pub fn save_wordlist(path: &Path, words: &[String]) -> Result<()> {
    let mut out = String::new();
    for w in words {
        out.push_str(&w.to_lowercase());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_record_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"prompt\":\"Describe the image\"}\n").unwrap();
        let samples = load_jsonl_dataset(&path).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].prompt, "Describe the image");
        assert!(samples[0].marker.is_none());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        match load_jsonl_dataset(&path) {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn missing_prompt_is_schema_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"prompt\":\"ok\"}\n{\"marker\":\"<grp_a>\"}\n",
        )
        .unwrap();
        match load_jsonl_dataset(&path) {
            Err(Error::SchemaError { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected SchemaError, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"prompt\":\"p\",\"extra\":[1,2]}\n").unwrap();
        assert_eq!(load_jsonl_dataset(&path).unwrap().len(), 1);
    }

    #[test]
    fn round_trip_preserves_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let samples: Vec<PromptSample> = (0..100)
            .map(|i| PromptSample {
                prompt: format!("prompt {i}"),
                marker: (i % 2 == 0).then(|| "<grp_alpha>".to_string()),
                label: (i % 3 == 0).then(|| "alpha".to_string()),
                generation: (i % 5 == 0).then(|| format!("gen {i}")),
            })
            .collect();
        save_jsonl(&path, &samples).unwrap();
        assert_eq!(load_jsonl_dataset(&path).unwrap(), samples);
    }

    #[test]
    fn wordlist_skips_comments_and_lowercases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("words.txt");
        std::fs::write(&path, "# heads\nTall\nstout # build\n\nwiry\n").unwrap();
        assert_eq!(load_wordlist(&path).unwrap(), vec!["tall", "stout", "wiry"]);
    }
}
