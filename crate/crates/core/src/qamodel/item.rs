use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_ANSWERS: usize = 5;

/// A five-way multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub qid: String,
    pub movie_id: String,
    pub question: String,
    pub answers: [String; N_ANSWERS],
    pub correct_index: Option<usize>,
    pub split: String,
}

impl QaItem {
    pub fn label(&self) -> Result<usize> {
        self.correct_index.ok_or_else(|| Error::MissingLabel {
            qid: self.qid.clone(),
        })
    }

    /// The same item with answers reordered so that new slot `i` holds old
    /// answer `perm[i]`.
    pub fn permuted(&self, perm: &[usize; N_ANSWERS]) -> Self {
        let answers = std::array::from_fn(|i| self.answers[perm[i]].clone());
        let correct_index = self
            .correct_index
            .map(|c| perm.iter().position(|&p| p == c).expect("perm is a permutation"));
        Self {
            answers,
            correct_index,
            ..self.clone()
        }
    }
}

/// Reads a JSON-lines QA file. Errors carry the file and line.
pub fn load_qa(path: &Path) -> Result<Vec<QaItem>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qa(&raw).map_err(|e| e.in_file(path))
}

pub fn parse_qa(raw: &str) -> Result<Vec<QaItem>> {
    let mut items = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: QaItem =
            serde_json::from_str(line).map_err(|source| Error::Json { line: lineno, source })?;
        if let Some(c) = item.correct_index {
            if c >= N_ANSWERS {
                return Err(Error::InvalidItem {
                    line: lineno,
                    msg: format!("correct_index {c} out of range 0-4"),
                });
            }
        }
        items.push(item);
    }
    Ok(items)
}

pub fn write_qa(path: &Path, items: &[QaItem]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("QaItem serializes");
        out.write_all(b"\n").expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"qid":"q1","movie_id":"tt1","question":"Who?","answers":["a","b","c","d","e"],"correct_index":2,"split":"val"}"#;

    #[test]
    fn parses_and_writes() {
        let items = parse_qa(&format!("{LINE}\n\n")).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].correct_index, Some(2));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("qa.jsonl");
        write_qa(&p, &items).unwrap();
        assert_eq!(load_qa(&p).unwrap(), items);
    }

    #[test]
    fn null_label() {
        let line = LINE.replace("\"correct_index\":2", "\"correct_index\":null");
        let items = parse_qa(&line).unwrap();
        assert!(matches!(items[0].label(), Err(Error::MissingLabel { .. })));
    }

    #[test]
    fn wrong_answer_count_names_line() {
        let bad = LINE.replace(r#","e"]"#, "]");
        let err = parse_qa(&format!("{LINE}\n{bad}\n")).unwrap_err();
        assert!(matches!(err, Error::Json { line: 2, .. }), "{err:?}");
        let out_of_range = LINE.replace("\"correct_index\":2", "\"correct_index\":5");
        assert!(matches!(parse_qa(&out_of_range), Err(Error::InvalidItem { line: 1, .. })));
    }

    #[test]
    fn permutation_tracks_label() {
        let item = parse_qa(LINE).unwrap().remove(0);
        let p = item.permuted(&[4, 2, 0, 1, 3]);
        assert_eq!(p.answers, ["e", "c", "a", "b", "d"].map(String::from));
        assert_eq!(p.correct_index, Some(1));
    }
}
