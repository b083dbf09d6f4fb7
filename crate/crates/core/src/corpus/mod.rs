//! Raw text ingestion: documents, tokenization, SRT captions, vocabularies and
//! split-based corpus selection.

mod select;
mod srt;
mod text;
mod vocab;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use select::{select_corpus, CorpusSelector};
pub use srt::parse_srt;
pub use text::{normalize_text, tokenize, TokenStream};
pub use vocab::{build_vocab, Vocabulary, NOISE_EXPONENT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    General,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
            SplitTag::General => "general",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            "general" | "gen" => Ok(SplitTag::General),
            _ => Err(format!("unknown split {s:?} (expected train, val, test or general)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Plot,
    Subtitle,
    Script,
    Other,
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plot" => Ok(SourceKind::Plot),
            "subtitle" => Ok(SourceKind::Subtitle),
            "script" => Ok(SourceKind::Script),
            "other" => Ok(SourceKind::Other),
            _ => Err(format!("unknown kind {s:?} (expected plot, subtitle, script or other)")),
        }
    }
}

/// One plot, subtitle track or script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub movie_id: String,
    pub split_tag: SplitTag,
    pub source_kind: SourceKind,
    pub text: String,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        movie_id: impl Into<String>,
        split_tag: SplitTag,
        source_kind: SourceKind,
        text: impl Into<String>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            movie_id: movie_id.into(),
            split_tag,
            source_kind,
            text: text.into(),
        }
    }
}

/// One line of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub movie_id: String,
    pub split: SplitTag,
    pub kind: SourceKind,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

/// Reads a JSON-lines corpus manifest and the text files it references.
/// Files ending in `.srt` go through [`parse_srt`].
pub fn load_manifest(path: &Path) -> Result<Vec<Document>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut docs = Vec::new();
    let mut seen = std::collections::HashSet::new();

    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|source| Error::Json { line: lineno, source }.in_file(path))?;
        if entry.doc_id.is_empty() {
            return Err(Error::InvalidItem {
                line: lineno,
                msg: "empty doc_id".into(),
            }
            .in_file(path));
        }
        if !seen.insert(entry.doc_id.clone()) {
            return Err(Error::InvalidItem {
                line: lineno,
                msg: format!("duplicate doc_id {:?}", entry.doc_id),
            }
            .in_file(path));
        }
        let file = base.join(&entry.path);
        let content = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let is_srt = file
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("srt"));
        let text = if is_srt {
            parse_srt(&content).map_err(|e| e.in_file(&file))?
        } else {
            content
        };
        docs.push(Document {
            doc_id: entry.doc_id,
            movie_id: entry.movie_id,
            split_tag: entry.split,
            source_kind: entry.kind,
            text,
        });
    }
    Ok(docs)
}

/// Writes each document to `<dir>/docs/<doc_id>.txt` and a manifest at
/// `<dir>/manifest.jsonl`. Returns the manifest path.
pub fn write_manifest(dir: &Path, docs: &[Document]) -> Result<PathBuf> {
    let doc_dir = dir.join("docs");
    fs::create_dir_all(&doc_dir).map_err(|e| Error::io(&doc_dir, e))?;
    let manifest = dir.join("manifest.jsonl");
    let mut out = Vec::new();
    for doc in docs {
        let rel = PathBuf::from("docs").join(format!("{}.txt", doc.doc_id));
        let file = dir.join(&rel);
        fs::write(&file, &doc.text).map_err(|e| Error::io(&file, e))?;
        let entry = ManifestEntry {
            doc_id: doc.doc_id.clone(),
            movie_id: doc.movie_id.clone(),
            split: doc.split_tag,
            kind: doc.source_kind,
            path: rel,
        };
        serde_json::to_writer(&mut out, &entry).expect("manifest entry serializes");
        out.write_all(b"\n").expect("write to Vec");
    }
    fs::write(&manifest, out).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
