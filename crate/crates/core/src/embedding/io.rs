//! word2vec text format: a `"V D"` header, then one `token x1 .. xD` row per
//! word. Vectors are written with six decimals; reading accepts any float
//! syntax Rust parses.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::EmbeddingSet;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub fn save_embeddings<W: Write>(es: &EmbeddingSet, mut out: W) -> io::Result<()> {
    writeln!(out, "{} {}", es.len(), es.dim())?;
    for (token, row) in es.vocab().tokens().iter().zip(es.vectors().rows()) {
        out.write_all(token.as_bytes())?;
        for x in row {
            write!(out, " {x:.6}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Loads a word2vec text file. Counts are unknown, so every token gets count 1
/// and file order becomes index order.
pub fn load_embeddings<R: BufRead>(input: R) -> Result<EmbeddingSet> {
    let (rows, dim, body) = read_table(input)?;
    let mut seen = HashSet::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * dim);
    let mut tokens = Vec::with_capacity(rows);
    for (line, token, values) in body {
        if !seen.insert(token.clone()) {
            return Err(Error::DuplicateToken { token, line });
        }
        tokens.push((token, 1));
        data.extend(values);
    }
    let vocab = Vocabulary::from_counts(tokens, 1)?;
    let vectors = Array2::from_shape_vec((rows, dim), data).expect("row arity checked while reading");
    EmbeddingSet::new(vocab, vectors)
}

pub fn save_embeddings_file(es: &EmbeddingSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    save_embeddings(es, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings_file(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_embeddings(BufReader::new(file)).map_err(|e| e.in_file(path))
}

/// Writes a matrix in the same layout, rows labelled `0..rows`. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn save_matrix<W: Write>(m: &Array2<f64>, mut out: W) -> io::Result<()> {
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    for (i, row) in m.rows().into_iter().enumerate() {
        write!(out, "{i}")?;
        for x in row {
            write!(out, " {x:?}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn load_matrix<R: BufRead>(input: R) -> Result<Array2<f64>> {
    let (rows, cols, body) = read_table(input)?;
    let mut data = Vec::with_capacity(rows * cols);
    for (i, (line, label, values)) in body.into_iter().enumerate() {
        if label != i.to_string() {
            return Err(Error::Format {
                line,
                msg: format!("expected row label {i}, found {label:?}"),
            });
        }
        data.extend(values);
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row arity checked while reading"))
}

pub fn save_matrix_file(m: &Array2<f64>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    save_matrix(m, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_matrix_file(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_matrix(BufReader::new(file)).map_err(|e| e.in_file(path))
}

/// Tab-separated `token v1 .. vD`, one row per word, no header.
pub fn export_tsv<W: Write>(es: &EmbeddingSet, mut out: W) -> io::Result<()> {
    for (token, row) in es.vocab().tokens().iter().zip(es.vectors().rows()) {
        out.write_all(token.as_bytes())?;
        for x in row {
            write!(out, "\t{x:.6}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()
}

type Rows = Vec<(usize, String, Vec<f64>)>;

fn read_table<R: BufRead>(input: R) -> Result<(usize, usize, Rows)> {
    let mut lines = input.lines().enumerate();
    let io_err = |line: usize, e: io::Error| Error::Format {
        line,
        msg: e.to_string(),
    };

    let header = loop {
        match lines.next() {
            Some((i, l)) => {
                let l = l.map_err(|e| io_err(i + 1, e))?;
                if !l.trim().is_empty() {
                    break (i + 1, l);
                }
            }
            None => {
                return Err(Error::Format {
                    line: 1,
                    msg: "missing \"V D\" header".into(),
                })
            }
        }
    };
    let fields: Vec<&str> = header.1.split_whitespace().collect();
    let parsed: Option<(usize, usize)> = match fields[..] {
        [v, d] => v.parse().ok().zip(d.parse().ok()),
        _ => None,
    };
    let Some((rows, dim)) = parsed.filter(|&(_, d)| d > 0) else {
        return Err(Error::Format {
            line: header.0,
            msg: format!("expected header \"V D\", found {:?}", header.1),
        });
    };

    let mut body = Vec::with_capacity(rows);
    for (i, l) in lines {
        let lineno = i + 1;
        let l = l.map_err(|e| io_err(lineno, e))?;
        let mut fields = l.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values = fields
            .map(|f| {
                f.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::Format {
                    line: lineno,
                    msg: format!("invalid number {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::Format {
                line: lineno,
                msg: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if body.len() == rows {
            return Err(Error::Format {
                line: lineno,
                msg: format!("more rows than the {rows} declared in the header"),
            });
        }
        body.push((lineno, token.to_string(), values));
    }
    if body.len() != rows {
        return Err(Error::Format {
            line: header.0,
            msg: format!("header declares {rows} rows, found {}", body.len()),
        });
    }
    Ok((rows, dim, body))
}
