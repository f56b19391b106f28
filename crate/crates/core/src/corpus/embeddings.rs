use std::io::{BufRead, BufReader};
use std::path::Path;

use indexmap::IndexMap;

use super::{CorpusError, Result};

/// Word vectors of uniform dimension, keyed by lowercased token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: IndexMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            rows: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.rows.get(token).map(Vec::as_slice)
    }

    /// Inserts unless the token is already present; returns whether it was new.
    pub fn insert(&mut self, token: &str, row: Vec<f64>) -> Result<bool> {
        if row.len() != self.dim {
            return Err(CorpusError::Dimension {
                token: token.to_string(),
                expected: self.dim,
                found: row.len(),
            });
        }
        let key = token.to_lowercase();
        if self.rows.contains_key(&key) {
            return Ok(false);
        }
        self.rows.insert(key, row);
        Ok(true)
    }
}

/// Reads `token v1 v2 ... vd` lines. Duplicate tokens keep their first row.
pub fn parse_embeddings<R: BufRead>(reader: R, expected_dim: usize) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(expected_dim);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: "<embeddings>".into(),
            source,
        })?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let row = parts
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CorpusError::BadFloat {
                        line: i + 1,
                        text: p.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        table.insert(token, row)?;
    }
    Ok(table)
}

pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embeddings(BufReader::new(file), expected_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_file() {
        let t = parse_embeddings("mary 0.1 0.2 0.3\nBathroom 1 2 3\nmary 9 9 9\n".as_bytes(), 3).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("mary"), Some(&[0.1, 0.2, 0.3][..]));
        assert_eq!(t.get("bathroom"), Some(&[1.0, 2.0, 3.0][..]));
        assert_eq!(t.get("john"), None);
    }

    #[test]
    fn wrong_dimension_names_token() {
        let mut line = String::from("mary");
        for _ in 0..49 {
            line.push_str(" 0.5");
        }
        match parse_embeddings(line.as_bytes(), 50) {
            Err(CorpusError::Dimension { token, expected: 50, found: 49 }) => assert_eq!(token, "mary"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreadable_float() {
        assert!(matches!(
            parse_embeddings("a 1 x\n".as_bytes(), 2),
            Err(CorpusError::BadFloat { line: 1, .. })
        ));
    }
}
