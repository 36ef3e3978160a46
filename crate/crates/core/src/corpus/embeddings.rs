use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Distance used between embedding vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// One vector per vocabulary token, all of the same dimension.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Config("embedding table needs at least one non-empty vector".into()));
        }
        let mut data = Vec::with_capacity(dim * vectors.len());
        for (i, v) in vectors.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Config(format!("vector {i} has dimension {}, expected {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("vector {i} has a non-finite component")));
            }
            data.extend(v);
        }
        Ok(EmbeddingTable { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, id: TokenId) -> &[f64] {
        let start = id.index() * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Euclidean distance between the vectors of `a` and `b`.
    pub fn distance(&self, a: TokenId, b: TokenId) -> f64 {
        Metric::Euclidean.distance(self.vector(a), self.vector(b))
    }

    pub fn distance_with(&self, metric: Metric, a: TokenId, b: TokenId) -> f64 {
        metric.distance(self.vector(a), self.vector(b))
    }

    /// Writes the table in the text format read by [`load_embeddings`],
    /// including the `<count> <dim>` header line.
    pub fn write_to<W: Write>(&self, mut writer: W, vocab: &Vocabulary) -> Result<()> {
        writeln!(writer, "{} {}", self.len(), self.dim)?;
        for id in vocab.ids() {
            write!(writer, "{}", vocab.token(id))?;
            for x in self.vector(id) {
                write!(writer, " {x}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }
}

struct ParsedLine {
    line: usize,
    token: String,
    values: Vec<f64>,
}

fn parse_lines<R: BufRead>(source: R) -> Result<(Option<usize>, Vec<ParsedLine>)> {
    let mut header_dim = None;
    let mut parsed = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if line_no == 1 && fields.len() == 2 {
            if let (Ok(_count), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                header_dim = Some(dim);
                continue;
            }
        }
        if fields.len() < 2 {
            return Err(Error::EmbeddingParse {
                line: line_no,
                message: "expected a token followed by at least one value".into(),
            });
        }
        let values = fields[1..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::EmbeddingParse { line: line_no, message: format!("non-numeric field {f:?}") }),
            })
            .collect::<Result<Vec<_>>>()?;
        parsed.push(ParsedLine { line: line_no, token: fields[0].to_owned(), values });
    }
    Ok((header_dim, parsed))
}

fn check_dims(header_dim: Option<usize>, parsed: &[ParsedLine]) -> Result<usize> {
    let dim = match header_dim.or_else(|| parsed.first().map(|p| p.values.len())) {
        Some(d) if d > 0 => d,
        _ => return Err(Error::EmbeddingParse { line: 1, message: "no embedding vectors".into() }),
    };
    for p in parsed {
        if p.values.len() != dim {
            return Err(Error::EmbeddingParse {
                line: p.line,
                message: format!("dimension mismatch: got {}, expected {dim}", p.values.len()),
            });
        }
    }
    Ok(dim)
}

/// Reads an embedding file and resolves a vector for every token of `vocab`.
///
/// Tokens in the file that are not in the vocabulary are ignored.
pub fn load_embeddings<R: BufRead>(source: R, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let (header_dim, parsed) = parse_lines(source)?;
    let dim = check_dims(header_dim, &parsed)?;
    let mut by_token: HashMap<&str, &ParsedLine> = HashMap::with_capacity(parsed.len());
    for p in &parsed {
        if by_token.insert(p.token.as_str(), p).is_some() {
            return Err(Error::EmbeddingParse { line: p.line, message: format!("duplicate token {:?}", p.token) });
        }
    }
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for token in vocab.tokens() {
        let p = by_token.get(token.as_str()).ok_or_else(|| Error::MissingEmbedding(token.clone()))?;
        data.extend_from_slice(&p.values);
    }
    Ok(EmbeddingTable { dim, data })
}

/// Reads an embedding file and uses its tokens, in file order, as the vocabulary.
pub fn load_embeddings_with_vocab<R: BufRead>(source: R) -> Result<(Vocabulary, EmbeddingTable)> {
    let (header_dim, parsed) = parse_lines(source)?;
    let dim = check_dims(header_dim, &parsed)?;
    let mut tokens = Vec::with_capacity(parsed.len());
    let mut data = Vec::with_capacity(parsed.len() * dim);
    for p in parsed {
        tokens.push(p.token);
        data.extend(p.values);
    }
    let vocab = Vocabulary::new(tokens)?;
    Ok((vocab, EmbeddingTable { dim, data }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_file() {
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        let t = load_embeddings("a 0.0 1.0\nb 1.0 0.0\n".as_bytes(), &vocab).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.vector(TokenId(1)), &[1.0, 0.0]);
        assert!((t.distance(TokenId(0), TokenId(1)) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn header_line_is_optional() {
        let vocab = Vocabulary::new(["b"]).unwrap();
        let t = load_embeddings("2 2\na 0 1\nb 1 0\n".as_bytes(), &vocab).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.vector(TokenId(0)), &[1.0, 0.0]);
    }

    #[test]
    fn missing_token_is_named() {
        let vocab = Vocabulary::new(["a", "b", "c"]).unwrap();
        let err = load_embeddings("a 0.0 1.0\nb 1.0 0.0\n".as_bytes(), &vocab).unwrap_err();
        assert_eq!(err.to_string(), "missing embedding: c");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let vocab = Vocabulary::new(["a"]).unwrap();
        let err = load_embeddings("a x y\n".as_bytes(), &vocab).unwrap_err();
        assert!(matches!(err, Error::EmbeddingParse { line: 1, .. }), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        let err = load_embeddings("a 0 1\nb 1\n".as_bytes(), &vocab).unwrap_err();
        assert!(matches!(err, Error::EmbeddingParse { line: 2, .. }), "{err}");
        let err = load_embeddings("2 3\na 0 1\nb 1 0\n".as_bytes(), &vocab).unwrap_err();
        assert!(matches!(err, Error::EmbeddingParse { line: 2, .. }), "{err}");
    }

    #[test]
    fn write_then_load_with_vocab() {
        let vocab = Vocabulary::new(["x", "y"]).unwrap();
        let t = EmbeddingTable::from_vectors(vec![vec![0.5, -1.25], vec![3.0, 0.1]]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf, &vocab).unwrap();
        let (v2, t2) = load_embeddings_with_vocab(buf.as_slice()).unwrap();
        assert_eq!(v2.tokens(), vocab.tokens());
        assert_eq!(t2.vector(TokenId(1)), t.vector(TokenId(1)));
    }

    #[test]
    fn distance_is_a_metric_on_samples() {
        let t = EmbeddingTable::from_vectors(vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![3.0, 4.0]]).unwrap();
        let (a, b, c) = (TokenId(0), TokenId(1), TokenId(2));
        assert_eq!(t.distance(a, b), 5.0);
        assert_eq!(t.distance(b, a), 5.0);
        assert_eq!(t.distance(b, c), 0.0);
        assert_eq!(t.distance_with(Metric::Manhattan, a, b), 7.0);
    }
}
