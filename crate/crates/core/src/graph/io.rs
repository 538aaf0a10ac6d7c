//! Dataset file formats.
//!
//! * edge list: one `u v` pair per line, 0-based ids; `#` starts a comment
//! * features: binary container (little-endian `u64` rows, `u64` cols, then
//!   row-major `f64`) or CSV, chosen by the `.csv` extension
//! * labels: one class id per line (or comma separated)
//! * masks: whitespace/newline separated node ids per split

use std::fs;
use std::io::Write;
use std::path::Path;

use super::csr::{Graph, NodeId, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(NodeId, NodeId)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let mut it = line.split_whitespace();
        let mut next = || -> Result<NodeId> {
            it.next()
                .ok_or_else(|| Error::parse(path, lineno, "expected two node ids"))?
                .parse()
                .map_err(|e| Error::parse(path, lineno, format!("bad node id: {e}")))
        };
        let u = next()?;
        let v = next()?;
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn write_edge_list(path: &Path, edges: &[(NodeId, NodeId)]) -> Result<()> {
    let mut out = String::new();
    for (u, v) in edges {
        out.push_str(&format!("{u} {v}\n"));
    }
    write_bytes(path, out.as_bytes())
}

pub fn encode_matrix(m: &Matrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.data().len());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for x in m.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix<f64>> {
    if bytes.len() < 16 {
        return Err(Error::decode(
            "matrix container shorter than its 16-byte header",
        ));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::decode("matrix dimensions overflow"))?;
    if bytes.len() - 16 != expected {
        return Err(Error::decode(format!(
            "matrix body has {} bytes, expected {expected} for {rows}x{cols}",
            bytes.len() - 16
        )));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_features(path: &Path) -> Result<Matrix<f64>> {
    if is_csv(path) {
        let text = read_text(path)?;
        let mut rows = Vec::new();
        for (lineno, line) in content_lines(&text) {
            let row = line
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::parse(path, lineno, format!("bad feature value: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Matrix::from_rows(&rows)
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_matrix(&bytes)
    }
}

pub fn write_features(path: &Path, m: &Matrix<f64>) -> Result<()> {
    if is_csv(path) {
        let mut out = String::new();
        for r in 0..m.rows() {
            let line: Vec<String> = m.row(r).iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        write_bytes(path, out.as_bytes())
    } else {
        write_bytes(path, &encode_matrix(m))
    }
}

fn read_ids(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (lineno, line) in content_lines(&text) {
        for tok in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
        {
            out.push(
                tok.parse()
                    .map_err(|e| Error::parse(path, lineno, format!("bad integer: {e}")))?,
            );
        }
    }
    Ok(out)
}

fn write_ids(path: &Path, ids: impl Iterator<Item = usize>) -> Result<()> {
    let mut out = Vec::new();
    for id in ids {
        writeln!(out, "{id}").expect("writing to a Vec cannot fail");
    }
    write_bytes(path, &out)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_ids(path)
}

pub fn read_mask(path: &Path, num_nodes: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; num_nodes];
    for id in read_ids(path)? {
        if id >= num_nodes {
            return Err(Error::invalid(format!(
                "{}: mask node {id} out of range for {num_nodes} nodes",
                path.display()
            )));
        }
        mask[id] = true;
    }
    Ok(mask)
}

/// Paths making up an on-disk dataset.
#[derive(Clone, Debug)]
pub struct DatasetFiles {
    pub edges: std::path::PathBuf,
    pub features: std::path::PathBuf,
    pub labels: std::path::PathBuf,
    pub train: std::path::PathBuf,
    pub val: std::path::PathBuf,
    pub test: std::path::PathBuf,
}

impl DatasetFiles {
    /// Conventional file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetFiles {
            edges: dir.join("edges.txt"),
            features: dir.join("features.bin"),
            labels: dir.join("labels.txt"),
            train: dir.join("train.txt"),
            val: dir.join("val.txt"),
            test: dir.join("test.txt"),
        }
    }

    pub fn load(&self) -> Result<Graph> {
        let edges = read_edge_list(&self.edges)?;
        let features = read_features(&self.features)?;
        let labels = read_labels(&self.labels)?;
        let n = features.rows();
        let masks = [
            read_mask(&self.train, n)?,
            read_mask(&self.val, n)?,
            read_mask(&self.test, n)?,
        ];
        Graph::from_edges(n, &edges, features, labels, masks)
    }

    pub fn save(&self, g: &Graph) -> Result<()> {
        write_edge_list(&self.edges, &g.edge_list())?;
        write_features(&self.features, g.features())?;
        write_ids(&self.labels, g.labels().iter().copied())?;
        for (split, path) in [
            (Split::Train, &self.train),
            (Split::Val, &self.val),
            (Split::Test, &self.test),
        ] {
            let m = g.mask(split);
            write_ids(path, (0..m.len()).filter(|&v| m[v]))?;
        }
        Ok(())
    }
}
