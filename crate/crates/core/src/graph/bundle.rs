//! Directory-based bundle format.
//!
//! ```text
//! meta.json     {"num_nodes": .., "feature_dim": .., "num_classes": .., "name": ..}
//! edges.tsv     u<TAB>v        one undirected edge per line, u < v, sorted
//! features.tsv  node<TAB>dim<TAB>value   sorted by (node, dim)
//! labels.tsv    node<TAB>label           optional
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;

/// A graph with node attributes and (optionally) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    pub graph: Graph,
    pub features: SparseMatrix,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    num_nodes: usize,
    feature_dim: usize,
    num_classes: usize,
    name: String,
}

/// Summary counts reported after loading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub num_labeled: usize,
    /// `2E / n²`
    pub density_full: f64,
    /// `2E / (n (n − 1))`
    pub density_simple: f64,
}

impl GraphBundle {
    pub fn new(
        graph: Graph,
        features: SparseMatrix,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() != graph.num_nodes() {
            return Err(Error::Data(format!(
                "feature matrix has {} rows but graph has {} nodes",
                features.rows(),
                graph.num_nodes()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != graph.num_nodes() {
                return Err(Error::Data(format!(
                    "{} labels for {} nodes",
                    labels.len(),
                    graph.num_nodes()
                )));
            }
            if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
                return Err(Error::Data(format!(
                    "label {l} of node {i} outside 0..{num_classes}"
                )));
            }
        }
        Ok(Self {
            graph,
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Same bundle with labels removed.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn stats(&self) -> BundleStats {
        let n = self.num_nodes() as f64;
        let e = self.graph.num_edges() as f64;
        BundleStats {
            num_nodes: self.num_nodes(),
            num_edges: self.graph.num_edges(),
            feature_dim: self.feature_dim(),
            num_classes: self.num_classes,
            num_labeled: self.labels.as_ref().map_or(0, Vec::len),
            density_full: if n > 0.0 { 2.0 * e / (n * n) } else { 0.0 },
            density_simple: if n > 1.0 { 2.0 * e / (n * (n - 1.0)) } else { 0.0 },
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_field<T: FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse {what} from {field:?}"),
    })
}

/// Splits a TSV file into lines of exactly `arity` fields, 1-based line numbers.
fn tsv_lines<'a>(
    path: &'a Path,
    text: &'a str,
    arity: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>)>> + 'a {
    text.lines().enumerate().map(move |(i, line)| {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != arity {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected {arity} tab-separated fields, found {}", fields.len()),
            });
        }
        Ok((i + 1, fields))
    })
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<GraphBundle> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read(&meta_path)?).map_err(|e| {
        parse_error(&meta_path, e.line(), format!("invalid meta.json: {e}"))
    })?;
    let n = meta.num_nodes;

    let edges_path = dir.join("edges.tsv");
    let text = read(&edges_path)?;
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in tsv_lines(&edges_path, &text, 2) {
        let (line, f) = row?;
        let u: usize = parse_field(&edges_path, line, f[0], "node index")?;
        let v: usize = parse_field(&edges_path, line, f[1], "node index")?;
        if u >= n || v >= n {
            return Err(parse_error(&edges_path, line, format!("node index out of range 0..{n}")));
        }
        if u == v {
            return Err(parse_error(&edges_path, line, format!("self-loop on node {u}")));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(parse_error(&edges_path, line, format!("duplicate edge ({u}, {v})")));
        }
        edges.push((u, v));
    }
    let graph = Graph::from_edges(n, &edges)?;

    let feat_path = dir.join("features.tsv");
    let text = read(&feat_path)?;
    let mut triplets = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in tsv_lines(&feat_path, &text, 3) {
        let (line, f) = row?;
        let node: usize = parse_field(&feat_path, line, f[0], "node index")?;
        let dim: usize = parse_field(&feat_path, line, f[1], "feature index")?;
        let value: f64 = parse_field(&feat_path, line, f[2], "feature value")?;
        if node >= n || dim >= meta.feature_dim {
            return Err(parse_error(&feat_path, line, "index out of range"));
        }
        if !value.is_finite() {
            return Err(parse_error(&feat_path, line, "non-finite feature value"));
        }
        if !seen.insert((node, dim)) {
            return Err(parse_error(&feat_path, line, "duplicate feature entry"));
        }
        triplets.push((node, dim, value));
    }
    let features = SparseMatrix::from_triplets(n, meta.feature_dim, triplets)?;

    let labels_path = dir.join("labels.tsv");
    let labels = if labels_path.exists() {
        let text = read(&labels_path)?;
        let mut labels = vec![None; n];
        for row in tsv_lines(&labels_path, &text, 2) {
            let (line, f) = row?;
            let node: usize = parse_field(&labels_path, line, f[0], "node index")?;
            let label: usize = parse_field(&labels_path, line, f[1], "label")?;
            if node >= n {
                return Err(parse_error(&labels_path, line, "node index out of range"));
            }
            if label >= meta.num_classes {
                return Err(parse_error(
                    &labels_path,
                    line,
                    format!("label {label} outside 0..{}", meta.num_classes),
                ));
            }
            if labels[node].replace(label).is_some() {
                return Err(parse_error(&labels_path, line, format!("node {node} labeled twice")));
            }
        }
        if let Some(missing) = labels.iter().position(Option::is_none) {
            return Err(Error::Data(format!(
                "{}: node {missing} has no label",
                labels_path.display()
            )));
        }
        Some(labels.into_iter().map(Option::unwrap).collect())
    } else {
        None
    };

    GraphBundle::new(graph, features, labels, meta.num_classes, meta.name)
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Canonical edges.tsv text for a graph.
pub(crate) fn edges_tsv(graph: &Graph) -> String {
    let mut out = String::new();
    for (u, v) in graph.edges() {
        let _ = writeln!(out, "{u}\t{v}");
    }
    out
}

/// Writes a bundle in canonical (sorted) form.
pub fn save_bundle(bundle: &GraphBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        num_nodes: bundle.num_nodes(),
        feature_dim: bundle.feature_dim(),
        num_classes: bundle.num_classes,
        name: bundle.name.clone(),
    };
    let meta = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write(dir.join("meta.json"), &(meta + "\n"))?;
    write(dir.join("edges.tsv"), &edges_tsv(&bundle.graph))?;

    let mut feats = String::new();
    for (node, dim, value) in bundle.features.iter() {
        let _ = writeln!(feats, "{node}\t{dim}\t{value:?}");
    }
    write(dir.join("features.tsv"), &feats)?;

    let labels_path = dir.join("labels.tsv");
    match &bundle.labels {
        Some(labels) => {
            let mut text = String::new();
            for (node, label) in labels.iter().enumerate() {
                let _ = writeln!(text, "{node}\t{label}");
            }
            write(labels_path, &text)?;
        }
        None if labels_path.exists() => {
            fs::remove_file(&labels_path).map_err(|e| Error::io(labels_path, e))?;
        }
        None => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, meta: &str, edges: &str, feats: &str, labels: Option<&str>) {
        fs::write(dir.join("meta.json"), meta).unwrap();
        fs::write(dir.join("edges.tsv"), edges).unwrap();
        fs::write(dir.join("features.tsv"), feats).unwrap();
        if let Some(l) = labels {
            fs::write(dir.join("labels.tsv"), l).unwrap();
        }
    }

    const META3: &str = r#"{"num_nodes": 3, "feature_dim": 2, "num_classes": 2, "name": "tiny"}"#;

    #[test]
    fn isolated_nodes_load() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), META3, "", "0\t1\t0.5\n", None);
        let b = load_bundle(dir.path()).unwrap();
        assert_eq!(b.graph.degrees(), &[0, 0, 0]);
        assert_eq!(b.labels, None);
        let s = b.stats();
        assert_eq!((s.num_nodes, s.num_edges, s.feature_dim, s.num_classes), (3, 0, 2, 2));
    }

    #[test]
    fn malformed_lines_report_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), META3, "0\t1\n1\tx\n", "", None);
        let err = load_bundle(dir.path()).unwrap_err();
        match err {
            Error::Parse { path, line, .. } => {
                assert!(path.ends_with("edges.tsv"));
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = load_bundle(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("edges.tsv:2"), "{msg}");
    }

    #[test]
    fn rejects_self_loops_duplicates_and_ranges() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), META3, "1\t1\n", "", None);
        assert!(matches!(load_bundle(dir.path()), Err(Error::Parse { line: 1, .. })));
        write_files(dir.path(), META3, "0\t1\n1\t0\n", "", None);
        assert!(matches!(load_bundle(dir.path()), Err(Error::Parse { line: 2, .. })));
        write_files(dir.path(), META3, "0\t3\n", "", None);
        assert!(matches!(load_bundle(dir.path()), Err(Error::Parse { line: 1, .. })));
        write_files(dir.path(), META3, "", "0\t2\t1.0\n", None);
        assert!(matches!(load_bundle(dir.path()), Err(Error::Parse { line: 1, .. })));
        write_files(dir.path(), META3, "", "", Some("0\t0\n1\t5\n"));
        assert!(matches!(load_bundle(dir.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("meta.json"), META3).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn round_trip_is_byte_identical_after_canonical_sort() {
        let dir = tempfile::tempdir().unwrap();
        write_files(
            dir.path(),
            META3,
            "1\t2\n0\t1\n",
            "2\t0\t0.1\n0\t1\t-3.25\n",
            Some("0\t1\n1\t0\n2\t1\n"),
        );
        let b = load_bundle(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        save_bundle(&b, out.path()).unwrap();
        assert_eq!(fs::read_to_string(out.path().join("edges.tsv")).unwrap(), "0\t1\n1\t2\n");
        let again = load_bundle(out.path()).unwrap();
        assert_eq!(again, b);
        let out2 = tempfile::tempdir().unwrap();
        save_bundle(&again, out2.path()).unwrap();
        for f in ["meta.json", "edges.tsv", "features.tsv", "labels.tsv"] {
            assert_eq!(
                fs::read(out.path().join(f)).unwrap(),
                fs::read(out2.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
