//! Graph data model, symmetric renormalized adjacency, dataset ingestion and
//! Planetoid-style splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from;
use crate::tensor::Tensor;

pub const TRAIN_PER_CLASS: usize = 20;
pub const VAL_SIZE: usize = 500;
pub const TEST_SIZE: usize = 1000;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("graph has no nodes")]
    Empty,
    #[error("invalid canonical graph: {0}")]
    Schema(String),
    #[error("class {class} has {available} nodes, {needed} needed for the training split")]
    InsufficientClass {
        class: usize,
        available: usize,
        needed: usize,
    },
    #[error("{available} nodes remain after the training split, {needed} needed for val/test")]
    InsufficientNodes { available: usize, needed: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// An undirected, unweighted node-classification graph.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted and deduplicated;
/// self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Validates and canonicalizes. Self-loops and duplicate/reversed edges
    /// are removed; out-of-range endpoints or labels are errors.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if num_nodes == 0 {
            return Err(DataError::Empty);
        }
        if features.rows() != num_nodes {
            return Err(DataError::Schema(format!(
                "feature matrix has {} rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if labels.len() != num_nodes {
            return Err(DataError::Schema(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::Schema(format!(
                "label {l} of node {i} is not below num_classes = {num_classes}"
            )));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(DataError::Schema(format!(
                    "edge ({u}, {v}) references a node outside [0, {num_nodes})"
                )));
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        Ok(Self {
            num_nodes,
            edges: set.into_iter().collect(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Structure and features only; the pre-training loop takes this so it
    /// cannot read labels.
    pub fn unlabeled(&self) -> UnlabeledGraph<'_> {
        UnlabeledGraph {
            num_nodes: self.num_nodes,
            edges: &self.edges,
            features: &self.features,
        }
    }

    /// Scales each feature row to sum to one (rows summing to zero are left as is).
    pub fn row_normalize_features(&mut self) {
        for i in 0..self.features.rows() {
            let row = self.features.row_mut(i);
            let s: f64 = row.iter().sum();
            if s != 0.0 {
                for v in row {
                    *v /= s;
                }
            }
        }
    }
}

/// Label-free view of a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledGraph<'a> {
    pub num_nodes: usize,
    pub edges: &'a [(usize, usize)],
    pub features: &'a Tensor,
}

/// Compressed-row sparse `n × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseAdjacency {
    /// `D^{-1/2}(A + I)D^{-1/2}` for the undirected edge list, D the degree of `A + I`.
    ///
    /// Each stored value is `s_i * s_j` with `s = 1/sqrt(deg)`, so the matrix is
    /// exactly symmetric.
    pub fn normalized(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(u, v) in edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        let inv_sqrt: Vec<f64> = neighbors.iter().map(|nb| 1.0 / (nb.len() as f64).sqrt()).collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(n + 2 * edges.len());
        let mut values = Vec::with_capacity(n + 2 * edges.len());
        row_ptr.push(0);
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            for &j in nb.iter() {
                col_idx.push(j);
                values.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::normalized(n, &[])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.set(i, j, v);
            }
        }
        t
    }

    /// `self · x` for dense `x` with `n` rows.
    pub fn spmm(&self, x: &Tensor) -> Tensor {
        assert_eq!(
            x.rows(),
            self.n,
            "spmm: operand has {} rows, expected {}",
            x.rows(),
            self.n
        );
        let cols = x.cols();
        let mut out = Tensor::zeros(self.n, cols);
        if x.density() < 0.1 {
            // bag-of-words features: gather each row's nonzeros once
            let nz: Vec<Vec<(usize, f64)>> = (0..self.n)
                .map(|j| {
                    let row = x.row(j);
                    (0..cols).filter(|&c| row[c] != 0.0).map(|c| (c, row[c])).collect()
                })
                .collect();
            for i in 0..self.n {
                let orow = out.row_mut(i);
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    let a = self.values[k];
                    for &(c, xv) in &nz[self.col_idx[k]] {
                        orow[c] += a * xv;
                    }
                }
            }
            return out;
        }
        for i in 0..self.n {
            let orow = out.row_mut(i);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.values[k];
                let xrow = x.row(self.col_idx[k]);
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += a * xv;
                }
            }
        }
        out
    }

    /// `selfᵀ · x`. Equal to `spmm` for symmetric matrices but computed from the
    /// stored layout, so it stays correct for any CSR input.
    pub fn spmm_transposed(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.n);
        let cols = x.cols();
        let mut out = Tensor::zeros(self.n, cols);
        for i in 0..self.n {
            let xrow = x.row(i).to_vec();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.values[k];
                let orow = out.row_mut(self.col_idx[k]);
                for (o, &xv) in orow.iter_mut().zip(&xrow) {
                    *o += a * xv;
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }
}

/// Degree-normalized adjacency of the whole graph, self-loops included.
pub fn normalize_adjacency(g: &Graph) -> SparseAdjacency {
    SparseAdjacency::normalized(g.num_nodes, &g.edges)
}

/// Train/validation/test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMasks {
    fn validate(&self, num_nodes: usize) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in set {
                if i >= num_nodes {
                    return Err(DataError::Schema(format!(
                        "{name} mask references node {i} outside [0, {num_nodes})"
                    )));
                }
                if !seen.insert(i) {
                    return Err(DataError::Schema(format!("node {i} appears twice across masks")));
                }
            }
        }
        Ok(())
    }
}

/// Planetoid-convention split: shuffle with `seed`, take the first 20 nodes of
/// each class for training, then the next 500 remaining nodes for validation
/// and 1000 for test (in shuffled order).
pub fn make_split(g: &Graph, seed: u64) -> Result<SplitMasks, DataError> {
    let mut order: Vec<usize> = (0..g.num_nodes).collect();
    order.shuffle(&mut rng_from(seed));

    let mut counts = vec![0usize; g.num_classes];
    for &l in &g.labels {
        counts[l] += 1;
    }
    if let Some((class, &available)) = counts.iter().enumerate().find(|(_, &c)| c < TRAIN_PER_CLASS) {
        return Err(DataError::InsufficientClass {
            class,
            available,
            needed: TRAIN_PER_CLASS,
        });
    }

    let mut taken = vec![0usize; g.num_classes];
    let mut train = Vec::with_capacity(TRAIN_PER_CLASS * g.num_classes);
    let mut rest = Vec::with_capacity(g.num_nodes);
    for &i in &order {
        let l = g.labels[i];
        if taken[l] < TRAIN_PER_CLASS {
            taken[l] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    if rest.len() < VAL_SIZE + TEST_SIZE {
        return Err(DataError::InsufficientNodes {
            available: rest.len(),
            needed: VAL_SIZE + TEST_SIZE,
        });
    }
    Ok(SplitMasks {
        train,
        val: rest[..VAL_SIZE].to_vec(),
        test: rest[VAL_SIZE..VAL_SIZE + TEST_SIZE].to_vec(),
    })
}

/// Counters for rows the raw loader skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    /// cites rows naming an id missing from the content file
    pub dropped_edges: usize,
    /// repeated or reversed edges merged into an existing one
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

/// Loads the tab-separated content/cites citation format.
///
/// Class indices follow the sorted order of the label strings; nodes keep
/// their content-file order.
pub fn load_content_cites(content_path: &Path, cites_path: &Path) -> Result<(Graph, IngestStats), DataError> {
    let content = File::open(content_path).map_err(io_err(content_path))?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width = None;

    for (lineno, line) in BufReader::new(content).lines().enumerate() {
        let line = line.map_err(io_err(content_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DataError::Parse {
            path: content_path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(parse_err(format!(
                "expected id, features and label, found {} fields",
                fields.len()
            )));
        }
        let feats = &fields[1..fields.len() - 1];
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => return Err(parse_err(format!("{} features, expected {w}", feats.len()))),
            _ => {}
        }
        let row = feats
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(format!("feature value {f:?} is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if ids.insert(fields[0].to_string(), rows.len()).is_some() {
            return Err(parse_err(format!("duplicate node id {:?}", fields[0])));
        }
        rows.push(row);
        raw_labels.push(fields[fields.len() - 1].to_string());
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    let classes: BTreeMap<&str, usize> = raw_labels
        .iter()
        .map(String::as_str)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, name)| (name, i))
        .collect();
    let labels: Vec<usize> = raw_labels.iter().map(|l| classes[l.as_str()]).collect();

    let cites = File::open(cites_path).map_err(io_err(cites_path))?;
    let mut stats = IngestStats::default();
    let mut edges = BTreeSet::new();
    for (lineno, line) in BufReader::new(cites).lines().enumerate() {
        let line = line.map_err(io_err(cites_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(DataError::Parse {
                path: cites_path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected two ids, found {} fields", fields.len()),
            });
        }
        match (ids.get(fields[0]), ids.get(fields[1])) {
            (Some(&u), Some(&v)) if u == v => stats.self_loops += 1,
            (Some(&u), Some(&v)) => {
                if !edges.insert((u.min(v), u.max(v))) {
                    stats.duplicate_edges += 1;
                }
            }
            _ => stats.dropped_edges += 1,
        }
    }

    let n = rows.len();
    let features = Tensor::from_rows(&rows);
    let graph = Graph::new(n, edges, features, labels, classes.len())?;
    Ok((graph, stats))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalGraph {
    num_nodes: usize,
    num_classes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<SplitMasks>,
}

/// Reads a canonical JSON graph and its optional embedded split.
pub fn load_canonical(path: &Path) -> Result<(Graph, Option<SplitMasks>), DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let doc: CanonicalGraph = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| DataError::Schema(format!("{}: {e}", path.display())))?;
    from_canonical(doc)
}

/// Parses canonical JSON from a string.
pub fn parse_canonical(text: &str) -> Result<(Graph, Option<SplitMasks>), DataError> {
    let doc: CanonicalGraph = serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
    from_canonical(doc)
}

fn from_canonical(doc: CanonicalGraph) -> Result<(Graph, Option<SplitMasks>), DataError> {
    if doc.features.len() != doc.num_nodes {
        return Err(DataError::Schema(format!(
            "{} feature rows for num_nodes = {}",
            doc.features.len(),
            doc.num_nodes
        )));
    }
    let width = doc.features.first().map_or(0, Vec::len);
    if let Some(i) = doc.features.iter().position(|r| r.len() != width) {
        return Err(DataError::Schema(format!(
            "feature row {i} has {} entries, expected {width}",
            doc.features[i].len()
        )));
    }
    if let Some([u, v]) = doc.edges.iter().find(|[u, v]| u == v) {
        return Err(DataError::Schema(format!("self-loop edge [{u}, {v}]")));
    }
    let features = Tensor::from_rows(&doc.features);
    let graph = Graph::new(
        doc.num_nodes,
        doc.edges.iter().map(|&[u, v]| (u, v)),
        features,
        doc.labels,
        doc.num_classes,
    )?;
    if let Some(m) = &doc.masks {
        m.validate(graph.num_nodes)?;
    }
    Ok((graph, doc.masks))
}

/// Writes the canonical JSON form (edges as stored, features row-major).
pub fn save_canonical(path: &Path, g: &Graph, masks: Option<&SplitMasks>) -> Result<(), DataError> {
    let doc = CanonicalGraph {
        num_nodes: g.num_nodes,
        num_classes: g.num_classes,
        edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
        features: (0..g.num_nodes).map(|i| g.features.row(i).to_vec()).collect(),
        labels: g.labels.clone(),
        masks: masks.cloned(),
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &doc).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges.iter().copied(), Tensor::zeros(n, 1), vec![0; n], 1).unwrap()
    }

    #[test]
    fn single_node_is_self_loop_only() {
        let a = normalize_adjacency(&toy(1, &[]));
        assert_eq!(a.to_dense().data(), &[1.0]);
    }

    #[test]
    fn two_nodes_one_edge_all_half() {
        let a = normalize_adjacency(&toy(2, &[(0, 1)]));
        for v in a.to_dense().data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn path_graph_entries() {
        // degrees with self-loops: {2, 3, 2}
        let a = normalize_adjacency(&toy(3, &[(0, 1), (1, 2)]));
        assert!((a.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((a.get(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(a.get(0, 2), 0.0);
        assert!(a.is_symmetric());
    }

    #[test]
    fn graph_rejects_bad_labels_and_edges() {
        let f = Tensor::zeros(2, 1);
        assert!(matches!(
            Graph::new(2, [(0, 1)], f.clone(), vec![0, 2], 2),
            Err(DataError::Schema(_))
        ));
        assert!(matches!(
            Graph::new(2, [(0, 5)], f.clone(), vec![0, 1], 2),
            Err(DataError::Schema(_))
        ));
        assert!(matches!(
            Graph::new(0, [], Tensor::zeros(0, 1), vec![], 1),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn edges_are_canonicalized() {
        let g = toy(3, &[(1, 0), (0, 1), (2, 2), (2, 1)]);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn raw_toy_files() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "toy.content", "a\t1\t0\tX\nb\t0\t1\tY\nc\t1\t1\tX\n");
        let cites = write(dir.path(), "toy.cites", "a\tb\nc\tb\n");
        let (g, stats) = load_content_cites(&content, &cites).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.num_classes(), 2);
        assert_eq!(g.labels(), &[0, 1, 0]);
        assert_eq!(stats, IngestStats::default());
    }

    #[test]
    fn unknown_cited_id_is_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "t.content", "a\t1\tX\nb\t0\tY\n");
        let cites = write(dir.path(), "t.cites", "a\tb\na\tzzz\nb\ta\n");
        let (g, stats) = load_content_cites(&content, &cites).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(stats.dropped_edges, 1);
        assert_eq!(stats.duplicate_edges, 1);
    }

    #[test]
    fn malformed_content_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "t.content", "a\t1\tX\nb\tnope\tY\n");
        let cites = write(dir.path(), "t.cites", "");
        match load_content_cites(&content, &cites) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let empty = write(dir.path(), "e.content", "\n");
        assert!(matches!(load_content_cites(&empty, &cites), Err(DataError::Empty)));
    }

    #[test]
    fn minimal_canonical_and_label_violation() {
        let (g, masks) =
            parse_canonical(r#"{"num_nodes":1,"num_classes":1,"edges":[],"features":[[0.5]],"labels":[0]}"#).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert!(masks.is_none());
        let bad = parse_canonical(r#"{"num_nodes":1,"num_classes":1,"edges":[],"features":[[0.5]],"labels":[1]}"#);
        assert!(matches!(bad, Err(DataError::Schema(_))));
        let overlapping = parse_canonical(
            r#"{"num_nodes":2,"num_classes":1,"edges":[[0,1]],"features":[[0],[1]],"labels":[0,0],
                "masks":{"train":[0],"val":[0],"test":[1]}}"#,
        );
        assert!(matches!(overlapping, Err(DataError::Schema(_))));
    }

    #[test]
    fn canonical_round_trip_with_masks() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::new(
            3,
            [(0, 1), (1, 2)],
            Tensor::from_rows(&[[0.1, 1.0 / 3.0], [2.5e-300, -7.0], [0.0, 1e10]]),
            vec![0, 1, 1],
            2,
        )
        .unwrap();
        let masks = SplitMasks {
            train: vec![0],
            val: vec![1],
            test: vec![2],
        };
        let p = dir.path().join("g.json");
        save_canonical(&p, &g, Some(&masks)).unwrap();
        let (back, m) = load_canonical(&p).unwrap();
        assert_eq!(back, g);
        assert_eq!(m, Some(masks));
    }

    fn labelled(n: usize, classes: usize) -> Graph {
        Graph::new(
            n,
            [],
            Tensor::zeros(n, 1),
            (0..n).map(|i| i % classes).collect(),
            classes,
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let g = labelled(2000, 7);
        let a = make_split(&g, 0).unwrap();
        assert_eq!(a.train.len(), 140);
        assert_eq!(a.val.len(), 500);
        assert_eq!(a.test.len(), 1000);
        let mut per_class = [0; 7];
        for &i in &a.train {
            per_class[g.labels()[i]] += 1;
        }
        assert!(per_class.iter().all(|&c| c == 20));
        assert_eq!(a, make_split(&g, 0).unwrap());
        assert_ne!(a, make_split(&g, 1).unwrap());
        a.validate(g.num_nodes()).unwrap();
    }

    #[test]
    fn split_of_tiny_graph_fails() {
        match make_split(&labelled(10, 2), 0) {
            Err(DataError::InsufficientClass { class: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            make_split(&labelled(100, 2), 0),
            Err(DataError::InsufficientNodes { .. })
        ));
    }
}
