//! Node-labelled undirected graphs, the random pair generator, query
//! insertion, feature noise and ground-truth matching matrices.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Integer node label, always `>= 1`.
pub type Label = u32;

/// Deterministic seed derivation: mixes `stream` and `index` into `master`
/// with two splitmix64 rounds so that every (stream, index) pair gets an
/// independent generator.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)));
    splitmix64(a ^ splitmix64(index.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(1)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_from(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// How integer labels become node feature vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureEncoding {
    /// One feature per node holding the label value itself.
    #[default]
    Scalar,
    /// `max_label` features with a single 1 at `label - 1`.
    OneHot,
}

impl FeatureEncoding {
    pub fn feature_dim(self, max_label: usize) -> usize {
        match self {
            FeatureEncoding::Scalar => 1,
            FeatureEncoding::OneHot => max_label,
        }
    }
}

fn default_noise_std() -> f64 {
    0.5
}

/// Parameters of the random undirected graph generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub edge_prob: f64,
    pub max_label: usize,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default)]
    pub feature_encoding: FeatureEncoding,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            edge_prob: 0.2,
            max_label: 10,
            noise_std: default_noise_std(),
            feature_encoding: FeatureEncoding::Scalar,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::invalid(format!(
                "edge_prob must lie in [0, 1], got {}",
                self.edge_prob
            )));
        }
        if self.max_label < 1 {
            return Err(Error::invalid("max_label must be at least 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(format!(
                "noise_std must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_encoding.feature_dim(self.max_label)
    }
}

/// An undirected graph with integer node labels and real node features.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted. Labels are the
/// clean (pre-noise) values; features may carry noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    labels: Vec<Label>,
    features: Vec<Vec<f64>>,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    labels: Vec<Label>,
    features: Vec<Vec<f64>>,
}

impl TryFrom<RawGraph> for Graph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Graph> {
        Graph::new(raw.n, raw.edges, raw.labels, raw.features)
    }
}

impl From<Graph> for RawGraph {
    fn from(g: Graph) -> RawGraph {
        RawGraph {
            n: g.num_nodes,
            edges: g.edges,
            labels: g.labels,
            features: g.features,
        }
    }
}

impl Graph {
    /// Builds a graph, normalising edge orientation and rejecting self-loops,
    /// duplicate edges, out-of-range endpoints and ragged features.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        labels: Vec<Label>,
        features: Vec<Vec<f64>>,
    ) -> Result<Graph> {
        if labels.len() != num_nodes || features.len() != num_nodes {
            return Err(Error::invalid(format!(
                "graph with {} nodes has {} labels and {} feature rows",
                num_nodes,
                labels.len(),
                features.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l < 1) {
            return Err(Error::invalid(format!("label {bad} is below 1")));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.len() != first.len()) {
                return Err(Error::invalid("feature rows have differing lengths"));
            }
        }
        let mut seen = BTreeSet::new();
        for &(u, v) in &edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::invalid(format!("self-loop on node {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::invalid(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Graph {
            num_nodes,
            edges: seen.into_iter().collect(),
            labels,
            features,
        })
    }

    /// Builds a graph whose features are derived from its labels.
    pub fn from_labels(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        labels: Vec<Label>,
        encoding: FeatureEncoding,
        max_label: usize,
    ) -> Result<Graph> {
        let features = encode_features(&labels, encoding, max_label)?;
        Graph::new(num_nodes, edges, labels, features)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Dense boolean adjacency, row-major, without self-loops.
    pub fn adjacency(&self) -> Vec<bool> {
        let n = self.num_nodes;
        let mut adj = vec![false; n * n];
        for &(u, v) in &self.edges {
            adj[u * n + v] = true;
            adj[v * n + u] = true;
        }
        adj
    }

    /// Feature matrix as a `num_nodes x feature_dim` tensor.
    pub fn feature_tensor(&self) -> Tensor {
        let d = self.feature_dim();
        let data = self.features.iter().flatten().copied().collect();
        Tensor::from_vec(vec![self.num_nodes, d], data).expect("features are rectangular")
    }

    /// Relabels nodes: node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        check_permutation(perm, self.num_nodes)?;
        let n = self.num_nodes;
        let mut labels = vec![0; n];
        let mut features = vec![Vec::new(); n];
        for i in 0..n {
            labels[perm[i]] = self.labels[i];
            features[perm[i]] = self.features[i].clone();
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Graph::new(n, edges, labels, features)
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::invalid(format!(
            "permutation of length {} for {} nodes",
            perm.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid("not a permutation"));
        }
    }
    Ok(())
}

/// Turns labels into node features according to `encoding`.
pub fn encode_features(
    labels: &[Label],
    encoding: FeatureEncoding,
    max_label: usize,
) -> Result<Vec<Vec<f64>>> {
    labels
        .iter()
        .map(|&l| {
            if l < 1 || l as usize > max_label {
                return Err(Error::invalid(format!(
                    "label {l} outside [1, {max_label}]"
                )));
            }
            Ok(match encoding {
                FeatureEncoding::Scalar => vec![f64::from(l)],
                FeatureEncoding::OneHot => {
                    let mut row = vec![0.0; max_label];
                    row[l as usize - 1] = 1.0;
                    row
                }
            })
        })
        .collect()
}

/// Random graph with `size` nodes, each pair joined with probability
/// `cfg.edge_prob` and labels uniform on `[1, cfg.max_label]`, seeded from
/// `cfg.seed`. Features are clean.
pub fn generate_graph(cfg: &GeneratorConfig, size: usize) -> Result<Graph> {
    if size == 0 {
        return Err(Error::invalid("graph size must be at least 1"));
    }
    cfg.validate()?;
    Ok(generate_with(cfg, size, &mut rng_from(cfg.seed)))
}

fn generate_with<R: Rng>(cfg: &GeneratorConfig, size: usize, rng: &mut R) -> Graph {
    let mut edges = Vec::new();
    for u in 0..size {
        for v in (u + 1)..size {
            if rng.random_bool(cfg.edge_prob) {
                edges.push((u, v));
            }
        }
    }
    let labels: Vec<Label> = (0..size)
        .map(|_| rng.random_range(1..=cfg.max_label as Label))
        .collect();
    Graph::from_labels(size, edges, labels, cfg.feature_encoding, cfg.max_label)
        .expect("generator output is well formed")
}

/// Copy of `graph` with independent `N(0, noise_std^2)` noise added to every
/// feature entry.
pub fn add_noise(graph: &Graph, noise_std: f64, rng_seed: u64) -> Result<Graph> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid(format!("noise_std {noise_std} is invalid")));
    }
    let mut out = graph.clone();
    if noise_std == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, noise_std).expect("validated std");
    let mut rng = rng_from(rng_seed);
    for row in &mut out.features {
        for x in row.iter_mut() {
            *x += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Embeds `query` into `host`.
///
/// The union keeps every query and host edge; each query-host pair gets an
/// edge with probability `edge_prob`. Node order of the union is then
/// shuffled uniformly. Returns the data graph and the query-to-data mapping.
pub fn insert_query(
    query: &Graph,
    host: &Graph,
    edge_prob: f64,
    rng_seed: u64,
) -> Result<(Graph, Vec<usize>)> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::invalid(format!("edge_prob {edge_prob} outside [0, 1]")));
    }
    if query.num_nodes() > 0 && host.num_nodes() > 0 && query.feature_dim() != host.feature_dim()
    {
        return Err(Error::invalid("query and host feature dims differ"));
    }
    let mut rng = rng_from(rng_seed);
    let n = query.num_nodes();
    let h = host.num_nodes();
    let total = n + h;

    let mut edges: Vec<(usize, usize)> = query.edges().to_vec();
    edges.extend(host.edges().iter().map(|&(u, v)| (u + n, v + n)));
    for u in 0..n {
        for v in 0..h {
            if rng.random_bool(edge_prob) {
                edges.push((u, n + v));
            }
        }
    }
    let mut labels = query.labels().to_vec();
    labels.extend_from_slice(host.labels());
    let mut features = query.features().to_vec();
    features.extend_from_slice(host.features());

    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(&mut rng);

    let union = Graph::new(total, edges, labels, features)?;
    let data = union.permuted(&perm)?;
    let mapping = perm[..n].to_vec();
    Ok((data, mapping))
}

/// Binary `rows x cols` matrix with exactly one 1 per row, stored as the
/// selected column of each row.
///
/// Ground-truth matrices are also injective (column sums at most 1);
/// discretised predictions need not be.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchingMatrix {
    cols: usize,
    choice: Vec<usize>,
}

impl MatchingMatrix {
    pub fn from_choices(choice: Vec<usize>, cols: usize) -> Result<MatchingMatrix> {
        if let Some(&c) = choice.iter().find(|&&c| c >= cols) {
            return Err(Error::invalid(format!("column {c} out of range for {cols} columns")));
        }
        Ok(MatchingMatrix { cols, choice })
    }

    /// Reads a dense 0/1 matrix; every row must hold exactly one 1.
    pub fn from_dense(t: &Tensor) -> Result<MatchingMatrix> {
        let (rows, cols) = t.dims2()?;
        let mut choice = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = &t.data()[i * cols..(i + 1) * cols];
            let ones: Vec<usize> = (0..cols).filter(|&j| row[j] == 1.0).collect();
            let zeros = row.iter().filter(|&&x| x == 0.0).count();
            if ones.len() != 1 || zeros != cols - 1 {
                return Err(Error::invalid(format!("row {i} is not a unit row")));
            }
            choice.push(ones[0]);
        }
        Ok(MatchingMatrix { cols, choice })
    }

    pub fn rows(&self) -> usize {
        self.choice.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column selected by each row.
    pub fn choices(&self) -> &[usize] {
        &self.choice
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.choice[i] == j
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = vec![false; self.cols];
        self.choice.iter().all(|&c| !std::mem::replace(&mut seen[c], true))
    }

    /// Per data node: does any row select it.
    pub fn column_image(&self) -> Vec<bool> {
        let mut img = vec![false; self.cols];
        for &c in &self.choice {
            img[c] = true;
        }
        img
    }

    pub fn row_sums(&self) -> Vec<usize> {
        vec![1; self.choice.len()]
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.cols];
        for &c in &self.choice {
            sums[c] += 1;
        }
        sums
    }

    pub fn to_dense(&self) -> Tensor {
        let mut data = vec![0.0; self.rows() * self.cols];
        for (i, &c) in self.choice.iter().enumerate() {
            data[i * self.cols + c] = 1.0;
        }
        Tensor::from_vec(vec![self.rows(), self.cols], data).expect("shape matches")
    }
}

/// Ground-truth matching matrix of an injective mapping.
pub fn matching_matrix(mapping: &[usize], n: usize, m: usize) -> Result<MatchingMatrix> {
    if mapping.len() != n {
        return Err(Error::invalid(format!(
            "mapping covers {} of {} query nodes",
            mapping.len(),
            n
        )));
    }
    let mm = MatchingMatrix::from_choices(mapping.to_vec(), m)?;
    if !mm.is_injective() {
        return Err(Error::invalid("mapping is not injective"));
    }
    Ok(mm)
}

/// A query graph, a data graph containing it, and the insertion mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSample")]
pub struct Sample {
    pub query: Graph,
    pub data: Graph,
    pub mapping: Vec<usize>,
}

#[derive(Deserialize)]
struct RawSample {
    query: Graph,
    data: Graph,
    mapping: Vec<usize>,
}

impl TryFrom<RawSample> for Sample {
    type Error = Error;

    fn try_from(raw: RawSample) -> Result<Sample> {
        Sample::new(raw.query, raw.data, raw.mapping)
    }
}

impl Sample {
    /// Checks that the mapping is injective and lands inside the data graph.
    pub fn new(query: Graph, data: Graph, mapping: Vec<usize>) -> Result<Sample> {
        matching_matrix(&mapping, query.num_nodes(), data.num_nodes())?;
        if query.feature_dim() != data.feature_dim() {
            return Err(Error::invalid("query and data feature dims differ"));
        }
        Ok(Sample {
            query,
            data,
            mapping,
        })
    }

    pub fn ground_truth(&self) -> MatchingMatrix {
        MatchingMatrix {
            cols: self.data.num_nodes(),
            choice: self.mapping.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// One query graph shared by every sample.
    Dataset1,
    /// A fresh query graph per sample.
    Dataset2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSizes {
    /// Data graph size `|G|`.
    pub data: usize,
    /// Query graph size `|Q|`.
    pub query: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

const STREAM_SHARED_QUERY: u64 = 1;
const STREAM_SPLIT_BASE: u64 = 16;

/// Generates train/valid/test samples.
///
/// Every sample is a pure function of `(cfg, sizes, kind, split, index)`.
pub fn build_dataset(
    kind: DatasetKind,
    cfg: &GeneratorConfig,
    sizes: GraphSizes,
    counts: SplitCounts,
) -> Result<Dataset> {
    cfg.validate()?;
    if sizes.query < 1 {
        return Err(Error::invalid("query size must be at least 1"));
    }
    if sizes.query > sizes.data {
        return Err(Error::invalid(format!(
            "query size {} exceeds data size {}",
            sizes.query, sizes.data
        )));
    }
    let shared_query = match kind {
        DatasetKind::Dataset1 => {
            let mut rng = rng_from(derive_seed(cfg.seed, STREAM_SHARED_QUERY, 0));
            Some(generate_with(cfg, sizes.query, &mut rng))
        }
        DatasetKind::Dataset2 => None,
    };
    let split = |split_id: u64, count: usize| -> Result<Vec<Sample>> {
        (0..count)
            .map(|i| {
                let base = derive_seed(cfg.seed, STREAM_SPLIT_BASE + split_id, i as u64);
                make_sample(cfg, sizes, shared_query.as_ref(), base)
            })
            .collect()
    };
    Ok(Dataset {
        train: split(0, counts.train)?,
        valid: split(1, counts.valid)?,
        test: split(2, counts.test)?,
    })
}

fn make_sample(
    cfg: &GeneratorConfig,
    sizes: GraphSizes,
    shared_query: Option<&Graph>,
    base: u64,
) -> Result<Sample> {
    let query = match shared_query {
        Some(q) => q.clone(),
        None => generate_with(cfg, sizes.query, &mut rng_from(derive_seed(base, 0, 0))),
    };
    let host_size = sizes.data - sizes.query;
    let host = if host_size == 0 {
        Graph::new(0, Vec::new(), Vec::new(), Vec::new())?
    } else {
        generate_with(cfg, host_size, &mut rng_from(derive_seed(base, 1, 0)))
    };
    let (data, mapping) = insert_query(&query, &host, cfg.edge_prob, derive_seed(base, 2, 0))?;
    let query = add_noise(&query, cfg.noise_std, derive_seed(base, 3, 0))?;
    let data = add_noise(&data, cfg.noise_std, derive_seed(base, 4, 0))?;
    Sample::new(query, data, mapping)
}
