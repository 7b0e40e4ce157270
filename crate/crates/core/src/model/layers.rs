use std::rc::Rc;

use super::params::NtnVars;
use super::Activation;
use crate::autodiff::{SparseMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, MatchingMatrix};

/// Self-loop-augmented degrees and sorted neighbour lists (self included).
fn adjacency_weights(graph: &Graph) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = graph.num_nodes();
    let mut neighbours: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(u, v) in graph.edges() {
        neighbours[u].push(v);
        neighbours[v].push(u);
    }
    for row in &mut neighbours {
        row.sort_unstable();
    }
    let degrees = neighbours.iter().map(Vec::len).collect();
    (degrees, neighbours)
}

fn weight(deg: &[usize], i: usize, j: usize) -> f64 {
    1.0 / ((deg[i] * deg[j]) as f64).sqrt()
}

/// `D^-1/2 (A + I) D^-1/2` as a dense `n x n` matrix.
pub fn normalize_adjacency(graph: &Graph) -> Tensor {
    let n = graph.num_nodes();
    let (s, neighbours) = adjacency_weights(graph);
    let mut out = Tensor::zeros(&[n, n]);
    for (i, row) in neighbours.iter().enumerate() {
        for &j in row {
            out.data_mut()[i * n + j] = weight(&s, i, j);
        }
    }
    out
}

/// Sparse form of [`normalize_adjacency`].
pub fn normalize_adjacency_sparse(graph: &Graph) -> SparseMatrix {
    let n = graph.num_nodes();
    let (s, neighbours) = adjacency_weights(graph);
    let s = &s;
    let triplets: Vec<(usize, usize, f64)> = neighbours
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().map(move |&j| (i, j, weight(s, i, j))))
        .collect();
    SparseMatrix::from_sorted_triplets(n, n, &triplets).expect("triplets are sorted by row")
}

pub fn activate(tape: &mut Tape<'_>, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Identity => Ok(x),
        Activation::Elu => tape.elu(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::RowSoftmax => tape.row_softmax(x),
    }
}

/// `act(A_hat * H * W)` with a dense normalised adjacency.
pub fn gcn_layer(tape: &mut Tape<'_>, a_hat: Var, h: Var, w: Var, act: Activation) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let agg = tape.matmul(a_hat, hw)?;
    activate(tape, agg, act)
}

/// [`gcn_layer`] with a sparse (possibly block-diagonal) adjacency.
pub fn gcn_layer_sparse(
    tape: &mut Tape<'_>,
    a_hat: &Rc<SparseMatrix>,
    h: Var,
    w: Var,
    act: Activation,
) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let agg = tape.propagate(Rc::clone(a_hat), hw)?;
    activate(tape, agg, act)
}

/// Linear-term projections `(H_Q V_q^T, H_G V_g^T)`, where `V = [V_q | V_g]`.
pub(crate) fn ntn_linear_terms(tape: &mut Tape<'_>, hq: Var, hg: Var, v: Var) -> Result<(Var, Var)> {
    let (_, two_d) = tape.value(v).dims2()?;
    let d = two_d / 2;
    let vq = tape.slice_cols(v, 0, d)?;
    let vg = tape.slice_cols(v, d, d)?;
    let uq = tape.matmul_t(hq, vq, false, true)?;
    let ug = tape.matmul_t(hg, vg, false, true)?;
    Ok((uq, ug))
}

/// Similarity from precomputed pieces: `sigmoid(T_s H_G^T + uq + ug + b)`.
pub(crate) fn ntn_from_parts(
    tape: &mut Tape<'_>,
    projected: Var,
    hg: Var,
    uq: Var,
    ug: Var,
    b: Var,
) -> Result<Var> {
    let bilinear = tape.batch_matmul_nt(projected, hg)?;
    let pre = tape.pair_affine(bilinear, uq, ug, b)?;
    tape.sigmoid(pre)
}

/// `k x n x m` tensor of `sigmoid(h_q W_s h_g^T + V_s [h_q; h_g] + b_s)`.
pub fn ntn_similarity(tape: &mut Tape<'_>, hq: Var, hg: Var, ntn: &NtnVars) -> Result<Var> {
    let (_, dq) = tape.value(hq).dims2()?;
    let (_, dg) = tape.value(hg).dims2()?;
    let (k, wd, _) = tape.value(ntn.w).dims3()?;
    let vshape = tape.value(ntn.v).shape().to_vec();
    if dq != dg || wd != dq || vshape != [k, 2 * dq] || tape.value(ntn.b).len() != k {
        return Err(Error::ShapeMismatch {
            op: "ntn_similarity",
            left: vec![dq, dg],
            right: tape.value(ntn.w).shape().to_vec(),
        });
    }
    let projected = tape.contract(hq, ntn.w)?;
    let (uq, ug) = ntn_linear_terms(tape, hq, hg, ntn.v)?;
    ntn_from_parts(tape, projected, hg, uq, ug, ntn.b)
}

/// Row-stochastic `n x m` attention `softmax_rows(sigmoid(H_Q H_G^T / sqrt(d)))`.
pub fn attention(tape: &mut Tape<'_>, hq: Var, hg: Var) -> Result<Var> {
    let (_, d) = tape.value(hq).dims2()?;
    if d == 0 {
        return Err(Error::invalid("attention over zero-width embeddings"));
    }
    let logits = tape.matmul_t(hq, hg, false, true)?;
    let scaled = tape.scale(logits, 1.0 / (d as f64).sqrt())?;
    let gate = tape.sigmoid(scaled)?;
    tape.row_softmax(gate)
}

/// Weights each of the `k` similarity channels by the attention matrix.
pub fn combine(tape: &mut Tape<'_>, similarity: Var, att: Var) -> Result<Var> {
    let (s, a) = (tape.value(similarity), tape.value(att));
    if s.rank() != 3 || a.rank() != 2 || s.shape()[1..] != *a.shape() {
        return Err(Error::ShapeMismatch {
            op: "combine",
            left: s.shape().to_vec(),
            right: a.shape().to_vec(),
        });
    }
    tape.mul(similarity, att)
}

/// Concatenates per-layer tensors, mixes channels per cell, then row softmax.
pub fn output_head(tape: &mut Tape<'_>, layers: &[Var], w: Var, b: Var) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::invalid("output head needs at least one layer tensor"));
    }
    let stacked = tape.concat_channels(layers)?;
    let logits = tape.channel_mix(stacked, w, b)?;
    tape.row_softmax(logits)
}

/// One 1 per row at the row maximum; ties go to the lowest column.
pub fn discretize(op: &Tensor) -> Result<MatchingMatrix> {
    let (n, m) = op.dims2()?;
    if n == 0 || m == 0 {
        return Err(Error::invalid("cannot discretize an empty matrix"));
    }
    let choice = op
        .data()
        .chunks(m)
        .map(|row| {
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    MatchingMatrix::from_choices(choice, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FeatureEncoding;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_labels(n, edges.to_vec(), vec![1; n], FeatureEncoding::Scalar, 1).unwrap()
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn adjacency_examples() {
        assert_eq!(normalize_adjacency(&graph(1, &[])).data(), &[1.0]);
        assert_eq!(normalize_adjacency(&graph(2, &[(0, 1)])).data(), &[0.5; 4]);

        // Path 0-1-2: degrees with self-loops are 2, 3, 2.
        let a = normalize_adjacency(&graph(3, &[(0, 1), (1, 2)]));
        let off = 1.0 / 6f64.sqrt();
        let expected = [0.5, off, 0.0, off, 1.0 / 3.0, off, 0.0, off, 0.5];
        for (x, y) in a.data().iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
        let sparse = normalize_adjacency_sparse(&graph(3, &[(0, 1), (1, 2)]));
        assert_eq!(sparse.to_dense(), a.data());
    }

    #[test]
    fn gcn_identity_and_two_node_example() {
        let mut tape = Tape::new();
        let h = tape.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let eye3 = tape.constant(Tensor::identity(3));
        let eye2 = tape.constant(Tensor::identity(2));
        let out = gcn_layer(&mut tape, eye3, h, eye2, Activation::Identity).unwrap();
        assert_eq!(tape.value(out), tape.value(h));

        let a = tape.constant(normalize_adjacency(&graph(2, &[(0, 1)])));
        let h = tape.constant(t(&[2, 1], &[1.0, 2.0]));
        let w = tape.constant(t(&[1, 1], &[1.0]));
        let out = gcn_layer(&mut tape, a, h, w, Activation::Identity).unwrap();
        assert_eq!(tape.value(out).data(), &[1.5, 1.5]);

        let w_wide = tape.constant(Tensor::zeros(&[1, 5]));
        let out = gcn_layer(&mut tape, a, h, w_wide, Activation::Elu).unwrap();
        assert_eq!(tape.value(out).shape(), &[2, 5]);
        let bad = tape.constant(Tensor::zeros(&[2, 5]));
        assert!(gcn_layer(&mut tape, a, h, bad, Activation::Elu).is_err());
    }

    fn ntn_vars(tape: &mut Tape<'_>, k: usize, d: usize, w: &[f64], v: &[f64], b: &[f64]) -> NtnVars {
        NtnVars {
            w: tape.constant(t(&[k, d, d], w)),
            v: tape.constant(t(&[k, 2 * d], v)),
            b: tape.constant(t(&[k], b)),
        }
    }

    #[test]
    fn ntn_examples() {
        let mut tape = Tape::new();
        let hq = tape.constant(Tensor::full(&[3, 2], 0.7));
        let hg = tape.constant(Tensor::full(&[5, 2], -0.3));
        let zero = ntn_vars(&mut tape, 16, 2, &[0.0; 64], &[0.0; 64], &[0.0; 16]);
        let s = ntn_similarity(&mut tape, hq, hg, &zero).unwrap();
        assert_eq!(tape.value(s).shape(), &[16, 3, 5]);
        assert!(tape.value(s).data().iter().all(|&x| x == 0.5));

        let one = ntn_vars(&mut tape, 1, 1, &[2.0], &[0.0, 0.0], &[0.0]);
        let hq = tape.constant(t(&[1, 1], &[1.0]));
        let hg = tape.constant(t(&[1, 1], &[3.0]));
        let s = ntn_similarity(&mut tape, hq, hg, &one).unwrap();
        let expected = 1.0 / (1.0 + (-6.0f64).exp());
        assert!((tape.value(s).item() - expected).abs() < 1e-15);
        assert!((expected - 0.997527).abs() < 1e-6);
    }

    #[test]
    fn ntn_linear_term_uses_query_then_data_order() {
        let mut tape = Tape::new();
        let p = ntn_vars(&mut tape, 1, 1, &[0.0], &[1.0, -2.0], &[0.5]);
        let hq = tape.constant(t(&[1, 1], &[3.0]));
        let hg = tape.constant(t(&[1, 1], &[1.0]));
        let s = ntn_similarity(&mut tape, hq, hg, &p).unwrap();
        let pre: f64 = 3.0 - 2.0 + 0.5;
        assert!((tape.value(s).item() - 1.0 / (1.0 + (-pre).exp())).abs() < 1e-15);
    }

    #[test]
    fn attention_examples() {
        let mut tape = Tape::new();
        let hq = tape.constant(Tensor::zeros(&[2, 3]));
        let hg = tape.constant(Tensor::zeros(&[4, 3]));
        let a = attention(&mut tape, hq, hg).unwrap();
        assert!(tape.value(a).data().iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let hg1 = tape.constant(t(&[1, 3], &[0.2, -1.0, 4.0]));
        let hq1 = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 2.0]));
        let a = attention(&mut tape, hq1, hg1).unwrap();
        assert_eq!(tape.value(a).data(), &[1.0, 1.0]);

        let hq = tape.constant(t(&[1, 1], &[1.0]));
        let hg = tape.constant(t(&[2, 1], &[10.0, -10.0]));
        let a = attention(&mut tape, hq, hg).unwrap();
        let (s1, s2) = (1.0 / (1.0 + (-10f64).exp()), 1.0 / (1.0 + 10f64.exp()));
        let p0 = s1.exp() / (s1.exp() + s2.exp());
        let v = tape.value(a).data();
        assert!((v[0] - p0).abs() < 1e-15 && (v[0] - 0.7311).abs() < 1e-4);
        assert!((v[1] - 0.2689).abs() < 1e-4);

        let empty_q = tape.constant(Tensor::zeros(&[1, 0]));
        let empty_g = tape.constant(Tensor::zeros(&[2, 0]));
        assert!(attention(&mut tape, empty_q, empty_g).is_err());
    }

    #[test]
    fn combine_examples() {
        let mut tape = Tape::new();
        let s_data: Vec<f64> = (0..12).map(|x| f64::from(x) * 0.1 - 0.4).collect();
        let att_data = [0.3, 0.7, 0.2, 0.5, 0.25, 0.25];
        let s = tape.constant(t(&[2, 2, 3], &s_data));
        let ones = tape.constant(Tensor::full(&[2, 3], 1.0));
        let out = combine(&mut tape, s, ones).unwrap();
        assert_eq!(tape.value(out), tape.value(s));

        let zeros = tape.constant(Tensor::zeros(&[2, 2, 3]));
        let att = tape.constant(t(&[2, 3], &att_data));
        let out = combine(&mut tape, zeros, att).unwrap();
        assert!(tape.value(out).data().iter().all(|&x| x == 0.0));

        let out = combine(&mut tape, s, att).unwrap();
        for c in 0..2 {
            for cell in 0..6 {
                assert_eq!(tape.value(out).data()[c * 6 + cell], s_data[c * 6 + cell] * att_data[cell]);
            }
        }
        let wrong = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(combine(&mut tape, s, wrong).is_err());
    }

    #[test]
    fn output_head_examples() {
        let mut tape = Tape::new();
        let layer = tape.constant(t(&[2, 2, 3], &[0.1, 0.9, 0.3, 0.5, 0.2, 0.8, 0.4, 0.4, 0.1, 0.0, 0.6, 0.2]));
        let w0 = tape.constant(Tensor::zeros(&[2, 1]));
        let b0 = tape.constant(Tensor::scalar(0.0));
        let op = output_head(&mut tape, &[layer], w0, b0).unwrap();
        assert!(tape.value(op).data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(output_head(&mut tape, &[], w0, b0).is_err());

        let single = tape.constant(t(&[1, 1, 3], &[0.2, 1.0, -0.5]));
        let w1 = tape.constant(t(&[1, 1], &[1.0]));
        let op = output_head(&mut tape, &[single], w1, b0).unwrap();
        let z: f64 = [0.2f64, 1.0, -0.5].iter().map(|x| x.exp()).sum();
        for (x, y) in tape.value(op).data().iter().zip([0.2f64, 1.0, -0.5]) {
            assert!((x - y.exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn discretize_examples() {
        let m = discretize(&t(&[2, 2], &[0.6, 0.4, 0.3, 0.7])).unwrap();
        assert_eq!(m.choices(), &[0, 1]);
        assert_eq!(discretize(&t(&[1, 2], &[0.5, 0.5])).unwrap().choices(), &[0]);
        assert!(discretize(&Tensor::zeros(&[0, 3])).is_err());
        assert!(discretize(&Tensor::zeros(&[3])).is_err());
    }
}
