use std::rc::Rc;

use super::layers::{
    activate, attention, combine, normalize_adjacency_sparse, ntn_from_parts, ntn_linear_terms,
    output_head,
};
use super::params::{ModelParams, ParamVars};
use super::ModelConfig;
use crate::autodiff::{SparseMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Sample;

/// Per-layer intermediate values for one sample.
#[derive(Clone, Debug)]
pub struct LayerDiagnostics {
    /// NTN similarity, `k x n x m`.
    pub similarity: Tensor,
    /// Attention, `n x m`.
    pub attention: Tensor,
    /// Similarity weighted by attention, `k x n x m`.
    pub combined: Tensor,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Row-stochastic `n x m` matching scores.
    pub op: Tensor,
    pub per_layer: Option<Vec<LayerDiagnostics>>,
}

/// Tape handles produced for one sample of a batch.
#[derive(Clone, Debug)]
pub struct SampleVars {
    pub op: Var,
    pub similarity: Vec<Var>,
    pub attention: Vec<Var>,
    pub combined: Vec<Var>,
}

/// Runs the network on a batch of samples recorded on one tape.
///
/// All graphs of the batch (queries first, then data graphs) are stacked
/// into one node matrix with a block-diagonal adjacency, so each GCN layer
/// and each NTN projection is a single large product. Pairwise stages then
/// run per sample on row slices of the stacked embeddings.
pub fn forward_batch(
    tape: &mut Tape<'_>,
    params: &ParamVars,
    samples: &[&Sample],
    cfg: &ModelConfig,
) -> Result<Vec<SampleVars>> {
    cfg.validate()?;
    if params.gcn.len() != cfg.num_layers || params.ntn.len() != cfg.num_layers {
        return Err(Error::invalid("parameter layers do not match config"));
    }
    let input_dim = cfg.input_dim();
    for (idx, s) in samples.iter().enumerate() {
        if s.query.num_nodes() == 0 || s.data.num_nodes() == 0 {
            return Err(Error::invalid(format!("sample {idx} has an empty graph")));
        }
        for g in [&s.query, &s.data] {
            if g.feature_dim() != input_dim {
                return Err(Error::invalid(format!(
                    "sample {idx}: feature dim {} does not match model input dim {input_dim}",
                    g.feature_dim()
                )));
            }
        }
    }

    let sizes_q: Vec<usize> = samples.iter().map(|s| s.query.num_nodes()).collect();
    let sizes_g: Vec<usize> = samples.iter().map(|s| s.data.num_nodes()).collect();
    let total_q: usize = sizes_q.iter().sum();
    let total_g: usize = sizes_g.iter().sum();
    let offsets = |sizes: &[usize]| -> Vec<usize> {
        sizes
            .iter()
            .scan(0, |acc, &n| {
                let start = *acc;
                *acc += n;
                Some(start)
            })
            .collect()
    };
    let off_q = offsets(&sizes_q);
    let off_g = offsets(&sizes_g);

    let mut features = Vec::with_capacity((total_q + total_g) * input_dim);
    let blocks: Vec<SparseMatrix> = samples
        .iter()
        .map(|s| &s.query)
        .chain(samples.iter().map(|s| &s.data))
        .map(|g| {
            features.extend(g.features().iter().flatten());
            normalize_adjacency_sparse(g)
        })
        .collect();
    let adj = Rc::new(SparseMatrix::block_diag(&blocks.iter().collect::<Vec<_>>()));
    let x = Tensor::from_vec(vec![total_q + total_g, input_dim], features)?;
    let mut h = tape.constant(x);

    let mut out: Vec<SampleVars> = samples
        .iter()
        .map(|_| SampleVars {
            op: h,
            similarity: Vec::new(),
            attention: Vec::new(),
            combined: Vec::new(),
        })
        .collect();

    for layer in 0..cfg.num_layers {
        let hw = tape.matmul(h, params.gcn[layer])?;
        let agg = tape.propagate(Rc::clone(&adj), hw)?;
        h = activate(tape, agg, cfg.layer_activations[layer])?;

        let ntn = params.ntn[layer];
        let hq_all = tape.slice_rows(h, 0, total_q)?;
        let hg_all = tape.slice_rows(h, total_q, total_g)?;
        let projected_all = tape.contract(hq_all, ntn.w)?;
        let (uq_all, ug_all) = ntn_linear_terms(tape, hq_all, hg_all, ntn.v)?;

        for (b, sv) in out.iter_mut().enumerate() {
            let (qo, n) = (off_q[b], sizes_q[b]);
            let (go, m) = (off_g[b], sizes_g[b]);
            let hq = tape.slice_rows(hq_all, qo, n)?;
            let hg = tape.slice_rows(hg_all, go, m)?;
            let projected = tape.slice_mid(projected_all, qo, n)?;
            let uq = tape.slice_rows(uq_all, qo, n)?;
            let ug = tape.slice_rows(ug_all, go, m)?;
            let sim = ntn_from_parts(tape, projected, hg, uq, ug, ntn.b)?;
            let att = attention(tape, hq, hg)?;
            let comb = combine(tape, sim, att)?;
            sv.similarity.push(sim);
            sv.attention.push(att);
            sv.combined.push(comb);
        }
    }
    for sv in &mut out {
        sv.op = output_head(tape, &sv.combined, params.head_w, params.head_b)?;
    }
    Ok(out)
}

fn run(sample: &Sample, params: &ModelParams, cfg: &ModelConfig, detailed: bool) -> Result<ModelOutput> {
    params.check_shapes(cfg)?;
    let mut tape = Tape::new();
    let vars = ParamVars::constants(&mut tape, params);
    let sv = forward_batch(&mut tape, &vars, &[sample], cfg)?.remove(0);
    let per_layer = detailed.then(|| {
        (0..cfg.num_layers)
            .map(|l| LayerDiagnostics {
                similarity: tape.value(sv.similarity[l]).clone(),
                attention: tape.value(sv.attention[l]).clone(),
                combined: tape.value(sv.combined[l]).clone(),
            })
            .collect()
    });
    Ok(ModelOutput {
        op: tape.value(sv.op).clone(),
        per_layer,
    })
}

/// Inference on one sample; returns the `|Q| x |G|` score matrix.
pub fn forward(sample: &Sample, params: &ModelParams, cfg: &ModelConfig) -> Result<ModelOutput> {
    run(sample, params, cfg, false)
}

impl ModelOutput {
    /// Inference keeping per-layer similarity, attention and combined tensors.
    pub fn detailed(sample: &Sample, params: &ModelParams, cfg: &ModelConfig) -> Result<ModelOutput> {
        run(sample, params, cfg, true)
    }
}
