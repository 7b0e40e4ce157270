use rand::Rng;

use super::ModelConfig;
use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::rng_from;

/// Neural tensor network weights for one GCN layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NtnParams {
    /// Bilinear slices, `k x d x d`.
    pub w: Tensor,
    /// Linear term over the stacked (query; data) embedding pair, `k x 2d`.
    pub v: Tensor,
    /// Bias, length `k`.
    pub b: Tensor,
}

/// All learnable weights. The same GCN weights serve both graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Per-layer GCN weights, `D_l x D_{l+1}`.
    pub gcn: Vec<Tensor>,
    pub ntn: Vec<NtnParams>,
    /// Channel mixing weights, `(k * num_layers) x 1`.
    pub head_w: Tensor,
    /// Scalar head bias.
    pub head_b: Tensor,
}

fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape product matches")
}

impl ModelParams {
    /// Glorot-uniform matrices and zero biases, seeded from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<ModelParams> {
        cfg.validate()?;
        let mut rng = rng_from(cfg.seed);
        let k = cfg.ntn_k;
        let mut gcn = Vec::with_capacity(cfg.num_layers);
        let mut ntn = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let (din, dout) = (cfg.layer_dims[l], cfg.layer_dims[l + 1]);
            gcn.push(glorot(&mut rng, &[din, dout], din, dout));
        }
        for l in 0..cfg.num_layers {
            let d = cfg.layer_dims[l + 1];
            ntn.push(NtnParams {
                w: glorot(&mut rng, &[k, d, d], d, d),
                v: glorot(&mut rng, &[k, 2 * d], 2 * d, k),
                b: Tensor::zeros(&[k]),
            });
        }
        let channels = k * cfg.num_layers;
        let head_w = glorot(&mut rng, &[channels, 1], channels, 1);
        Ok(ModelParams {
            gcn,
            ntn,
            head_w,
            head_b: Tensor::scalar(0.0),
        })
    }

    /// Expected shape of every tensor, in [`ModelParams::tensors`] order.
    pub fn expected_shapes(cfg: &ModelConfig) -> Vec<Vec<usize>> {
        let k = cfg.ntn_k;
        let mut shapes = Vec::new();
        for l in 0..cfg.num_layers {
            shapes.push(vec![cfg.layer_dims[l], cfg.layer_dims[l + 1]]);
        }
        for l in 0..cfg.num_layers {
            let d = cfg.layer_dims[l + 1];
            shapes.push(vec![k, d, d]);
            shapes.push(vec![k, 2 * d]);
            shapes.push(vec![k]);
        }
        shapes.push(vec![k * cfg.num_layers, 1]);
        shapes.push(vec![]);
        shapes
    }

    /// Tensor names in [`ModelParams::tensors`] order.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.gcn.len()).map(|l| format!("gcn[{l}]")).collect();
        for l in 0..self.ntn.len() {
            names.push(format!("ntn[{l}].w"));
            names.push(format!("ntn[{l}].v"));
            names.push(format!("ntn[{l}].b"));
        }
        names.push("head_w".into());
        names.push("head_b".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.gcn.iter().collect();
        for p in &self.ntn {
            out.extend([&p.w, &p.v, &p.b]);
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.gcn.iter_mut().collect();
        for p in &mut self.ntn {
            out.extend([&mut p.w, &mut p.v, &mut p.b]);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Rebuilds from tensors in [`ModelParams::tensors`] order.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor>) -> Result<ModelParams> {
        cfg.validate()?;
        let shapes = Self::expected_shapes(cfg);
        if tensors.len() != shapes.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (t, s) in tensors.iter().zip(&shapes) {
            if t.shape() != s.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "parameters",
                    left: t.shape().to_vec(),
                    right: s.clone(),
                });
            }
        }
        let mut it = tensors.into_iter();
        let layers = cfg.num_layers;
        let gcn = it.by_ref().take(layers).collect();
        let ntn = (0..layers)
            .map(|_| NtnParams {
                w: it.next().expect("counted"),
                v: it.next().expect("counted"),
                b: it.next().expect("counted"),
            })
            .collect();
        Ok(ModelParams {
            gcn,
            ntn,
            head_w: it.next().expect("counted"),
            head_b: it.next().expect("counted"),
        })
    }

    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let shapes = Self::expected_shapes(cfg);
        let tensors = self.tensors();
        if tensors.len() != shapes.len() {
            return Err(Error::invalid("parameter count does not match config"));
        }
        for ((t, s), name) in tensors.iter().zip(&shapes).zip(self.names()) {
            if t.shape() != s.as_slice() {
                return Err(Error::invalid(format!(
                    "{name} has shape {:?}, config expects {:?}",
                    t.shape(),
                    s
                )));
            }
        }
        Ok(())
    }
}

/// Tape handles for one layer's NTN weights.
#[derive(Clone, Copy, Debug)]
pub struct NtnVars {
    pub w: Var,
    pub v: Var,
    pub b: Var,
}

/// Tape handles mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub gcn: Vec<Var>,
    pub ntn: Vec<NtnVars>,
    pub head_w: Var,
    pub head_b: Var,
}

impl ParamVars {
    fn register<'p, 'q>(
        tape: &mut Tape<'p>,
        params: &'q ModelParams,
        mut put: impl FnMut(&mut Tape<'p>, &'q Tensor) -> Var,
    ) -> ParamVars {
        let gcn = params.gcn.iter().map(|t| put(tape, t)).collect();
        let ntn = params
            .ntn
            .iter()
            .map(|p| NtnVars {
                w: put(tape, &p.w),
                v: put(tape, &p.v),
                b: put(tape, &p.b),
            })
            .collect();
        ParamVars {
            gcn,
            ntn,
            head_w: put(tape, &params.head_w),
            head_b: put(tape, &params.head_b),
        }
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn leaves<'p>(tape: &mut Tape<'p>, params: &'p ModelParams) -> ParamVars {
        Self::register(tape, params, |t, x| t.leaf_ref(x))
    }

    /// Registers every parameter as a constant (inference only).
    pub fn constants<'p>(tape: &mut Tape<'p>, params: &'p ModelParams) -> ParamVars {
        Self::register(tape, params, |t, x| t.constant_ref(x))
    }

    /// Like [`ParamVars::constants`] but copies the values into the tape.
    pub fn owned_constants(tape: &mut Tape<'_>, params: &ModelParams) -> ParamVars {
        Self::register(tape, params, |t, x| t.constant(x.clone()))
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.gcn.clone();
        for p in &self.ntn {
            out.extend([p.w, p.v, p.b]);
        }
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }

    /// Replaces the handle at `index` in [`ParamVars::vars`] order.
    pub fn replace(&mut self, index: usize, var: Var) -> Result<()> {
        let gcn = self.gcn.len();
        let ntn = 3 * self.ntn.len();
        let slot = match index {
            i if i < gcn => &mut self.gcn[i],
            i if i < gcn + ntn => {
                let layer = &mut self.ntn[(i - gcn) / 3];
                match (i - gcn) % 3 {
                    0 => &mut layer.w,
                    1 => &mut layer.v,
                    _ => &mut layer.b,
                }
            }
            i if i == gcn + ntn => &mut self.head_w,
            i if i == gcn + ntn + 1 => &mut self.head_b,
            i => return Err(Error::invalid(format!("parameter index {i} out of range"))),
        };
        *slot = var;
        Ok(())
    }

    /// Collects gradients into a [`ModelParams`]-shaped container.
    pub fn gradients(&self, cfg: &ModelConfig, grads: &mut Gradients) -> Result<ModelParams> {
        let tensors = self.vars().into_iter().map(|v| grads.take(v)).collect();
        ModelParams::from_tensors(cfg, tensors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    fn small() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            layer_dims: vec![1, 4, 3],
            layer_activations: vec![Activation::Elu, Activation::RowSoftmax],
            ntn_k: 2,
            seed: 5,
        }
    }

    #[test]
    fn init_shapes_and_bounds() {
        let cfg = small();
        let p = ModelParams::init(&cfg).unwrap();
        p.check_shapes(&cfg).unwrap();
        let shapes: Vec<Vec<usize>> = p.tensors().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, ModelParams::expected_shapes(&cfg));
        let limit = (6.0f64 / 5.0).sqrt();
        assert!(p.gcn[0].data().iter().all(|x| x.abs() <= limit));
        assert!(p.ntn.iter().all(|n| n.b.data().iter().all(|&x| x == 0.0)));
        assert_eq!(p.head_b.item(), 0.0);
        assert_eq!(ModelParams::init(&cfg).unwrap(), p);
    }

    #[test]
    fn standard_config_parameter_count() {
        let cfg = ModelConfig::standard(1);
        let p = ModelParams::init(&cfg).unwrap();
        let per_layer_ntn = 16 * 128 * 128 + 16 * 256 + 16;
        let expected = 128 + 2 * 128 * 128 + 3 * per_layer_ntn + 48 + 1;
        assert_eq!(p.num_params(), expected);
    }

    #[test]
    fn from_tensors_rejects_wrong_shapes() {
        let cfg = small();
        let p = ModelParams::init(&cfg).unwrap();
        let mut ts: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        assert_eq!(ModelParams::from_tensors(&cfg, ts.clone()).unwrap(), p);
        ts[0] = Tensor::zeros(&[2, 4]);
        assert!(ModelParams::from_tensors(&cfg, ts).is_err());
    }
}
