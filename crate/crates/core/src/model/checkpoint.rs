use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::params::{ModelParams, NtnParams};
use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Saved model: config, weights as nested row-major lists, and the training
/// iteration and validation loss at which it was selected.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ModelParams,
    pub iteration: usize,
    pub validation_loss: Option<f64>,
    /// Experiment configuration echoed for provenance.
    pub experiment: Option<Value>,
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::invalid(format!("checkpoint is missing `{key}`")))
}

impl Checkpoint {
    pub fn to_value(&self) -> Value {
        let ntn: Vec<Value> = self
            .params
            .ntn
            .iter()
            .map(|p| json!({"w": p.w.to_nested(), "v": p.v.to_nested(), "b": p.b.to_nested()}))
            .collect();
        json!({
            "config": self.config,
            "seed": self.seed,
            "params": {
                "gcn": self.params.gcn.iter().map(Tensor::to_nested).collect::<Vec<_>>(),
                "ntn": ntn,
                "head_w": self.params.head_w.to_nested(),
                "head_b": self.params.head_b.to_nested(),
            },
            "iteration": self.iteration,
            "validation_loss": self.validation_loss,
            "experiment": self.experiment,
        })
    }

    pub fn to_json_string(&self) -> String {
        self.to_value().to_string()
    }

    pub fn from_value(v: &Value) -> Result<Checkpoint> {
        let config: ModelConfig = serde_json::from_value(field(v, "config")?.clone())
            .map_err(|e| Error::json("checkpoint config", e))?;
        config.validate()?;
        let shapes = ModelParams::expected_shapes(&config);
        let p = field(v, "params")?;
        let mut tensors = Vec::with_capacity(shapes.len());
        let mut shape_iter = shapes.iter();
        let mut read = |value: &Value| -> Result<()> {
            let shape = shape_iter.next().ok_or_else(|| Error::invalid("too many tensors"))?;
            tensors.push(Tensor::from_nested(value, Some(shape))?);
            Ok(())
        };
        let gcn = field(p, "gcn")?
            .as_array()
            .ok_or_else(|| Error::invalid("`gcn` must be a list"))?;
        let ntn = field(p, "ntn")?
            .as_array()
            .ok_or_else(|| Error::invalid("`ntn` must be a list"))?;
        if gcn.len() != config.num_layers || ntn.len() != config.num_layers {
            return Err(Error::invalid("checkpoint layer count does not match its config"));
        }
        for g in gcn {
            read(g)?;
        }
        for layer in ntn {
            read(field(layer, "w")?)?;
            read(field(layer, "v")?)?;
            read(field(layer, "b")?)?;
        }
        read(field(p, "head_w")?)?;
        read(field(p, "head_b")?)?;
        let params = ModelParams::from_tensors(&config, tensors)?;

        let as_u64 = |key: &str| -> Result<u64> {
            field(v, key)?
                .as_u64()
                .ok_or_else(|| Error::invalid(format!("`{key}` must be a non-negative integer")))
        };
        Ok(Checkpoint {
            seed: as_u64("seed")?,
            iteration: as_u64("iteration")? as usize,
            validation_loss: v.get("validation_loss").and_then(Value::as_f64),
            experiment: v.get("experiment").filter(|e| !e.is_null()).cloned(),
            config,
            params,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Checkpoint> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::json("checkpoint", e))?;
        Checkpoint::from_value(&v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json_str(&text)
    }
}

impl NtnParams {
    pub fn dim(&self) -> usize {
        self.w.shape().get(1).copied().unwrap_or(0)
    }
}
