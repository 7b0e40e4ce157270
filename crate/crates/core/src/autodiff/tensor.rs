use serde_json::Value;

use crate::error::{Error, Result};

/// Dense row-major `f64` array of rank 0 to 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if shape.len() > 3 {
            return Err(Error::invalid(format!("rank {} exceeds 3", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        assert!(shape.len() <= 3, "rank {} exceeds 3", shape.len());
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::invalid(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::invalid(format!("expected rank 3, got shape {:?}", self.shape))),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, s: usize, i: usize, j: usize) -> f64 {
        self.data[(s * self.shape[1] + i) * self.shape[2] + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() || shape.len() > 3 {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Nested JSON lists in row-major order; a rank-0 tensor is a bare number.
    pub fn to_nested(&self) -> Value {
        fn build(shape: &[usize], data: &[f64]) -> Value {
            match shape.split_first() {
                None => Value::from(data[0]),
                Some((&n, rest)) => {
                    let stride: usize = rest.iter().product();
                    Value::Array(
                        (0..n)
                            .map(|i| build(rest, &data[i * stride..(i + 1) * stride]))
                            .collect(),
                    )
                }
            }
        }
        build(&self.shape, &self.data)
    }

    /// Inverse of [`Tensor::to_nested`]. Empty inner lists cannot carry a
    /// shape, so `expected_shape` is used when given.
    pub fn from_nested(value: &Value, expected_shape: Option<&[usize]>) -> Result<Tensor> {
        fn infer(v: &Value, shape: &mut Vec<usize>) {
            if let Value::Array(items) = v {
                shape.push(items.len());
                if let Some(first) = items.first() {
                    infer(first, shape);
                }
            }
        }
        fn flatten(v: &Value, depth: usize, shape: &[usize], out: &mut Vec<f64>) -> Result<()> {
            match v {
                Value::Array(items) => {
                    if depth >= shape.len() || items.len() != shape[depth] {
                        return Err(Error::invalid("ragged nested array"));
                    }
                    items.iter().try_for_each(|x| flatten(x, depth + 1, shape, out))
                }
                Value::Number(n) if depth == shape.len() => {
                    out.push(n.as_f64().ok_or_else(|| Error::invalid("non-f64 number"))?);
                    Ok(())
                }
                _ => Err(Error::invalid("nested array holds a non-number")),
            }
        }
        let shape = match expected_shape {
            Some(s) => s.to_vec(),
            None => {
                let mut s = Vec::new();
                infer(value, &mut s);
                s
            }
        };
        let mut data = Vec::with_capacity(shape.iter().product());
        flatten(value, 0, &shape, &mut data)?;
        Tensor::from_vec(shape, data)
    }
}
