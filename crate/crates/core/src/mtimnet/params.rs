use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Data(format!(
                "tensor {name}: shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named tensors in a fixed order. Non-trainable tensors (batch-norm running
/// statistics) are stored alongside the weights so checkpoints carry them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
    offsets: Vec<usize>,
    total: usize,
}

impl ParamStore {
    pub fn push(&mut self, tensor: Tensor, trainable: bool) -> usize {
        self.offsets.push(self.total);
        self.total += tensor.len();
        self.tensors.push(tensor);
        self.trainable.push(trainable);
        self.tensors.len() - 1
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn is_trainable(&self, id: usize) -> bool {
        self.trainable[id]
    }

    /// Position of the first element of tensor `id` in the flat ordering.
    pub fn offset(&self, id: usize) -> usize {
        self.offsets[id]
    }

    /// Total number of scalars, trainable or not.
    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn trainable_len(&self) -> usize {
        self.tensors
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(t, _)| t.len())
            .sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Mutable access to a scalar by flat index.
    pub fn flat_mut(&mut self, index: usize) -> &mut f64 {
        let id = match self.offsets.binary_search(&index) {
            Ok(mut i) => {
                // skip empty tensors sharing the offset
                while self.tensors[i].is_empty() {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        };
        let off = self.offsets[id];
        &mut self.tensors[id].data[index - off]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_indexing_matches_layout() {
        let mut s = ParamStore::default();
        s.push(Tensor::new("a", vec![2], vec![1.0, 2.0]).unwrap(), true);
        s.push(Tensor::zeros("b", vec![2, 3]), false);
        s.push(Tensor::new("c", vec![1], vec![7.0]).unwrap(), true);
        assert_eq!(s.total_len(), 9);
        assert_eq!(s.trainable_len(), 3);
        assert_eq!(s.offset(2), 8);
        *s.flat_mut(3) = 5.0;
        assert_eq!(s.get("b").unwrap().data[1], 5.0);
        assert_eq!(*s.flat_mut(8), 7.0);
        assert_eq!(s.flat()[0..2], [1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(Tensor::new("x", vec![2, 2], vec![0.0; 3]).is_err());
    }
}
