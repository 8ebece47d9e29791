use super::graph::{Function, Graph, Var};
use super::Tensor;
use crate::error::{Result, VinetError};

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

struct CrossEntropyFn {
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Function for CrossEntropyFn {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let scale = g.item() / self.labels.len() as f64;
        let mut d = self.probs.clone();
        for (row, &label) in d.chunks_mut(self.classes).zip(&self.labels) {
            row[label] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), d).expect("logits shape"))]
    }
}

impl Graph {
    /// `-log softmax(f)[s]`, averaged over the batch when `logits` is `[B, S+1]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (batch, classes) = match *x.shape() {
            [k] => (1, k),
            [b, k] => (b, k),
            _ => {
                return Err(VinetError::contract(
                    "softmax_cross_entropy",
                    format!("logits must be 1-D or 2-D, got {:?}", x.shape()),
                ))
            }
        };
        if labels.len() != batch {
            return Err(VinetError::contract(
                "softmax_cross_entropy",
                format!("{} labels for batch of {batch}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(VinetError::contract(
                "softmax_cross_entropy",
                format!("label {bad} out of range 0..{}", classes - 1),
            ));
        }
        let mut probs = Vec::with_capacity(batch * classes);
        let mut loss = 0.0;
        for (row, &label) in x.data().chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            probs.extend(softmax(row));
        }
        let out = Tensor::scalar(loss / batch as f64);
        Ok(self.apply(Box::new(CrossEntropyFn { probs, labels: labels.to_vec(), classes }), &[logits], out))
    }
}
