use std::hash::Hasher;

use super::graph::{Function, Graph, Var};
use super::shape::gemm;
use super::Tensor;
use crate::error::{Result, VinetError};

struct ReluFn;

impl Function for ReluFn {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let data = g.data().iter().zip(inputs[0].data()).map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 }).collect();
        vec![Some(Tensor::new(g.shape().to_vec(), data).expect("same shape"))]
    }

    fn branch_key(&self, inputs: &[&Tensor], state: &mut dyn Hasher) {
        for &x in inputs[0].data() {
            state.write_u8(u8::from(x > 0.0));
        }
    }
}

struct LinearFn {
    batch: usize,
    n_in: usize,
    n_out: usize,
}

impl Function for LinearFn {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (b, ni, no) = (self.batch, self.n_in, self.n_out);
        let (x, w, gd) = (inputs[0].data(), inputs[1].data(), g.data());
        let dx = needs[0].then(|| {
            // dX = G · W
            let mut dx = vec![0.0; b * ni];
            gemm(b, no, ni, gd, (no as isize, 1), w, (ni as isize, 1), 0.0, &mut dx);
            Tensor::new(inputs[0].shape().to_vec(), dx).expect("input shape")
        });
        let dw = needs[1].then(|| {
            // dW = Gᵀ · X
            let mut dw = vec![0.0; no * ni];
            gemm(no, b, ni, gd, (1, no as isize), x, (ni as isize, 1), 0.0, &mut dw);
            Tensor::new(vec![no, ni], dw).expect("weight shape")
        });
        let db = needs[2].then(|| {
            let mut db = vec![0.0; no];
            for row in gd.chunks(no) {
                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            Tensor::from_vec(db)
        });
        vec![dx, dw, db]
    }
}

impl Graph {
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.apply(Box::new(ReluFn), &[x], out)
    }

    /// `y = W·x + b` for `x` of shape `[N_in]` or `[B, N_in]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let &[n_out, n_in] = w.shape() else {
            return Err(VinetError::contract("linear", format!("weight must be 2-D, got {:?}", w.shape())));
        };
        let batch = match *x.shape() {
            [k] if k == n_in => 1,
            [bs, k] if k == n_in => bs,
            _ => {
                return Err(VinetError::contract(
                    "linear",
                    format!("input {:?} does not match weight {:?}", x.shape(), w.shape()),
                ))
            }
        };
        if b.shape() != [n_out] {
            return Err(VinetError::contract("linear", format!("bias {:?} does not match {n_out} outputs", b.shape())));
        }
        let mut y: Vec<f64> = b.data().iter().copied().cycle().take(batch * n_out).collect();
        gemm(batch, n_in, n_out, x.data(), (n_in as isize, 1), w.data(), (1, n_in as isize), 1.0, &mut y);
        let shape = if x.ndim() == 1 { vec![n_out] } else { vec![batch, n_out] };
        let out = Tensor::new(shape, y)?;
        Ok(self.apply(Box::new(LinearFn { batch, n_in, n_out }), &[input, weight, bias], out))
    }
}
