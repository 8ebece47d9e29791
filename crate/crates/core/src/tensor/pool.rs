use std::hash::Hasher;

use super::graph::{Function, Graph, Var};
use super::shape::{as_nchw, window_out};
use super::Tensor;
use crate::error::{Result, VinetError};

struct MaxPoolFn {
    /// Flat input index that won each output cell.
    argmax: Vec<usize>,
}

impl Function for MaxPoolFn {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut dx = Tensor::zeros(inputs[0].shape());
        let d = dx.data_mut();
        for (&src, gv) in self.argmax.iter().zip(g.data()) {
            d[src] += gv;
        }
        vec![Some(dx)]
    }

    fn branch_key(&self, _: &[&Tensor], state: &mut dyn Hasher) {
        for &i in &self.argmax {
            state.write_usize(i);
        }
    }
}

impl Graph {
    /// Max over `window×window` cells. Ties go to the first cell in
    /// row-major scan order, in both the value and the gradient route.
    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = as_nchw("maxpool2d", x.shape())?;
        if window == 0 || stride == 0 {
            return Err(VinetError::contract("maxpool2d", "window and stride must be positive"));
        }
        if window > h || window > w {
            return Err(VinetError::contract("maxpool2d", format!("window {window} larger than input {h}×{w}")));
        }
        let (ho, wo) = (window_out(h, window, stride, 0), window_out(w, window, stride, 0));
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            if window == 2 && stride == 2 {
                for oh in 0..ho {
                    let r0 = base + 2 * oh * w;
                    for ow in 0..wo {
                        let a = r0 + 2 * ow;
                        let mut best = a;
                        for idx in [a + 1, a + w, a + w + 1] {
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                        out.push(xd[best]);
                        argmax.push(best);
                    }
                }
                continue;
            }
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = base + oh * stride * w + ow * stride;
                    for i in oh * stride..oh * stride + window {
                        for j in ow * stride..ow * stride + window {
                            let idx = base + i * w + j;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let shape = if x.ndim() == 3 { vec![c, ho, wo] } else { vec![n, c, ho, wo] };
        let out = Tensor::new(shape, out)?;
        Ok(self.apply(Box::new(MaxPoolFn { argmax }), &[input], out))
    }
}
