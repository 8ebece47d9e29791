//! Shape helpers and the small structural ops (reshape, sum, elementwise).

use super::graph::{Function, Graph, Var};
use super::Tensor;
use crate::error::{Result, VinetError};

/// `C×H×W` inputs are treated as a batch of one.
pub(crate) fn as_nchw(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [c, h, w] => Ok([1, c, h, w]),
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(VinetError::contract(op, format!("expected C×H×W or N×C×H×W, got {shape:?}"))),
    }
}

/// Output length of a sliding window along one axis.
pub fn window_out(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

/// C = beta*C + A·B for operands addressed by (row, col) strides; C is dense
/// row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    gemm_strided(m, k, n, a, a_strides, b, b_strides, beta, c, (n as isize, 1));
}

/// [`gemm`] with an explicitly strided C.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
    c_strides: (isize, isize),
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above; callers pass strides describing dense
    // m×k, k×n and m×n layouts inside the given slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            c_strides.0,
            c_strides.1,
        );
    }
}

struct ReshapeFn {
    in_shape: Vec<usize>,
}

impl Function for ReshapeFn {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, g: &Tensor, _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone().reshape(&self.in_shape).expect("same numel"))]
    }
}

struct SumFn;

impl Function for SumFn {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape(), g.item()))]
    }
}

struct MulFn;

impl Function for MulFn {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let prod = |other: &Tensor| {
            let data = g.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
            Tensor::new(g.shape().to_vec(), data).expect("same shape")
        };
        vec![needs[0].then(|| prod(inputs[1])), needs[1].then(|| prod(inputs[0]))]
    }
}

struct AddFn;

impl Function for AddFn {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, g: &Tensor, _: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
    }
}

struct ScaleFn(f64);

impl Function for ScaleFn {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, g: &Tensor, _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.map(|v| v * self.0))]
    }
}

struct GlobalAvgPoolFn {
    nchw: [usize; 4],
}

impl Function for GlobalAvgPoolFn {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let [_, _, h, w] = self.nchw;
        let hw = h * w;
        let scale = 1.0 / hw as f64;
        let mut dx = Tensor::zeros(inputs[0].shape());
        for (plane, gv) in dx.data_mut().chunks_mut(hw).zip(g.data()) {
            plane.fill(gv * scale);
        }
        vec![Some(dx)]
    }
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.apply(Box::new(ReshapeFn { in_shape }), &[x], out))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.apply(Box::new(SumFn), &[x], out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(VinetError::contract("mul", format!("shape mismatch {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.apply(Box::new(MulFn), &[a, b], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(VinetError::contract("add", format!("shape mismatch {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.apply(Box::new(AddFn), &[a, b], out))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.apply(Box::new(ScaleFn(factor)), &[x], out)
    }

    /// Mean over the spatial axes: `N×C×H×W -> N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let nchw = as_nchw("global_avg_pool", self.shape(x))?;
        let [n, c, h, w] = nchw;
        let hw = (h * w) as f64;
        let data = self.value(x).data().chunks(h * w).map(|p| p.iter().sum::<f64>() / hw).collect();
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.apply(Box::new(GlobalAvgPoolFn { nchw }), &[x], out))
    }
}
