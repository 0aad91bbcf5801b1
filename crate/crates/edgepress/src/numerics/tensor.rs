use crate::error::{Error, Result};
use crate::exec;

/// Dense row-major tensor of 64-bit floats.
///
/// Invariants: `data.len() == shape.iter().product()` and every value is
/// finite after each public operation.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite value {bad}")));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Number of rows when viewed as a 2-d tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() needs a 2-d tensor");
        self.shape[0]
    }

    /// Number of columns when viewed as a 2-d tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a 2-d tensor");
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    /// Gather rows by index into a new tensor.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor { shape: vec![idx.len(), c], data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_in_place(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `A · Bᵀ` for `A: [m,k]`, `B: [n,k]`. Row-by-row dot products keep
    /// both operands contiguous; rows run in parallel.
    pub fn matmul_nt(&self, b: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || b.shape.len() != 2 || self.shape[1] != b.shape[1] {
            return Err(Error::ShapeMismatch(format!(
                "matmul_nt {:?} x {:?}",
                self.shape, b.shape
            )));
        }
        let (m, n, k) = (self.shape[0], b.shape[0], self.shape[1]);
        let rows = exec::map_range(m, |i| {
            let ai = self.row(i);
            let mut out = vec![0.0; n];
            for (j, oj) in out.iter_mut().enumerate() {
                *oj = dot(ai, &b.data[j * k..(j + 1) * k]);
            }
            out
        });
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            data.extend_from_slice(&r);
        }
        Ok(Tensor { shape: vec![m, n], data })
    }

    /// `A · B` for `A: [m,k]`, `B: [k,n]`.
    pub fn matmul_nn(&self, b: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || b.shape.len() != 2 || self.shape[1] != b.shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "matmul_nn {:?} x {:?}",
                self.shape, b.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], b.shape[1]);
        let rows = exec::map_range(m, |i| {
            let ai = self.row(i);
            let mut out = vec![0.0; n];
            for (p, &a) in ai.iter().enumerate().take(k) {
                let brow = &b.data[p * n..(p + 1) * n];
                for (o, &bv) in out.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
            out
        });
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            data.extend_from_slice(&r);
        }
        Ok(Tensor { shape: vec![m, n], data })
    }

    /// `Aᵀ · B` for `A: [k,m]`, `B: [k,n]` (reduction over the shared
    /// leading axis). Output rows run in parallel.
    pub fn matmul_tn(&self, b: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || b.shape.len() != 2 || self.shape[0] != b.shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "matmul_tn {:?} x {:?}",
                self.shape, b.shape
            )));
        }
        let (k, m, n) = (self.shape[0], self.shape[1], b.shape[1]);
        let rows = exec::map_range(m, |i| {
            let mut out = vec![0.0; n];
            for p in 0..k {
                let a = self.data[p * m + i];
                if a == 0.0 {
                    continue;
                }
                let brow = &b.data[p * n..(p + 1) * n];
                for (o, &bv) in out.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
            out
        });
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            data.extend_from_slice(&r);
        }
        Ok(Tensor { shape: vec![m, n], data })
    }

    /// Matrix-vector product for a 2-d tensor.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.shape.len() != 2 || self.shape[1] != x.len() {
            return Err(Error::ShapeMismatch(format!("matvec {:?} x {}", self.shape, x.len())));
        }
        Ok((0..self.shape[0]).map(|i| dot(self.row(i), x)).collect())
    }

    /// Add a row vector to every row.
    pub fn add_row_vec(&mut self, v: &[f64]) -> Result<()> {
        if self.shape.len() != 2 || self.shape[1] != v.len() {
            return Err(Error::ShapeMismatch(format!("add_row_vec {:?} + {}", self.shape, v.len())));
        }
        for r in 0..self.shape[0] {
            for (a, b) in self.row_mut(r).iter_mut().zip(v) {
                *a += b;
            }
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_shape_and_finiteness() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::NAN]).is_err());
        let t = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let nn = a.matmul_nn(&b).unwrap();
        assert_eq!(nn.data(), &[58.0, 64.0, 139.0, 154.0]);
        // A·B == A·(Bᵀ)ᵀ via matmul_nt
        let bt = Tensor::from_vec(&[2, 3], vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]).unwrap();
        let nt = a.matmul_nt(&bt).unwrap();
        assert_eq!(nn, nt);
        // Aᵀ·C through matmul_tn matches manual computation
        let c = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let tn = a.matmul_tn(&c).unwrap();
        assert_eq!(tn.shape(), &[3, 2]);
        assert_eq!(tn.at(0, 0), 1.0 * 1.0 + 4.0 * 3.0);
        assert_eq!(tn.at(2, 1), 3.0 * 2.0 + 6.0 * 4.0);
    }

    #[test]
    fn gather_rows_copies_in_order() {
        let t = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = t.gather_rows(&[2, 0]);
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0]);
    }
}
