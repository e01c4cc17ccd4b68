use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Dense N-dimensional array of `f64`, row-major. Activations use NCHW.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {n} values, buffer has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_matrix(m: Matrix) -> Self {
        let shape = vec![m.rows(), m.cols()];
        Tensor {
            shape,
            data: m.into_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
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

    /// Reinterpret with a new shape. Moves the buffer; never copies.
    pub fn reshape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data)
    }

    /// View a 2-D tensor as a matrix (moves the buffer).
    pub fn into_matrix(self) -> Result<Matrix> {
        match self.shape[..] {
            [r, c] => Matrix::from_vec(r, c, self.data),
            _ => Err(Error::shape(format!(
                "expected a 2-D tensor, got {:?}",
                self.shape
            ))),
        }
    }

    /// Flatten all trailing dimensions: `[N, ...] -> N x rest` matrix.
    pub fn into_batch_matrix(self) -> Result<Matrix> {
        let n = *self
            .shape
            .first()
            .ok_or_else(|| Error::shape("scalar tensor has no batch axis"))?;
        let rest = self.data.len().checked_div(n).unwrap_or(0);
        Matrix::from_vec(n, rest, self.data)
    }

    /// `(N, C, H, W)` of a 4-D tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected NCHW tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `[start, start + count)` along the leading axis.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Tensor> {
        let n = *self.shape.first().unwrap_or(&0);
        if start + count > n {
            return Err(Error::shape(format!(
                "batch slice {start}..{} out of {n}",
                start + count
            )));
        }
        let stride = self.data.len().checked_div(n).unwrap_or(0);
        let mut shape = self.shape.clone();
        shape[0] = count;
        Tensor::new(
            shape,
            self.data[start * stride..(start + count) * stride].to_vec(),
        )
    }

    /// Gather entries of the leading axis in the given order.
    pub fn gather_batch(&self, indices: &[usize]) -> Result<Tensor> {
        let n = *self.shape.first().unwrap_or(&0);
        let stride = self.data.len().checked_div(n).unwrap_or(0);
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= n {
                return Err(Error::shape(format!("batch index {i} out of {n}")));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_buffer() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn reshape_moves_the_buffer() {
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let ptr = t.data().as_ptr();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.data().as_ptr(), ptr);
        assert_eq!(r.shape(), &[3, 2]);
        assert!(r.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn gather_and_slice() {
        let t = Tensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.slice_batch(1, 2).unwrap().data(), &[2.0, 3.0, 4.0, 5.0]);
        assert_eq!(
            t.gather_batch(&[2, 0]).unwrap().data(),
            &[4.0, 5.0, 0.0, 1.0]
        );
        assert!(t.gather_batch(&[3]).is_err());
    }
}
