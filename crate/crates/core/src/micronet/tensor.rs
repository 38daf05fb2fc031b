use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type of the network (`f32` for training, `f64` for gradient checks).
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C <- alpha * A * B + beta * C` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// `n x c x h x w` grid, row-major, with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    dims: [usize; 4],
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            values: vec![T::zero(); dims.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(dims: [usize; 4], values: Vec<T>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} need {} values, got {}",
                dims,
                dims.iter().product::<usize>(),
                values.len()
            )));
        }
        Ok(Self {
            dims,
            values,
            grad: None,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Allocates (or clears) the gradient buffer.
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = T::zero()),
            None => self.grad = Some(vec![T::zero(); self.values.len()]),
        }
    }

    /// Values and gradient buffer together, allocating the latter if needed.
    pub fn split_mut(&mut self) -> (&mut [T], &mut [T]) {
        if self.grad.is_none() {
            self.zero_grad();
        }
        (&mut self.values, self.grad.as_mut().unwrap())
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.dims[1] * self.dims[2] * self.dims[3];
        &self.values[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.values[i * s..(i + 1) * s]
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }

    /// Concatenates along the batch axis.
    pub fn stack(parts: &[Tensor4<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyDataset)?;
        let [_, c, h, w] = first.dims;
        let mut values = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.dims[1..] != [c, h, w] {
                return Err(Error::ShapeMismatch(format!(
                    "cannot stack {:?} onto {:?}",
                    p.dims, first.dims
                )));
            }
            values.extend_from_slice(&p.values);
            n += p.dims[0];
        }
        Self::from_vec([n, c, h, w], values)
    }
}
