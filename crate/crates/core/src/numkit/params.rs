/// Gradient buffers, one vector per parameter tensor, in the same order as
/// [`Params::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like(shapes: &[usize]) -> Self {
        Grads(shapes.iter().map(|&n| vec![0.0; n]).collect())
    }

    pub fn add_assign(&mut self, other: &Grads) {
        assert_eq!(self.0.len(), other.0.len(), "gradient tensor count mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            assert_eq!(a.len(), b.len(), "gradient shape mismatch");
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|&x| x == 0.0)
    }

    /// Concatenate the tensors of several gradient sets.
    pub fn concat(parts: Vec<Grads>) -> Grads {
        Grads(parts.into_iter().flat_map(|g| g.0).collect())
    }

    /// Split off the first `n` tensors.
    pub fn split_at(mut self, n: usize) -> (Grads, Grads) {
        let rest = self.0.split_off(n);
        (self, Grads(rest))
    }
}

/// Anything that owns trainable tensors.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    fn zero_grads(&self) -> Grads {
        Grads::zeros_like(&self.shapes())
    }

    fn num_params(&self) -> usize {
        self.shapes().iter().sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length mismatch");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// `target <- (1 - rate) * target + rate * online`.
pub fn polyak_update<P: Params + ?Sized>(target: &mut P, online: &P, rate: f64) {
    let src: Vec<Vec<f64>> = online.tensors().iter().map(|t| t.to_vec()).collect();
    for (dst, s) in target.tensors_mut().into_iter().zip(&src) {
        assert_eq!(dst.len(), s.len(), "polyak shape mismatch");
        for (d, &o) in dst.iter_mut().zip(s) {
            *d = (1.0 - rate) * *d + rate * o;
        }
    }
}
