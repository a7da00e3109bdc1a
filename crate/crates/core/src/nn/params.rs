//! Named trainable tensors with gradient and Adam moment buffers.

use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
        }
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A flat collection of parameters. Layers hold [`ParamId`] handles into it.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
    pub(crate) adam_step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(ParamTensor::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    /// Scalar count over parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(ParamTensor::len)
            .sum()
    }

    pub fn adam_step_count(&self) -> u64 {
        self.adam_step
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (id, g) in &grads.entries {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm.is_finite() && norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in &mut self.params {
                p.grad.scale(s);
            }
        }
        norm
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.is_finite())
    }

    /// Copies parameter values (not grads or optimizer state) from `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            assert_eq!(a.name, b.name);
            a.value = b.value.clone();
        }
    }
}

/// Sparse parameter gradients produced by one backward pass.
#[derive(Debug, Default, Clone)]
pub struct ParamGrads {
    pub(crate) entries: Vec<(ParamId, Matrix)>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.entries.iter().map(|(i, m)| (*i, m))
    }

    pub fn merge(&mut self, other: ParamGrads) {
        for (id, g) in other.entries {
            match self.entries.iter_mut().find(|(i, _)| *i == id) {
                Some((_, m)) => m.add_assign(&g),
                None => self.entries.push((id, g)),
            }
        }
    }
}

/// Orthogonal initialization: rows (or columns, whichever is fewer) are
/// orthonormal, then scaled by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Matrix {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    // n orthonormal vectors of length m via modified Gram-Schmidt.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            if rows <= cols {
                out[(i, j)] = gain * x;
            } else {
                out[(j, i)] = gain * x;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(4, 9), (9, 4), (5, 5)] {
            let w = orthogonal(r, c, 1.0, &mut rng);
            let gram = if r <= c {
                w.matmul_t(&w).unwrap()
            } else {
                w.transpose().matmul_t(&w.transpose()).unwrap()
            };
            let n = r.min(c);
            assert!(gram.max_abs_diff(&Matrix::identity(n)) < 1e-10);
        }
    }

    #[test]
    fn zero_grads_clears() {
        let mut s = ParamStore::new();
        let id = s.add("w", Matrix::zeros(2, 2));
        s.get_mut(id).grad.fill(3.0);
        s.zero_grads();
        assert!(s.get(id).grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(s.get(id).grad.shape(), s.get(id).value.shape());
    }

    #[test]
    fn clip_grad_norm_rescales() {
        let mut s = ParamStore::new();
        let id = s.add("w", Matrix::zeros(1, 2));
        s.get_mut(id).grad = Matrix::from_rows(&[[30.0, 40.0]]);
        let before = s.clip_grad_norm(10.0);
        assert_eq!(before, 50.0);
        assert!((s.grad_norm() - 10.0).abs() < 1e-12);
    }
}
