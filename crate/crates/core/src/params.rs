//! Named flat views over parameter containers.
//!
//! Gradients reuse the parameter types themselves, so a gradient for
//! [`GenerativeParams`](crate::model::GenerativeParams) is a
//! `GenerativeParams` with the same shape. Tensor order and names are stable
//! and shared by the optimizer and checkpoint code.

pub struct TensorView<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<TensorView<'_>>;

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// `self += alpha · other`. Shapes must match.
    fn add_scaled(&mut self, alpha: f64, other: &Self) {
        let src = other.tensors();
        for ((_, dst), s) in self.tensors_mut().into_iter().zip(src) {
            assert_eq!(dst.len(), s.data.len(), "shape mismatch in {}", s.name);
            for (d, &v) in dst.iter_mut().zip(s.data) {
                *d += alpha * v;
            }
        }
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name)
    }

    /// All values concatenated in tensor order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }
}
