//! Named parameter tensors and the building blocks (linear, layer norm)
//! that own them.

use crate::linalg::{self, NormCache, Real};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    /// Normal(0, std) truncated at two standard deviations.
    pub fn trunc_normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break T::lit(z * std);
                }
            })
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect() }
    }
}

/// Visits every tensor of a parameter tree in a fixed order.
pub trait Params<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>));

    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t)));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |n, t| out.push((n, t)));
        out
    }

    fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Implements [`Params`] for a struct by listing its tensor fields and
/// nested parameter fields.
macro_rules! impl_params {
    ($ty:ident { $($field:ident),* $(,)? } nested { $($sub:ident),* $(,)? }) => {
        impl<T: $crate::linalg::Real> $crate::params::Params<T> for $ty<T> {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a $crate::params::Tensor<T>)) {
                $( f($crate::params::join(prefix, stringify!($field)), &self.$field); )*
                $( $crate::params::Params::visit(&self.$sub, &$crate::params::join(prefix, stringify!($sub)), f); )*
            }
            fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut $crate::params::Tensor<T>)) {
                $( f($crate::params::join(prefix, stringify!($field)), &mut self.$field); )*
                $( $crate::params::Params::visit_mut(&mut self.$sub, &$crate::params::join(prefix, stringify!($sub)), f); )*
            }
        }
    };
}
pub(crate) use impl_params;

impl<T: Real, P: Params<T>> Params<T> for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Dense layer `y = x W + b`, `W: d_in x d_out`; an empty `b` means no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl_params!(Linear { w, b } nested {});

impl<T: Real> Linear<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear { w: Tensor::zeros(&[d_in, d_out]), b: Tensor::zeros(&[d_out]) }
    }

    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, std: f64, rng: &mut R) -> Self {
        Linear { w: Tensor::trunc_normal(&[d_in, d_out], std, rng), b: Tensor::zeros(&[d_out]) }
    }

    /// Without a bias (stored as an empty tensor).
    pub fn init_unbiased<R: Rng + ?Sized>(d_in: usize, d_out: usize, std: f64, rng: &mut R) -> Self {
        Linear { w: Tensor::trunc_normal(&[d_in, d_out], std, rng), b: Tensor::zeros(&[0]) }
    }

    pub fn zeros_unbiased(d_in: usize, d_out: usize) -> Self {
        Linear { w: Tensor::zeros(&[d_in, d_out]), b: Tensor::zeros(&[0]) }
    }

    pub fn d_in(&self) -> usize {
        self.w.shape[0]
    }

    pub fn d_out(&self) -> usize {
        self.w.shape[1]
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        linalg::linear(x, rows, self.d_in(), &self.w.data, &self.b.data, self.d_out())
    }

    pub fn backward(&self, dy: &[T], x: &[T], rows: usize, grad: &mut Linear<T>) -> Vec<T> {
        linalg::linear_backward(dy, x, rows, self.d_in(), &self.w.data, self.d_out(), &mut grad.w.data, &mut grad.b.data)
    }

    /// Weight-only adjoint: accumulates parameter gradients without
    /// forming `dx`.
    pub fn backward_params(&self, dy: &[T], x: &[T], rows: usize, grad: &mut Linear<T>) {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        linalg::gemm(
            T::one(),
            linalg::View::new(x, rows, d_in).t(),
            linalg::View::new(dy, rows, d_out),
            T::one(),
            &mut grad.w.data,
            d_out,
        );
        for row in dy.chunks_exact(d_out) {
            linalg::add_in_place(&mut grad.b.data, row);
        }
    }
}

/// Layer norm over the channel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm<T> {
    pub g: Tensor<T>,
    pub b: Tensor<T>,
}

impl_params!(Norm { g, b } nested {});

impl<T: Real> Norm<T> {
    pub fn new(dim: usize) -> Self {
        Norm { g: Tensor::filled(&[dim], T::one()), b: Tensor::zeros(&[dim]) }
    }

    pub fn zeros(dim: usize) -> Self {
        Norm { g: Tensor::zeros(&[dim]), b: Tensor::zeros(&[dim]) }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, NormCache<T>) {
        linalg::layer_norm(x, self.g.len(), &self.g.data, &self.b.data)
    }

    pub fn backward(&self, dy: &[T], cache: &NormCache<T>, grad: &mut Norm<T>) -> Vec<T> {
        linalg::layer_norm_backward(dy, cache, self.g.len(), &self.g.data, &mut grad.g.data, &mut grad.b.data)
    }
}

/// Element-wise map over two parameter trees with identical layout.
pub fn zip_mut<T: Real, P: Params<T>>(a: &mut P, b: &P, mut f: impl FnMut(&mut [T], &[T])) {
    let bs = b.named();
    let mut i = 0;
    a.visit_mut("", &mut |name, t| {
        let (bn, bt) = &bs[i];
        debug_assert_eq!(&name, bn);
        f(&mut t.data, &bt.data);
        i += 1;
    });
}
