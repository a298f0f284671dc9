//! Named parameter trees.
//!
//! Parameter structs are generic over their slot type: `Tensor<T>` for
//! stored weights, [`Var`](crate::tape::Var) once bound to a tape. Both
//! views walk slots in one canonical order, so a bound tree lines up
//! slot-for-slot with the stored one.

use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub trait ParamTree<P> {
    type With<Q>: ParamTree<Q>;

    fn map_slots<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Self::With<Q>;
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Registers every stored tensor as a gradient-carrying leaf.
pub fn bind<T: Real, S: ParamTree<Tensor<T>>>(params: &S, tape: &mut Tape<T>) -> S::With<Var> {
    params.map_slots(&mut |t| tape.param(t.clone()))
}

/// Flattened `(name, tensor)` list in canonical slot order.
pub fn named<T: Real, S: ParamTree<Tensor<T>>>(params: &S) -> Vec<(String, Tensor<T>)> {
    let mut out = Vec::new();
    params.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

pub fn flatten<T: Real, S: ParamTree<Tensor<T>>>(params: &S) -> Vec<Tensor<T>> {
    named(params).into_iter().map(|(_, t)| t).collect()
}

/// Rebuilds a tree from values listed in canonical slot order.
pub fn rebuild<P, Q: Clone, S: ParamTree<P>>(template: &S, values: &[Q]) -> S::With<Q> {
    let mut it = values.iter();
    let out = template.map_slots(&mut |_| it.next().expect("enough values").clone());
    assert!(it.next().is_none(), "too many values for parameter tree");
    out
}

/// Gradients of a bound tree after backward, in canonical order.
pub fn grads_of<T: Real, S: ParamTree<Var>>(bound: &S, tape: &Tape<T>) -> Vec<Tensor<T>> {
    let mut out = Vec::new();
    bound.visit("", &mut |_, v| {
        out.push(tape.grad(*v).cloned().expect("bound parameter gradient"));
    });
    out
}

pub fn count<P, S: ParamTree<P>>(params: &S) -> usize {
    let mut n = 0;
    params.visit("", &mut |_, _| n += 1);
    n
}

/// Seeded uniform `(-1/√fan_in, 1/√fan_in)` initializer.
pub(crate) fn uniform_init<T: Real>(rng: &mut SplitMix64, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.uniform(-bound, bound)))
}

impl<P, S: ParamTree<P>> ParamTree<P> for Vec<S> {
    type With<Q> = Vec<S::With<Q>>;

    fn map_slots<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Self::With<Q> {
        self.iter().map(|s| s.map_slots(f)).collect()
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P)) {
        for (i, s) in self.iter().enumerate() {
            s.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        for (i, s) in self.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Declares a parameter struct whose fields are slots (`P`) or sub-trees.
macro_rules! param_tree {
    (
        $(#[$meta:meta])*
        pub struct $name:ident<P> {
            $( $(#[$fmeta:meta])* $field:ident : $ty:ty => $kind:ident ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<P> {
            $( $(#[$fmeta])* pub $field: $ty, )*
        }

        impl<P> $crate::params::ParamTree<P> for $name<P> {
            type With<Q> = $name<Q>;

            fn map_slots<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> $name<Q> {
                $name { $( $field: param_tree!(@map self.$field, f, $kind), )* }
            }

            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P)) {
                $( param_tree!(@visit self.$field, prefix, stringify!($field), f, $kind); )*
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
                $( param_tree!(@visit_mut self.$field, prefix, stringify!($field), f, $kind); )*
            }
        }
    };
    (@map $e:expr, $f:ident, slot) => { $f(&$e) };
    (@map $e:expr, $f:ident, tree) => { $crate::params::ParamTree::map_slots(&$e, $f) };
    (@visit $e:expr, $p:ident, $n:expr, $f:ident, slot) => {
        $f(&$crate::params::join($p, $n), &$e)
    };
    (@visit $e:expr, $p:ident, $n:expr, $f:ident, tree) => {
        $crate::params::ParamTree::visit(&$e, &$crate::params::join($p, $n), $f)
    };
    (@visit_mut $e:expr, $p:ident, $n:expr, $f:ident, slot) => {
        $f(&$crate::params::join($p, $n), &mut $e)
    };
    (@visit_mut $e:expr, $p:ident, $n:expr, $f:ident, tree) => {
        $crate::params::ParamTree::visit_mut(&mut $e, &$crate::params::join($p, $n), $f)
    };
}
pub(crate) use param_tree;
