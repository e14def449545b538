//! Dense vector primitives shared by every module.
//!
//! Distances are plain (non-squared) L2 unless a function name says
//! otherwise; accumulation order is fixed (sequential over dimensions) so
//! that repeated evaluation of the same operands is bit-identical.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::scalar::Scalar;

/// A token's last-layer representation.
pub type ContextVector<T> = Vec<T>;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

pub fn squared_l2<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

pub fn l2_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    squared_l2(a, b).sqrt()
}

pub fn l2_norm<T: Scalar>(a: &[T]) -> T {
    let mut acc = T::zero();
    for &x in a {
        acc += x * x;
    }
    acc.sqrt()
}

/// Scale `v` to unit L2 norm. A zero vector is left untouched except for a
/// deterministic unit in the first coordinate, so callers can rely on the
/// unit-norm invariant.
pub fn normalize<T: Scalar>(v: &mut [T]) {
    let norm = l2_norm(v);
    if norm > T::zero() {
        for x in v.iter_mut() {
            *x /= norm;
        }
    } else if !v.is_empty() {
        v[0] = T::one();
    }
}

/// Arithmetic mean of a non-empty set of equal-length vectors, accumulated
/// in f64 for stability.
pub fn mean<T: Scalar, V: AsRef<[T]>>(vectors: &[V]) -> ContextVector<T> {
    assert!(!vectors.is_empty(), "mean of zero vectors");
    let dim = vectors[0].as_ref().len();
    let mut acc = vec![0.0f64; dim];
    for v in vectors {
        let v = v.as_ref();
        debug_assert_eq!(v.len(), dim);
        for i in 0..dim {
            acc[i] += v[i].as_f64();
        }
    }
    let n = vectors.len() as f64;
    acc.into_iter().map(|x| T::from_f64_lossy(x / n)).collect()
}

/// One scored candidate; orders ascending by `(dist, id)` so equal
/// distances resolve to the lower id everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<T> {
    pub dist: T,
    pub id: u64,
}

impl<T: Scalar> Eq for Hit<T> {}

impl<T: Scalar> PartialOrd for Hit<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Hit<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Inputs are finite by module invariants.
        self.dist
            .partial_cmp(&other.dist)
            .expect("finite distances")
            .then(self.id.cmp(&other.id))
    }
}

/// Exact top-k of a candidate stream under the `(dist, id)` order, returned
/// ascending. Equivalent to sorting the whole stream and truncating.
pub fn top_k<T: Scalar>(candidates: impl Iterator<Item = Hit<T>>, k: usize) -> Vec<Hit<T>> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Hit<T>> = BinaryHeap::new();
    for hit in candidates {
        if heap.len() < k {
            heap.push(hit);
        } else if let Some(worst) = heap.peek() {
            if hit < *worst {
                heap.pop();
                heap.push(hit);
            }
        }
    }
    heap.into_sorted_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_matches_full_sort() {
        let data: Vec<Hit<f32>> = vec![
            Hit { dist: 0.5, id: 3 },
            Hit { dist: 0.1, id: 9 },
            Hit { dist: 0.5, id: 1 },
            Hit { dist: 0.9, id: 0 },
            Hit { dist: 0.1, id: 2 },
        ];
        let mut sorted = data.clone();
        sorted.sort();
        let got = top_k(data.into_iter(), 3);
        assert_eq!(got, sorted[..3].to_vec());
        // Equal distances broke toward the lower id.
        assert_eq!(got[0].id, 2);
        assert_eq!(got[1].id, 9);
    }

    #[test]
    fn normalize_unit_and_zero() {
        let mut v = vec![3.0f64, 4.0];
        normalize(&mut v);
        assert!((l2_norm(&v) - 1.0).abs() < 1e-12);

        let mut z = vec![0.0f64, 0.0];
        normalize(&mut z);
        assert_eq!(z, vec![1.0, 0.0]);
    }

    #[test]
    fn mean_is_componentwise() {
        let m = mean::<f32, _>(&[vec![0.0f32, 2.0], vec![2.0, 4.0]]);
        assert_eq!(m, vec![1.0, 3.0]);
    }
}
