use ndarray::{Array, Dimension};
use sha2::{Digest, Sha256};

/// Visitor over the named, contiguous parameter tensors of a model.
///
/// Gradient buffers use the same type as the model they belong to, so any two
/// values of one type visit their tensors in the same order with the same
/// shapes. The helpers below rely on that.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_array<D: Dimension>(
    prefix: &str,
    name: &str,
    a: &Array<f64, D>,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    let data = a.as_slice().expect("parameter tensors are contiguous");
    f(&join(prefix, name), a.shape(), data);
}

pub(crate) fn visit_array_mut<D: Dimension>(
    prefix: &str,
    name: &str,
    a: &mut Array<f64, D>,
    f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
) {
    let shape = a.shape().to_vec();
    let data = a.as_slice_mut().expect("parameter tensors are contiguous");
    f(&join(prefix, name), &shape, data);
}

impl<T: Params> Params for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, item) in self.iter().enumerate() {
            item.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, item) in self.iter_mut().enumerate() {
            item.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

pub fn zeros_like<M: Params + Clone>(model: &M) -> M {
    let mut out = model.clone();
    out.visit_mut("", &mut |_, _, data| data.fill(0.0));
    out
}

pub fn param_count<M: Params>(model: &M) -> usize {
    let mut n = 0;
    model.visit("", &mut |_, _, data| n += data.len());
    n
}

pub fn flatten<M: Params>(model: &M) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit("", &mut |_, _, data| out.extend_from_slice(data));
    out
}

/// Overwrite every parameter from a flat buffer produced by [`flatten`].
pub fn assign_flat<M: Params>(model: &mut M, values: &[f64]) {
    let mut offset = 0;
    model.visit_mut("", &mut |_, _, data| {
        data.copy_from_slice(&values[offset..offset + data.len()]);
        offset += data.len();
    });
    assert_eq!(offset, values.len(), "flat buffer length does not match model");
}

/// `dst += src`, tensor by tensor.
pub fn add_into<M: Params>(dst: &mut M, src: &M) {
    let flat = flatten(src);
    let mut offset = 0;
    dst.visit_mut("", &mut |_, _, data| {
        let n = data.len();
        for (d, s) in data.iter_mut().zip(&flat[offset..offset + n]) {
            *d += s;
        }
        offset += n;
    });
}

pub fn scale<M: Params>(model: &mut M, factor: f64) {
    model.visit_mut("", &mut |_, _, data| {
        for v in data.iter_mut() {
            *v *= factor;
        }
    });
}

pub fn l2_norm<M: Params>(model: &M) -> f64 {
    let mut sq = 0.0;
    model.visit("", &mut |_, _, data| sq += data.iter().map(|v| v * v).sum::<f64>());
    sq.sqrt()
}

/// Names and shapes of every tensor, in visit order.
pub fn layout<M: Params>(model: &M) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    model.visit("", &mut |name, shape, _| out.push((name.to_string(), shape.to_vec())));
    out
}

/// SHA-256 over tensor names, shapes and the exact bit patterns of the values.
pub fn digest<M: Params>(model: &M) -> String {
    let mut hasher = Sha256::new();
    model.visit("", &mut |name, shape, data| {
        hasher.update(name.as_bytes());
        for &d in shape {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in data {
            hasher.update(v.to_bits().to_le_bytes());
        }
    });
    hex::encode(hasher.finalize())
}
