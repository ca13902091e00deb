//! Minimal dense-network plumbing shared by the predictor and the entropy model:
//! a flat parameter store with named segments, linear-layer kernels, and AdamW.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub decay: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub data: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { data: Vec::new(), segments: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, decay: bool) -> usize {
        let offset = self.data.len();
        let seg = Segment { name: name.into(), shape, offset, decay };
        self.data.resize(offset + seg.len(), 0.0);
        self.segments.push(seg);
        self.segments.len() - 1
    }

    pub fn range(&self, id: usize) -> std::ops::Range<usize> {
        let s = &self.segments[id];
        s.offset..s.offset + s.len()
    }

    pub fn seg(&self, id: usize) -> &[f64] {
        &self.data[self.range(id)]
    }

    pub fn seg_mut(&mut self, id: usize) -> &mut [f64] {
        let r = self.range(id);
        &mut self.data[r]
    }

    pub fn fill_normal<R: Rng>(&mut self, id: usize, std: f64, rng: &mut R) {
        for v in self.seg_mut(id) {
            let z: f64 = StandardNormal.sample(rng);
            *v = z * std;
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Round every parameter to f32 precision (what the bitstream stores).
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Dimension table followed by f32 LE data, segment by segment.
    pub fn write_table(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.segments.len() as u32).to_le_bytes());
        for s in &self.segments {
            out.push(s.shape.len() as u8);
            for &d in &s.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }

    /// Read values into an already shaped store; the table must match its segment shapes.
    pub fn read_table(&mut self, bytes: &[u8]) -> Result<usize> {
        let mut r = crate::codec::wire::Reader::new(bytes);
        let n = r.u32()? as usize;
        if n != self.segments.len() {
            return Err(Error::corrupt(format!(
                "model table has {n} arrays, expected {}",
                self.segments.len()
            )));
        }
        for s in &self.segments {
            let nd = r.u8()? as usize;
            let mut shape = Vec::with_capacity(nd);
            for _ in 0..nd {
                shape.push(r.u32()? as usize);
            }
            if shape != s.shape {
                return Err(Error::corrupt(format!(
                    "model array `{}` has shape {:?}, expected {:?}",
                    s.name, shape, s.shape
                )));
            }
        }
        for v in &mut self.data {
            let x = f32::from_le_bytes(r.array()?);
            if !x.is_finite() {
                return Err(Error::corrupt("non-finite model parameter"));
            }
            *v = x as f64;
        }
        Ok(r.pos())
    }

    pub fn table_len(&self) -> usize {
        4 + self.segments.iter().map(|s| 1 + 4 * s.shape.len()).sum::<usize>() + 4 * self.data.len()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// `y = W x + b` with `W` row-major `[out, in]`.
#[inline]
pub fn linear(w: &[f64], b: Option<&[f64]>, x: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let mut acc = b.map_or(0.0, |b| b[o]);
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *yo = acc;
    }
}

/// Accumulate gradients of `y = W x + b`: `gW += dy xᵀ`, `gb += dy`, `dx += Wᵀ dy`.
#[inline]
pub fn linear_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    gw: &mut [f64],
    gb: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (o, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for (g, xi) in grow.iter_mut().zip(x) {
            *g += d * xi;
        }
    }
    if let Some(gb) = gb {
        for (g, d) in gb.iter_mut().zip(dy) {
            *g += d;
        }
    }
    if let Some(dx) = dx {
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            for (g, wi) in dx.iter_mut().zip(row) {
                *g += d * wi;
            }
        }
    }
}

/// Two disjoint mutable views of `v`.
pub fn split_two(v: &mut [f64], a: std::ops::Range<usize>, b: std::ops::Range<usize>) -> (&mut [f64], &mut [f64]) {
    assert!(a.end <= b.start || b.end <= a.start, "ranges overlap");
    if a.start < b.start {
        let (lo, hi) = v.split_at_mut(b.start);
        (&mut lo[a], &mut hi[..b.end - b.start])
    } else {
        let (lo, hi) = v.split_at_mut(a.start);
        (&mut hi[..a.end - a.start], &mut lo[b])
    }
}

/// Scale `grads` so their global L2 norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads {
            *g *= s;
        }
    }
    norm
}

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for seg in &params.segments {
            let decay = if seg.decay { lr * self.weight_decay } else { 0.0 };
            for k in seg.offset..seg.offset + seg.len() {
                let g = grads[k];
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
                let mh = self.m[k] / bc1;
                let vh = self.v[k] / bc2;
                let p = &mut params.data[k];
                *p -= decay * *p;
                *p -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Linear warmup followed by cosine decay to zero at `total`.
pub fn lr_at(step: usize, base: f64, warmup: usize, total: usize) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup.min(step)) as f64 / span).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_backward_matches_finite_differences() {
        let w = vec![0.3, -1.2, 0.5, 2.0, 0.1, -0.7];
        let b = vec![0.05, -0.2];
        let x = vec![1.0, -0.5, 0.25];
        let loss = |w: &[f64], x: &[f64]| {
            let mut y = [0.0; 2];
            linear(w, Some(&b), x, &mut y);
            y[0] * y[0] + 3.0 * y[1]
        };
        let mut y = [0.0; 2];
        linear(&w, Some(&b), &x, &mut y);
        let dy = [2.0 * y[0], 3.0];
        let mut gw = vec![0.0; 6];
        let mut dx = vec![0.0; 3];
        linear_backward(&w, &x, &dy, &mut gw, None, Some(&mut dx));
        let h = 1e-6;
        for k in 0..6 {
            let (mut a, mut c) = (w.clone(), w.clone());
            a[k] += h;
            c[k] -= h;
            assert!(((loss(&a, &x) - loss(&c, &x)) / (2.0 * h) - gw[k]).abs() < 1e-7);
        }
        for k in 0..3 {
            let (mut a, mut c) = (x.clone(), x.clone());
            a[k] += h;
            c[k] -= h;
            assert!(((loss(&w, &a) - loss(&w, &c)) / (2.0 * h) - dx[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn schedule_shape() {
        assert!((lr_at(0, 1.0, 10, 100) - 0.1).abs() < 1e-12);
        assert!((lr_at(9, 1.0, 10, 100) - 1.0).abs() < 1e-12);
        assert!((lr_at(10, 1.0, 10, 100) - 1.0).abs() < 1e-12);
        assert!(lr_at(100, 1.0, 10, 100).abs() < 1e-12);
    }

    #[test]
    fn table_round_trip() {
        let mut p = ParamStore::new();
        let a = p.add("a", vec![2, 3], true);
        p.add("b", vec![4], false);
        p.seg_mut(a).copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        let mut bytes = Vec::new();
        p.write_table(&mut bytes);
        assert_eq!(bytes.len(), p.table_len());
        let mut q = p.clone();
        q.data.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(q.read_table(&bytes).unwrap(), bytes.len());
        assert_eq!(p, q);
    }
}
