//! Differentiable tensor operations.
//!
//! Each op computes its output eagerly and, when gradients are enabled and
//! any input participates in differentiation, attaches a backward closure
//! that maps the output adjoint to parent adjoints.

use super::tensor::{grad_enabled, Node, Tensor};
use crate::error::{Error, Result};

fn node_if_needed(parents: Vec<Tensor>, backward: impl Fn(&[f64]) + 'static) -> Option<Node> {
    if grad_enabled() && parents.iter().any(|p| p.requires_grad()) {
        Some(Node {
            parents,
            backward: Box::new(backward),
        })
    } else {
        None
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Splits a shape into (outer, len, inner) strides around `axis`.
fn axis_strides(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, len, inner))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        let node = node_if_needed(vec![pa.clone(), pb.clone()], move |g| {
            pa.accumulate_grad(g);
            pb.accumulate_grad(g);
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, node))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "sub")?;
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        let node = node_if_needed(vec![pa.clone(), pb.clone()], move |g| {
            pa.accumulate_grad(g);
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            pb.accumulate_grad(&neg);
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, node))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        let node = node_if_needed(vec![pa.clone(), pb.clone()], move |g| {
            let da: Vec<f64> = g.iter().zip(pb.data().iter()).map(|(g, b)| g * b).collect();
            let db: Vec<f64> = g.iter().zip(pa.data().iter()).map(|(g, a)| g * a).collect();
            pa.accumulate_grad(&da);
            pb.accumulate_grad(&db);
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, node))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "div")?;
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a / b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        let node = node_if_needed(vec![pa.clone(), pb.clone()], move |g| {
            let a = pa.data();
            let b = pb.data();
            let da: Vec<f64> = g.iter().zip(b.iter()).map(|(g, b)| g / b).collect();
            let db: Vec<f64> = g
                .iter()
                .zip(a.iter().zip(b.iter()))
                .map(|(g, (a, b))| -g * a / (b * b))
                .collect();
            drop(a);
            drop(b);
            pa.accumulate_grad(&da);
            pb.accumulate_grad(&db);
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, node))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| scale * v + shift).collect();
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let da: Vec<f64> = g.iter().map(|v| scale * v).collect();
            pa.accumulate_grad(&da);
        });
        Tensor::from_op(self.shape().to_vec(), out, node)
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    /// Matrix product `[n,k] x [k,m] -> [n,m]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        {
            let a = self.data();
            let b = rhs.data();
            for i in 0..n {
                for t in 0..k {
                    let ait = a[i * k + t];
                    if ait == 0.0 {
                        continue;
                    }
                    let brow = &b[t * m..(t + 1) * m];
                    let orow = &mut out[i * m..(i + 1) * m];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += ait * bv;
                    }
                }
            }
        }
        let (pa, pb) = (self.clone(), rhs.clone());
        let node = node_if_needed(vec![pa.clone(), pb.clone()], move |g| {
            let a = pa.data();
            let b = pb.data();
            // dA = G B^T
            let mut da = vec![0.0; n * k];
            for i in 0..n {
                for t in 0..k {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += g[i * m + j] * b[t * m + j];
                    }
                    da[i * k + t] = acc;
                }
            }
            // dB = A^T G
            let mut db = vec![0.0; k * m];
            for t in 0..k {
                for i in 0..n {
                    let ait = a[i * k + t];
                    if ait == 0.0 {
                        continue;
                    }
                    let grow = &g[i * m..(i + 1) * m];
                    let drow = &mut db[t * m..(t + 1) * m];
                    for (d, gv) in drow.iter_mut().zip(grow) {
                        *d += ait * gv;
                    }
                }
            }
            drop(a);
            drop(b);
            pa.accumulate_grad(&da);
            pb.accumulate_grad(&db);
        });
        Ok(Tensor::from_op(vec![n, m], out, node))
    }

    /// `[n,k] x [m,k]^T -> [n,m]`; pairwise dot products of rows.
    pub fn matmul_nt(&self, rhs: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape(format!("matmul_nt: {sa:?} x {sb:?}^T")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; n * m];
        {
            let a = self.data();
            let b = rhs.data();
            for i in 0..n {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..m {
                    let brow = &b[j * k..(j + 1) * k];
                    out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            }
        }
        let (pa, pb) = (self.clone(), rhs.clone());
        let node = node_if_needed(vec![pa.clone(), pb.clone()], move |g| {
            let a = pa.data();
            let b = pb.data();
            // dA = G B, dB = G^T A
            let mut da = vec![0.0; n * k];
            let mut db = vec![0.0; m * k];
            for i in 0..n {
                for j in 0..m {
                    let gij = g[i * m + j];
                    if gij == 0.0 {
                        continue;
                    }
                    for t in 0..k {
                        da[i * k + t] += gij * b[j * k + t];
                        db[j * k + t] += gij * a[i * k + t];
                    }
                }
            }
            drop(a);
            drop(b);
            pa.accumulate_grad(&da);
            pb.accumulate_grad(&db);
        });
        Ok(Tensor::from_op(vec![n, m], out, node))
    }

    /// Adds a `[d]` bias to every length-`d` lane of the last axis.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let d = *self.shape().last().ok_or_else(|| Error::shape("add_bias on rank-0"))?;
        if bias.shape() != [d] {
            return Err(Error::shape(format!(
                "add_bias: feature dim {d}, bias {:?}",
                bias.shape()
            )));
        }
        let out: Vec<f64> = {
            let b = bias.data();
            self.data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + b[i % d])
                .collect()
        };
        let (pa, pb) = (self.clone(), bias.clone());
        let node = node_if_needed(vec![pa.clone(), pb.clone()], move |g| {
            pa.accumulate_grad(g);
            let mut db = vec![0.0; d];
            for (i, gv) in g.iter().enumerate() {
                db[i % d] += gv;
            }
            pb.accumulate_grad(&db);
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, node))
    }

    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v.max(0.0)).collect();
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let a = pa.data();
            let da: Vec<f64> = g
                .iter()
                .zip(a.iter())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            drop(a);
            pa.accumulate_grad(&da);
        });
        Tensor::from_op(self.shape().to_vec(), out, node)
    }

    /// Exact-erf Gaussian error linear unit.
    pub fn gelu(&self) -> Tensor {
        const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
        let out: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + libm::erf(x * INV_SQRT2)))
            .collect();
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let a = pa.data();
            let da: Vec<f64> = g
                .iter()
                .zip(a.iter())
                .map(|(g, &x)| {
                    let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT2));
                    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                    g * (cdf + x * pdf)
                })
                .collect();
            drop(a);
            pa.accumulate_grad(&da);
        });
        Tensor::from_op(self.shape().to_vec(), out, node)
    }

    pub fn sigmoid(&self) -> Tensor {
        let out: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let pa = self.clone();
        let saved = out.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let da: Vec<f64> = g
                .iter()
                .zip(saved.iter())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            pa.accumulate_grad(&da);
        });
        Tensor::from_op(self.shape().to_vec(), out, node)
    }

    pub fn abs(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v.abs()).collect();
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let a = pa.data();
            let da: Vec<f64> = g
                .iter()
                .zip(a.iter())
                .map(|(g, x)| match x.partial_cmp(&0.0) {
                    Some(std::cmp::Ordering::Greater) => *g,
                    Some(std::cmp::Ordering::Less) => -*g,
                    _ => 0.0,
                })
                .collect();
            drop(a);
            pa.accumulate_grad(&da);
        });
        Tensor::from_op(self.shape().to_vec(), out, node)
    }

    /// Natural logarithm; caller guarantees positive inputs (clamp first).
    pub fn ln(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v.ln()).collect();
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let a = pa.data();
            let da: Vec<f64> = g.iter().zip(a.iter()).map(|(g, x)| g / x).collect();
            drop(a);
            pa.accumulate_grad(&da);
        });
        Tensor::from_op(self.shape().to_vec(), out, node)
    }

    /// Elementwise power with constant exponent; inputs must stay in the
    /// domain where `x^e` is differentiable.
    pub fn pow_scalar(&self, e: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v.powf(e)).collect();
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let a = pa.data();
            let da: Vec<f64> = g
                .iter()
                .zip(a.iter())
                .map(|(g, x)| g * e * x.powf(e - 1.0))
                .collect();
            drop(a);
            pa.accumulate_grad(&da);
        });
        Tensor::from_op(self.shape().to_vec(), out, node)
    }

    /// Clamp to `[lo, hi]`; gradient passes through only where no clamping
    /// occurred.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let a = pa.data();
            let da: Vec<f64> = g
                .iter()
                .zip(a.iter())
                .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                .collect();
            drop(a);
            pa.accumulate_grad(&da);
        });
        Tensor::from_op(self.shape().to_vec(), out, node)
    }

    /// Numerically stabilized softmax along `axis`: shifts by the lane max
    /// before exponentiation so large logits cannot overflow.
    pub fn softmax_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_strides(self.shape(), axis)?;
        let mut out = vec![0.0; self.numel()];
        {
            let a = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..len {
                        mx = mx.max(a[base + j * inner]);
                    }
                    let mut sum = 0.0;
                    for j in 0..len {
                        let e = (a[base + j * inner] - mx).exp();
                        out[base + j * inner] = e;
                        sum += e;
                    }
                    for j in 0..len {
                        out[base + j * inner] /= sum;
                    }
                }
            }
        }
        let pa = self.clone();
        let saved = out.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let mut da = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = 0.0;
                    for j in 0..len {
                        let idx = base + j * inner;
                        dot += g[idx] * saved[idx];
                    }
                    for j in 0..len {
                        let idx = base + j * inner;
                        da[idx] = saved[idx] * (g[idx] - dot);
                    }
                }
            }
            pa.accumulate_grad(&da);
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, node))
    }

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            pa.accumulate_grad(&vec![g[0]; n]);
        });
        Tensor::from_op(vec![1], vec![s], node)
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum::<f64>() / n as f64;
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            pa.accumulate_grad(&vec![g[0] / n as f64; n]);
        });
        Tensor::from_op(vec![1], vec![s], node)
    }

    /// Sums out one axis, dropping it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_strides(self.shape(), axis)?;
        let mut out = vec![0.0; outer * inner];
        {
            let a = self.data();
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        out[o * inner + i] += a[o * len * inner + j * inner + i];
                    }
                }
            }
        }
        let mut shape: Vec<usize> = self.shape().to_vec();
        shape.remove(axis);
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let mut da = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        da[o * len * inner + j * inner + i] = g[o * inner + i];
                    }
                }
            }
            pa.accumulate_grad(&da);
        });
        Ok(Tensor::from_op(shape, out, node))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            pa.accumulate_grad(g);
        });
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), node))
    }

    /// Concatenates two rank-2 tensors along the feature (last) axis.
    pub fn concat_features(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shape(format!("concat_features: {sa:?} | {sb:?}")));
        }
        let (n, da, db) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * (da + db)];
        {
            let a = self.data();
            let b = other.data();
            for i in 0..n {
                out[i * (da + db)..i * (da + db) + da].copy_from_slice(&a[i * da..(i + 1) * da]);
                out[i * (da + db) + da..(i + 1) * (da + db)]
                    .copy_from_slice(&b[i * db..(i + 1) * db]);
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        let node = node_if_needed(vec![pa.clone(), pb.clone()], move |g| {
            let mut ga = vec![0.0; n * da];
            let mut gb = vec![0.0; n * db];
            for i in 0..n {
                ga[i * da..(i + 1) * da].copy_from_slice(&g[i * (da + db)..i * (da + db) + da]);
                gb[i * db..(i + 1) * db]
                    .copy_from_slice(&g[i * (da + db) + da..(i + 1) * (da + db)]);
            }
            pa.accumulate_grad(&ga);
            pb.accumulate_grad(&gb);
        });
        Ok(Tensor::from_op(vec![n, da + db], out, node))
    }

    /// Row gather from a rank-2 tensor: `out[i] = self[rows[i]]`.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(Error::shape(format!(
                "gather_rows expects rank 2, got {:?}",
                self.shape()
            )));
        }
        let (s, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= s) {
            return Err(Error::contract(format!(
                "gather_rows index {bad} out of range {s}"
            )));
        }
        let n = rows.len();
        let mut out = vec![0.0; n * d];
        {
            let a = self.data();
            for (i, &r) in rows.iter().enumerate() {
                out[i * d..(i + 1) * d].copy_from_slice(&a[r * d..(r + 1) * d]);
            }
        }
        let pa = self.clone();
        let rows = rows.to_vec();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let mut da = vec![0.0; s * d];
            for (i, &r) in rows.iter().enumerate() {
                for c in 0..d {
                    da[r * d + c] += g[i * d + c];
                }
            }
            pa.accumulate_grad(&da);
        });
        Ok(Tensor::from_op(vec![n, d], out, node))
    }

    /// Grouped gather: source `[s,d]`, flat indices of length `n*k`, output
    /// `[n,k,d]` with `out[i][j] = self[idx[i*k+j]]`.
    pub fn gather_groups(&self, idx: &[usize], n: usize, k: usize) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(Error::shape(format!(
                "gather_groups expects rank 2, got {:?}",
                self.shape()
            )));
        }
        if idx.len() != n * k {
            return Err(Error::shape(format!(
                "gather_groups: {} indices for {n}x{k} groups",
                idx.len()
            )));
        }
        let (s, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&r| r >= s) {
            return Err(Error::contract(format!(
                "gather_groups index {bad} out of range {s}"
            )));
        }
        let mut out = vec![0.0; n * k * d];
        {
            let a = self.data();
            for (g, &r) in idx.iter().enumerate() {
                out[g * d..(g + 1) * d].copy_from_slice(&a[r * d..(r + 1) * d]);
            }
        }
        let pa = self.clone();
        let idx = idx.to_vec();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let mut da = vec![0.0; s * d];
            for (gi, &r) in idx.iter().enumerate() {
                for c in 0..d {
                    da[r * d + c] += g[gi * d + c];
                }
            }
            pa.accumulate_grad(&da);
        });
        Ok(Tensor::from_op(vec![n, k, d], out, node))
    }

    /// Weighted row combination: `out[i] = sum_j w[i*k+j] * self[idx[i*k+j]]`.
    /// Weights are fixed coefficients (not differentiated).
    pub fn weighted_rows(&self, idx: &[usize], w: &[f64], n: usize, k: usize) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(Error::shape(format!(
                "weighted_rows expects rank 2, got {:?}",
                self.shape()
            )));
        }
        if idx.len() != n * k || w.len() != n * k {
            return Err(Error::shape("weighted_rows: index/weight length".into()));
        }
        let (s, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&r| r >= s) {
            return Err(Error::contract(format!(
                "weighted_rows index {bad} out of range {s}"
            )));
        }
        let mut out = vec![0.0; n * d];
        {
            let a = self.data();
            for i in 0..n {
                for j in 0..k {
                    let r = idx[i * k + j];
                    let wj = w[i * k + j];
                    for c in 0..d {
                        out[i * d + c] += wj * a[r * d + c];
                    }
                }
            }
        }
        let pa = self.clone();
        let (idx, w) = (idx.to_vec(), w.to_vec());
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let mut da = vec![0.0; s * d];
            for i in 0..n {
                for j in 0..k {
                    let r = idx[i * k + j];
                    let wj = w[i * k + j];
                    for c in 0..d {
                        da[r * d + c] += wj * g[i * d + c];
                    }
                }
            }
            pa.accumulate_grad(&da);
        });
        Ok(Tensor::from_op(vec![n, d], out, node))
    }

    /// Elementwise max over the middle (neighbor) axis of a `[n,k,d]` tensor.
    /// Ties route the gradient to the first maximal neighbor.
    pub fn maxpool_groups(&self) -> Result<Tensor> {
        let sh = self.shape();
        if sh.len() != 3 {
            return Err(Error::shape(format!(
                "maxpool_groups expects rank 3, got {sh:?}"
            )));
        }
        let (n, k, d) = (sh[0], sh[1], sh[2]);
        if k == 0 {
            return Err(Error::contract("maxpool_groups with k = 0".into()));
        }
        let mut out = vec![f64::NEG_INFINITY; n * d];
        let mut arg = vec![0usize; n * d];
        {
            let a = self.data();
            for i in 0..n {
                for j in 0..k {
                    for c in 0..d {
                        let v = a[(i * k + j) * d + c];
                        if v > out[i * d + c] {
                            out[i * d + c] = v;
                            arg[i * d + c] = j;
                        }
                    }
                }
            }
        }
        let pa = self.clone();
        let node = node_if_needed(vec![pa.clone()], move |g| {
            let mut da = vec![0.0; n * k * d];
            for i in 0..n {
                for c in 0..d {
                    let j = arg[i * d + c];
                    da[(i * k + j) * d + c] = g[i * d + c];
                }
            }
            pa.accumulate_grad(&da);
        });
        Ok(Tensor::from_op(vec![n, d], out, node))
    }

    /// Row-wise layer normalization over the last axis with learnable
    /// `gamma`/`beta` of length `d`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm on rank-0"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape(format!(
                "layer_norm: feature dim {d}, gamma {:?}, beta {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let rows = self.numel() / d;
        let mut out = vec![0.0; self.numel()];
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        {
            let a = self.data();
            let gm = gamma.data();
            let bt = beta.data();
            for r in 0..rows {
                let row = &a[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std[r] = istd;
                for c in 0..d {
                    let xh = (row[c] - mean) * istd;
                    xhat[r * d + c] = xh;
                    out[r * d + c] = gm[c] * xh + bt[c];
                }
            }
        }
        let (pa, pg, pb) = (self.clone(), gamma.clone(), beta.clone());
        let node = node_if_needed(vec![pa.clone(), pg.clone(), pb.clone()], move |g| {
            let gm = pg.data();
            let mut da = vec![0.0; rows * d];
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            for r in 0..rows {
                let istd = inv_std[r];
                let mut sum_gy = 0.0;
                let mut sum_gyx = 0.0;
                for c in 0..d {
                    let gy = g[r * d + c] * gm[c];
                    sum_gy += gy;
                    sum_gyx += gy * xhat[r * d + c];
                    dg[c] += g[r * d + c] * xhat[r * d + c];
                    db[c] += g[r * d + c];
                }
                let inv_d = 1.0 / d as f64;
                for c in 0..d {
                    let gy = g[r * d + c] * gm[c];
                    da[r * d + c] =
                        istd * (gy - inv_d * sum_gy - xhat[r * d + c] * inv_d * sum_gyx);
                }
            }
            drop(gm);
            pa.accumulate_grad(&da);
            pg.accumulate_grad(&dg);
            pb.accumulate_grad(&db);
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, node))
    }

    /// Batch normalization over all leading axes (training mode): normalizes
    /// each last-axis feature by its batch statistics. Returns the output and
    /// the per-feature batch mean and (population) variance for running-stat
    /// updates.
    pub fn batch_norm_train(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::shape("batch_norm on rank-0"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape(format!(
                "batch_norm: feature dim {d}, gamma {:?}, beta {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let b = self.numel() / d;
        if b == 0 {
            return Err(Error::contract("batch_norm on empty batch".into()));
        }
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        {
            let a = self.data();
            for r in 0..b {
                for c in 0..d {
                    mean[c] += a[r * d + c];
                }
            }
            for m in mean.iter_mut() {
                *m /= b as f64;
            }
            for r in 0..b {
                for c in 0..d {
                    let dv = a[r * d + c] - mean[c];
                    var[c] += dv * dv;
                }
            }
            for v in var.iter_mut() {
                *v /= b as f64;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; self.numel()];
        let mut xhat = vec![0.0; self.numel()];
        {
            let a = self.data();
            let gm = gamma.data();
            let bt = beta.data();
            for r in 0..b {
                for c in 0..d {
                    let xh = (a[r * d + c] - mean[c]) * inv_std[c];
                    xhat[r * d + c] = xh;
                    out[r * d + c] = gm[c] * xh + bt[c];
                }
            }
        }
        let (pa, pg, pb) = (self.clone(), gamma.clone(), beta.clone());
        let istd = inv_std.clone();
        let node = node_if_needed(vec![pa.clone(), pg.clone(), pb.clone()], move |g| {
            let gm = pg.data();
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            let mut sum_gy = vec![0.0; d];
            let mut sum_gyx = vec![0.0; d];
            for r in 0..b {
                for c in 0..d {
                    let gv = g[r * d + c];
                    let gy = gv * gm[c];
                    dg[c] += gv * xhat[r * d + c];
                    db[c] += gv;
                    sum_gy[c] += gy;
                    sum_gyx[c] += gy * xhat[r * d + c];
                }
            }
            let inv_b = 1.0 / b as f64;
            let mut da = vec![0.0; b * d];
            for r in 0..b {
                for c in 0..d {
                    let gy = g[r * d + c] * gm[c];
                    da[r * d + c] =
                        istd[c] * (gy - inv_b * sum_gy[c] - xhat[r * d + c] * inv_b * sum_gyx[c]);
                }
            }
            drop(gm);
            pa.accumulate_grad(&da);
            pg.accumulate_grad(&dg);
            pb.accumulate_grad(&db);
        });
        Ok((
            Tensor::from_op(self.shape().to_vec(), out, node),
            mean,
            var,
        ))
    }

    /// Batch normalization with frozen running statistics (inference mode).
    pub fn batch_norm_infer(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Tensor> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::shape("batch_norm on rank-0"))?;
        if gamma.shape() != [d] || beta.shape() != [d] || running_mean.len() != d || running_var.len() != d
        {
            return Err(Error::shape("batch_norm_infer: dimension mismatch".into()));
        }
        let b = self.numel() / d;
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; self.numel()];
        {
            let a = self.data();
            let gm = gamma.data();
            let bt = beta.data();
            for r in 0..b {
                for c in 0..d {
                    out[r * d + c] = gm[c] * (a[r * d + c] - running_mean[c]) * inv_std[c] + bt[c];
                }
            }
        }
        let (pa, pg, pb) = (self.clone(), gamma.clone(), beta.clone());
        let istd = inv_std.clone();
        let mean = running_mean.to_vec();
        let node = node_if_needed(vec![pa.clone(), pg.clone(), pb.clone()], move |g| {
            let gm = pg.data();
            let a = pa.data();
            let mut da = vec![0.0; b * d];
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            for r in 0..b {
                for c in 0..d {
                    let gv = g[r * d + c];
                    da[r * d + c] = gv * gm[c] * istd[c];
                    dg[c] += gv * (a[r * d + c] - mean[c]) * istd[c];
                    db[c] += gv;
                }
            }
            drop(gm);
            drop(a);
            pa.accumulate_grad(&da);
            pg.accumulate_grad(&dg);
            pb.accumulate_grad(&db);
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, node))
    }
}
