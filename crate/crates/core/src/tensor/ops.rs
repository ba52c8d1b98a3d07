//! Primitive differentiable operations.
//!
//! Binary ops broadcast with trailing-dimension alignment (an axis matches if
//! the extents are equal or one of them is 1 / missing). Gradients for a
//! broadcast operand are sum-reduced back to its shape.

use std::rc::Rc;

use super::tape::{Tape, Var};
use super::{matmul_into, Scalar, Tensor};

/// Output shape of a broadcast binary op, or `None` if incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `shape` aligned into `out_shape`, 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides_for(shape);
    let offset = out_shape.len() - shape.len();
    let mut s = vec![0; out_shape.len()];
    for i in 0..shape.len() {
        s[offset + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    s
}

fn apply_binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::from_vec(a.shape(), data);
    }
    // Fast path: b is a suffix of a (the common bias-broadcast case).
    if a.shape().len() >= b.shape().len()
        && a.shape()[a.shape().len() - b.shape().len()..] == *b.shape()
    {
        let chunk = b.numel().max(1);
        let mut data = Vec::with_capacity(a.numel());
        for block in a.data().chunks(chunk) {
            data.extend(block.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
        }
        return Tensor::from_vec(a.shape(), data);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("{op}: incompatible shapes {:?} vs {:?}", a.shape(), b.shape()));
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let n: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let (mut ia, mut ib) = (0, 0);
        for (d, &i) in idx.iter().enumerate() {
            ia += i * sa[d];
            ib += i * sb[d];
        }
        data.push(f(a.data()[ia], b.data()[ib]));
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_vec(&out_shape, data)
}

/// Sum-reduce `g` down to `shape` (inverse of broadcasting).
pub(crate) fn reduce_to_shape<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let s = broadcast_strides(shape, g.shape());
    let mut idx = vec![0usize; g.shape().len()];
    for &v in g.data() {
        let mut it = 0;
        for (d, &i) in idx.iter().enumerate() {
            it += i * s[d];
        }
        out.data_mut()[it] = out.data_mut()[it] + v;
        for d in (0..g.shape().len()).rev() {
            idx[d] += 1;
            if idx[d] < g.shape()[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

pub(crate) fn transpose2<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    assert_eq!(t.shape().len(), 2);
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut data = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::from_vec(&[c, r], data)
}

impl<T: Scalar> Tape<T> {
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        // (gout, a_val, b_val) -> (dL/da before reduce, dL/db before reduce)
        df: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> (Tensor<T>, Tensor<T>) + 'static,
    ) -> Var {
        let av = self.value_rc(a);
        let bv = self.value_rc(b);
        let out = apply_binary(&av, &bv, op, f);
        self.custom(vec![a, b], out, move |g| {
            let (da, db) = df(g, &av, &bv);
            vec![
                reduce_to_shape(&da, av.shape()),
                reduce_to_shape(&db, bv.shape()),
            ]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", |x, y| x + y, |g, _, _| (g.clone(), g.clone()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(
            a,
            b,
            "sub",
            |x, y| x - y,
            |g, _, _| (g.clone(), g.map(|x| -x)),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(
            a,
            b,
            "mul",
            |x, y| x * y,
            |g, av, bv| {
                (
                    apply_binary(g, bv, "mul-back", |x, y| x * y),
                    apply_binary(g, av, "mul-back", |x, y| x * y),
                )
            },
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(
            a,
            b,
            "div",
            |x, y| x / y,
            |g, av, bv| {
                let da = apply_binary(g, bv, "div-back", |gv, y| gv / y);
                // d/db (a/b) = -a/b^2
                let ab2 = apply_binary(av, bv, "div-back", |x, y| -x / (y * y));
                let db = apply_binary(g, &ab2, "div-back", |gv, q| gv * q);
                (da, db)
            },
        )
    }

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(T) -> T,
        // (x, y) -> dy/dx
        dfdx: impl Fn(T, T) -> T + 'static,
    ) -> Var {
        let xv = self.value_rc(x);
        let out = xv.map(f);
        let yv = Rc::new(out.clone());
        self.custom(vec![x], out, move |g| {
            let data = g
                .data()
                .iter()
                .zip(xv.data().iter().zip(yv.data()))
                .map(|(&gv, (&x0, &y0))| gv * dfdx(x0, y0))
                .collect();
            vec![Tensor::from_vec(xv.shape(), data)]
        })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, |_, _| -T::one())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), |x0, _| T::one() / x0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v / (T::one() + (-v).exp()),
            |x0, _| {
                let s = T::one() / (T::one() + (-x0).exp());
                s + x0 * s * (T::one() - s)
            },
        )
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                // max(x,0) + ln(1+exp(-|x|)) is stable both ways
                let m = if v > T::zero() { v } else { T::zero() };
                m + (T::one() + (-v.abs()).exp()).ln()
            },
            |x0, _| T::one() / (T::one() + (-x0).exp()),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            |x0, _| if x0 > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Elementwise clamp; zero gradient outside the open interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of_f64(lo), T::of_f64(hi));
        self.unary(
            x,
            move |v| {
                if v < lo {
                    lo
                } else if v > hi {
                    hi
                } else {
                    v
                }
            },
            move |x0, _| {
                if x0 > lo && x0 < hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of_f64(c);
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let c = T::of_f64(c);
        self.unary(x, move |v| v + c, |_, _| T::one())
    }

    /// Rank-2 matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value_rc(a);
        let bv = self.value_rc(b);
        assert_eq!(av.shape().len(), 2, "matmul lhs must be rank 2");
        assert_eq!(bv.shape().len(), 2, "matmul rhs must be rank 2");
        assert_eq!(
            av.shape()[1],
            bv.shape()[0],
            "matmul: incompatible shapes {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let (m, n) = (av.shape()[0], bv.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul_into(&av, &bv, &mut out, false);
        self.custom(vec![a, b], out, move |g| {
            let bt = transpose2(&bv);
            let at = transpose2(&av);
            let mut da = Tensor::zeros(av.shape());
            let mut db = Tensor::zeros(bv.shape());
            matmul_into(g, &bt, &mut da, false);
            matmul_into(&at, g, &mut db, false);
            vec![da, db]
        })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let xv = self.value_rc(x);
        let xshape = xv.shape().to_vec();
        let out = (*xv).clone().reshaped(shape);
        self.custom(vec![x], out, move |g| {
            vec![g.clone().reshaped(&xshape)]
        })
    }

    /// Permute axes; `axes[i]` is the source axis of output axis `i`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let xv = self.value_rc(x);
        let axes = axes.to_vec();
        assert_eq!(axes.len(), xv.shape().len());
        let out = permute_tensor(&xv, &axes);
        self.custom(vec![x], out, move |g| {
            let mut inv = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inv[a] = i;
            }
            vec![permute_tensor(g, &inv)]
        })
    }

    /// Slice every axis by `ranges[i] = (start, end)`.
    pub fn slice(&mut self, x: Var, ranges: &[(usize, usize)]) -> Var {
        let xv = self.value_rc(x);
        assert_eq!(ranges.len(), xv.shape().len());
        for (d, &(s, e)) in ranges.iter().enumerate() {
            assert!(s <= e && e <= xv.shape()[d], "slice out of range on axis {d}");
        }
        let ranges = ranges.to_vec();
        let out_shape: Vec<usize> = ranges.iter().map(|&(s, e)| e - s).collect();
        let xstrides = strides_for(xv.shape());
        let mut out = Tensor::zeros(&out_shape);
        copy_block(xv.data(), &xstrides, &ranges, out.data_mut(), &out_shape);
        let xshape = xv.shape().to_vec();
        self.custom(vec![x], out, move |g| {
            let mut dx = Tensor::zeros(&xshape);
            let xstrides = strides_for(&xshape);
            scatter_block(dx.data_mut(), &xstrides, &ranges, g.data(), g.shape());
            vec![dx]
        })
    }

    /// Concatenate along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let vals: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.value_rc(p)).collect();
        let base = vals[0].shape().to_vec();
        let mut total = 0;
        for v in &vals {
            assert_eq!(v.shape().len(), base.len(), "concat rank mismatch");
            for d in 0..base.len() {
                if d != axis {
                    assert_eq!(v.shape()[d], base[d], "concat: shape mismatch on axis {d}");
                }
            }
            total += v.shape()[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for v in &vals {
                let ext = v.shape()[axis];
                let start = o * ext * inner;
                data.extend_from_slice(&v.data()[start..start + ext * inner]);
            }
        }
        let out = Tensor::from_vec(&out_shape, data);
        let shapes: Vec<Vec<usize>> = vals.iter().map(|v| v.shape().to_vec()).collect();
        self.custom(parts.to_vec(), out, move |g| {
            let mut grads: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            let mut offset = 0;
            for o in 0..outer {
                for (gi, s) in shapes.iter().enumerate() {
                    let chunk = s[axis] * inner;
                    let dst = &mut grads[gi].data_mut()[o * chunk..(o + 1) * chunk];
                    dst.copy_from_slice(&g.data()[offset..offset + chunk]);
                    offset += chunk;
                }
            }
            grads
        })
    }

    /// Zero-pad `axis` with `before`/`after` entries.
    pub fn pad_axis(&mut self, x: Var, axis: usize, before: usize, after: usize) -> Var {
        let xv = self.value_rc(x);
        let mut out_shape = xv.shape().to_vec();
        out_shape[axis] += before + after;
        let outer: usize = xv.shape()[..axis].iter().product();
        let ext = xv.shape()[axis];
        let inner: usize = xv.shape()[axis + 1..].iter().product();
        let mut out = Tensor::zeros(&out_shape);
        for o in 0..outer {
            let src = &xv.data()[o * ext * inner..(o + 1) * ext * inner];
            let dst_base = o * (ext + before + after) * inner + before * inner;
            out.data_mut()[dst_base..dst_base + ext * inner].copy_from_slice(src);
        }
        let xshape = xv.shape().to_vec();
        self.custom(vec![x], out, move |g| {
            let mut dx = Tensor::zeros(&xshape);
            for o in 0..outer {
                let src_base = o * (ext + before + after) * inner + before * inner;
                let dst = &mut dx.data_mut()[o * ext * inner..(o + 1) * ext * inner];
                dst.copy_from_slice(&g.data()[src_base..src_base + ext * inner]);
            }
            vec![dx]
        })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.value_rc(x);
        let s = xv.data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.custom(vec![x], Tensor::scalar(s), move |g| {
            vec![Tensor::full(xv.shape(), g.item())]
        })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value_rc(x);
        let n = T::of_f64(xv.numel() as f64);
        let s = xv.data().iter().fold(T::zero(), |acc, &v| acc + v) / n;
        self.custom(vec![x], Tensor::scalar(s), move |g| {
            vec![Tensor::full(xv.shape(), g.item() / n)]
        })
    }

    /// Maximum over all elements; gradient flows to the first maximizer.
    pub fn max_all(&mut self, x: Var) -> Var {
        let xv = self.value_rc(x);
        let (mut best, mut best_i) = (xv.data()[0], 0);
        for (i, &v) in xv.data().iter().enumerate() {
            if v > best {
                best = v;
                best_i = i;
            }
        }
        self.custom(vec![x], Tensor::scalar(best), move |g| {
            let mut dx = Tensor::zeros(xv.shape());
            dx.data_mut()[best_i] = g.item();
            vec![dx]
        })
    }

    /// Row-wise softmax of a rank-2 tensor, max-subtracted for stability.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value_rc(x);
        assert_eq!(xv.shape().len(), 2, "softmax_rows needs rank 2");
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(row[0], |a, b| if b > a { b } else { a });
            let mut z = T::zero();
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                z = z + e;
            }
            for j in 0..c {
                data[i * c + j] = data[i * c + j] / z;
            }
        }
        let out = Tensor::from_vec(&[r, c], data);
        let yv = Rc::new(out.clone());
        self.custom(vec![x], out, move |g| {
            let mut dx = Tensor::zeros(yv.shape());
            for i in 0..r {
                let y = &yv.data()[i * c..(i + 1) * c];
                let gr = &g.data()[i * c..(i + 1) * c];
                let dot = y
                    .iter()
                    .zip(gr)
                    .fold(T::zero(), |acc, (&yj, &gj)| acc + yj * gj);
                for j in 0..c {
                    dx.data_mut()[i * c + j] = (gr[j] - dot) * y[j];
                }
            }
            vec![dx]
        })
    }

    /// Inner product of two same-shape tensors, as a scalar node.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum_all(p)
    }
}

pub(crate) fn permute_tensor<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides_for(in_shape);
    let n = x.numel();
    let mut data = vec![T::zero(); n];
    let mut idx = vec![0usize; out_shape.len()];
    for slot in data.iter_mut() {
        let mut src = 0;
        for (d, &i) in idx.iter().enumerate() {
            src += i * in_strides[axes[d]];
        }
        *slot = x.data()[src];
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_vec(&out_shape, data)
}

fn copy_block<T: Scalar>(
    src: &[T],
    src_strides: &[usize],
    ranges: &[(usize, usize)],
    dst: &mut [T],
    dst_shape: &[usize],
) {
    let mut idx = vec![0usize; dst_shape.len()];
    for slot in dst.iter_mut() {
        let mut s = 0;
        for (d, &i) in idx.iter().enumerate() {
            s += (ranges[d].0 + i) * src_strides[d];
        }
        *slot = src[s];
        for d in (0..dst_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < dst_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn scatter_block<T: Scalar>(
    dst: &mut [T],
    dst_strides: &[usize],
    ranges: &[(usize, usize)],
    src: &[T],
    src_shape: &[usize],
) {
    let mut idx = vec![0usize; src_shape.len()];
    for &v in src.iter() {
        let mut s = 0;
        for (d, &i) in idx.iter().enumerate() {
            s += (ranges[d].0 + i) * dst_strides[d];
        }
        dst[s] = dst[s] + v;
        for d in (0..src_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < src_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{grad_check, Tape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randt(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn softmax_uniform_logits() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]));
        let y = tape.softmax_rows(x);
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::<f64>::new();
        let eye = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = randt(&[3, 4], 1);
        let i = tape.leaf(eye);
        let av = tape.leaf(a.clone());
        let y = tape.matmul(i, av);
        assert_eq!(tape.value(y).data(), a.data());
    }

    #[test]
    fn grad_of_sum_of_squares() {
        // d/dx sum(x^2) at [1,2,3] should be [2,4,6]
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]);
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(x.clone());
        let sq = tape.mul(v, v);
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss);
        let g = grads.grad(v, x.shape());
        assert_eq!(g.data(), &[2.0, 4.0, 6.0]);
        // and the finite-difference oracle agrees
        let report = grad_check(
            |t, vs| {
                let s = t.mul(vs[0], vs[0]);
                t.sum_all(s)
            },
            &[x],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.pass, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn elementwise_and_broadcast_gradients() {
        let a = randt(&[3, 4], 2);
        let b = randt(&[4], 3);
        let report = grad_check(
            |t, vs| {
                let s = t.add(vs[0], vs[1]);
                let m = t.mul(s, vs[0]);
                let d = t.div(m, vs[2]);
                let e = t.sub(d, vs[1]);
                t.sum_all(e)
            },
            &[a, b, randt(&[3, 4], 4).map(|x| x + 2.0)],
            1e-6,
            1e-7,
        )
        .unwrap();
        assert!(report.pass, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn unary_gradients() {
        let x = randt(&[2, 5], 5);
        let report = grad_check(
            |t, vs| {
                let e = t.exp(vs[0]);
                let l = t.ln(e);
                let th = t.tanh(l);
                let sg = t.sigmoid(th);
                let si = t.silu(sg);
                let sp = t.softplus(si);
                let r = t.relu(sp);
                t.sum_all(r)
            },
            &[x],
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn matmul_gradients() {
        let a = randt(&[3, 4], 7);
        let b = randt(&[4, 2], 8);
        let report = grad_check(
            |t, vs| {
                let y = t.matmul(vs[0], vs[1]);
                let sq = t.mul(y, y);
                t.sum_all(sq)
            },
            &[a, b],
            1e-6,
            1e-7,
        )
        .unwrap();
        assert!(report.pass, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn shape_op_gradients() {
        let x = randt(&[2, 3, 4], 9);
        let report = grad_check(
            |t, vs| {
                let p = t.permute(vs[0], &[2, 0, 1]); // 4x2x3
                let r = t.reshape(p, &[4, 6]);
                let s = t.slice(r, &[(1, 4), (2, 6)]); // 3x4
                let padded = t.pad_axis(s, 1, 1, 2); // 3x7
                let c = t.concat(&[padded, padded], 0); // 6x7
                let m = t.mul(c, c);
                t.sum_all(m)
            },
            &[x],
            1e-6,
            1e-7,
        )
        .unwrap();
        assert!(report.pass, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn reduction_and_softmax_gradients() {
        let x = randt(&[3, 5], 10);
        let report = grad_check(
            |t, vs| {
                let sm = t.softmax_rows(vs[0]);
                let m = t.mean_all(sm);
                let mx = t.max_all(vs[0]);
                let c = t.clamp(vs[0], -0.5, 0.5);
                let cs = t.sum_all(c);
                let a = t.add(m, mx);
                t.add(a, cs)
            },
            &[x],
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn repeated_backward_is_identical_and_pure() {
        let x = randt(&[4, 4], 11);
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(x.clone());
        let e = tape.exp(v);
        let loss = tape.sum_all(e);
        let before = tape.value(e).clone();
        let g1 = tape.backward(loss).grad(v, x.shape());
        let g2 = tape.backward(loss).grad(v, x.shape());
        assert_eq!(g1.data(), g2.data());
        assert_eq!(tape.value(e).data(), before.data(), "backward mutated forward values");
    }

    #[test]
    #[should_panic(expected = "incompatible shapes")]
    fn incompatible_shapes_panic_names_both() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[4, 5]));
        let _ = tape.add(a, b);
    }
}
