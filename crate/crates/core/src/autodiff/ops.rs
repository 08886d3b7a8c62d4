use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, Node, NodeId, Tensor};
use crate::{Error, Real, Result};

/// Probability clamp for the binary cross-entropy.
pub(crate) const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with supplied running statistics.
    Eval,
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BnMode,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Relu {
        x: NodeId,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Sigmoid {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
    },
    Grl {
        x: NodeId,
        lambda: T,
    },
    WeightedSum {
        weights: NodeId,
        feats: Vec<NodeId>,
    },
    Mse {
        pred: NodeId,
        target: Vec<T>,
    },
    Bce {
        prob: NodeId,
        labels: Vec<T>,
    },
    Ce {
        logits: NodeId,
        classes: Vec<usize>,
        probs: Vec<T>,
    },
    Combine {
        terms: Vec<(NodeId, T)>,
    },
    Sum {
        x: NodeId,
    },
    SumSquares {
        x: NodeId,
    },
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for j in 0..8 {
            acc[j] = acc[j] + pa[j] * pb[j];
        }
    }
    let mut s = T::zero();
    for i in chunks * 8..a.len() {
        s = s + a[i] * b[i];
    }
    acc.iter().fold(s, |s, &v| s + v)
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}

/// Output positions `t` for which input index `t·stride + k − pad` lies in `0..len`.
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k {
        (len + pad - k).div_ceil(stride).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    /// 1-D cross-correlation: `[B, Cin, L] ⊛ [Cout, Cin, K] + bias → [B, Cout, Lout]`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (batch, cin, len) = xv.dims3("conv1d")?;
        let (cout, wcin, k) = wv.dims3("conv1d")?;
        if wcin != cin || stride == 0 || len + 2 * pad < k {
            return Err(Error::shape("conv1d", xv.shape(), wv.shape()));
        }
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(Error::shape("conv1d bias", self.value(b).shape(), &[cout]));
            }
        }
        let lo = (len + 2 * pad - k) / stride + 1;
        let (xd, wd) = (xv.data(), wv.data());
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); batch * cout * lo];
        for bi in 0..batch {
            for o in 0..cout {
                let row = &mut out[(bi * cout + o) * lo..][..lo];
                if let Some(bd) = bd {
                    row.iter_mut().for_each(|v| *v = bd[o]);
                }
                for c in 0..cin {
                    let xr = &xd[(bi * cin + c) * len..][..len];
                    for kk in 0..k {
                        let wk = wd[(o * cin + c) * k + kk];
                        let (t0, t1) = valid_range(kk, pad, stride, len, lo);
                        if stride == 1 {
                            let off = t0 + kk - pad;
                            axpy(wk, &xr[off..off + (t1 - t0)], &mut row[t0..t1]);
                        } else {
                            for t in t0..t1 {
                                row[t] = row[t] + wk * xr[t * stride + kk - pad];
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[batch, cout, lo], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        let needs = self.wants(&parents);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            },
            needs,
        ))
    }

    /// Per-channel normalization of `[B, C, L]` over batch and length.
    ///
    /// `running` supplies `(mean, var)` and is required in eval mode.
    pub fn batch_norm1d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        mode: BnMode,
        running: Option<(&[T], &[T])>,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let (batch, ch, len) = xv.dims3("batch_norm1d")?;
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        if gd.len() != ch || bd.len() != ch {
            return Err(Error::shape("batch_norm1d", xv.shape(), self.value(gamma).shape()));
        }
        let count = batch * len;
        let xd = xv.data();
        let (mean, var) = match mode {
            BnMode::Train => {
                if count < 2 {
                    return Err(Error::invalid("batch norm in train mode needs B·L ≥ 2"));
                }
                let nf = T::of(count as f64);
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                for c in 0..ch {
                    let mut s = T::zero();
                    for bi in 0..batch {
                        s = s + xd[(bi * ch + c) * len..][..len].iter().copied().sum::<T>();
                    }
                    let m = s / nf;
                    let mut q = T::zero();
                    for bi in 0..batch {
                        for &v in &xd[(bi * ch + c) * len..][..len] {
                            q = q + (v - m) * (v - m);
                        }
                    }
                    mean[c] = m;
                    var[c] = q / nf;
                }
                (mean, var)
            }
            BnMode::Eval => {
                let (m, v) = running.ok_or_else(|| Error::invalid("eval-mode batch norm needs running statistics"))?;
                if m.len() != ch || v.len() != ch {
                    return Err(Error::shape("batch_norm1d running stats", &[m.len()], &[ch]));
                }
                (m.to_vec(), v.to_vec())
            }
        };
        let eps = T::of(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..batch {
            for c in 0..ch {
                let base = (bi * ch + c) * len;
                for i in base..base + len {
                    let h = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = gd[c] * h + bd[c];
                }
            }
        }
        let value = Tensor::new(&[batch, ch, len], out)?;
        let needs = self.wants(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                xhat,
                inv_std,
                mean,
                var,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        let needs = self.wants(&[x]);
        self.push(value, Op::Relu { x }, needs)
    }

    /// Window maximum over the last axis; ties route to the lowest index.
    pub fn max_pool1d(&mut self, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let shape = xv.shape();
        let len = *shape.last().ok_or_else(|| Error::invalid("max_pool1d on a 0-d array"))?;
        if k == 0 || stride == 0 || k > len {
            return Err(Error::invalid(alloc::format!(
                "max_pool1d window {k} does not fit length {len}"
            )));
        }
        let lo = (len - k) / stride + 1;
        let rows = xv.len() / len;
        let xd = xv.data();
        let mut out = Vec::with_capacity(rows * lo);
        let mut argmax = Vec::with_capacity(rows * lo);
        for r in 0..rows {
            let row = &xd[r * len..][..len];
            for t in 0..lo {
                let start = t * stride;
                let mut best = start;
                for i in start + 1..start + k {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = lo;
        let value = Tensor::new(&out_shape, out)?;
        let needs = self.wants(&[x]);
        Ok(self.push(value, Op::MaxPool { x, argmax }, needs))
    }

    /// Mean over the last axis: `[B, C, L] → [B, C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (batch, ch, len) = xv.dims3("global_avg_pool")?;
        let inv = T::one() / T::of(len as f64);
        let data = xv.data().chunks(len).map(|row| row.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::new(&[batch, ch], data)?;
        let needs = self.wants(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool { x }, needs))
    }

    /// Concatenates `[B, Nᵢ]` arrays along the feature axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let (batch, _) = self.value(first).dims2("concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (b, n) = self.value(p).dims2("concat")?;
            if b != batch {
                return Err(Error::shape("concat", self.value(first).shape(), self.value(p).shape()));
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total);
        for bi in 0..batch {
            for (&p, &n) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[bi * n..][..n]);
            }
        }
        let value = Tensor::new(&[batch, total], out)?;
        let needs = self.wants(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// `x·Wᵀ + b` with `x: [B, N]`, `W: [M, N]`, `b: [M]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (batch, n) = self.value(x).dims2("affine")?;
        let (m, wn) = self.value(w).dims2("affine")?;
        if wn != n {
            return Err(Error::shape("affine", self.value(x).shape(), self.value(w).shape()));
        }
        if let Some(b) = b {
            if self.value(b).len() != m {
                return Err(Error::shape("affine bias", self.value(b).shape(), &[m]));
            }
        }
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); batch * m];
        for bi in 0..batch {
            let xr = &xd[bi * n..][..n];
            for j in 0..m {
                let bias = bd.map_or(T::zero(), |bd| bd[j]);
                out[bi * m + j] = dot(xr, &wd[j * n..][..n]) + bias;
            }
        }
        let value = Tensor::new(&[batch, m], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        let needs = self.wants(&parents);
        Ok(self.push(value, Op::Affine { x, w, b }, needs))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape(), xv.data().iter().map(|&v| sigmoid(v)).collect()).expect("same shape");
        let needs = self.wants(&[x]);
        self.push(value, Op::Sigmoid { x }, needs)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape(), xv.data().iter().map(|v| v.tanh()).collect()).expect("same shape");
        let needs = self.wants(&[x]);
        self.push(value, Op::Tanh { x }, needs)
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| Error::invalid("softmax on a 0-d array"))?;
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor::new(xv.shape(), out)?;
        let needs = self.wants(&[x]);
        Ok(self.push(value, Op::Softmax { x }, needs))
    }

    /// Gradient reversal: identity forward, gradient scaled by `−lambda` backward.
    pub fn grl(&mut self, x: NodeId, lambda: T) -> NodeId {
        let value = self.value(x).clone();
        let needs = self.wants(&[x]);
        self.push(value, Op::Grl { x, lambda }, needs)
    }

    /// `Σᵢ weights[:, i] · featsᵢ` with `weights: [B, n]` and each feature `[B, D]`.
    pub fn weighted_sum(&mut self, weights: NodeId, feats: &[NodeId]) -> Result<NodeId> {
        let (batch, n) = self.value(weights).dims2("weighted_sum")?;
        if n != feats.len() || feats.is_empty() {
            return Err(Error::shape("weighted_sum", self.value(weights).shape(), &[batch, feats.len()]));
        }
        let (fb, d) = self.value(feats[0]).dims2("weighted_sum")?;
        for &f in feats {
            if self.value(f).shape() != [fb, d] || fb != batch {
                return Err(Error::shape("weighted_sum", self.value(feats[0]).shape(), self.value(f).shape()));
            }
        }
        let wd = self.value(weights).data();
        let mut out = vec![T::zero(); batch * d];
        for (i, &f) in feats.iter().enumerate() {
            let fd = self.value(f).data();
            for bi in 0..batch {
                axpy(wd[bi * n + i], &fd[bi * d..][..d], &mut out[bi * d..][..d]);
            }
        }
        let value = Tensor::new(&[batch, d], out)?;
        let mut parents = vec![weights];
        parents.extend_from_slice(feats);
        let needs = self.wants(&parents);
        Ok(self.push(
            value,
            Op::WeightedSum {
                weights,
                feats: feats.to_vec(),
            },
            needs,
        ))
    }

    /// Batch mean of `½ Σⱼ (predⱼ − targetⱼ)²` over rows of `pred: [B, N]`.
    pub fn mse_loss(&mut self, pred: NodeId, target: &[T]) -> Result<NodeId> {
        let pv = self.value(pred);
        let (batch, _) = pv.dims2("mse_loss")?;
        if target.len() != pv.len() {
            return Err(Error::shape("mse_loss", pv.shape(), &[target.len()]));
        }
        let half = T::of(0.5);
        let sum: T = pv.data().iter().zip(target).map(|(&p, &y)| (p - y) * (p - y)).sum();
        let value = Tensor::scalar(half * sum / T::of(batch as f64));
        let needs = self.wants(&[pred]);
        Ok(self.push(
            value,
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            needs,
        ))
    }

    /// Batch-mean binary cross-entropy on probabilities clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce_loss(&mut self, prob: NodeId, labels: &[T]) -> Result<NodeId> {
        let pv = self.value(prob);
        if labels.len() != pv.len() || labels.is_empty() {
            return Err(Error::shape("bce_loss", pv.shape(), &[labels.len()]));
        }
        let (lo, hi) = (T::of(PROB_CLAMP), T::one() - T::of(PROB_CLAMP));
        let sum: T = pv
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &c)| {
                let p = p.max(lo).min(hi);
                -(c * p.ln() + (T::one() - c) * (T::one() - p).ln())
            })
            .sum();
        let value = Tensor::scalar(sum / T::of(labels.len() as f64));
        let needs = self.wants(&[prob]);
        Ok(self.push(
            value,
            Op::Bce {
                prob,
                labels: labels.to_vec(),
            },
            needs,
        ))
    }

    /// Batch-mean categorical cross-entropy from logits `[B, S]`, via log-sum-exp.
    pub fn ce_loss(&mut self, logits: NodeId, classes: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (batch, s) = lv.dims2("ce_loss")?;
        if classes.len() != batch {
            return Err(Error::shape("ce_loss", lv.shape(), &[classes.len()]));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= s) {
            return Err(Error::invalid(alloc::format!(
                "class index {bad} out of range for {s} classes"
            )));
        }
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        for (row, (&c, logits_row)) in probs.chunks_mut(s).zip(classes.iter().zip(lv.data().chunks(s))) {
            let max = logits_row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + logits_row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total = total + (lse - logits_row[c]);
            softmax_in_place(row);
        }
        let value = Tensor::scalar(total / T::of(batch as f64));
        let needs = self.wants(&[logits]);
        Ok(self.push(
            value,
            Op::Ce {
                logits,
                classes: classes.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Weighted sum of single-element nodes.
    pub fn combine(&mut self, terms: &[(NodeId, T)]) -> NodeId {
        let total = terms.iter().fold(T::zero(), |acc, &(id, w)| acc + w * self.scalar(id));
        let ids: Vec<NodeId> = terms.iter().map(|t| t.0).collect();
        let needs = self.wants(&ids);
        self.push(
            Tensor::scalar(total),
            Op::Combine {
                terms: terms.to_vec(),
            },
            needs,
        )
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().copied().sum();
        let needs = self.wants(&[x]);
        self.push(Tensor::scalar(total), Op::Sum { x }, needs)
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().map(|&v| v * v).sum();
        let needs = self.wants(&[x]);
        self.push(Tensor::scalar(total), Op::SumSquares { x }, needs)
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Vec<T>], nodes: &[Node<T>], id: NodeId) -> Option<&'a mut [T]> {
    let node = &nodes[id.0];
    if !node.needs_grad {
        return None;
    }
    let g = &mut grads[id.0];
    if g.is_empty() {
        *g = vec![T::zero(); node.value.len()];
    }
    Some(g.as_mut_slice())
}

/// Propagates `gout` (gradient w.r.t. `out`) to the parents of `op`.
pub(super) fn backward<T: Real>(op: &Op<T>, out: &Tensor<T>, gout: &[T], nodes: &[Node<T>], grads: &mut [Vec<T>]) {
    let val = |id: NodeId| &nodes[id.0].value;
    match op {
        Op::Leaf => {}
        Op::Conv1d { x, w, b, stride, pad } => {
            let (stride, pad) = (*stride, *pad);
            let xv = val(*x);
            let wv = val(*w);
            let (batch, cin, len) = xv.dims3("conv1d").unwrap();
            let (cout, _, k) = wv.dims3("conv1d").unwrap();
            let lo = out.shape()[2];
            if let Some(gb) = b.and_then(|b| slot(grads, nodes, b)) {
                for bi in 0..batch {
                    for o in 0..cout {
                        gb[o] = gb[o] + gout[(bi * cout + o) * lo..][..lo].iter().copied().sum::<T>();
                    }
                }
            }
            if let Some(gw) = slot(grads, nodes, *w) {
                let xd = xv.data();
                for bi in 0..batch {
                    for o in 0..cout {
                        let go = &gout[(bi * cout + o) * lo..][..lo];
                        for c in 0..cin {
                            let xr = &xd[(bi * cin + c) * len..][..len];
                            for kk in 0..k {
                                let (t0, t1) = valid_range(kk, pad, stride, len, lo);
                                let acc = if stride == 1 {
                                    let off = t0 + kk - pad;
                                    dot(&go[t0..t1], &xr[off..off + (t1 - t0)])
                                } else {
                                    (t0..t1).map(|t| go[t] * xr[t * stride + kk - pad]).sum()
                                };
                                let idx = (o * cin + c) * k + kk;
                                gw[idx] = gw[idx] + acc;
                            }
                        }
                    }
                }
            }
            if let Some(gx) = slot(grads, nodes, *x) {
                let wd = wv.data();
                for bi in 0..batch {
                    for o in 0..cout {
                        let go = &gout[(bi * cout + o) * lo..][..lo];
                        for c in 0..cin {
                            let gr = &mut gx[(bi * cin + c) * len..][..len];
                            for kk in 0..k {
                                let wk = wd[(o * cin + c) * k + kk];
                                let (t0, t1) = valid_range(kk, pad, stride, len, lo);
                                if stride == 1 {
                                    let off = t0 + kk - pad;
                                    axpy(wk, &go[t0..t1], &mut gr[off..off + (t1 - t0)]);
                                } else {
                                    #[allow(clippy::needless_range_loop)]
                                    for t in t0..t1 {
                                        let i = t * stride + kk - pad;
                                        gr[i] = gr[i] + wk * go[t];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            mode,
            xhat,
            inv_std,
            ..
        } => {
            let (batch, ch, len) = out.dims3("batch_norm1d").unwrap();
            let gd = val(*gamma).data();
            let mut sum_dy = vec![T::zero(); ch];
            let mut sum_dy_xhat = vec![T::zero(); ch];
            for bi in 0..batch {
                for c in 0..ch {
                    let base = (bi * ch + c) * len;
                    let dy = &gout[base..base + len];
                    sum_dy[c] = sum_dy[c] + dy.iter().copied().sum::<T>();
                    sum_dy_xhat[c] = sum_dy_xhat[c] + dot(dy, &xhat[base..base + len]);
                }
            }
            if let Some(gb) = slot(grads, nodes, *beta) {
                for c in 0..ch {
                    gb[c] = gb[c] + sum_dy[c];
                }
            }
            if let Some(gg) = slot(grads, nodes, *gamma) {
                for c in 0..ch {
                    gg[c] = gg[c] + sum_dy_xhat[c];
                }
            }
            if let Some(gx) = slot(grads, nodes, *x) {
                let n = T::of((batch * len) as f64);
                for bi in 0..batch {
                    for c in 0..ch {
                        let base = (bi * ch + c) * len;
                        let scale = gd[c] * inv_std[c];
                        match mode {
                            BnMode::Train => {
                                let k = scale / n;
                                for i in base..base + len {
                                    gx[i] = gx[i] + k * (n * gout[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]);
                                }
                            }
                            BnMode::Eval => axpy(scale, &gout[base..base + len], &mut gx[base..base + len]),
                        }
                    }
                }
            }
        }
        Op::Relu { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for ((g, &xv), &go) in gx.iter_mut().zip(val(*x).data()).zip(gout) {
                    if xv > T::zero() {
                        *g = *g + go;
                    }
                }
            }
        }
        Op::MaxPool { x, argmax } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for (&i, &go) in argmax.iter().zip(gout) {
                    gx[i] = gx[i] + go;
                }
            }
        }
        Op::GlobalAvgPool { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let len = val(*x).shape()[2];
                let inv = T::one() / T::of(len as f64);
                for (row, &go) in gx.chunks_mut(len).zip(gout) {
                    row.iter_mut().for_each(|g| *g = *g + go * inv);
                }
            }
        }
        Op::Concat { parts } => {
            let (batch, total) = out.dims2("concat").unwrap();
            let mut offset = 0;
            for &p in parts {
                let n = val(p).shape()[1];
                if let Some(gp) = slot(grads, nodes, p) {
                    for bi in 0..batch {
                        let src = &gout[bi * total + offset..][..n];
                        for (g, &s) in gp[bi * n..][..n].iter_mut().zip(src) {
                            *g = *g + s;
                        }
                    }
                }
                offset += n;
            }
        }
        Op::Affine { x, w, b } => {
            let (batch, n) = val(*x).dims2("affine").unwrap();
            let m = out.shape()[1];
            if let Some(gb) = b.and_then(|b| slot(grads, nodes, b)) {
                for bi in 0..batch {
                    for j in 0..m {
                        gb[j] = gb[j] + gout[bi * m + j];
                    }
                }
            }
            if let Some(gw) = slot(grads, nodes, *w) {
                let xd = val(*x).data();
                for bi in 0..batch {
                    for j in 0..m {
                        axpy(gout[bi * m + j], &xd[bi * n..][..n], &mut gw[j * n..][..n]);
                    }
                }
            }
            if let Some(gx) = slot(grads, nodes, *x) {
                let wd = val(*w).data();
                for bi in 0..batch {
                    for j in 0..m {
                        axpy(gout[bi * m + j], &wd[j * n..][..n], &mut gx[bi * n..][..n]);
                    }
                }
            }
        }
        Op::Sigmoid { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for ((g, &y), &go) in gx.iter_mut().zip(out.data()).zip(gout) {
                    *g = *g + go * y * (T::one() - y);
                }
            }
        }
        Op::Tanh { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for ((g, &y), &go) in gx.iter_mut().zip(out.data()).zip(gout) {
                    *g = *g + go * (T::one() - y * y);
                }
            }
        }
        Op::Softmax { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let n = *out.shape().last().unwrap();
                for ((g, y), go) in gx.chunks_mut(n).zip(out.data().chunks(n)).zip(gout.chunks(n)) {
                    let inner = dot(go, y);
                    for i in 0..n {
                        g[i] = g[i] + y[i] * (go[i] - inner);
                    }
                }
            }
        }
        Op::Grl { x, lambda } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let scale = -*lambda;
                for (g, &go) in gx.iter_mut().zip(gout) {
                    *g = *g + scale * go;
                }
            }
        }
        Op::WeightedSum { weights, feats } => {
            let (batch, n) = val(*weights).dims2("weighted_sum").unwrap();
            let d = out.shape()[1];
            let wd = val(*weights).data();
            if let Some(gw) = slot(grads, nodes, *weights) {
                for (i, &f) in feats.iter().enumerate() {
                    let fd = val(f).data();
                    for bi in 0..batch {
                        gw[bi * n + i] = gw[bi * n + i] + dot(&gout[bi * d..][..d], &fd[bi * d..][..d]);
                    }
                }
            }
            for (i, &f) in feats.iter().enumerate() {
                if let Some(gf) = slot(grads, nodes, f) {
                    for bi in 0..batch {
                        axpy(wd[bi * n + i], &gout[bi * d..][..d], &mut gf[bi * d..][..d]);
                    }
                }
            }
        }
        Op::Mse { pred, target } => {
            if let Some(gp) = slot(grads, nodes, *pred) {
                let batch = val(*pred).shape()[0];
                let k = gout[0] / T::of(batch as f64);
                for ((g, &p), &y) in gp.iter_mut().zip(val(*pred).data()).zip(target) {
                    *g = *g + k * (p - y);
                }
            }
        }
        Op::Bce { prob, labels } => {
            if let Some(gp) = slot(grads, nodes, *prob) {
                let (lo, hi) = (T::of(PROB_CLAMP), T::one() - T::of(PROB_CLAMP));
                let k = gout[0] / T::of(labels.len() as f64);
                for ((g, &p), &c) in gp.iter_mut().zip(val(*prob).data()).zip(labels) {
                    if p > lo && p < hi {
                        *g = *g - k * (c / p - (T::one() - c) / (T::one() - p));
                    }
                }
            }
        }
        Op::Ce { logits, classes, probs } => {
            if let Some(gl) = slot(grads, nodes, *logits) {
                let s = val(*logits).shape()[1];
                let k = gout[0] / T::of(classes.len() as f64);
                for (bi, &c) in classes.iter().enumerate() {
                    for j in 0..s {
                        let onehot = if j == c { T::one() } else { T::zero() };
                        let idx = bi * s + j;
                        gl[idx] = gl[idx] + k * (probs[idx] - onehot);
                    }
                }
            }
        }
        Op::Combine { terms } => {
            for &(id, w) in terms {
                if let Some(g) = slot(grads, nodes, id) {
                    g[0] = g[0] + w * gout[0];
                }
            }
        }
        Op::Sum { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.iter_mut().for_each(|g| *g = *g + gout[0]);
            }
        }
        Op::SumSquares { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let two = T::of(2.0);
                for (g, &v) in gx.iter_mut().zip(val(*x).data()) {
                    *g = *g + two * v * gout[0];
                }
            }
        }
    }
}
