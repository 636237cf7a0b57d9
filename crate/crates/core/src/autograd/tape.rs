use super::store::{Grads, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use num_complex::Complex;
use rustfft::FftPlanner;

/// Handle to a node in a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const GELU_C: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

enum Op<S: Scalar> {
    Leaf { param: Option<ParamId> },
    /// `[m,k] x [k,n]`
    Matmul { a: NodeId, b: NodeId },
    /// `[m,k] x transpose([n,k])`
    MatmulNT { a: NodeId, b: NodeId },
    /// Row-broadcast `[m,n] + [n]`
    AddBias { a: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Gelu { a: NodeId },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    BatchNormTrain {
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        batch_mean: Tensor<S>,
        batch_var: Tensor<S>,
    },
    BatchNormEval {
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        mean: Tensor<S>,
        var: Tensor<S>,
    },
    SoftmaxRows { a: NodeId },
    CrossEntropy { logits: NodeId, target: usize },
    SliceCols { a: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    Row { a: NodeId, index: usize },
    StackRows { parts: Vec<NodeId> },
    Transpose { a: NodeId },
    ConcatVec { parts: Vec<NodeId> },
    MaxOverRows { a: NodeId, winners: Vec<usize> },
    SumSq { a: NodeId },
    /// 1-D convolution with zero padding, output length = input length.
    Conv1dSame { x: NodeId, kernel: NodeId },
    /// Mirror a half kernel `[h0..hH]` into `[hH..h1 h0 h1..hH]`.
    Symmetrize { half: NodeId },
    GccPhat {
        a: NodeId,
        b: NodeId,
        max_lag: usize,
        spec_a: Vec<Complex<f64>>,
        spec_b: Vec<Complex<f64>>,
    },
}

struct Node<S: Scalar> {
    op: Op<S>,
    value: Tensor<S>,
}

/// Computation graph recorded eagerly: each builder method computes the
/// forward value immediately and appends a node, so node order is a
/// topological order and [`Tape::backward`] is a single reverse sweep.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; gradients stop here.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf { param: None }, value)
    }

    /// Leaf bound to a parameter; `backward` reports its gradient.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> NodeId {
        self.push(Op::Leaf { param: Some(id) }, store.get(id).clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(Op::Matmul { a, b }, value)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.matmul_nt(&self.nodes[b.0].value);
        self.push(Op::MatmulNT { a, b }, value)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[bias.0].value;
        assert_eq!(bv.shape().len(), 1, "bias must be rank 1");
        assert_eq!(av.cols(), bv.len(), "bias length mismatch");
        let n = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv.data()[i % n])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::AddBias { a, bias }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Add { a, b }, value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Sub { a, b }, value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let cs = S::from_f(c);
        let value = self.nodes[a.0].value.map(|x| x * cs);
        self.push(Op::Scale { a, c }, value)
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|x| {
            let xf = x.to_f();
            let inner = SQRT_2_OVER_PI * (xf + GELU_C * xf * xf * xf);
            S::from_f(0.5 * xf * (1.0 + inner.tanh()))
        });
        self.push(Op::Gelu { a }, value)
    }

    /// Per-row normalization with learnable per-column gain and shift.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let av = &self.nodes[a.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert_eq!(gv.len(), n);
        assert_eq!(bv.len(), n);
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            let row = av.row_slice(i);
            let (mu, var) = mean_var(row);
            let s = (var + eps).sqrt();
            for j in 0..n {
                let xhat = (row[j].to_f() - mu) / s;
                data[i * n + j] =
                    S::from_f(xhat * gv.data()[j].to_f() + bv.data()[j].to_f());
            }
        }
        self.push(Op::LayerNorm { a, gamma, beta, eps }, Tensor::matrix(m, n, data))
    }

    /// Per-column normalization by batch statistics (training mode).
    /// Biased variance normalizes; callers can read the recorded batch
    /// stats back with [`Tape::batch_stats`] to maintain running
    /// estimates.
    pub fn batch_norm_train(
        &mut self,
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> NodeId {
        let av = &self.nodes[a.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert!(m >= 2, "batch norm needs at least 2 rows, got {m}");
        assert_eq!(gv.len(), n);
        assert_eq!(bv.len(), n);
        let mut means = vec![0.0f64; n];
        let mut vars = vec![0.0f64; n];
        for j in 0..n {
            let col: Vec<S> = (0..m).map(|i| av.at(i, j)).collect();
            let (mu, var) = mean_var(&col);
            means[j] = mu;
            vars[j] = var;
        }
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let xhat = (av.at(i, j).to_f() - means[j]) / (vars[j] + eps).sqrt();
                data[i * n + j] =
                    S::from_f(xhat * gv.data()[j].to_f() + bv.data()[j].to_f());
            }
        }
        let batch_mean = Tensor::vector(means.iter().map(|&x| S::from_f(x)).collect());
        let batch_var = Tensor::vector(vars.iter().map(|&x| S::from_f(x)).collect());
        self.push(
            Op::BatchNormTrain { a, gamma, beta, eps, batch_mean, batch_var },
            Tensor::matrix(m, n, data),
        )
    }

    /// Batch mean and biased batch variance recorded by a
    /// `batch_norm_train` node.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&Tensor<S>, &Tensor<S>)> {
        match &self.nodes[id.0].op {
            Op::BatchNormTrain { batch_mean, batch_var, .. } => Some((batch_mean, batch_var)),
            _ => None,
        }
    }

    /// Per-column normalization by fixed running statistics (inference).
    pub fn batch_norm_eval(
        &mut self,
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &Tensor<S>,
        var: &Tensor<S>,
        eps: f64,
    ) -> NodeId {
        let av = &self.nodes[a.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert_eq!(mean.len(), n);
        assert_eq!(var.len(), n);
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let xhat = (av.at(i, j).to_f() - mean.data()[j].to_f())
                    / (var.data()[j].to_f() + eps).sqrt();
                data[i * n + j] =
                    S::from_f(xhat * gv.data()[j].to_f() + bv.data()[j].to_f());
            }
        }
        self.push(
            Op::BatchNormEval { a, gamma, beta, eps, mean: mean.clone(), var: var.clone() },
            Tensor::matrix(m, n, data),
        )
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            let row = av.row_slice(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |acc, x| acc.max(x.to_f()));
            let exps: Vec<f64> = row.iter().map(|x| (x.to_f() - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..n {
                data[i * n + j] = S::from_f(exps[j] / sum);
            }
        }
        self.push(Op::SoftmaxRows { a }, Tensor::matrix(m, n, data))
    }

    /// Negative log-likelihood of `target` under softmax of 1-D logits.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.shape().len(), 1, "cross_entropy takes 1-D logits");
        assert!(target < lv.len());
        let xs: Vec<f64> = lv.data().iter().map(|x| x.to_f()).collect();
        let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
        let loss = lse - xs[target];
        self.push(Op::CrossEntropy { logits, target }, Tensor::scalar(S::from_f(loss)))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert!(start + len <= n);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&av.row_slice(i)[start..start + len]);
        }
        self.push(Op::SliceCols { a, start, len }, Tensor::matrix(m, len, data))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let m = self.nodes[parts[0].0].value.rows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for p in parts {
                let pv = &self.nodes[p.0].value;
                assert_eq!(pv.rows(), m);
                data.extend_from_slice(pv.row_slice(i));
            }
        }
        self.push(Op::ConcatCols { parts: parts.to_vec() }, Tensor::matrix(m, total, data))
    }

    /// Extract one row of a matrix as a 1-D tensor.
    pub fn row(&mut self, a: NodeId, index: usize) -> NodeId {
        let av = &self.nodes[a.0].value;
        assert!(index < av.rows());
        let value = Tensor::vector(av.row_slice(index).to_vec());
        self.push(Op::Row { a, index }, value)
    }

    /// Stack equal-length 1-D tensors into a matrix, one per row.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let n = self.nodes[parts[0].0].value.len();
        let mut data = Vec::with_capacity(parts.len() * n);
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.shape().len(), 1, "stack_rows takes 1-D parts");
            assert_eq!(pv.len(), n, "stack_rows length mismatch");
            data.extend_from_slice(pv.data());
        }
        self.push(
            Op::StackRows { parts: parts.to_vec() },
            Tensor::matrix(parts.len(), n, data),
        )
    }

    /// Matrix transpose.
    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.shape().len(), 2, "transpose takes a matrix");
        let value = av.transpose();
        self.push(Op::Transpose { a }, value)
    }

    pub fn concat_vec(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let mut data = Vec::new();
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.shape().len(), 1, "concat_vec takes 1-D parts");
            data.extend_from_slice(pv.data());
        }
        self.push(Op::ConcatVec { parts: parts.to_vec() }, Tensor::vector(data))
    }

    /// Columnwise max over rows; ties go to the lowest row index and the
    /// gradient routes only to the winner.
    pub fn max_over_rows(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert!(m >= 1);
        let mut winners = vec![0usize; n];
        let mut data: Vec<S> = av.row_slice(0).to_vec();
        for i in 1..m {
            for j in 0..n {
                let v = av.at(i, j);
                if v > data[j] {
                    data[j] = v;
                    winners[j] = i;
                }
            }
        }
        self.push(Op::MaxOverRows { a, winners }, Tensor::vector(data))
    }

    /// Sum of squared elements, any shape, producing a scalar node.
    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.nodes[a.0].value.data().iter().map(|x| {
            let v = x.to_f();
            v * v
        }).sum();
        self.push(Op::SumSq { a }, Tensor::scalar(S::from_f(total)))
    }

    /// 1-D convolution with an odd-length kernel, zero padding, output
    /// length equal to the input length.
    pub fn conv1d_same(&mut self, x: NodeId, kernel: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let kv = &self.nodes[kernel.0].value;
        assert_eq!(xv.shape().len(), 1);
        assert_eq!(kv.shape().len(), 1);
        assert_eq!(kv.len() % 2, 1, "conv kernel length must be odd");
        let (n, kl) = (xv.len(), kv.len());
        let c = (kl - 1) / 2;
        let mut data = vec![S::zero(); n];
        for (t, slot) in data.iter_mut().enumerate() {
            let mut acc = S::zero();
            for u in 0..kl {
                let idx = t as isize + u as isize - c as isize;
                if idx >= 0 && (idx as usize) < n {
                    acc += kv.data()[u] * xv.data()[idx as usize];
                }
            }
            *slot = acc;
        }
        self.push(Op::Conv1dSame { x, kernel }, Tensor::vector(data))
    }

    /// Build a symmetric kernel of length `2h+1` from its half `[k0..kh]`:
    /// the output reads `[kh .. k1 k0 k1 .. kh]`.
    pub fn symmetrize(&mut self, half: NodeId) -> NodeId {
        let hv = &self.nodes[half.0].value;
        assert_eq!(hv.shape().len(), 1);
        let h = hv.len() - 1;
        let mut data = vec![S::zero(); 2 * h + 1];
        for i in 0..=h {
            data[h + i] = hv.data()[i];
            data[h - i] = hv.data()[i];
        }
        self.push(Op::Symmetrize { half }, Tensor::vector(data))
    }

    /// Differentiable GCC-PHAT between two equal-length 1-D signals,
    /// returning correlation values on lags `-max_lag..=max_lag`. Where
    /// the cross-spectrum magnitude falls below the floor the bin is
    /// scaled by the floor instead of erroring, so all-zero inputs give
    /// an all-zero output.
    pub fn gcc_phat(&mut self, a: NodeId, b: NodeId, max_lag: usize) -> NodeId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.shape().len(), 1);
        assert_eq!(av.shape(), bv.shape(), "gcc_phat length mismatch");
        let n = av.len();
        let p = (2 * n).next_power_of_two();
        assert!(2 * max_lag < p, "max_lag too large for frame length");

        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(p);
        let mut spec_a: Vec<Complex<f64>> =
            pad_complex(av.data().iter().map(|x| x.to_f()), n, p);
        let mut spec_b: Vec<Complex<f64>> =
            pad_complex(bv.data().iter().map(|x| x.to_f()), n, p);
        fft.process(&mut spec_a);
        fft.process(&mut spec_b);

        let mut z: Vec<Complex<f64>> = spec_a
            .iter()
            .zip(&spec_b)
            .map(|(sa, sb)| {
                let c = sa.conj() * sb;
                c / c.norm().max(crate::signal::PHAT_EPSILON)
            })
            .collect();
        let ifft = planner.plan_fft_inverse(p);
        ifft.process(&mut z);
        let value = Tensor::vector(
            (-(max_lag as isize)..=max_lag as isize)
                .map(|lag| S::from_f(z[lag.rem_euclid(p as isize) as usize].re / p as f64))
                .collect(),
        );
        self.push(Op::GccPhat { a, b, max_lag, spec_a, spec_b }, value)
    }

    /// x W + b, with `x` `[m,k]`, `w` `[k,n]`, `b` `[n]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    /// Standard multi-head self-attention over the rows of `x` with no
    /// positional information, so it is permutation-equivariant.
    #[allow(clippy::too_many_arguments)]
    pub fn multi_head_attention(
        &mut self,
        x: NodeId,
        wq: NodeId,
        bq: NodeId,
        wk: NodeId,
        bk: NodeId,
        wv: NodeId,
        bv: NodeId,
        wo: NodeId,
        bo: NodeId,
        heads: usize,
    ) -> NodeId {
        let d = self.nodes[x.0].value.cols();
        assert_eq!(d % heads, 0, "model width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let q = self.linear(x, wq, bq);
        let k = self.linear(x, wk, bk);
        let v = self.linear(x, wv, bv);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.slice_cols(q, h * dh, dh);
            let kh = self.slice_cols(k, h * dh, dh);
            let vh = self.slice_cols(v, h * dh, dh);
            let scores = self.matmul_nt(qh, kh);
            let scaled = self.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = self.softmax_rows(scaled);
            outs.push(self.matmul(attn, vh));
        }
        let cat = self.concat_cols(&outs);
        self.linear(cat, wo, bo)
    }

    /// Reverse sweep from a scalar loss node, returning gradients for
    /// every parameter leaf reachable from it.
    pub fn backward(&self, loss: NodeId) -> Grads<S> {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));
        let mut out = Grads::new();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf { param: Some(p) } => out.insert_accumulate(*p, g),
                Op::Leaf { param: None } => {}
                Op::Matmul { a, b } => {
                    let ga = g.matmul_nt(&self.nodes[b.0].value);
                    let gb = self.nodes[a.0].value.matmul_tn(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatmulNT { a, b } => {
                    let ga = g.matmul(&self.nodes[b.0].value);
                    let gb = g.matmul_tn(&self.nodes[a.0].value);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddBias { a, bias } => {
                    let n = self.nodes[bias.0].value.len();
                    let mut gb = vec![S::zero(); n];
                    for (i, &x) in g.data().iter().enumerate() {
                        gb[i % n] += x;
                    }
                    acc(&mut grads, *bias, Tensor::vector(gb));
                    acc(&mut grads, *a, g);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub { a, b } => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Scale { a, c } => {
                    let cs = S::from_f(*c);
                    acc(&mut grads, *a, g.map(|x| x * cs));
                }
                Op::Gelu { a } => {
                    let av = &self.nodes[a.0].value;
                    let data = av
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gy)| {
                            let xf = x.to_f();
                            let inner = SQRT_2_OVER_PI * (xf + GELU_C * xf * xf * xf);
                            let t = inner.tanh();
                            let d = 0.5 * (1.0 + t)
                                + 0.5
                                    * xf
                                    * (1.0 - t * t)
                                    * SQRT_2_OVER_PI
                                    * (1.0 + 3.0 * GELU_C * xf * xf);
                            S::from_f(gy.to_f() * d)
                        })
                        .collect();
                    acc(&mut grads, *a, Tensor::new(av.shape().to_vec(), data));
                }
                Op::LayerNorm { a, gamma, beta, eps } => {
                    let av = &self.nodes[a.0].value;
                    let gv = &self.nodes[gamma.0].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut ga = vec![S::zero(); m * n];
                    let mut ggamma = vec![S::zero(); n];
                    let mut gbeta = vec![S::zero(); n];
                    for i in 0..m {
                        let row = av.row_slice(i);
                        let (mu, var) = mean_var(row);
                        let s = (var + eps).sqrt();
                        let xhat: Vec<f64> =
                            row.iter().map(|x| (x.to_f() - mu) / s).collect();
                        let grow = &g.data()[i * n..(i + 1) * n];
                        let h: Vec<f64> = (0..n)
                            .map(|j| gv.data()[j].to_f() * grow[j].to_f())
                            .collect();
                        let mean_h: f64 = h.iter().sum::<f64>() / n as f64;
                        let mean_hx: f64 =
                            h.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            ggamma[j] += S::from_f(grow[j].to_f() * xhat[j]);
                            gbeta[j] += grow[j];
                            ga[i * n + j] =
                                S::from_f((h[j] - mean_h - xhat[j] * mean_hx) / s);
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(m, n, ga));
                    acc(&mut grads, *gamma, Tensor::vector(ggamma));
                    acc(&mut grads, *beta, Tensor::vector(gbeta));
                }
                Op::BatchNormTrain { a, gamma, beta, eps, batch_mean, batch_var } => {
                    let av = &self.nodes[a.0].value;
                    let gv = &self.nodes[gamma.0].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut ga = vec![S::zero(); m * n];
                    let mut ggamma = vec![S::zero(); n];
                    let mut gbeta = vec![S::zero(); n];
                    for j in 0..n {
                        let mu = batch_mean.data()[j].to_f();
                        let s = (batch_var.data()[j].to_f() + eps).sqrt();
                        let xhat: Vec<f64> =
                            (0..m).map(|i| (av.at(i, j).to_f() - mu) / s).collect();
                        let h: Vec<f64> = (0..m)
                            .map(|i| gv.data()[j].to_f() * g.at(i, j).to_f())
                            .collect();
                        let mean_h: f64 = h.iter().sum::<f64>() / m as f64;
                        let mean_hx: f64 =
                            h.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                        for i in 0..m {
                            ggamma[j] += S::from_f(g.at(i, j).to_f() * xhat[i]);
                            gbeta[j] += g.at(i, j);
                            ga[i * n + j] =
                                S::from_f((h[i] - mean_h - xhat[i] * mean_hx) / s);
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(m, n, ga));
                    acc(&mut grads, *gamma, Tensor::vector(ggamma));
                    acc(&mut grads, *beta, Tensor::vector(gbeta));
                }
                Op::BatchNormEval { a, gamma, beta, eps, mean, var } => {
                    let av = &self.nodes[a.0].value;
                    let gv = &self.nodes[gamma.0].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut ga = vec![S::zero(); m * n];
                    let mut ggamma = vec![S::zero(); n];
                    let mut gbeta = vec![S::zero(); n];
                    for j in 0..n {
                        let mu = mean.data()[j].to_f();
                        let s = (var.data()[j].to_f() + eps).sqrt();
                        for i in 0..m {
                            let xhat = (av.at(i, j).to_f() - mu) / s;
                            ggamma[j] += S::from_f(g.at(i, j).to_f() * xhat);
                            gbeta[j] += g.at(i, j);
                            ga[i * n + j] = S::from_f(g.at(i, j).to_f() * gv.data()[j].to_f() / s);
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(m, n, ga));
                    acc(&mut grads, *gamma, Tensor::vector(ggamma));
                    acc(&mut grads, *beta, Tensor::vector(gbeta));
                }
                Op::SoftmaxRows { a } => {
                    let yv = &self.nodes[id].value;
                    let (m, n) = (yv.rows(), yv.cols());
                    let mut ga = vec![S::zero(); m * n];
                    for i in 0..m {
                        let yrow = yv.row_slice(i);
                        let grow = &g.data()[i * n..(i + 1) * n];
                        let dot: f64 = yrow
                            .iter()
                            .zip(grow)
                            .map(|(&y, &gg)| y.to_f() * gg.to_f())
                            .sum();
                        for j in 0..n {
                            ga[i * n + j] =
                                S::from_f(yrow[j].to_f() * (grow[j].to_f() - dot));
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(m, n, ga));
                }
                Op::CrossEntropy { logits, target } => {
                    let lv = &self.nodes[logits.0].value;
                    let xs: Vec<f64> = lv.data().iter().map(|x| x.to_f()).collect();
                    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = xs.iter().map(|x| (x - mx).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let g0 = g.data()[0].to_f();
                    let data = exps
                        .iter()
                        .enumerate()
                        .map(|(j, e)| {
                            let p = e / sum;
                            S::from_f(g0 * (p - if j == *target { 1.0 } else { 0.0 }))
                        })
                        .collect();
                    acc(&mut grads, *logits, Tensor::vector(data));
                }
                Op::SliceCols { a, start, len } => {
                    let av = &self.nodes[a.0].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut ga = Tensor::zeros(&[m, n]);
                    for i in 0..m {
                        for j in 0..*len {
                            ga.data_mut()[i * n + start + j] = g.at(i, j);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols { parts } => {
                    let m = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.nodes[p.0].value.cols();
                        let mut gp = Tensor::zeros(&[m, pc]);
                        for i in 0..m {
                            for j in 0..pc {
                                gp.data_mut()[i * pc + j] = g.at(i, offset + j);
                            }
                        }
                        acc(&mut grads, *p, gp);
                        offset += pc;
                    }
                }
                Op::Row { a, index } => {
                    let av = &self.nodes[a.0].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut ga = Tensor::zeros(&[m, n]);
                    ga.data_mut()[index * n..(index + 1) * n].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::StackRows { parts } => {
                    let n = g.cols();
                    for (i, p) in parts.iter().enumerate() {
                        acc(
                            &mut grads,
                            *p,
                            Tensor::vector(g.data()[i * n..(i + 1) * n].to_vec()),
                        );
                    }
                }
                Op::Transpose { a } => {
                    acc(&mut grads, *a, g.transpose());
                }
                Op::ConcatVec { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let pl = self.nodes[p.0].value.len();
                        acc(
                            &mut grads,
                            *p,
                            Tensor::vector(g.data()[offset..offset + pl].to_vec()),
                        );
                        offset += pl;
                    }
                }
                Op::MaxOverRows { a, winners } => {
                    let av = &self.nodes[a.0].value;
                    let (m, n) = (av.rows(), av.cols());
                    let mut ga = Tensor::zeros(&[m, n]);
                    for (j, &w) in winners.iter().enumerate() {
                        ga.data_mut()[w * n + j] = g.data()[j];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumSq { a } => {
                    let g0 = g.data()[0];
                    let two = S::from_f(2.0);
                    let ga = self.nodes[a.0].value.map(|x| two * g0 * x);
                    acc(&mut grads, *a, ga);
                }
                Op::Conv1dSame { x, kernel } => {
                    let xv = &self.nodes[x.0].value;
                    let kv = &self.nodes[kernel.0].value;
                    let (n, kl) = (xv.len(), kv.len());
                    let c = (kl - 1) / 2;
                    let mut gx = vec![S::zero(); n];
                    let mut gk = vec![S::zero(); kl];
                    for (u, gk_u) in gk.iter_mut().enumerate() {
                        let k_u = kv.data()[u];
                        for t in 0..n {
                            let idx = t as isize + u as isize - c as isize;
                            if idx >= 0 && (idx as usize) < n {
                                gx[idx as usize] += k_u * g.data()[t];
                                *gk_u += g.data()[t] * xv.data()[idx as usize];
                            }
                        }
                    }
                    acc(&mut grads, *x, Tensor::vector(gx));
                    acc(&mut grads, *kernel, Tensor::vector(gk));
                }
                Op::Symmetrize { half } => {
                    let h = self.nodes[half.0].value.len() - 1;
                    let mut gh = vec![S::zero(); h + 1];
                    gh[0] = g.data()[h];
                    for (i, slot) in gh.iter_mut().enumerate().skip(1) {
                        *slot = g.data()[h + i] + g.data()[h - i];
                    }
                    acc(&mut grads, *half, Tensor::vector(gh));
                }
                Op::GccPhat { a, b, max_lag, spec_a, spec_b } => {
                    let n = self.nodes[a.0].value.len();
                    let p = spec_a.len();
                    let (ga, gb) = gcc_phat_backward(&g, *max_lag, spec_a, spec_b, n, p);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
            }
        }
        out
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Tensor<S>>], target: NodeId, delta: Tensor<S>) {
    match &mut grads[target.0] {
        Some(t) => t.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn mean_var<S: Scalar>(xs: &[S]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu: f64 = xs.iter().map(|x| x.to_f()).sum::<f64>() / n;
    let var: f64 = xs.iter().map(|x| (x.to_f() - mu).powi(2)).sum::<f64>() / n;
    (mu, var)
}

fn pad_complex(data: impl Iterator<Item = f64>, n: usize, p: usize) -> Vec<Complex<f64>> {
    let mut out: Vec<Complex<f64>> = data.map(|x| Complex::new(x, 0.0)).collect();
    debug_assert_eq!(out.len(), n);
    out.resize(p, Complex::new(0.0, 0.0));
    out
}

/// Adjoint of the PHAT-weighted correlation. The chain runs backward
/// through lag extraction, the inverse transform, the unit-magnitude
/// normalization (whose Jacobian is the rank-one projector onto the
/// direction orthogonal to the spectrum bin), the conjugate product, and
/// the forward transforms of both inputs.
fn gcc_phat_backward<S: Scalar>(
    g: &Tensor<S>,
    max_lag: usize,
    spec_a: &[Complex<f64>],
    spec_b: &[Complex<f64>],
    n: usize,
    p: usize,
) -> (Tensor<S>, Tensor<S>) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(p);
    let ifft = planner.plan_fft_inverse(p);

    let mut scatter = vec![Complex::new(0.0, 0.0); p];
    for (idx, lag) in (-(max_lag as isize)..=max_lag as isize).enumerate() {
        scatter[lag.rem_euclid(p as isize) as usize].re += g.data()[idx].to_f();
    }
    fft.process(&mut scatter);
    // scatter now holds P * dL/dZ before the 1/P output scaling.
    let mut grad_a_spec = vec![Complex::new(0.0, 0.0); p];
    let mut grad_b_spec = vec![Complex::new(0.0, 0.0); p];
    for k in 0..p {
        let gz = scatter[k] / p as f64;
        let c = spec_a[k].conj() * spec_b[k];
        let r = c.norm();
        let gc = if r > crate::signal::PHAT_EPSILON {
            let dot = c.im * gz.re - c.re * gz.im;
            let scale = dot / (r * r * r);
            Complex::new(scale * c.im, -scale * c.re)
        } else {
            gz / crate::signal::PHAT_EPSILON
        };
        grad_a_spec[k] = gc.conj() * spec_b[k];
        grad_b_spec[k] = gc * spec_a[k];
    }
    ifft.process(&mut grad_a_spec);
    ifft.process(&mut grad_b_spec);
    let ga = Tensor::vector(grad_a_spec[..n].iter().map(|z| S::from_f(z.re)).collect());
    let gb = Tensor::vector(grad_b_spec[..n].iter().map(|z| S::from_f(z.re)).collect());
    (ga, gb)
}
