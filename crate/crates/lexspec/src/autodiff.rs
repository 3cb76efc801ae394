//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The op set is closed: exactly the primitives the encoder and the
//! contrastive loss need, each with a hand-written backward rule. There is no
//! generic broadcasting; the one documented exception is [`Tape::add`], which
//! also accepts a `[rows, cols] + [cols]` row-broadcast for bias terms.
//!
//! Shape or domain violations (mismatched shapes, `log` of a non-positive
//! value, normalizing a zero vector) panic with a message naming the offending
//! shapes or values. Forward values and gradients are bit-deterministic for
//! identical inputs: evaluation order is fixed and single-threaded.
//!
//! A scalar is a tensor of shape `[]` (one element).

use std::cell::RefCell;
use std::rc::Rc;

/// Dense row-major tensor handle. Cloning shares the underlying storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorInner>>,
}

struct TensorInner {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    /// Leaves are tensors not produced by a taped op. Their gradients
    /// accumulate across `backward` calls; non-leaf gradients are scratch
    /// space reset at the start of each `backward`.
    is_leaf: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Constant leaf tensor (no gradient).
    pub fn new(shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_eq!(
            numel(shape),
            values.len(),
            "tensor shape {:?} implies {} values, got {}",
            shape,
            numel(shape),
            values.len()
        );
        Tensor {
            inner: Rc::new(RefCell::new(TensorInner {
                shape: shape.to_vec(),
                values,
                requires_grad: false,
                grad: None,
                is_leaf: true,
            })),
        }
    }

    /// Trainable leaf tensor: gradient accumulator allocated and zeroed.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Tensor {
        let t = Tensor::new(shape, values);
        t.set_requires_grad(true);
        t
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(shape, vec![0.0; numel(shape)])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[], vec![v])
    }

    fn op_output(shape: Vec<usize>, values: Vec<f64>, tracked: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(TensorInner {
                shape,
                values,
                requires_grad: tracked,
                grad: None,
                is_leaf: !tracked,
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(
            inner.values.len(),
            1,
            "item() on tensor of shape {:?}",
            inner.shape
        );
        inner.values[0]
    }

    /// Overwrite the stored values (same length). Intended for optimizer
    /// updates and finite-difference probes on leaves between taped steps;
    /// mutating a tensor that participates in a live tape invalidates it.
    pub fn set_values(&self, values: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(
            inner.values.len(),
            values.len(),
            "set_values length {} != tensor length {} (shape {:?})",
            values.len(),
            inner.values.len(),
            inner.shape
        );
        inner.values.copy_from_slice(values);
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, value: bool) {
        let mut inner = self.inner.borrow_mut();
        inner.requires_grad = value;
        if value && inner.grad.is_none() {
            let n = inner.values.len();
            inner.grad = Some(vec![0.0; n]);
        }
        if !value {
            inner.grad = None;
        }
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        if let Some(g) = inner.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub(crate) fn has_grad(&self) -> bool {
        self.inner.borrow().grad.is_some()
    }

    fn is_leaf(&self) -> bool {
        self.inner.borrow().is_leaf
    }

    pub(crate) fn accumulate(&self, delta: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        if !inner.requires_grad {
            return;
        }
        if inner.grad.is_none() {
            inner.grad = Some(vec![0.0; inner.values.len()]);
        }
        let g = inner.grad.as_mut().unwrap();
        assert_eq!(g.len(), delta.len(), "gradient length mismatch");
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().values)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

struct Node {
    output: Tensor,
    backprop: Box<dyn Fn()>,
}

/// Records the forward computation so gradients can be replayed in reverse.
///
/// One tape belongs to one training step. `Tape::no_grad()` gives a
/// non-recording tape for pure evaluation: forward values are identical but
/// nothing can be backpropagated through it.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
    cleared: RefCell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            cleared: RefCell::new(false),
        }
    }

    /// Non-recording tape: ops compute forward values only.
    pub fn no_grad() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: false,
            cleared: RefCell::new(false),
        }
    }

    fn push(&self, output: Tensor, backprop: Box<dyn Fn()>) {
        self.nodes.borrow_mut().push(Node { output, backprop });
    }

    fn track(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all recorded nodes. A cleared tape rejects `backward`.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        *self.cleared.borrow_mut() = true;
    }

    /// Accumulate `d loss / d t` into the grad of every `requires_grad`
    /// tensor reachable from `loss`. Repeated calls without zeroing leaf
    /// grads accumulate; non-leaf grads are reset on every call.
    pub fn backward(&self, loss: &Tensor) {
        assert!(
            !*self.cleared.borrow(),
            "backward through a cleared tape"
        );
        assert_eq!(
            loss.len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        );
        let nodes = self.nodes.borrow();
        for node in nodes.iter() {
            if !node.output.is_leaf() {
                node.output.zero_grad();
            }
        }
        loss.accumulate(&[1.0]);
        for node in nodes.iter().rev() {
            // A node whose output never received a gradient is not an
            // ancestor of the loss (e.g. a pooled layer the loss ignores);
            // there is nothing to propagate through it.
            if node.output.has_grad() {
                (node.backprop)();
            }
        }
    }

    // ---- primitives -------------------------------------------------------

    /// Select rows of a `[rows, cols]` table; duplicate indices allowed.
    pub fn gather_rows(&self, table: &Tensor, indices: &[usize]) -> Tensor {
        let shape = table.shape();
        assert_eq!(shape.len(), 2, "gather_rows expects rank 2, got {:?}", shape);
        let (rows, cols) = (shape[0], shape[1]);
        for &i in indices {
            assert!(i < rows, "gather_rows index {} out of range 0..{}", i, rows);
        }
        let values = table.with_values(|v| {
            let mut out = Vec::with_capacity(indices.len() * cols);
            for &i in indices {
                out.extend_from_slice(&v[i * cols..(i + 1) * cols]);
            }
            out
        });
        let out = Tensor::op_output(vec![indices.len(), cols], values, self.track(&[table]));
        if self.track(&[table]) {
            let table = table.clone();
            let o = out.clone();
            let indices = indices.to_vec();
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    let mut dt = vec![0.0; table.len()];
                    for (k, &i) in indices.iter().enumerate() {
                        for c in 0..cols {
                            dt[i * cols + c] += go[k * cols + c];
                        }
                    }
                    table.accumulate(&dt);
                }),
            );
        }
        out
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (sa, sb) = (a.shape(), b.shape());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shape mismatch: {:?} x {:?}",
            sa,
            sb
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let values = a.with_values(|av| {
            b.with_values(|bv| {
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        for j in 0..n {
                            out[i * n + j] += aip * bv[p * n + j];
                        }
                    }
                }
                out
            })
        });
        let out = Tensor::op_output(vec![m, n], values, self.track(&[a, b]));
        if self.track(&[a, b]) {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    if a.requires_grad() {
                        // dA = dC . B^T
                        let da = b.with_values(|bv| {
                            let mut da = vec![0.0; m * k];
                            for i in 0..m {
                                for p in 0..k {
                                    let mut s = 0.0;
                                    for j in 0..n {
                                        s += go[i * n + j] * bv[p * n + j];
                                    }
                                    da[i * k + p] = s;
                                }
                            }
                            da
                        });
                        a.accumulate(&da);
                    }
                    if b.requires_grad() {
                        // dB = A^T . dC
                        let db = a.with_values(|av| {
                            let mut db = vec![0.0; k * n];
                            for p in 0..k {
                                for i in 0..m {
                                    let aip = av[i * k + p];
                                    for j in 0..n {
                                        db[p * n + j] += aip * go[i * n + j];
                                    }
                                }
                            }
                            db
                        });
                        b.accumulate(&db);
                    }
                }),
            );
        }
        out
    }

    /// `[m, k] x [n, k]^T -> [m, n]` (matmul with transposed right operand).
    pub fn matmul_nt(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (sa, sb) = (a.shape(), b.shape());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[1],
            "matmul_nt shape mismatch: {:?} x {:?}^T",
            sa,
            sb
        );
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let values = a.with_values(|av| {
            b.with_values(|bv| {
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let mut s = 0.0;
                        for p in 0..k {
                            s += av[i * k + p] * bv[j * k + p];
                        }
                        out[i * n + j] = s;
                    }
                }
                out
            })
        });
        let out = Tensor::op_output(vec![m, n], values, self.track(&[a, b]));
        if self.track(&[a, b]) {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    if a.requires_grad() {
                        // dA = dC . B
                        let da = b.with_values(|bv| {
                            let mut da = vec![0.0; m * k];
                            for i in 0..m {
                                for j in 0..n {
                                    let g = go[i * n + j];
                                    for p in 0..k {
                                        da[i * k + p] += g * bv[j * k + p];
                                    }
                                }
                            }
                            da
                        });
                        a.accumulate(&da);
                    }
                    if b.requires_grad() {
                        // dB = dC^T . A
                        let db = a.with_values(|av| {
                            let mut db = vec![0.0; n * k];
                            for i in 0..m {
                                for j in 0..n {
                                    let g = go[i * n + j];
                                    for p in 0..k {
                                        db[j * k + p] += g * av[i * k + p];
                                    }
                                }
                            }
                            db
                        });
                        b.accumulate(&db);
                    }
                }),
            );
        }
        out
    }

    /// Elementwise sum. Accepts equal shapes, or `[m, n] + [n]` where the
    /// right operand is broadcast across rows (bias add).
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (sa, sb) = (a.shape(), b.shape());
        let row_broadcast = sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0];
        assert!(
            sa == sb || row_broadcast,
            "add shape mismatch: {:?} + {:?}",
            sa,
            sb
        );
        let values = a.with_values(|av| {
            b.with_values(|bv| {
                if row_broadcast {
                    let n = sb[0];
                    av.iter()
                        .enumerate()
                        .map(|(i, &x)| x + bv[i % n])
                        .collect()
                } else {
                    av.iter().zip(bv).map(|(&x, &y)| x + y).collect()
                }
            })
        });
        let out = Tensor::op_output(sa.clone(), values, self.track(&[a, b]));
        if self.track(&[a, b]) {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            let n = if row_broadcast { sb[0] } else { 0 };
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    if a.requires_grad() {
                        a.accumulate(&go);
                    }
                    if b.requires_grad() {
                        if n > 0 {
                            let mut db = vec![0.0; n];
                            for (i, &g) in go.iter().enumerate() {
                                db[i % n] += g;
                            }
                            b.accumulate(&db);
                        } else {
                            b.accumulate(&go);
                        }
                    }
                }),
            );
        }
        out
    }

    /// Elementwise product of equal-shaped tensors.
    pub fn mul_elementwise(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (sa, sb) = (a.shape(), b.shape());
        assert_eq!(sa, sb, "mul_elementwise shape mismatch: {:?} * {:?}", sa, sb);
        let values = a.with_values(|av| {
            b.with_values(|bv| av.iter().zip(bv).map(|(&x, &y)| x * y).collect())
        });
        let out = Tensor::op_output(sa, values, self.track(&[a, b]));
        if self.track(&[a, b]) {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    if a.requires_grad() {
                        let da = b.with_values(|bv| {
                            go.iter().zip(bv).map(|(&g, &y)| g * y).collect::<Vec<_>>()
                        });
                        a.accumulate(&da);
                    }
                    if b.requires_grad() {
                        let db = a.with_values(|av| {
                            go.iter().zip(av).map(|(&g, &x)| g * x).collect::<Vec<_>>()
                        });
                        b.accumulate(&db);
                    }
                }),
            );
        }
        out
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let values = a.with_values(|av| av.iter().map(|&x| c * x).collect());
        let out = Tensor::op_output(a.shape(), values, self.track(&[a]));
        if self.track(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    let da: Vec<f64> = go.iter().map(|&g| c * g).collect();
                    a.accumulate(&da);
                }),
            );
        }
        out
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&self, a: &Tensor) -> Tensor {
        let values = a.with_values(|av| av.iter().map(|&x| x.max(0.0)).collect());
        let out = Tensor::op_output(a.shape(), values, self.track(&[a]));
        if self.track(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    let da = a.with_values(|av| {
                        go.iter()
                            .zip(av)
                            .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                            .collect::<Vec<_>>()
                    });
                    a.accumulate(&da);
                }),
            );
        }
        out
    }

    /// Elementwise exponential.
    pub fn exp(&self, a: &Tensor) -> Tensor {
        let values: Vec<f64> = a.with_values(|av| av.iter().map(|&x| x.exp()).collect());
        let out = Tensor::op_output(a.shape(), values.clone(), self.track(&[a]));
        if self.track(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    let da: Vec<f64> = go.iter().zip(&values).map(|(&g, &y)| g * y).collect();
                    a.accumulate(&da);
                }),
            );
        }
        out
    }

    /// Elementwise natural logarithm. Zero or negative input is structural
    /// misuse and panics; NaN propagates so numerical blow-ups surface as a
    /// non-finite result the caller can detect.
    pub fn log(&self, a: &Tensor) -> Tensor {
        let values: Vec<f64> = a.with_values(|av| {
            av.iter()
                .map(|&x| {
                    assert!(x > 0.0 || x.is_nan(), "log of non-positive value {}", x);
                    x.ln()
                })
                .collect()
        });
        let out = Tensor::op_output(a.shape(), values, self.track(&[a]));
        if self.track(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    let da = a.with_values(|av| {
                        go.iter().zip(av).map(|(&g, &x)| g / x).collect::<Vec<_>>()
                    });
                    a.accumulate(&da);
                }),
            );
        }
        out
    }

    /// Softmax along the last axis (max-shifted for stability). Rows sum to 1.
    pub fn softmax_lastaxis(&self, a: &Tensor) -> Tensor {
        let shape = a.shape();
        assert!(
            !shape.is_empty(),
            "softmax_lastaxis requires rank >= 1, got shape {:?}",
            shape
        );
        let n = *shape.last().unwrap();
        assert!(n > 0, "softmax_lastaxis over empty axis, shape {:?}", shape);
        let rows = numel(&shape) / n;
        let values: Vec<f64> = a.with_values(|av| {
            let mut out = vec![0.0; av.len()];
            for r in 0..rows {
                let row = &av[r * n..(r + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, &x) in row.iter().enumerate() {
                    let e = (x - max).exp();
                    out[r * n + j] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[r * n + j] /= sum;
                }
            }
            out
        });
        let out = Tensor::op_output(shape, values.clone(), self.track(&[a]));
        if self.track(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    let mut da = vec![0.0; values.len()];
                    for r in 0..rows {
                        let y = &values[r * n..(r + 1) * n];
                        let gy = &go[r * n..(r + 1) * n];
                        let dot: f64 = y.iter().zip(gy).map(|(&yi, &gi)| yi * gi).sum();
                        for j in 0..n {
                            da[r * n + j] = y[j] * (gy[j] - dot);
                        }
                    }
                    a.accumulate(&da);
                }),
            );
        }
        out
    }

    /// Mean along one axis. `[n]` with axis 0 reduces to a scalar `[]`;
    /// `[m, n]` reduces to `[n]` (axis 0) or `[m]` (axis 1).
    pub fn mean_axis(&self, a: &Tensor, axis: usize) -> Tensor {
        let shape = a.shape();
        assert!(
            axis < shape.len(),
            "mean_axis axis {} out of range for shape {:?}",
            axis,
            shape
        );
        assert!(
            shape.len() <= 2,
            "mean_axis supports rank 1 and 2, got shape {:?}",
            shape
        );
        assert!(shape[axis] > 0, "mean_axis over empty axis, shape {:?}", shape);
        let (out_shape, values): (Vec<usize>, Vec<f64>) = a.with_values(|av| {
            if shape.len() == 1 {
                let n = shape[0];
                (vec![], vec![av.iter().sum::<f64>() / n as f64])
            } else {
                let (m, n) = (shape[0], shape[1]);
                if axis == 0 {
                    let mut out = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            out[j] += av[i * n + j];
                        }
                    }
                    out.iter_mut().for_each(|x| *x /= m as f64);
                    (vec![n], out)
                } else {
                    let mut out = vec![0.0; m];
                    for i in 0..m {
                        out[i] = av[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
                    }
                    (vec![m], out)
                }
            }
        });
        let out = Tensor::op_output(out_shape, values, self.track(&[a]));
        if self.track(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            let shape = shape.clone();
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    let da = if shape.len() == 1 {
                        let n = shape[0];
                        vec![go[0] / n as f64; n]
                    } else {
                        let (m, n) = (shape[0], shape[1]);
                        let mut da = vec![0.0; m * n];
                        if axis == 0 {
                            for i in 0..m {
                                for j in 0..n {
                                    da[i * n + j] = go[j] / m as f64;
                                }
                            }
                        } else {
                            for i in 0..m {
                                for j in 0..n {
                                    da[i * n + j] = go[i] / n as f64;
                                }
                            }
                        }
                        da
                    };
                    a.accumulate(&da);
                }),
            );
        }
        out
    }

    /// Stack inputs as rows. Each part is either `[cols]` (one row) or
    /// `[rows, cols]`; all parts must agree on `cols`.
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_rows of zero tensors");
        let cols = {
            let s = parts[0].shape();
            *s.last()
                .unwrap_or_else(|| panic!("concat_rows part of shape {:?}", s))
        };
        let mut row_counts = Vec::with_capacity(parts.len());
        let mut total_rows = 0usize;
        for p in parts {
            let s = p.shape();
            let rows = match s.len() {
                1 => {
                    assert_eq!(s[0], cols, "concat_rows width mismatch: {:?} vs cols {}", s, cols);
                    1
                }
                2 => {
                    assert_eq!(s[1], cols, "concat_rows width mismatch: {:?} vs cols {}", s, cols);
                    s[0]
                }
                _ => panic!("concat_rows supports rank 1 and 2, got shape {:?}", s),
            };
            row_counts.push(rows);
            total_rows += rows;
        }
        let mut values = Vec::with_capacity(total_rows * cols);
        for p in parts {
            p.with_values(|v| values.extend_from_slice(v));
        }
        let tracked = self.recording && parts.iter().any(|t| t.requires_grad());
        let out = Tensor::op_output(vec![total_rows, cols], values, tracked);
        if tracked {
            let parts: Vec<Tensor> = parts.iter().map(|&t| t.clone()).collect();
            let o = out.clone();
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    let mut offset = 0usize;
                    for (p, &rows) in parts.iter().zip(&row_counts) {
                        let chunk = &go[offset..offset + rows * cols];
                        if p.requires_grad() {
                            p.accumulate(chunk);
                        }
                        offset += rows * cols;
                    }
                }),
            );
        }
        out
    }

    /// Normalize a vector to unit Euclidean norm; panics on zero norm.
    pub fn l2_normalize(&self, a: &Tensor) -> Tensor {
        let shape = a.shape();
        assert_eq!(shape.len(), 1, "l2_normalize expects rank 1, got {:?}", shape);
        let norm = a.with_values(|av| av.iter().map(|&x| x * x).sum::<f64>().sqrt());
        assert!(norm != 0.0, "l2_normalize of zero-norm vector");
        let values: Vec<f64> = a.with_values(|av| av.iter().map(|&x| x / norm).collect());
        let out = Tensor::op_output(shape, values.clone(), self.track(&[a]));
        if self.track(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let go = o.grad().expect("output grad");
                    let dot: f64 = go.iter().zip(&values).map(|(&g, &y)| g * y).sum();
                    let da: Vec<f64> = go
                        .iter()
                        .zip(&values)
                        .map(|(&g, &y)| (g - dot * y) / norm)
                        .collect();
                    a.accumulate(&da);
                }),
            );
        }
        out
    }

    /// Cosine similarity of two equal-length vectors; scalar output.
    /// Panics if either vector has zero norm.
    pub fn cosine(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (sa, sb) = (a.shape(), b.shape());
        assert!(
            sa.len() == 1 && sa == sb,
            "cosine expects equal rank-1 shapes, got {:?} and {:?}",
            sa,
            sb
        );
        let (dot, na, nb) = a.with_values(|av| {
            b.with_values(|bv| {
                let dot: f64 = av.iter().zip(bv).map(|(&x, &y)| x * y).sum();
                let na = av.iter().map(|&x| x * x).sum::<f64>().sqrt();
                let nb = bv.iter().map(|&y| y * y).sum::<f64>().sqrt();
                (dot, na, nb)
            })
        });
        assert!(na != 0.0 && nb != 0.0, "cosine of zero-norm vector");
        let cos = dot / (na * nb);
        let out = Tensor::op_output(vec![], vec![cos], self.track(&[a, b]));
        if self.track(&[a, b]) {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.push(
                out.clone(),
                Box::new(move || {
                    let g = o.grad().expect("output grad")[0];
                    if a.requires_grad() {
                        let da = a.with_values(|av| {
                            b.with_values(|bv| {
                                av.iter()
                                    .zip(bv)
                                    .map(|(&x, &y)| g * (y / (na * nb) - cos * x / (na * na)))
                                    .collect::<Vec<_>>()
                            })
                        });
                        a.accumulate(&da);
                    }
                    if b.requires_grad() {
                        let db = a.with_values(|av| {
                            b.with_values(|bv| {
                                av.iter()
                                    .zip(bv)
                                    .map(|(&x, &y)| g * (x / (na * nb) - cos * y / (nb * nb)))
                                    .collect::<Vec<_>>()
                            })
                        });
                        b.accumulate(&db);
                    }
                }),
            );
        }
        out
    }
}

/// Compare analytic gradients with central finite differences.
///
/// `f` rebuilds the forward computation from the current parameter values on
/// the tape it is given; it must be deterministic. The analytic side runs one
/// recorded forward plus `backward`; the numeric side probes every entry of
/// every parameter at `theta +- h` on non-recording tapes. Returns the worst
/// relative error `|a - n| / max(1e-8, |a| + |n|)` over all entries.
///
/// Panics if `f` produces a non-finite value.
pub fn finite_difference_check<F>(f: &F, params: &[Tensor], h: f64) -> f64
where
    F: Fn(&Tape) -> Tensor,
{
    assert!(h > 0.0, "finite_difference_check requires h > 0");
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape);
    assert!(
        loss.item().is_finite(),
        "finite_difference_check: non-finite loss {}",
        loss.item()
    );
    tape.backward(&loss);
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut worst = 0.0f64;
    for (p, pg) in params.iter().zip(&analytic) {
        let base = p.values();
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + h;
            p.set_values(&probe);
            let up = f(&Tape::no_grad()).item();
            probe[i] = base[i] - h;
            p.set_values(&probe);
            let down = f(&Tape::no_grad()).item();
            p.set_values(&base);
            assert!(
                up.is_finite() && down.is_finite(),
                "finite_difference_check: non-finite probe value"
            );
            let numeric = (up - down) / (2.0 * h);
            let a = pg[i];
            let rel = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::param(shape, values)
    }

    #[test]
    fn softmax_of_uniform_row_is_uniform() {
        let t = Tape::no_grad();
        let x = Tensor::new(&[4], vec![0.7; 4]);
        let y = t.softmax_lastaxis(&x);
        for v in y.values() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn cosine_of_vector_with_itself_is_one() {
        let t = Tape::no_grad();
        let v = Tensor::new(&[3], vec![0.2, -1.5, 3.0]);
        let c = t.cosine(&v, &v);
        assert_abs_diff_eq!(c.item(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_axis_zero_averages_rows() {
        let t = Tape::no_grad();
        let x = Tensor::new(&[2, 2], vec![1.0, 3.0, 5.0, 7.0]);
        let m = t.mean_axis(&x, 0);
        assert_eq!(m.shape(), vec![2]);
        assert_eq!(m.values(), vec![3.0, 5.0]);
    }

    #[test]
    fn mean_axis_one_averages_columns() {
        let t = Tape::no_grad();
        let x = Tensor::new(&[2, 2], vec![1.0, 3.0, 5.0, 7.0]);
        let m = t.mean_axis(&x, 1);
        assert_eq!(m.values(), vec![2.0, 6.0]);
    }

    #[test]
    fn grad_of_mean_is_uniform() {
        let t = Tape::new();
        let x = Tensor::param(&[5], vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let loss = t.mean_axis(&x, 0);
        t.backward(&loss);
        for g in x.grad().unwrap() {
            assert_abs_diff_eq!(g, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn cosine_grad_vanishes_at_identical_vectors() {
        let t = Tape::new();
        let a = Tensor::param(&[3], vec![1.0, 2.0, -1.0]);
        let b = Tensor::new(&[3], vec![1.0, 2.0, -1.0]);
        let c = t.cosine(&a, &b);
        t.backward(&c);
        for g in a.grad().unwrap() {
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn matmul_chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, &[2, 2]);
        let b = rand_tensor(&mut rng, &[2, 2]);
        let c = rand_tensor(&mut rng, &[2, 2]);
        let params = [a.clone(), b.clone(), c.clone()];
        let f = |t: &Tape| {
            let ab = t.matmul(&a, &b);
            let abc = t.matmul(&ab, &c);
            let flat = t.mean_axis(&abc, 0);
            t.mean_axis(&flat, 0)
        };
        let err = finite_difference_check(&f, &params, 1e-5);
        assert!(err < 1e-6, "matmul chain rel error {}", err);
    }

    #[test]
    fn fd_check_on_square_function() {
        let x = Tensor::param(&[], vec![3.0]);
        let xc = x.clone();
        let f = move |t: &Tape| t.mul_elementwise(&xc, &xc);
        let err = finite_difference_check(&f, std::slice::from_ref(&x), 1e-5);
        assert!(err < 1e-9, "x^2 rel error {}", err);
        assert_abs_diff_eq!(x.grad().unwrap()[0], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn fd_check_on_constant_function() {
        let x = Tensor::param(&[2], vec![1.0, -2.0]);
        let f = |t: &Tape| {
            let c = Tensor::new(&[], vec![4.0]);
            t.scale(&c, 1.0)
        };
        let err = finite_difference_check(&f, std::slice::from_ref(&x), 1e-5);
        assert_eq!(err, 0.0);
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    }

    // Every primitive gets a finite-difference pass through a composition
    // that reduces to a scalar.
    fn reduce_to_scalar(t: &Tape, x: &Tensor) -> Tensor {
        match x.shape().len() {
            0 => t.scale(x, 1.0),
            1 => t.mean_axis(x, 0),
            2 => {
                let rows = t.mean_axis(x, 0);
                t.mean_axis(&rows, 0)
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn gradcheck_gather_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let table = rand_tensor(&mut rng, &[4, 3]);
        let f = |t: &Tape| {
            let g = t.gather_rows(&table, &[0, 2, 2, 3]);
            reduce_to_scalar(t, &g)
        };
        assert!(finite_difference_check(&f, std::slice::from_ref(&table), 1e-5) < 1e-8);
    }

    #[test]
    fn gradcheck_matmul_nt() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[2, 4]);
        let f = |t: &Tape| {
            let c = t.matmul_nt(&a, &b);
            reduce_to_scalar(t, &c)
        };
        assert!(finite_difference_check(&f, &[a.clone(), b.clone()], 1e-5) < 1e-8);
    }

    #[test]
    fn gradcheck_add_broadcast_and_mul() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(&mut rng, &[3, 2]);
        let bias = rand_tensor(&mut rng, &[2]);
        let y = rand_tensor(&mut rng, &[3, 2]);
        let f = |t: &Tape| {
            let s = t.add(&x, &bias);
            let m = t.mul_elementwise(&s, &y);
            reduce_to_scalar(t, &m)
        };
        let params = [x.clone(), bias.clone(), y.clone()];
        assert!(finite_difference_check(&f, &params, 1e-5) < 1e-8);
    }

    #[test]
    fn gradcheck_relu_scale_exp_log() {
        let x = Tensor::param(&[4], vec![0.5, -0.3, 1.2, 2.0]);
        let f = |t: &Tape| {
            let r = t.relu(&x);
            let one = Tensor::new(&[4], vec![1.0; 4]);
            let shifted = t.add(&r, &one);
            let l = t.log(&shifted);
            let e = t.exp(&l);
            let s = t.scale(&e, 0.7);
            reduce_to_scalar(t, &s)
        };
        assert!(finite_difference_check(&f, std::slice::from_ref(&x), 1e-5) < 1e-8);
    }

    #[test]
    fn gradcheck_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = rand_tensor(&mut rng, &[3, 5]);
        let w = rand_tensor(&mut rng, &[3, 5]);
        let f = |t: &Tape| {
            let s = t.softmax_lastaxis(&x);
            let weighted = t.mul_elementwise(&s, &w);
            reduce_to_scalar(t, &weighted)
        };
        assert!(finite_difference_check(&f, &[x.clone(), w.clone()], 1e-5) < 1e-7);
    }

    #[test]
    fn gradcheck_concat_and_normalize_and_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = rand_tensor(&mut rng, &[3]);
        let b = rand_tensor(&mut rng, &[2, 3]);
        let c = rand_tensor(&mut rng, &[3]);
        let f = |t: &Tape| {
            let stacked = t.concat_rows(&[&a, &b]);
            let pooled = t.mean_axis(&stacked, 0);
            let unit = t.l2_normalize(&pooled);
            t.cosine(&unit, &c)
        };
        let params = [a.clone(), b.clone(), c.clone()];
        assert!(finite_difference_check(&f, &params, 1e-5) < 1e-7);
    }

    #[test]
    fn backward_accumulates_on_repeated_calls() {
        let t = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let loss = t.mean_axis(&x, 0);
        t.backward(&loss);
        t.backward(&loss);
        for g in x.grad().unwrap() {
            assert_abs_diff_eq!(g, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn backward_linearity() {
        let x = Tensor::param(&[3], vec![0.4, -0.2, 0.9]);
        let run = |a: f64, b: f64| -> Vec<f64> {
            x.zero_grad();
            let t = Tape::new();
            let f = t.mean_axis(&x, 0); // linear part
            let sq = t.mul_elementwise(&x, &x);
            let g = t.mean_axis(&sq, 0);
            let combo = t.add(&t.scale(&f, a), &t.scale(&g, b));
            t.backward(&combo);
            x.grad().unwrap()
        };
        let gf = run(1.0, 0.0);
        let gg = run(0.0, 1.0);
        let combined = run(2.5, -1.5);
        for i in 0..3 {
            assert_abs_diff_eq!(combined[i], 2.5 * gf[i] - 1.5 * gg[i], epsilon = 1e-10);
        }
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch")]
    fn matmul_shape_mismatch_panics() {
        let t = Tape::no_grad();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        t.matmul(&a, &b);
    }

    #[test]
    #[should_panic(expected = "log of non-positive")]
    fn log_of_zero_panics() {
        let t = Tape::no_grad();
        t.log(&Tensor::zeros(&[1]));
    }

    #[test]
    #[should_panic(expected = "zero-norm")]
    fn normalize_zero_vector_panics() {
        let t = Tape::no_grad();
        t.l2_normalize(&Tensor::zeros(&[3]));
    }

    #[test]
    #[should_panic(expected = "cleared tape")]
    fn backward_through_cleared_tape_panics() {
        let t = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let loss = t.mean_axis(&x, 0);
        t.clear();
        t.backward(&loss);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_on_non_scalar_panics() {
        let t = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = t.scale(&x, 2.0);
        t.backward(&y);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let t = Tape::new();
            let x = Tensor::param(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]);
            let y = t.matmul(&x, &x);
            let s = t.softmax_lastaxis(&y);
            let loss = reduce_to_scalar(&t, &s);
            t.backward(&loss);
            (loss.item().to_bits(), x.grad().unwrap().iter().map(|g| g.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    proptest::proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-10.0f64..10.0, 8)) {
            let t = Tape::no_grad();
            let x = Tensor::new(&[2, 4], vals);
            let y = t.softmax_lastaxis(&x);
            let v = y.values();
            for r in 0..2 {
                let s: f64 = v[r * 4..(r + 1) * 4].iter().sum();
                proptest::prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn l2_normalize_is_unit_norm(vals in proptest::collection::vec(-10.0f64..10.0, 5)) {
            proptest::prop_assume!(vals.iter().any(|&x| x.abs() > 1e-6));
            let t = Tape::no_grad();
            let x = Tensor::new(&[5], vals);
            let y = t.l2_normalize(&x);
            let n: f64 = y.values().iter().map(|&v| v * v).sum::<f64>().sqrt();
            proptest::prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
