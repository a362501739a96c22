//! Reverse-mode automatic differentiation over [`Array`] values.
//!
//! A [`Var`] wraps an array together with edges to the variables it was
//! computed from; each edge carries a closure that maps the upstream gradient
//! to this edge's contribution. `backward()` walks the graph once in reverse
//! topological order and accumulates gradients additively across fan-out, so
//! shared subexpressions (diamonds) come out as the sum of path gradients.
//!
//! Graphs are built per forward pass and dropped afterwards. A graph is
//! confined to one thread from construction through `backward()`.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{CoreError, Result};
use crate::tensor::{check_same_shape, mm_nn_acc, mm_nt_acc, mm_tn_acc, Array};

type GradFn = Box<dyn Fn(&Array) -> Array>;

struct Edge {
    parent: Var,
    grad_fn: GradFn,
}

struct Node {
    value: Array,
    grad: Option<Array>,
    edges: Vec<Edge>,
}

/// A gradient-tracked array value.
#[derive(Clone)]
pub struct Var {
    node: Rc<RefCell<Node>>,
}

impl Var {
    /// A leaf variable (no inputs). Gradients accumulate here.
    pub fn leaf(value: Array) -> Self {
        Var::from_node(value, Vec::new())
    }

    fn from_node(value: Array, edges: Vec<Edge>) -> Self {
        Var {
            node: Rc::new(RefCell::new(Node {
                value,
                grad: None,
                edges,
            })),
        }
    }

    pub fn value(&self) -> Array {
        self.node.borrow().value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().value.shape().to_vec()
    }

    pub fn scalar_value(&self) -> Result<f64> {
        self.node.borrow().value.scalar_value()
    }

    /// Gradient accumulated by the last `backward()`; `None` if this variable
    /// was not reached.
    pub fn grad(&self) -> Option<Array> {
        self.node.borrow().grad.clone()
    }

    /// Gradient, or zeros when the variable did not participate in the loss.
    pub fn grad_or_zeros(&self) -> Array {
        let n = self.node.borrow();
        match &n.grad {
            Some(g) => g.clone(),
            None => Array::zeros(n.value.shape()),
        }
    }

    fn key(&self) -> *const RefCell<Node> {
        Rc::as_ptr(&self.node)
    }

    /// Reverse pass from a scalar root: fills `grad` on every reachable
    /// variable with d(root)/d(var). Visits each node exactly once.
    pub fn backward(&self) -> Result<()> {
        {
            let n = self.node.borrow();
            if !n.value.is_scalar() {
                return Err(CoreError::Contract {
                    op: "backward",
                    detail: format!("root must be scalar, shape is {:?}", n.value.shape()),
                });
            }
        }

        // Iterative post-order DFS over parent edges.
        let mut order: Vec<Var> = Vec::new();
        let mut visited: HashSet<*const RefCell<Node>> = HashSet::new();
        let mut stack: Vec<(Var, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key());
        while let Some((var, idx)) = stack.pop() {
            let next = {
                let n = var.node.borrow();
                n.edges.get(idx).map(|e| e.parent.clone())
            };
            match next {
                Some(parent) => {
                    stack.push((var, idx + 1));
                    if visited.insert(parent.key()) {
                        stack.push((parent, 0));
                    }
                }
                None => order.push(var),
            }
        }

        // Reset and seed.
        for var in &order {
            let mut n = var.node.borrow_mut();
            let shape = n.value.shape().to_vec();
            n.grad = Some(Array::zeros(&shape));
        }
        self.node.borrow_mut().grad = Some(Array::scalar(1.0));

        // Root last in post-order; walk back towards the leaves.
        for var in order.iter().rev() {
            let n = var.node.borrow();
            let g = n.grad.as_ref().expect("grad initialized").clone();
            for edge in &n.edges {
                let contribution = (edge.grad_fn)(&g);
                let mut pn = edge.parent.node.borrow_mut();
                let pg = pn.grad.as_mut().expect("grad initialized");
                debug_assert!(pg.same_shape(&contribution));
                for (dst, src) in pg.data_mut().iter_mut().zip(contribution.data()) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }

    // ---- arithmetic --------------------------------------------------------

    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        let a = self.value();
        let b = rhs.value();
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        mm_nn_acc(a.data(), b.data(), &mut out, m, k, n);
        let value = Array::new(vec![m, n], out)?;

        let b_for_da = b.clone();
        let a_for_db = a;
        let edges = vec![
            Edge {
                parent: self.clone(),
                // dA = G · Bᵀ
                grad_fn: Box::new(move |g: &Array| {
                    let mut da = vec![0.0; m * k];
                    mm_nt_acc(g.data(), b_for_da.data(), &mut da, m, n, k);
                    Array::new(vec![m, k], da).expect("shape")
                }),
            },
            Edge {
                parent: rhs.clone(),
                // dB = Aᵀ · G
                grad_fn: Box::new(move |g: &Array| {
                    let mut db = vec![0.0; k * n];
                    mm_tn_acc(a_for_db.data(), g.data(), &mut db, k, m, n);
                    Array::new(vec![k, n], db).expect("shape")
                }),
            },
        ];
        Ok(Var::from_node(value, edges))
    }

    pub fn add(&self, rhs: &Var) -> Result<Var> {
        let a = self.value();
        let b = rhs.value();
        check_same_shape("add", &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Array::new(a.shape().to_vec(), data)?;
        let edges = vec![
            Edge {
                parent: self.clone(),
                grad_fn: Box::new(|g: &Array| g.clone()),
            },
            Edge {
                parent: rhs.clone(),
                grad_fn: Box::new(|g: &Array| g.clone()),
            },
        ];
        Ok(Var::from_node(value, edges))
    }

    pub fn sub(&self, rhs: &Var) -> Result<Var> {
        let a = self.value();
        let b = rhs.value();
        check_same_shape("sub", &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let value = Array::new(a.shape().to_vec(), data)?;
        let edges = vec![
            Edge {
                parent: self.clone(),
                grad_fn: Box::new(|g: &Array| g.clone()),
            },
            Edge {
                parent: rhs.clone(),
                grad_fn: Box::new(|g: &Array| {
                    let data = g.data().iter().map(|x| -x).collect();
                    Array::new(g.shape().to_vec(), data).expect("shape")
                }),
            },
        ];
        Ok(Var::from_node(value, edges))
    }

    pub fn mul(&self, rhs: &Var) -> Result<Var> {
        let a = self.value();
        let b = rhs.value();
        check_same_shape("mul", &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let value = Array::new(a.shape().to_vec(), data)?;
        let b_cap = b.clone();
        let a_cap = a;
        let edges = vec![
            Edge {
                parent: self.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    let data = g.data().iter().zip(b_cap.data()).map(|(x, y)| x * y).collect();
                    Array::new(g.shape().to_vec(), data).expect("shape")
                }),
            },
            Edge {
                parent: rhs.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    let data = g.data().iter().zip(a_cap.data()).map(|(x, y)| x * y).collect();
                    Array::new(g.shape().to_vec(), data).expect("shape")
                }),
            },
        ];
        Ok(Var::from_node(value, edges))
    }

    pub fn scale(&self, factor: f64) -> Var {
        let a = self.value();
        let data = a.data().iter().map(|x| x * factor).collect();
        let value = Array::new(a.shape().to_vec(), data).expect("shape");
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let data = g.data().iter().map(|x| x * factor).collect();
                Array::new(g.shape().to_vec(), data).expect("shape")
            }),
        }];
        Var::from_node(value, edges)
    }

    /// ReLU; the gradient at exactly 0 is 0.
    pub fn relu(&self) -> Var {
        let a = self.value();
        let data = a.data().iter().map(|x| x.max(0.0)).collect();
        let value = Array::new(a.shape().to_vec(), data).expect("shape");
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let data = g
                    .data()
                    .iter()
                    .zip(a.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                Array::new(g.shape().to_vec(), data).expect("shape")
            }),
        }];
        Var::from_node(value, edges)
    }

    pub fn sin(&self) -> Var {
        let a = self.value();
        let data = a.data().iter().map(|x| x.sin()).collect();
        let value = Array::new(a.shape().to_vec(), data).expect("shape");
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let data = g
                    .data()
                    .iter()
                    .zip(a.data())
                    .map(|(gv, xv)| gv * xv.cos())
                    .collect();
                Array::new(g.shape().to_vec(), data).expect("shape")
            }),
        }];
        Var::from_node(value, edges)
    }

    pub fn cos(&self) -> Var {
        let a = self.value();
        let data = a.data().iter().map(|x| x.cos()).collect();
        let value = Array::new(a.shape().to_vec(), data).expect("shape");
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let data = g
                    .data()
                    .iter()
                    .zip(a.data())
                    .map(|(gv, xv)| -gv * xv.sin())
                    .collect();
                Array::new(g.shape().to_vec(), data).expect("shape")
            }),
        }];
        Var::from_node(value, edges)
    }

    /// Per-row normalization over the last dimension to zero mean and unit
    /// variance, then `gain ⊙ x̂ + bias`. `gain` and `bias` are `[d]`.
    pub fn layer_norm(&self, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        let x = self.value();
        let g_arr = gain.value();
        let b_arr = bias.value();
        let d = x.ncols();
        if d == 0 {
            return Err(CoreError::Dimension {
                op: "layer_norm",
                detail: "last dimension is zero".into(),
            });
        }
        if g_arr.len() != d || b_arr.len() != d {
            return Err(CoreError::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: g_arr.shape().to_vec(),
            });
        }
        let rows = x.nrows();
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let xr = &x.data()[r * d..(r + 1) * d];
            let mu = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let s = (var + eps).sqrt();
            inv_std[r] = 1.0 / s;
            for j in 0..d {
                let xh = (xr[j] - mu) / s;
                xhat[r * d + j] = xh;
                out[r * d + j] = g_arr.data()[j] * xh + b_arr.data()[j];
            }
        }
        let value = Array::new(x.shape().to_vec(), out)?;

        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        let gain_vals = g_arr.data().to_vec();

        let xhat_dx = Rc::clone(&xhat);
        let inv_std_dx = Rc::clone(&inv_std);
        let xhat_dg = Rc::clone(&xhat);
        let x_shape = x.shape().to_vec();

        let edges = vec![
            Edge {
                parent: self.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let xh = &xhat_dx[r * d..(r + 1) * d];
                        let mut mean_u = 0.0;
                        let mut mean_uxh = 0.0;
                        for j in 0..d {
                            let u = gain_vals[j] * gr[j];
                            mean_u += u;
                            mean_uxh += u * xh[j];
                        }
                        mean_u /= d as f64;
                        mean_uxh /= d as f64;
                        let is = inv_std_dx[r];
                        for j in 0..d {
                            let u = gain_vals[j] * gr[j];
                            dx[r * d + j] = (u - mean_u - xh[j] * mean_uxh) * is;
                        }
                    }
                    Array::new(x_shape.clone(), dx).expect("shape")
                }),
            },
            Edge {
                parent: gain.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    let mut dg = vec![0.0; d];
                    for r in 0..rows {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let xh = &xhat_dg[r * d..(r + 1) * d];
                        for j in 0..d {
                            dg[j] += gr[j] * xh[j];
                        }
                    }
                    Array::from_vec(dg)
                }),
            },
            Edge {
                parent: bias.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        for j in 0..d {
                            db[j] += gr[j];
                        }
                    }
                    Array::from_vec(db)
                }),
            },
        ];
        Ok(Var::from_node(value, edges))
    }

    /// Row-wise softmax over the last dimension, stabilized by max
    /// subtraction so large inputs do not overflow.
    pub fn softmax_lastdim(&self) -> Var {
        let x = self.value();
        let d = x.ncols().max(1);
        let rows = x.nrows();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let xr = &x.data()[r * d..(r + 1) * d];
            let mx = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..d {
                let e = (xr[j] - mx).exp();
                out[r * d + j] = e;
                z += e;
            }
            for j in 0..d {
                out[r * d + j] /= z;
            }
        }
        let value = Array::new(x.shape().to_vec(), out).expect("shape");
        let probs = value.clone();
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let pr = &probs.data()[r * d..(r + 1) * d];
                    let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = pr[j] * (gr[j] - dot);
                    }
                }
                Array::new(g.shape().to_vec(), dx).expect("shape")
            }),
        }];
        Var::from_node(value, edges)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Var {
        let a = self.value();
        let total: f64 = a.data().iter().sum();
        let shape = a.shape().to_vec();
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                Array::full(&shape, g.data()[0])
            }),
        }];
        Var::from_node(Array::scalar(total), edges)
    }

    pub fn transpose(&self) -> Result<Var> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(CoreError::Dimension {
                op: "transpose",
                detail: format!("expected 2-D, got {:?}", a.shape()),
            });
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data()[i * c + j];
            }
        }
        let value = Array::new(vec![c, r], out)?;
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let mut dg = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        dg[j * c + i] = g.data()[i * r + j];
                    }
                }
                Array::new(vec![r, c], dg).expect("shape")
            }),
        }];
        Ok(Var::from_node(value, edges))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var> {
        let a = self.value();
        let rows = a.nrows();
        let c = a.ncols();
        if start + len > rows {
            return Err(CoreError::WindowOutOfBounds {
                start,
                len,
                total: rows,
            });
        }
        let value = Array::new(
            vec![len, c],
            a.data()[start * c..(start + len) * c].to_vec(),
        )?;
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let mut dx = vec![0.0; rows * c];
                dx[start * c..(start + len) * c].copy_from_slice(g.data());
                Array::new(vec![rows, c], dx).expect("shape")
            }),
        }];
        Ok(Var::from_node(value, edges))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var> {
        let a = self.value();
        let rows = a.nrows();
        let c = a.ncols();
        if start + len > c {
            return Err(CoreError::WindowOutOfBounds {
                start,
                len,
                total: c,
            });
        }
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&a.data()[r * c + start..r * c + start + len]);
        }
        let value = Array::new(vec![rows, len], out)?;
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let mut dx = vec![0.0; rows * c];
                for r in 0..rows {
                    dx[r * c + start..r * c + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                Array::new(vec![rows, c], dx).expect("shape")
            }),
        }];
        Ok(Var::from_node(value, edges))
    }

    /// Horizontal concatenation of equal-height matrices.
    pub fn concat_cols(parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::Contract {
                op: "concat_cols",
                detail: "no parts".into(),
            });
        }
        let values: Vec<Array> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].nrows();
        let widths: Vec<usize> = values.iter().map(|v| v.ncols()).collect();
        for v in &values {
            if v.nrows() != rows {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for v in &values {
            let w = v.ncols();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let value = Array::new(vec![rows, total], out)?;
        let mut edges = Vec::with_capacity(parts.len());
        let mut offset = 0;
        for (part, w) in parts.iter().zip(&widths) {
            let w = *w;
            let off = offset;
            edges.push(Edge {
                parent: part.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    let mut dx = vec![0.0; rows * w];
                    for r in 0..rows {
                        dx[r * w..(r + 1) * w]
                            .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                    }
                    Array::new(vec![rows, w], dx).expect("shape")
                }),
            });
            offset += w;
        }
        Ok(Var::from_node(value, edges))
    }

    /// Vertical stack of equal-width matrices.
    pub fn concat_rows(parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::Contract {
                op: "concat_rows",
                detail: "no parts".into(),
            });
        }
        let values: Vec<Array> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].ncols();
        for v in &values {
            if v.ncols() != cols {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        let total_rows: usize = values.iter().map(|v| v.nrows()).sum();
        let mut out = Vec::with_capacity(total_rows * cols);
        for v in &values {
            out.extend_from_slice(v.data());
        }
        let value = Array::new(vec![total_rows, cols], out)?;
        let mut edges = Vec::with_capacity(parts.len());
        let mut offset = 0;
        for (part, v) in parts.iter().zip(&values) {
            let rows = v.nrows();
            let start = offset;
            edges.push(Edge {
                parent: part.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    Array::new(
                        vec![rows, cols],
                        g.data()[start * cols..(start + rows) * cols].to_vec(),
                    )
                    .expect("shape")
                }),
            });
            offset += rows;
        }
        Ok(Var::from_node(value, edges))
    }

    /// Select rows by index (indices may repeat; the backward pass
    /// scatter-adds).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var> {
        let a = self.value();
        let rows = a.nrows();
        let c = a.ncols();
        for &i in indices {
            if i >= rows {
                return Err(CoreError::Contract {
                    op: "gather_rows",
                    detail: format!("index {} out of {} rows", i, rows),
                });
            }
        }
        let mut out = vec![0.0; indices.len() * c];
        for (k, &i) in indices.iter().enumerate() {
            out[k * c..(k + 1) * c].copy_from_slice(&a.data()[i * c..(i + 1) * c]);
        }
        let value = Array::new(vec![indices.len(), c], out)?;
        let idx = indices.to_vec();
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let mut dx = vec![0.0; rows * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dx[i * c + j] += g.data()[k * c + j];
                    }
                }
                Array::new(vec![rows, c], dx).expect("shape")
            }),
        }];
        Ok(Var::from_node(value, edges))
    }

    /// Stack `times` copies of this matrix vertically.
    pub fn tile_rows(&self, times: usize) -> Result<Var> {
        let a = self.value();
        let rows = a.nrows();
        let c = a.ncols();
        let mut out = Vec::with_capacity(times * rows * c);
        for _ in 0..times {
            out.extend_from_slice(a.data());
        }
        let value = Array::new(vec![times * rows, c], out)?;
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let mut dx = vec![0.0; rows * c];
                for t in 0..times {
                    for i in 0..rows * c {
                        dx[i] += g.data()[t * rows * c + i];
                    }
                }
                Array::new(vec![rows, c], dx).expect("shape")
            }),
        }];
        Ok(Var::from_node(value, edges))
    }

    /// Add a `[d]` vector to every row of an `R×d` matrix.
    pub fn add_row_broadcast(&self, bias: &Var) -> Result<Var> {
        let a = self.value();
        let b = bias.value();
        let d = a.ncols();
        if b.len() != d {
            return Err(CoreError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let rows = a.nrows();
        let mut out = a.data().to_vec();
        for r in 0..rows {
            for j in 0..d {
                out[r * d + j] += b.data()[j];
            }
        }
        let value = Array::new(a.shape().to_vec(), out)?;
        let edges = vec![
            Edge {
                parent: self.clone(),
                grad_fn: Box::new(|g: &Array| g.clone()),
            },
            Edge {
                parent: bias.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += g.data()[r * d + j];
                        }
                    }
                    Array::from_vec(db)
                }),
            },
        ];
        Ok(Var::from_node(value, edges))
    }

    /// Elementwise sum with a constant (not gradient-tracked) array.
    pub fn add_const(&self, constant: &Array) -> Result<Var> {
        let a = self.value();
        check_same_shape("add_const", &a, constant)?;
        let data = a
            .data()
            .iter()
            .zip(constant.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Array::new(a.shape().to_vec(), data)?;
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(|g: &Array| g.clone()),
        }];
        Ok(Var::from_node(value, edges))
    }

    /// Elementwise product with a constant (not gradient-tracked) array.
    /// Used for loss masks: masked positions get exactly zero gradient.
    pub fn mul_const(&self, constant: &Array) -> Result<Var> {
        let a = self.value();
        check_same_shape("mul_const", &a, constant)?;
        let data = a
            .data()
            .iter()
            .zip(constant.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Array::new(a.shape().to_vec(), data)?;
        let mask = constant.clone();
        let edges = vec![Edge {
            parent: self.clone(),
            grad_fn: Box::new(move |g: &Array| {
                let data = g
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(x, y)| x * y)
                    .collect();
                Array::new(g.shape().to_vec(), data).expect("shape")
            }),
        }];
        Ok(Var::from_node(value, edges))
    }

    /// Trapezoidal integration of velocities into positions:
    /// `out[0] = q0`, `out[t+1] = out[t] + (v[t+1] + v[t])/2 · dt`.
    /// `self` is the `N×d` velocity series, `q0` the `[d]` initial position.
    /// The identity holds exactly (to round-off) by construction.
    pub fn trapezoid_integrate(&self, q0: &Var, dt: f64) -> Result<Var> {
        let v = self.value();
        let q = q0.value();
        if v.shape().len() != 2 {
            return Err(CoreError::Dimension {
                op: "trapezoid_integrate",
                detail: format!("velocities must be 2-D, got {:?}", v.shape()),
            });
        }
        let (n, d) = (v.shape()[0], v.shape()[1]);
        if q.len() != d {
            return Err(CoreError::ShapeMismatch {
                op: "trapezoid_integrate",
                lhs: v.shape().to_vec(),
                rhs: q.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; n * d];
        out[..d].copy_from_slice(q.data());
        for t in 1..n {
            for j in 0..d {
                out[t * d + j] = out[(t - 1) * d + j]
                    + 0.5 * dt * (v.data()[t * d + j] + v.data()[(t - 1) * d + j]);
            }
        }
        let value = Array::new(vec![n, d], out)?;
        let edges = vec![
            Edge {
                parent: self.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    // suffix sums of upstream grads per column
                    let mut dv = vec![0.0; n * d];
                    let mut suffix = vec![0.0; d];
                    // walk from the last row backwards
                    for t in (0..n).rev() {
                        for j in 0..d {
                            suffix[j] += g.data()[t * d + j];
                        }
                        if t >= 1 {
                            for j in 0..d {
                                // rows >= t contribute dt, row t itself dt/2
                                dv[t * d + j] = dt * (suffix[j] - 0.5 * g.data()[t * d + j]);
                            }
                        } else {
                            for j in 0..d {
                                // v[0] feeds every q[t>=1] with weight dt/2
                                dv[j] = 0.5 * dt * (suffix[j] - g.data()[j]);
                            }
                        }
                    }
                    Array::new(vec![n, d], dv).expect("shape")
                }),
            },
            Edge {
                parent: q0.clone(),
                grad_fn: Box::new(move |g: &Array| {
                    let mut dq = vec![0.0; d];
                    for t in 0..n {
                        for j in 0..d {
                            dq[j] += g.data()[t * d + j];
                        }
                    }
                    Array::from_vec(dq)
                }),
            },
        ];
        Ok(Var::from_node(value, edges))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_sum_gives_ones() {
        let x = Var::leaf(Array::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap());
        let s = x.sum();
        s.backward().unwrap();
        assert_eq!(x.grad().unwrap(), Array::ones(&[2, 3]));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let x = Var::leaf(Array::from_vec(vec![1.0, 2.0]));
        let y = x.scale(2.0);
        assert!(y.backward().is_err());
    }

    #[test]
    fn mse_single_element_gradient() {
        // mse(x, 0) with x = [2]: d/dx x^2 = 2x = 4
        let x = Var::leaf(Array::from_vec(vec![2.0]));
        let sq = x.mul(&x).unwrap();
        let loss = sq.sum();
        loss.backward().unwrap();
        assert_eq!(loss.scalar_value().unwrap(), 4.0);
        assert_eq!(x.grad().unwrap().data(), &[4.0]);
    }

    #[test]
    fn diamond_accumulates_both_paths() {
        // y = x*x + 3x  =>  dy/dx = 2x + 3
        let x = Var::leaf(Array::from_vec(vec![1.5]));
        let a = x.mul(&x).unwrap();
        let b = x.scale(3.0);
        let y = a.add(&b).unwrap().sum();
        y.backward().unwrap();
        let g = x.grad().unwrap().data()[0];
        assert!((g - (2.0 * 1.5 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn relu_examples() {
        let x = Var::leaf(Array::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = x.relu();
        assert_eq!(y.value().data(), &[0.0, 0.0, 2.0]);
        let s = y.sum();
        s.backward().unwrap();
        // gradient is 0 at negative inputs and at exactly 0
        assert_eq!(x.grad().unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn elementwise_examples() {
        let a = Var::leaf(Array::from_vec(vec![1.0, 2.0]));
        let b = Var::leaf(Array::from_vec(vec![3.0, 4.0]));
        assert_eq!(a.add(&b).unwrap().value().data(), &[4.0, 6.0]);
        let c = Var::leaf(Array::from_vec(vec![1.0, -2.0]));
        assert_eq!(c.scale(0.5).value().data(), &[0.5, -1.0]);
    }

    #[test]
    fn softmax_examples() {
        let x = Var::leaf(Array::from_vec(vec![0.0, 0.0]));
        assert_eq!(x.softmax_lastdim().value().data(), &[0.5, 0.5]);

        let big = Var::leaf(Array::from_vec(vec![1000.0, 1000.0]));
        assert_eq!(big.softmax_lastdim().value().data(), &[0.5, 0.5]);

        let y = Var::leaf(Array::from_vec(vec![0.0, 3.0_f64.ln()]));
        let p = y.softmax_lastdim().value();
        assert!((p.data()[0] - 0.25).abs() < 1e-12);
        assert!((p.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_examples() {
        let gain = Var::leaf(Array::from_vec(vec![1.0, 1.0]));
        let bias = Var::leaf(Array::from_vec(vec![0.0, 0.0]));

        // constant vector -> zeros (eps handles the zero variance)
        let c = Var::leaf(Array::new(vec![1, 2], vec![5.0, 5.0]).unwrap());
        let out = c.layer_norm(&gain, &bias, 1e-5).unwrap().value();
        assert!(out.data().iter().all(|v| v.abs() < 1e-9));

        // x = [1,3]: mean 2, population std 1 (eps -> 0)
        let x = Var::leaf(Array::new(vec![1, 2], vec![1.0, 3.0]).unwrap());
        let out = x.layer_norm(&gain, &bias, 1e-12).unwrap().value();
        assert!((out.data()[0] + 1.0).abs() < 1e-6);
        assert!((out.data()[1] - 1.0).abs() < 1e-6);

        // gain = 0 -> bias broadcast
        let g0 = Var::leaf(Array::from_vec(vec![0.0, 0.0]));
        let b7 = Var::leaf(Array::from_vec(vec![7.0, -7.0]));
        let out = x.layer_norm(&g0, &b7, 1e-5).unwrap().value();
        assert_eq!(out.data(), &[7.0, -7.0]);
    }

    #[test]
    fn trapezoid_identity_exact() {
        let v = Var::leaf(Array::new(vec![4, 2], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6, -0.7, 0.8]).unwrap());
        let q0 = Var::leaf(Array::from_vec(vec![1.0, -1.0]));
        let q = v.trapezoid_integrate(&q0, 0.05).unwrap().value();
        for t in 1..4 {
            for j in 0..2 {
                let lhs = q.at2(t, j);
                let rhs = q.at2(t - 1, j) + 0.5 * 0.05 * (v.value().at2(t, j) + v.value().at2(t - 1, j));
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn inputs_not_mutated() {
        let a = Var::leaf(Array::from_vec(vec![1.0, 2.0]));
        let before = a.value();
        let b = Var::leaf(Array::from_vec(vec![3.0, 4.0]));
        let _ = a.add(&b).unwrap();
        let _ = a.mul(&b).unwrap();
        let _ = a.relu();
        assert_eq!(a.value(), before);
    }
}
