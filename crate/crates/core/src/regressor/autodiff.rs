//! Tape-based reverse-mode differentiation over a handful of layer ops.
//!
//! Activations are laid out NCHW. Convolutions use im2col + GEMM per sample;
//! the column buffers are kept on the tape only when a gradient will flow
//! through the op.

use super::tensor::{gemm, MatRef, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }
    fn p(&self) -> usize {
        self.out_h * self.out_w
    }
}

enum Op<T> {
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        y: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        y: Var,
    },
    Relu {
        x: Var,
        y: Var,
    },
    Flatten {
        x: Var,
        y: Var,
    },
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    tape: Vec<Op<T>>,
}

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Writes the patches of one sample into columns `[off, off + P)` of a
/// `K x ld` row-major column matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T], ld: usize, off: usize) {
    let p = g.p();
    let k = g.kernel;
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ld + off..row * ld + off + p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T], ld: usize, off: usize) {
    let p = g.p();
    let k = g.kernel;
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ld + off..row * ld + off + p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            plane[iy as usize * g.in_w + ix as usize] =
                                plane[iy as usize * g.in_w + ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            tape: Vec::new(),
        }
    }

    /// Adds a leaf. Leaves that require a gradient get a zeroed gradient buffer.
    pub fn leaf(&mut self, mut value: Tensor<T>, requires_grad: bool) -> Var {
        value.grad = requires_grad.then(|| vec![T::zero(); value.len()]);
        self.push(value, requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// 2-D convolution with square kernel `w: [O, C, k, k]`, bias `b: [O]` and
    /// zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xs = &self.value(x).shape;
        let ws = &self.value(w).shape;
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d weight must be OCkk");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch");
        assert_eq!(ws[2], ws[3], "conv2d kernel must be square");
        assert_eq!(self.value(b).shape, [ws[0]], "conv2d bias shape");
        let geom = ConvGeom {
            batch: xs[0],
            in_c: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_c: ws[0],
            out_h: conv_output_size(xs[2], ws[2], stride, pad),
            out_w: conv_output_size(xs[3], ws[2], stride, pad),
            kernel: ws[2],
            stride,
            pad,
        };
        let (k, p) = (geom.k(), geom.p());
        let bp = geom.batch * p;
        let keep = self.needs(x) || self.needs(w) || self.needs(b);
        // one GEMM for the whole batch: [O, K] x [K, B*P]
        let mut cols = vec![T::zero(); k * bp];
        let xv = &self.value(x).data;
        let in_size = geom.in_c * geom.in_h * geom.in_w;
        for n in 0..geom.batch {
            im2col(&xv[n * in_size..(n + 1) * in_size], &geom, &mut cols, bp, n * p);
        }
        let mut wide = vec![T::zero(); geom.out_c * bp];
        gemm(
            MatRef::rm(&self.value(w).data, geom.out_c, k),
            MatRef::rm(&cols, k, bp),
            T::zero(),
            &mut wide,
        );
        let bv = &self.value(b).data;
        let mut out = vec![T::zero(); geom.batch * geom.out_c * p];
        for n in 0..geom.batch {
            for o in 0..geom.out_c {
                let src = &wide[o * bp + n * p..o * bp + (n + 1) * p];
                let dst = &mut out[(n * geom.out_c + o) * p..(n * geom.out_c + o + 1) * p];
                dst.iter_mut().zip(src).for_each(|(d, &v)| *d = v + bv[o]);
            }
        }
        if !keep {
            cols = Vec::new();
        }
        let y = self.push(
            Tensor::from_vec(&[geom.batch, geom.out_c, geom.out_h, geom.out_w], out),
            keep,
        );
        if keep {
            self.tape.push(Op::Conv2d {
                x,
                w,
                b,
                y,
                geom,
                cols,
            });
        }
        y
    }

    /// `y = x w^T + b` with `x: [B, In]`, `w: [Out, In]`, `b: [Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = &self.value(x).shape;
        let ws = &self.value(w).shape;
        assert_eq!(xs.len(), 2, "linear input must be [B, In]");
        assert_eq!(ws.len(), 2, "linear weight must be [Out, In]");
        assert_eq!(xs[1], ws[1], "linear input width");
        assert_eq!(self.value(b).shape, [ws[0]], "linear bias shape");
        let (batch, n_in, n_out) = (xs[0], xs[1], ws[0]);
        let bv = &self.value(b).data;
        let mut out: Vec<T> = (0..batch).flat_map(|_| bv.iter().copied()).collect();
        gemm(
            MatRef::rm(&self.value(x).data, batch, n_in),
            MatRef::rm(&self.value(w).data, n_out, n_in).t(),
            T::one(),
            &mut out,
        );
        let keep = self.needs(x) || self.needs(w) || self.needs(b);
        let y = self.push(Tensor::from_vec(&[batch, n_out], out), keep);
        if keep {
            self.tape.push(Op::Linear { x, w, b, y });
        }
        y
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = v.data.iter().map(|&a| a.max(T::zero())).collect();
        let shape = v.shape.clone();
        let keep = self.needs(x);
        let y = self.push(Tensor::from_vec(&shape, out), keep);
        if keep {
            self.tape.push(Op::Relu { x, y });
        }
        y
    }

    /// Collapses all but the leading dimension.
    pub fn flatten(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let batch = v.shape[0];
        let rest = v.len() / batch.max(1);
        let data = v.data.clone();
        let keep = self.needs(x);
        let y = self.push(Tensor::from_vec(&[batch, rest], data), keep);
        if keep {
            self.tape.push(Op::Flatten { x, y });
        }
        y
    }

    fn grad_buf(&mut self, v: Var) -> Option<&mut Vec<T>> {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        // the value buffer may be temporarily moved out, so size from the shape
        let len = node.value.shape.iter().product();
        Some(node.value.grad.get_or_insert_with(|| vec![T::zero(); len]))
    }

    /// Back-propagates `seed` (the gradient of a scalar objective with respect
    /// to `output`) into every leaf that requires a gradient.
    pub fn backward(&mut self, output: Var, seed: Vec<T>) {
        assert_eq!(seed.len(), self.value(output).len(), "seed gradient size");
        if !self.needs(output) {
            return;
        }
        self.nodes[output.0].value.grad = Some(seed);
        let tape = std::mem::take(&mut self.tape);
        for op in tape.iter().rev() {
            match op {
                Op::Relu { x, y } => {
                    let Some(dy) = self.nodes[y.0].value.grad.take() else { continue };
                    let xv = std::mem::take(&mut self.nodes[x.0].value.data);
                    if let Some(dx) = self.grad_buf(*x) {
                        for ((d, &g), &a) in dx.iter_mut().zip(&dy).zip(&xv) {
                            if a > T::zero() {
                                *d = *d + g;
                            }
                        }
                    }
                    self.nodes[x.0].value.data = xv;
                }
                Op::Flatten { x, y } => {
                    let Some(dy) = self.nodes[y.0].value.grad.take() else { continue };
                    if let Some(dx) = self.grad_buf(*x) {
                        dx.iter_mut().zip(&dy).for_each(|(d, &g)| *d = *d + g);
                    }
                }
                Op::Linear { x, w, b, y } => {
                    let Some(dy) = self.nodes[y.0].value.grad.take() else { continue };
                    let (batch, n_in) = (self.value(*x).shape[0], self.value(*x).shape[1]);
                    let n_out = self.value(*w).shape[0];
                    if let Some(db) = self.grad_buf(*b) {
                        for row in dy.chunks(n_out) {
                            db.iter_mut().zip(row).for_each(|(d, &g)| *d = *d + g);
                        }
                    }
                    let xv = std::mem::take(&mut self.nodes[x.0].value.data);
                    if let Some(dw) = self.grad_buf(*w) {
                        // dW += dY^T X
                        gemm(
                            MatRef::rm(&dy, batch, n_out).t(),
                            MatRef::rm(&xv, batch, n_in),
                            T::one(),
                            dw,
                        );
                    }
                    self.nodes[x.0].value.data = xv;
                    let wv = std::mem::take(&mut self.nodes[w.0].value.data);
                    if let Some(dx) = self.grad_buf(*x) {
                        // dX += dY W
                        gemm(
                            MatRef::rm(&dy, batch, n_out),
                            MatRef::rm(&wv, n_out, n_in),
                            T::one(),
                            dx,
                        );
                    }
                    self.nodes[w.0].value.data = wv;
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    y,
                    geom,
                    cols,
                } => {
                    let Some(dy) = self.nodes[y.0].value.grad.take() else { continue };
                    let (k, p) = (geom.k(), geom.p());
                    let bp = geom.batch * p;
                    let in_size = geom.in_c * geom.in_h * geom.in_w;
                    // regroup dY from [B, O, P] to [O, B*P]
                    let mut wide = vec![T::zero(); geom.out_c * bp];
                    for n in 0..geom.batch {
                        for o in 0..geom.out_c {
                            wide[o * bp + n * p..o * bp + (n + 1) * p]
                                .copy_from_slice(&dy[(n * geom.out_c + o) * p..(n * geom.out_c + o + 1) * p]);
                        }
                    }
                    if let Some(db) = self.grad_buf(*b) {
                        for (d, row) in db.iter_mut().zip(wide.chunks(bp)) {
                            *d = *d + row.iter().copied().sum();
                        }
                    }
                    if let Some(dw) = self.grad_buf(*w) {
                        gemm(MatRef::rm(&wide, geom.out_c, bp), MatRef::rm(cols, k, bp).t(), T::one(), dw);
                    }
                    let wv = std::mem::take(&mut self.nodes[w.0].value.data);
                    if let Some(dx) = self.grad_buf(*x) {
                        let mut dcols = vec![T::zero(); k * bp];
                        gemm(
                            MatRef::rm(&wv, geom.out_c, k).t(),
                            MatRef::rm(&wide, geom.out_c, bp),
                            T::zero(),
                            &mut dcols,
                        );
                        for n in 0..geom.batch {
                            col2im_add(&dcols, geom, &mut dx[n * in_size..(n + 1) * in_size], bp, n * p);
                        }
                    }
                    self.nodes[w.0].value.data = wv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.out_c * g.p()];
        for n in 0..g.batch {
            for o in 0..g.out_c {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut s = b[o];
                        for c in 0..g.in_c {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                                        s += x[((n * g.in_c + c) * g.in_h + iy as usize) * g.in_w + ix as usize]
                                            * w[((o * g.in_c + c) * g.kernel + ky) * g.kernel + kx];
                                    }
                                }
                            }
                        }
                        out[((n * g.out_c + o) * g.out_h + oy) * g.out_w + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        let g = ConvGeom {
            batch: 2,
            in_c: 3,
            in_h: 7,
            in_w: 6,
            out_c: 4,
            out_h: conv_output_size(7, 3, 2, 1),
            out_w: conv_output_size(6, 3, 2, 1),
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..2 * 3 * 7 * 6).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let w: Vec<f64> = (0..4 * 3 * 9).map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.3).collect();
        let b = vec![0.5, -0.25, 0.0, 1.0];
        let mut graph = Graph::new();
        let xv = graph.leaf(Tensor::from_vec(&[2, 3, 7, 6], x.clone()), false);
        let wv = graph.leaf(Tensor::from_vec(&[4, 3, 3, 3], w.clone()), false);
        let bv = graph.leaf(Tensor::from_vec(&[4], b.clone()), false);
        let y = graph.conv2d(xv, wv, bv, 2, 1);
        assert_eq!(graph.value(y).shape, [2, 4, 4, 3]);
        let oracle = naive_conv(&x, &w, &b, &g);
        for (a, o) in graph.value(y).data.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_relu_gradients_by_hand() {
        // y = relu(x w^T + b), objective = sum(y)
        let mut graph = Graph::new();
        let x = graph.leaf(Tensor::from_vec(&[1, 2], vec![1.0, -2.0]), true);
        let w = graph.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 0.5, -1.0]), true);
        let b = graph.leaf(Tensor::from_vec(&[2], vec![0.0, 0.0]), true);
        let h = graph.linear(x, w, b);
        assert_eq!(graph.value(h).data, [-1.0, 2.5]);
        let y = graph.relu(h);
        graph.backward(y, vec![1.0, 1.0]);
        assert_eq!(graph.grad(b).unwrap(), [0.0, 1.0]);
        assert_eq!(graph.grad(w).unwrap(), [0.0, 0.0, 1.0, -2.0]);
        assert_eq!(graph.grad(x).unwrap(), [0.5, -1.0]);
    }

    #[test]
    fn no_grad_graph_keeps_no_tape() {
        let mut graph: Graph<f32> = Graph::new();
        let x = graph.leaf(Tensor::zeros(&[1, 1, 4, 4]), false);
        let w = graph.leaf(Tensor::zeros(&[2, 1, 3, 3]), false);
        let b = graph.leaf(Tensor::zeros(&[2]), false);
        let y = graph.conv2d(x, w, b, 1, 1);
        let _ = graph.flatten(y);
        assert!(graph.tape.is_empty());
    }
}
