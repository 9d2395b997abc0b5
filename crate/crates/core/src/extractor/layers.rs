//! Affine and (bidirectional) LSTM layers over frame sequences, with
//! reverse-mode gradients. Parameters are read from and gradients written to
//! flat buffers at fixed offsets.

use crate::mat::{axpy, dot, Mat};

use super::params::LayoutBuilder;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu_inplace(m: &mut Mat) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Mask `grad` by the ReLU derivative evaluated at the layer output.
pub fn relu_backward(out: &Mat, grad: &mut Mat) {
    for (g, &o) in grad.as_mut_slice().iter_mut().zip(out.as_slice()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `z = x W^T + b`, with `W` stored row-major as `n_out x n_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Affine {
    pub fn register(layout: &mut LayoutBuilder, name: &str, n_in: usize, n_out: usize) -> Self {
        let w = layout.add(format!("{name}.weight"), &[n_out, n_in]);
        let b = layout.add(format!("{name}.bias"), &[n_out]);
        Self { w, b, n_in, n_out }
    }

    fn weight<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.n_in * self.n_out]
    }

    pub fn forward(&self, p: &[f64], x: &Mat) -> Mat {
        debug_assert_eq!(x.cols(), self.n_in);
        let w = self.weight(p);
        let b = &p[self.b..self.b + self.n_out];
        let mut z = Mat::zeros(x.rows(), self.n_out);
        for t in 0..x.rows() {
            let xt = x.row(t);
            let zt = z.row_mut(t);
            for o in 0..self.n_out {
                zt[o] = b[o] + dot(&w[o * self.n_in..(o + 1) * self.n_in], xt);
            }
        }
        z
    }

    /// Accumulate parameter gradients into `g` and return `dL/dx`.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &Mat, dz: &Mat) -> Mat {
        self.backward_params(g, x, dz);
        let w = self.weight(p);
        let mut dx = Mat::zeros(x.rows(), self.n_in);
        for t in 0..x.rows() {
            let dzt = dz.row(t);
            let dxt = dx.row_mut(t);
            for o in 0..self.n_out {
                if dzt[o] != 0.0 {
                    axpy(dzt[o], &w[o * self.n_in..(o + 1) * self.n_in], dxt);
                }
            }
        }
        dx
    }

    /// Parameter gradients only (for layers whose input needs no gradient).
    pub fn backward_params(&self, g: &mut [f64], x: &Mat, dz: &Mat) {
        let (n_in, n_out) = (self.n_in, self.n_out);
        {
            let gw = &mut g[self.w..self.w + n_in * n_out];
            for t in 0..x.rows() {
                let xt = x.row(t);
                let dzt = dz.row(t);
                for o in 0..n_out {
                    if dzt[o] != 0.0 {
                        axpy(dzt[o], xt, &mut gw[o * n_in..(o + 1) * n_in]);
                    }
                }
            }
        }
        let gb = &mut g[self.b..self.b + n_out];
        for t in 0..dz.rows() {
            for (gbo, &d) in gb.iter_mut().zip(dz.row(t)) {
                *gbo += d;
            }
        }
    }
}

/// Unidirectional LSTM with input, forget, candidate and output gate blocks
/// stacked in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub input: Affine,
    pub w_hh: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub struct LstmTrace {
    /// Activated gates per frame, `T x 4H` as `[i | f | g | o]`.
    gates: Mat,
    cells: Mat,
    pub hidden: Mat,
}

impl Lstm {
    pub fn register(layout: &mut LayoutBuilder, name: &str, n_in: usize, hidden: usize) -> Self {
        let input = Affine::register(layout, &format!("{name}.input"), n_in, 4 * hidden);
        let w_hh = layout.add(format!("{name}.recurrent.weight"), &[4 * hidden, hidden]);
        Self {
            input,
            w_hh,
            hidden,
        }
    }

    pub fn forward(&self, p: &[f64], x: &Mat) -> LstmTrace {
        let h = self.hidden;
        let steps = x.rows();
        let w_hh = &p[self.w_hh..self.w_hh + 4 * h * h];
        let mut gates = self.input.forward(p, x);
        let mut cells = Mat::zeros(steps, h);
        let mut hidden = Mat::zeros(steps, h);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..steps {
            let gt = gates.row_mut(t);
            for (j, gj) in gt.iter_mut().enumerate() {
                *gj += dot(&w_hh[j * h..(j + 1) * h], &h_prev);
            }
            for k in 0..h {
                let i = sigmoid(gt[k]);
                let f = sigmoid(gt[h + k]);
                let g = gt[2 * h + k].tanh();
                let o = sigmoid(gt[3 * h + k]);
                gt[k] = i;
                gt[h + k] = f;
                gt[2 * h + k] = g;
                gt[3 * h + k] = o;
                let c = f * c_prev[k] + i * g;
                c_prev[k] = c;
                h_prev[k] = o * c.tanh();
            }
            cells.row_mut(t).copy_from_slice(&c_prev);
            hidden.row_mut(t).copy_from_slice(&h_prev);
        }
        LstmTrace {
            gates,
            cells,
            hidden,
        }
    }

    /// Back-propagation through time. `dh` is the loss gradient w.r.t. each
    /// frame's hidden output.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &Mat, tr: &LstmTrace, dh: &Mat) -> Mat {
        let h = self.hidden;
        let steps = x.rows();
        let w_hh = &p[self.w_hh..self.w_hh + 4 * h * h];
        let mut dpre = Mat::zeros(steps, 4 * h);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut gw_hh = vec![0.0; 4 * h * h];
        let zeros = vec![0.0; h];
        for t in (0..steps).rev() {
            let gt = tr.gates.row(t);
            let c = tr.cells.row(t);
            let c_prev = if t > 0 {
                tr.cells.row(t - 1)
            } else {
                &zeros[..]
            };
            let h_prev = if t > 0 {
                tr.hidden.row(t - 1)
            } else {
                &zeros[..]
            };
            let dht = dh.row(t);
            let dp = dpre.row_mut(t);
            for k in 0..h {
                let (i, f, gg, o) = (gt[k], gt[h + k], gt[2 * h + k], gt[3 * h + k]);
                let tc = c[k].tanh();
                let dhk = dht[k] + dh_next[k];
                let d_o = dhk * tc;
                let dc = dc_next[k] + dhk * o * (1.0 - tc * tc);
                dp[k] = dc * gg * i * (1.0 - i);
                dp[h + k] = dc * c_prev[k] * f * (1.0 - f);
                dp[2 * h + k] = dc * i * (1.0 - gg * gg);
                dp[3 * h + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (j, &d) in dp.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, h_prev, &mut gw_hh[j * h..(j + 1) * h]);
                    axpy(d, &w_hh[j * h..(j + 1) * h], &mut dh_next);
                }
            }
        }
        for (acc, v) in g[self.w_hh..self.w_hh + 4 * h * h].iter_mut().zip(&gw_hh) {
            *acc += v;
        }
        self.input.backward(p, g, x, &dpre)
    }
}

/// Forward and backward LSTMs over the same input; outputs are concatenated
/// per frame as `[forward | backward]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Blstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

#[derive(Clone, Debug)]
pub struct BlstmTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
    reversed_input: Mat,
    pub output: Mat,
}

impl Blstm {
    pub fn register(layout: &mut LayoutBuilder, name: &str, n_in: usize, cells: usize) -> Self {
        Self {
            fwd: Lstm::register(layout, &format!("{name}.fwd"), n_in, cells),
            bwd: Lstm::register(layout, &format!("{name}.bwd"), n_in, cells),
        }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward(&self, p: &[f64], x: &Mat) -> BlstmTrace {
        let fwd = self.fwd.forward(p, x);
        let reversed_input = x.reversed_rows();
        let bwd = self.bwd.forward(p, &reversed_input);
        let output = fwd.hidden.hcat(&bwd.hidden.reversed_rows());
        BlstmTrace {
            fwd,
            bwd,
            reversed_input,
            output,
        }
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &Mat, tr: &BlstmTrace, dout: &Mat) -> Mat {
        let (dhf, dhb) = dout.hsplit(self.fwd.hidden);
        let mut dx = self.fwd.backward(p, g, x, &tr.fwd, &dhf);
        let dxr = self
            .bwd
            .backward(p, g, &tr.reversed_input, &tr.bwd, &dhb.reversed_rows());
        let dxb = dxr.reversed_rows();
        for (a, b) in dx.as_mut_slice().iter_mut().zip(dxb.as_slice()) {
            *a += b;
        }
        dx
    }
}
