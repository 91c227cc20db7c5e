//! Minimal dense/LSTM layers with hand-written backward passes, an Adam
//! optimizer, and orthogonal initialization. Everything is f64; matrix
//! products go through ndarray's blocked kernels.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

/// Visits (weights, gradient) slice pairs in a fixed order. The order is the
/// serialization order for checkpoints and the coordinate order for
/// finite-difference checks.
pub trait Module {
    fn visit(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64]));

    fn zero_grad(&mut self) {
        self.visit(&mut |_, _, g| g.fill(0.0));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, w, _| n += w.len());
        n
    }

    fn grad_norm(&mut self) -> f64 {
        let mut acc = 0.0;
        self.visit(&mut |_, _, g| acc += g.iter().map(|v| v * v).sum::<f64>());
        acc.sqrt()
    }

    /// Scales gradients so their global L2 norm is at most `max_norm`.
    fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            self.visit(&mut |_, _, g| g.iter_mut().for_each(|v| *v *= scale));
        }
        norm
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Orthogonal rows (or columns when rows > cols) via modified Gram-Schmidt
/// on a Gaussian matrix, scaled by `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Array2<f64> {
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    // r <= c: orthonormalize the r rows of an r x c Gaussian matrix.
    let mut m = Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal));
    for i in 0..r {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let prev = m.row(j).to_owned();
            m.row_mut(i).zip_mut_with(&prev, |a, &b| *a -= proj * b);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        m.row_mut(i).mapv_inplace(|v| v / norm);
    }
    // as_standard_layout: a plain .t().to_owned() would keep the transposed
    // strides, breaking the flat slices handed out by visit().
    let m = if transpose {
        m.t().as_standard_layout().into_owned()
    } else {
        m
    };
    m * gain
}

/// Fully connected layer, `y = x W^T + b`, with accumulated gradients.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Linear {
    pub fn new(name: &str, input: usize, output: usize, gain: f64, rng: &mut impl Rng) -> Linear {
        Linear {
            name: name.to_string(),
            w: orthogonal(output, input, gain, rng),
            b: Array1::zeros(output),
            gw: Array2::zeros((output, input)),
            gb: Array1::zeros(output),
        }
    }

    /// `x`: [batch, input] -> [batch, output].
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.gw += &dy.t().dot(x);
        self.gb += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

impl Module for Linear {
    fn visit(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        f(
            &format!("{}.w", self.name),
            self.w.as_slice_mut().expect("standard layout"),
            self.gw.as_slice_mut().expect("standard layout"),
        );
        f(
            &format!("{}.b", self.name),
            self.b.as_slice_mut().expect("standard layout"),
            self.gb.as_slice_mut().expect("standard layout"),
        );
    }
}

/// Per-step cache needed to run the LSTM backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    /// Post-activation gates [batch, 4H] in i, f, g, o order.
    pub gates: Array2<f64>,
    pub c_new: Array2<f64>,
}

/// Single-layer LSTM with gate packing [input, forget, cell, output].
#[derive(Clone, Debug)]
pub struct Lstm {
    pub name: String,
    pub hidden: usize,
    /// [4H, input]
    pub wx: Array2<f64>,
    /// [4H, H]
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
    pub gwx: Array2<f64>,
    pub gwh: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Lstm {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Lstm {
        let mut b = Array1::zeros(4 * hidden);
        // Forget-gate bias 1.0: standard remedy against early vanishing memory.
        b.slice_mut(ndarray::s![hidden..2 * hidden]).fill(1.0);
        Lstm {
            name: name.to_string(),
            hidden,
            wx: orthogonal(4 * hidden, input, 1.0, rng),
            wh: orthogonal(4 * hidden, hidden, 1.0, rng),
            b,
            gwx: Array2::zeros((4 * hidden, input)),
            gwh: Array2::zeros((4 * hidden, hidden)),
            gb: Array1::zeros(4 * hidden),
        }
    }

    /// One step: (h, c) -> (h', c') for `x` [batch, input].
    pub fn step(
        &self,
        x: &Array2<f64>,
        h: &Array2<f64>,
        c: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, LstmCache) {
        let hdim = self.hidden;
        let mut z = x.dot(&self.wx.t()) + h.dot(&self.wh.t()) + &self.b;
        let batch = x.nrows();
        let mut c_new = Array2::zeros((batch, hdim));
        let mut h_new = Array2::zeros((batch, hdim));
        for bi in 0..batch {
            for k in 0..hdim {
                let i = sigmoid(z[[bi, k]]);
                let f = sigmoid(z[[bi, hdim + k]]);
                let g = z[[bi, 2 * hdim + k]].tanh();
                let o = sigmoid(z[[bi, 3 * hdim + k]]);
                let cn = f * c[[bi, k]] + i * g;
                c_new[[bi, k]] = cn;
                h_new[[bi, k]] = o * cn.tanh();
                z[[bi, k]] = i;
                z[[bi, hdim + k]] = f;
                z[[bi, 2 * hdim + k]] = g;
                z[[bi, 3 * hdim + k]] = o;
            }
        }
        let cache = LstmCache {
            gates: z,
            c_new: c_new.clone(),
        };
        (h_new, c_new, cache)
    }

    /// Backward through one step. `dh`/`dc` are gradients flowing into h'/c';
    /// returns (dx, dh_prev, dc_prev) and accumulates parameter gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_step(
        &mut self,
        cache: &LstmCache,
        x: &Array2<f64>,
        h_prev: &Array2<f64>,
        c_prev: &Array2<f64>,
        dh: &Array2<f64>,
        dc: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let hdim = self.hidden;
        let batch = x.nrows();
        let mut dz = Array2::zeros((batch, 4 * hdim));
        let mut dc_prev = Array2::zeros((batch, hdim));
        for bi in 0..batch {
            for k in 0..hdim {
                let i = cache.gates[[bi, k]];
                let f = cache.gates[[bi, hdim + k]];
                let g = cache.gates[[bi, 2 * hdim + k]];
                let o = cache.gates[[bi, 3 * hdim + k]];
                let tc = cache.c_new[[bi, k]].tanh();
                // dL/dc_new: from c path plus through h = o * tanh(c_new).
                let dcn = dc[[bi, k]] + dh[[bi, k]] * o * (1.0 - tc * tc);
                dz[[bi, k]] = dcn * g * i * (1.0 - i);
                dz[[bi, hdim + k]] = dcn * c_prev[[bi, k]] * f * (1.0 - f);
                dz[[bi, 2 * hdim + k]] = dcn * i * (1.0 - g * g);
                dz[[bi, 3 * hdim + k]] = dh[[bi, k]] * tc * o * (1.0 - o);
                dc_prev[[bi, k]] = dcn * f;
            }
        }
        self.gwx += &dz.t().dot(x);
        self.gwh += &dz.t().dot(h_prev);
        self.gb += &dz.sum_axis(Axis(0));
        let dx = dz.dot(&self.wx);
        let dh_prev = dz.dot(&self.wh);
        (dx, dh_prev, dc_prev)
    }
}

impl Module for Lstm {
    fn visit(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        f(
            &format!("{}.wx", self.name),
            self.wx.as_slice_mut().expect("standard layout"),
            self.gwx.as_slice_mut().expect("standard layout"),
        );
        f(
            &format!("{}.wh", self.name),
            self.wh.as_slice_mut().expect("standard layout"),
            self.gwh.as_slice_mut().expect("standard layout"),
        );
        f(
            &format!("{}.b", self.name),
            self.b.as_slice_mut().expect("standard layout"),
            self.gb.as_slice_mut().expect("standard layout"),
        );
    }
}

/// Adam with bias correction. Moment buffers are keyed by visit order, so the
/// same optimizer must always drive the same module.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, module: &mut dyn Module) {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        module.visit(&mut |_, w, g| {
            if m.len() == idx {
                m.push(vec![0.0; w.len()]);
                v.push(vec![0.0; w.len()]);
            }
            assert_eq!(m[idx].len(), w.len(), "optimizer/module shape drift");
            for k in 0..w.len() {
                m[idx][k] = b1 * m[idx][k] + (1.0 - b1) * g[k];
                v[idx][k] = b2 * v[idx][k] + (1.0 - b2) * g[k] * g[k];
                let mhat = m[idx][k] / bc1;
                let vhat = v[idx][k] / bc2;
                w[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn fd_check<M: Module>(
        module: &mut M,
        mut loss: impl FnMut(&mut M) -> f64,
        coords: &[(usize, usize)],
        tol: f64,
    ) {
        // Analytic gradients must already be accumulated in the module.
        let mut grads: Vec<Vec<f64>> = Vec::new();
        module.visit(&mut |_, _, g| grads.push(g.to_vec()));
        let h = 1e-6;
        for &(ti, k) in coords {
            let mut orig = 0.0;
            let mut idx = 0;
            module.visit(&mut |_, w, _| {
                if idx == ti {
                    orig = w[k];
                    w[k] += h;
                }
                idx += 1;
            });
            let up = loss(module);
            idx = 0;
            module.visit(&mut |_, w, _| {
                if idx == ti {
                    w[k] = orig - h;
                }
                idx += 1;
            });
            let down = loss(module);
            idx = 0;
            module.visit(&mut |_, w, _| {
                if idx == ti {
                    w[k] = orig;
                }
                idx += 1;
            });
            let fd = (up - down) / (2.0 * h);
            let an = grads[ti][k];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((fd - an) / denom).abs() < tol,
                "tensor {ti} coord {k}: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn linear_forward_oracle() {
        let mut l = Linear::new("l", 2, 2, 1.0, &mut StdRng::seed_from_u64(0));
        l.w = array![[1.0, 2.0], [3.0, -1.0]];
        l.b = array![0.5, -0.5];
        let x = array![[1.0, 1.0], [2.0, 0.0]];
        let y = l.forward(&x);
        assert_eq!(y, array![[3.5, 1.5], [2.5, 5.5]]);
    }

    #[test]
    fn linear_backward_matches_fd() {
        let mut rng = StdRng::seed_from_u64(1);
        let mut l = Linear::new("l", 4, 3, 1.4, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |_| rng.sample::<f64, _>(StandardNormal));
        // Loss: sum of squares of outputs.
        let loss = |l: &mut Linear| l.forward(&x).iter().map(|v| v * v).sum::<f64>();
        l.zero_grad();
        let y = l.forward(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let dx = l.backward(&x, &dy);
        let coords: Vec<(usize, usize)> = (0..12).map(|k| (0, k)).chain((0..3).map(|k| (1, k))).collect();
        fd_check(&mut l, loss, &coords, 1e-7);

        // Input gradient via FD too.
        let h = 1e-6;
        let mut x2 = x.clone();
        x2[[0, 0]] += h;
        let up: f64 = l.forward(&x2).iter().map(|v| v * v).sum();
        x2[[0, 0]] -= 2.0 * h;
        let down: f64 = l.forward(&x2).iter().map(|v| v * v).sum();
        let fd = (up - down) / (2.0 * h);
        assert!((fd - dx[[0, 0]]).abs() / fd.abs().max(1e-8) < 1e-7);
    }

    /// Independent scalar LSTM oracle for one step.
    fn lstm_oracle_step(
        l: &Lstm,
        x: &Array2<f64>,
        h: &Array2<f64>,
        c: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let hdim = l.hidden;
        let batch = x.nrows();
        let mut hn = Array2::zeros((batch, hdim));
        let mut cn = Array2::zeros((batch, hdim));
        for bi in 0..batch {
            for k in 0..hdim {
                let mut zi = l.b[k];
                let mut zf = l.b[hdim + k];
                let mut zg = l.b[2 * hdim + k];
                let mut zo = l.b[3 * hdim + k];
                for j in 0..x.ncols() {
                    zi += l.wx[[k, j]] * x[[bi, j]];
                    zf += l.wx[[hdim + k, j]] * x[[bi, j]];
                    zg += l.wx[[2 * hdim + k, j]] * x[[bi, j]];
                    zo += l.wx[[3 * hdim + k, j]] * x[[bi, j]];
                }
                for j in 0..hdim {
                    zi += l.wh[[k, j]] * h[[bi, j]];
                    zf += l.wh[[hdim + k, j]] * h[[bi, j]];
                    zg += l.wh[[2 * hdim + k, j]] * h[[bi, j]];
                    zo += l.wh[[3 * hdim + k, j]] * h[[bi, j]];
                }
                let (i, f, g, o) = (sigmoid(zi), sigmoid(zf), zg.tanh(), sigmoid(zo));
                cn[[bi, k]] = f * c[[bi, k]] + i * g;
                hn[[bi, k]] = o * cn[[bi, k]].tanh();
            }
        }
        (hn, cn)
    }

    #[test]
    fn lstm_step_matches_scalar_oracle() {
        let mut rng = StdRng::seed_from_u64(2);
        let l = Lstm::new("m", 3, 4, &mut rng);
        let x = Array2::from_shape_fn((2, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let h = Array2::from_shape_fn((2, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let c = Array2::from_shape_fn((2, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let (hn, cn, _) = l.step(&x, &h, &c);
        let (ho, co) = lstm_oracle_step(&l, &x, &h, &c);
        for (a, b) in hn.iter().zip(ho.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in cn.iter().zip(co.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_bptt_matches_fd() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut l = Lstm::new("m", 3, 4, &mut rng);
        let xs: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((2, 3), |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        // Loss: sum over time of squared h.
        let loss = |l: &mut Lstm| {
            let mut h = Array2::zeros((2, 4));
            let mut c = Array2::zeros((2, 4));
            let mut total = 0.0;
            for x in &xs {
                let (hn, cn, _) = l.step(x, &h, &c);
                total += hn.iter().map(|v| v * v).sum::<f64>();
                h = hn;
                c = cn;
            }
            total
        };
        l.zero_grad();
        let mut states = vec![(Array2::zeros((2, 4)), Array2::zeros((2, 4)))];
        let mut caches = Vec::new();
        for x in &xs {
            let (h, c) = states.last().cloned().unwrap();
            let (hn, cn, cache) = l.step(x, &h, &c);
            caches.push(cache);
            states.push((hn, cn));
        }
        let mut dh = Array2::zeros((2, 4));
        let mut dc = Array2::zeros((2, 4));
        for t in (0..3).rev() {
            let dh_total = &dh + &states[t + 1].0.mapv(|v| 2.0 * v);
            let (h_prev, c_prev) = &states[t];
            let (_, dhp, dcp) = l.backward_step(&caches[t], &xs[t], h_prev, c_prev, &dh_total, &dc);
            dh = dhp;
            dc = dcp;
        }
        let mut sizes = Vec::new();
        l.visit(&mut |_, w, _| sizes.push(w.len()));
        let mut coords = Vec::new();
        for (ti, &size) in sizes.iter().enumerate() {
            for k in [0, size / 3, size / 2, size - 1] {
                coords.push((ti, k));
            }
        }
        fd_check(&mut l, loss, &coords, 1e-6);
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = StdRng::seed_from_u64(4);
        let m = orthogonal(4, 16, 1.0, &mut rng);
        let gram = m.dot(&m.t());
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10, "gram[{i}{j}]");
            }
        }
        // Tall case: columns orthonormal, gain scales.
        let m = orthogonal(16, 4, 2.0, &mut rng);
        let gram = m.t().dot(&m);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 4.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adam_single_step_oracle() {
        let mut l = Linear::new("l", 1, 1, 1.0, &mut StdRng::seed_from_u64(5));
        l.w[[0, 0]] = 1.0;
        l.b[0] = 0.0;
        l.gw[[0, 0]] = 0.5;
        l.gb[0] = 0.0;
        let mut opt = Adam::new(0.1);
        opt.step(&mut l);
        // t=1: mhat = g, vhat = g^2 -> w -= lr * g / (|g| + eps) = w - lr*sign(g).
        let expect = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((l.w[[0, 0]] - expect).abs() < 1e-12);
        assert_eq!(l.b[0], 0.0);
    }

    #[test]
    fn grad_clip_scales_to_max_norm() {
        let mut l = Linear::new("l", 2, 1, 1.0, &mut StdRng::seed_from_u64(6));
        l.gw[[0, 0]] = 3.0;
        l.gw[[0, 1]] = 4.0;
        l.gb[0] = 0.0;
        let before = l.clip_grad_norm(1.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((l.grad_norm() - 1.0).abs() < 1e-12);
        assert!((l.gw[[0, 0]] - 0.6).abs() < 1e-12);

        // Below the cap: untouched.
        l.gw[[0, 0]] = 0.3;
        l.gw[[0, 1]] = 0.4;
        l.clip_grad_norm(1.0);
        assert!((l.gw[[0, 1]] - 0.4).abs() < 1e-15);
    }
}
