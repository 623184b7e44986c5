//! Dense building blocks over a flat parameter vector, each with an explicit
//! backward pass that accumulates into a gradient vector of the same layout.

/// Affine map `y = W x + b` with `W` stored row-major at `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn len(&self) -> usize {
        self.out * self.inp + self.out
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inp);
        let w = &p[self.w..self.w + self.out * self.inp];
        let b = &p[self.b..self.b + self.out];
        (0..self.out)
            .map(|o| {
                let row = &w[o * self.inp..(o + 1) * self.inp];
                b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, p: &[f64], grad: &mut [f64], x: &[f64], dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inp];
        for o in 0..self.out {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            grad[self.b + o] += d;
            let row = self.w + o * self.inp;
            for i in 0..self.inp {
                grad[row + i] += d * x[i];
                dx[i] += d * p[row + i];
            }
        }
        dx
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Gated recurrent unit; all three gates read `[input; state]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Gru {
    pub update: Linear,
    pub reset: Linear,
    pub candidate: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    input: Vec<f64>,
    state: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

impl Gru {
    pub fn forward(&self, p: &[f64], input: &[f64], state: &[f64]) -> (Vec<f64>, GruCache) {
        let xs = concat(input, state);
        let z: Vec<f64> = self.update.forward(p, &xs).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = self.reset.forward(p, &xs).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(state).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> =
            self.candidate.forward(p, &concat(input, &rh)).into_iter().map(f64::tanh).collect();
        let out = (0..state.len()).map(|k| (1.0 - z[k]) * state[k] + z[k] * cand[k]).collect();
        (out, GruCache { input: input.to_vec(), state: state.to_vec(), z, r, cand })
    }

    /// Returns `(d input, d state)`.
    pub fn backward(&self, p: &[f64], grad: &mut [f64], c: &GruCache, dout: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = c.state.len();
        let m = c.input.len();
        let mut dstate: Vec<f64> = (0..n).map(|k| dout[k] * (1.0 - c.z[k])).collect();
        let dz: Vec<f64> = (0..n).map(|k| dout[k] * (c.cand[k] - c.state[k])).collect();
        let da_cand: Vec<f64> =
            (0..n).map(|k| dout[k] * c.z[k] * (1.0 - c.cand[k] * c.cand[k])).collect();
        let rh: Vec<f64> = c.r.iter().zip(&c.state).map(|(a, b)| a * b).collect();
        let d_cand_in = self.candidate.backward(p, grad, &concat(&c.input, &rh), &da_cand);
        let mut dinput = d_cand_in[..m].to_vec();
        let drh = &d_cand_in[m..];
        let mut da_r = vec![0.0; n];
        for k in 0..n {
            dstate[k] += drh[k] * c.r[k];
            da_r[k] = drh[k] * c.state[k] * c.r[k] * (1.0 - c.r[k]);
        }
        let da_z: Vec<f64> = (0..n).map(|k| dz[k] * c.z[k] * (1.0 - c.z[k])).collect();
        let xs = concat(&c.input, &c.state);
        for (layer, da) in [(&self.update, &da_z), (&self.reset, &da_r)] {
            let d = layer.backward(p, grad, &xs, da);
            for k in 0..m {
                dinput[k] += d[k];
            }
            for k in 0..n {
                dstate[k] += d[m + k];
            }
        }
        (dinput, dstate)
    }
}

/// LSTM cell with one fused gate layer over `[input; hidden]`, gate order
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Lstm {
    pub gates: Linear,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl Lstm {
    pub fn forward(&self, p: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, LstmCache) {
        let n = self.hidden;
        let xh = concat(x, h);
        let a = self.gates.forward(p, &xh);
        let i: Vec<f64> = a[..n].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = a[n..2 * n].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = a[2 * n..3 * n].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = a[3 * n..].iter().map(|&v| sigmoid(v)).collect();
        let c_new: Vec<f64> = (0..n).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new = (0..n).map(|k| o[k] * tanh_c[k]).collect();
        (h_new, c_new, LstmCache { xh, i, f, g, o, c_prev: c.to_vec(), tanh_c })
    }

    /// Returns `(d input, d hidden, d cell)` for the previous step.
    pub fn backward(
        &self,
        p: &[f64],
        grad: &mut [f64],
        c: &LstmCache,
        dh: &[f64],
        dc: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.hidden;
        let mut da = vec![0.0; 4 * n];
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let dct = dc[k] + dh[k] * c.o[k] * (1.0 - c.tanh_c[k] * c.tanh_c[k]);
            da[k] = dct * c.g[k] * c.i[k] * (1.0 - c.i[k]);
            da[n + k] = dct * c.c_prev[k] * c.f[k] * (1.0 - c.f[k]);
            da[2 * n + k] = dct * c.i[k] * (1.0 - c.g[k] * c.g[k]);
            da[3 * n + k] = dh[k] * c.tanh_c[k] * c.o[k] * (1.0 - c.o[k]);
            dc_prev[k] = dct * c.f[k];
        }
        let dxh = self.gates.backward(p, grad, &c.xh, &da);
        let split = dxh.len() - n;
        (dxh[..split].to_vec(), dxh[split..].to_vec(), dc_prev)
    }
}
