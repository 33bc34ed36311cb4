//! Forward and backward kernels. All kernels take a leading batch axis.

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Conv2dCfg {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Conv2dCfg { stride: (1, 1), pad: (0, 0) }
    }
}

fn conv_out(len: usize, pad: usize, k: usize, stride: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    let span = padded - k;
    span.is_multiple_of(stride).then_some(span / stride + 1)
}

/// Output positions `o` such that `o*stride + k - pad` lands in `[0, len)`.
#[inline]
fn valid_range(out: usize, len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    // o*stride >= pad - k
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // o*stride <= len - 1 + pad - k
    let top = len - 1 + pad;
    let hi = if top >= k { ((top - k) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

#[allow(clippy::type_complexity)]
fn conv_shapes(
    x: &Tensor,
    w: &Tensor,
    cfg: Conv2dCfg,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize), NnError> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(NnError::shape("conv2d", format!("input {xs:?}, weight {ws:?}")));
    }
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let oh = conv_out(h, cfg.pad.0, kh, cfg.stride.0);
    let ow = conv_out(wd, cfg.pad.1, kw, cfg.stride.1);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((n, cin, h, wd, cout, kh, kw, oh, ow)),
        _ => Err(NnError::shape(
            "conv2d",
            format!("window {kh}x{kw} with {cfg:?} does not tile input {xs:?}"),
        )),
    }
}

/// Cross-correlation: `y[n,o,i,j] = b[o] + Σ x[n,c,i*s+p-pad, j*s+q-pad] w[o,c,p,q]`.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    cfg: Conv2dCfg,
) -> Result<Tensor, NnError> {
    let (n, cin, h, wd, cout, kh, kw, oh, ow) = conv_shapes(x, w, cfg)?;
    if b.len() != cout {
        return Err(NnError::shape("conv2d", format!("bias {:?} for {cout} filters", b.shape())));
    }
    let (sh, sw) = cfg.stride;
    let (ph, pw) = cfg.pad;
    let (xd, wdat) = (x.data(), w.data());
    let mut y = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            let out = &mut y[(ni * cout + co) * oh * ow..][..oh * ow];
            out.fill(b.data()[co]);
            for ci in 0..cin {
                let plane = &xd[(ni * cin + ci) * h * wd..][..h * wd];
                for ki in 0..kh {
                    let (r0, r1) = valid_range(oh, h, ki, ph, sh);
                    for kj in 0..kw {
                        let wv = wdat[((co * cin + ci) * kh + ki) * kw + kj];
                        let (c0, c1) = valid_range(ow, wd, kj, pw, sw);
                        for r in r0..r1 {
                            let ir = r * sh + ki - ph;
                            let row = &plane[ir * wd..][..wd];
                            let orow = &mut out[r * ow..][..ow];
                            if sw == 1 {
                                let off = kj as isize - pw as isize;
                                for c in c0..c1 {
                                    orow[c] += wv * row[(c as isize + off) as usize];
                                }
                            } else {
                                for c in c0..c1 {
                                    orow[c] += wv * row[c * sw + kj - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], y)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    cfg: Conv2dCfg,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let (n, cin, h, wd, cout, kh, kw, oh, ow) = conv_shapes(x, w, cfg)?;
    if gy.shape() != [n, cout, oh, ow] {
        return Err(NnError::shape("conv2d_backward", format!("grad {:?}", gy.shape())));
    }
    let (sh, sw) = cfg.stride;
    let (ph, pw) = cfg.pad;
    let (xd, wdat, g) = (x.data(), w.data(), gy.data());
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; cout];
    for ni in 0..n {
        for co in 0..cout {
            let gplane = &g[(ni * cout + co) * oh * ow..][..oh * ow];
            gb[co] += gplane.iter().sum::<f64>();
            for ci in 0..cin {
                let base = (ni * cin + ci) * h * wd;
                for ki in 0..kh {
                    let (r0, r1) = valid_range(oh, h, ki, ph, sh);
                    for kj in 0..kw {
                        let widx = ((co * cin + ci) * kh + ki) * kw + kj;
                        let wv = wdat[widx];
                        let (c0, c1) = valid_range(ow, wd, kj, pw, sw);
                        let mut acc = 0.0;
                        for r in r0..r1 {
                            let ir = r * sh + ki - ph;
                            let grow = &gplane[r * ow..][..ow];
                            let xrow = base + ir * wd;
                            for (c, &g) in grow.iter().enumerate().take(c1).skip(c0) {
                                let ic = c * sw + kj - pw;
                                acc += g * xd[xrow + ic];
                                gx[xrow + ic] += g * wv;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolCfg {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl PoolCfg {
    pub fn square(k: usize) -> Self {
        PoolCfg { kernel: (k, k), stride: (k, k) }
    }
}

/// Max pooling. Returns the pooled tensor and, per output, the flat input
/// index that produced it. Ties go to the first maximizer in row-major order.
pub fn maxpool2d_forward(x: &Tensor, cfg: PoolCfg) -> Result<(Tensor, Vec<usize>), NnError> {
    let xs = x.shape();
    let (kh, kw) = cfg.kernel;
    let (sh, sw) = cfg.stride;
    if xs.len() != 4 || kh == 0 || kw == 0 || sh == 0 || sw == 0 || xs[2] < kh || xs[3] < kw {
        return Err(NnError::shape("maxpool2d", format!("input {xs:?} with {cfg:?}")));
    }
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let oh = (h - kh) / sh + 1;
    let ow = (wd - kw) / sw + 1;
    let xd = x.data();
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * wd;
        for r in 0..oh {
            for col in 0..ow {
                let mut best = base + r * sh * wd + col * sw;
                for i in 0..kh {
                    for j in 0..kw {
                        let idx = base + (r * sh + i) * wd + col * sw + j;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                y.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], y)?, arg))
}

pub fn maxpool2d_backward(gy: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(gy.data()) {
        d[i] += g;
    }
    gx
}

/// `y = x Wᵀ + b` for `x: N×Fin`, `W: Fout×Fin`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.len() != ws[0] {
        return Err(NnError::shape(
            "dense",
            format!("input {xs:?}, weight {ws:?}, bias {:?}", b.shape()),
        ));
    }
    let (n, fin, fout) = (xs[0], xs[1], ws[0]);
    let mut y = vec![0.0; n * fout];
    for i in 0..n {
        let row = &x.data()[i * fin..][..fin];
        for o in 0..fout {
            let wrow = &w.data()[o * fin..][..fin];
            y[i * fout + o] = b.data()[o] + dot(row, wrow);
        }
    }
    Tensor::new(vec![n, fout], y)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    if gy.shape() != [n, fout] {
        return Err(NnError::shape("dense_backward", format!("grad {:?}", gy.shape())));
    }
    let mut gx = vec![0.0; n * fin];
    let mut gw = vec![0.0; fout * fin];
    let mut gb = vec![0.0; fout];
    for i in 0..n {
        let xrow = &x.data()[i * fin..][..fin];
        let gxrow = &mut gx[i * fin..][..fin];
        for o in 0..fout {
            let g = gy.data()[i * fout + o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let wrow = &w.data()[o * fin..][..fin];
            let gwrow = &mut gw[o * fin..][..fin];
            for k in 0..fin {
                gwrow[k] += g * xrow[k];
                gxrow[k] += g * wrow[k];
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![fout], gb)?,
    ))
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

/// Gradient through relu given the forward input.
pub fn relu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    let data = x.data().iter().zip(gy.data()).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 });
    Tensor::new(x.shape().to_vec(), data.collect()).expect("same shape")
}

/// Gradient through sigmoid given the forward output.
pub fn sigmoid_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(gy.data()).map(|(&y, &g)| g * y * (1.0 - y));
    Tensor::new(y.shape().to_vec(), data.collect()).expect("same shape")
}

/// Gradient through tanh given the forward output.
pub fn tanh_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(gy.data()).map(|(&y, &g)| g * (1.0 - y * y));
    Tensor::new(y.shape().to_vec(), data.collect()).expect("same shape")
}

/// LSTM weights. Gate blocks are stacked in the order input, forget,
/// candidate, output: `w: 4H×E`, `u: 4H×H`, `b: 4H`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w: &'a Tensor,
    pub u: &'a Tensor,
    pub b: &'a Tensor,
}

/// Everything the backward pass needs from one step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    /// Post-activation gates `N×4H` in order i, f, g, o.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn lstm_dims(x: &Tensor, h: &Tensor, p: LstmWeights) -> Result<(usize, usize, usize), NnError> {
    let (xs, hs) = (x.shape(), h.shape());
    if xs.len() != 2 || hs.len() != 2 || xs[0] != hs[0] {
        return Err(NnError::shape("lstm_step", format!("x {xs:?}, h {hs:?}")));
    }
    let (n, e, hid) = (xs[0], xs[1], hs[1]);
    if p.w.shape() != [4 * hid, e] || p.u.shape() != [4 * hid, hid] || p.b.len() != 4 * hid {
        return Err(NnError::shape(
            "lstm_step",
            format!(
                "w {:?}, u {:?}, b {:?} for E={e}, H={hid}",
                p.w.shape(),
                p.u.shape(),
                p.b.shape()
            ),
        ));
    }
    Ok((n, e, hid))
}

/// One LSTM step: returns `(h', c', cache)`.
pub fn lstm_step_forward(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    p: LstmWeights,
) -> Result<(Tensor, Tensor, LstmStepCache), NnError> {
    let (n, e, hid) = lstm_dims(x, h, p)?;
    if c.shape() != h.shape() {
        return Err(NnError::shape("lstm_step", format!("c {:?}", c.shape())));
    }
    let mut gates = vec![0.0; n * 4 * hid];
    let mut h_next = vec![0.0; n * hid];
    let mut c_next = vec![0.0; n * hid];
    let mut tanh_c = vec![0.0; n * hid];
    for s in 0..n {
        let xr = &x.data()[s * e..][..e];
        let hr = &h.data()[s * hid..][..hid];
        let gr = &mut gates[s * 4 * hid..][..4 * hid];
        for (k, g) in gr.iter_mut().enumerate() {
            let z = p.b.data()[k]
                + dot(&p.w.data()[k * e..][..e], xr)
                + dot(&p.u.data()[k * hid..][..hid], hr);
            *g = if k / hid == 2 { z.tanh() } else { sigmoid(z) };
        }
        for j in 0..hid {
            let (i, f, g, o) = (gr[j], gr[hid + j], gr[2 * hid + j], gr[3 * hid + j]);
            let cn = f * c.data()[s * hid + j] + i * g;
            let tc = cn.tanh();
            c_next[s * hid + j] = cn;
            tanh_c[s * hid + j] = tc;
            h_next[s * hid + j] = o * tc;
        }
    }
    let cache = LstmStepCache { x: x.clone(), h_prev: h.clone(), c_prev: c.clone(), gates, tanh_c };
    Ok((Tensor::new(vec![n, hid], h_next)?, Tensor::new(vec![n, hid], c_next)?, cache))
}

/// Gradients of one LSTM step.
#[derive(Debug, Clone)]
pub struct LstmStepGrads {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

/// Backward through one step given upstream grads on `h'` and `c'`.
pub fn lstm_step_backward(
    cache: &LstmStepCache,
    p: LstmWeights,
    gh: &Tensor,
    gc: &Tensor,
) -> Result<LstmStepGrads, NnError> {
    let (n, e, hid) = lstm_dims(&cache.x, &cache.h_prev, p)?;
    if gh.shape() != [n, hid] || gc.shape() != [n, hid] {
        return Err(NnError::shape("lstm_step_backward", format!("grad {:?}", gh.shape())));
    }
    let mut gx = vec![0.0; n * e];
    let mut gh_prev = vec![0.0; n * hid];
    let mut gc_prev = vec![0.0; n * hid];
    let mut gw = vec![0.0; 4 * hid * e];
    let mut gu = vec![0.0; 4 * hid * hid];
    let mut gb = vec![0.0; 4 * hid];
    let mut dz = vec![0.0; 4 * hid];
    for s in 0..n {
        let gr = &cache.gates[s * 4 * hid..][..4 * hid];
        for j in 0..hid {
            let (i, f, g, o) = (gr[j], gr[hid + j], gr[2 * hid + j], gr[3 * hid + j]);
            let tc = cache.tanh_c[s * hid + j];
            let ghj = gh.data()[s * hid + j];
            let dc = gc.data()[s * hid + j] + ghj * o * (1.0 - tc * tc);
            let c_prev = cache.c_prev.data()[s * hid + j];
            gc_prev[s * hid + j] = dc * f;
            dz[j] = dc * g * i * (1.0 - i);
            dz[hid + j] = dc * c_prev * f * (1.0 - f);
            dz[2 * hid + j] = dc * i * (1.0 - g * g);
            dz[3 * hid + j] = ghj * tc * o * (1.0 - o);
        }
        let xr = &cache.x.data()[s * e..][..e];
        let hr = &cache.h_prev.data()[s * hid..][..hid];
        let gxr = &mut gx[s * e..][..e];
        let ghr = &mut gh_prev[s * hid..][..hid];
        for (k, &d) in dz.iter().enumerate() {
            gb[k] += d;
            let wrow = &p.w.data()[k * e..][..e];
            let urow = &p.u.data()[k * hid..][..hid];
            for q in 0..e {
                gw[k * e + q] += d * xr[q];
                gxr[q] += d * wrow[q];
            }
            for q in 0..hid {
                gu[k * hid + q] += d * hr[q];
                ghr[q] += d * urow[q];
            }
        }
    }
    Ok(LstmStepGrads {
        x: Tensor::new(vec![n, e], gx)?,
        h_prev: Tensor::new(vec![n, hid], gh_prev)?,
        c_prev: Tensor::new(vec![n, hid], gc_prev)?,
        w: Tensor::new(p.w.shape().to_vec(), gw)?,
        u: Tensor::new(p.u.shape().to_vec(), gu)?,
        b: Tensor::new(vec![4 * hid], gb)?,
    })
}

/// Mean squared error over all elements, and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::shape(
            "mse_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}
