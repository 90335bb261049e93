//! Raw slice kernels behind the differentiable ops. Everything here is
//! row-major and allocation-explicit; shape validation happens in the tape.

use crate::scalar::Scalar;

/// Geometry of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv1dGeom {
    fn default() -> Self {
        Conv1dGeom {
            stride: 1,
            dilation: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv1dGeom {
    pub fn strided(stride: usize) -> Self {
        Conv1dGeom {
            stride,
            ..Default::default()
        }
    }

    /// Same-length padding for an odd kernel at the given dilation.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Conv1dGeom {
            dilation,
            padding: dilation * (kernel - 1) / 2,
            ..Default::default()
        }
    }

    /// `floor((T + 2p - d(K-1) - 1)/s) + 1`, or `None` when the kernel span
    /// exceeds the padded input.
    pub fn out_len(&self, t: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = t + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    fn is_pointwise(&self, k: usize) -> bool {
        k == 1 && self.stride == 1 && self.padding == 0 && self.groups == 1
    }
}

/// `(T-1)s - 2p + K` for a transposed convolution.
pub fn conv_transpose1d_out_len(t: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    ((t - 1) * stride + k).checked_sub(2 * padding).filter(|&n| n > 0)
}

#[inline]
fn src_index(to: usize, kk: usize, g: &Conv1dGeom, t: usize) -> Option<usize> {
    let pos = (to * g.stride + kk * g.dilation) as isize - g.padding as isize;
    (pos >= 0 && (pos as usize) < t).then_some(pos as usize)
}

fn im2col_1d<T: Scalar>(x: &[T], cin: usize, t: usize, k: usize, g: &Conv1dGeom, tout: usize) -> Vec<T> {
    let mut cols = vec![T::zero(); cin * k * tout];
    for ci in 0..cin {
        let xrow = &x[ci * t..(ci + 1) * t];
        for kk in 0..k {
            let crow = &mut cols[(ci * k + kk) * tout..(ci * k + kk + 1) * tout];
            for (to, c) in crow.iter_mut().enumerate() {
                if let Some(src) = src_index(to, kk, g, t) {
                    *c = xrow[src];
                }
            }
        }
    }
    cols
}

fn col2im_1d<T: Scalar>(cols: &[T], cin: usize, t: usize, k: usize, g: &Conv1dGeom, tout: usize, dx: &mut [T]) {
    for ci in 0..cin {
        for kk in 0..k {
            let crow = &cols[(ci * k + kk) * tout..(ci * k + kk + 1) * tout];
            for (to, &c) in crow.iter().enumerate() {
                if let Some(src) = src_index(to, kk, g, t) {
                    dx[ci * t + src] += c;
                }
            }
        }
    }
}

/// Forward conv1d. `x` is `cin x t`, `w` is `cout x (cin/groups) x k`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward<T: Scalar>(
    x: &[T],
    cin: usize,
    t: usize,
    w: &[T],
    cout: usize,
    k: usize,
    bias: Option<&[T]>,
    g: &Conv1dGeom,
    tout: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); cout * tout];
    if let Some(b) = bias {
        for (co, row) in y.chunks_mut(tout).enumerate() {
            row.fill(b[co]);
        }
    }
    if g.groups == 1 {
        if g.is_pointwise(k) {
            T::gemm(cout, cin, tout, T::one(), w, false, x, false, T::one(), &mut y);
        } else {
            let cols = im2col_1d(x, cin, t, k, g, tout);
            T::gemm(cout, cin * k, tout, T::one(), w, false, &cols, false, T::one(), &mut y);
        }
        return y;
    }
    let cin_g = cin / g.groups;
    let cout_g = cout / g.groups;
    for co in 0..cout {
        let grp = co / cout_g;
        let yrow = &mut y[co * tout..(co + 1) * tout];
        for cl in 0..cin_g {
            let ci = grp * cin_g + cl;
            let xrow = &x[ci * t..(ci + 1) * t];
            for kk in 0..k {
                let wv = w[(co * cin_g + cl) * k + kk];
                for (to, yv) in yrow.iter_mut().enumerate() {
                    if let Some(src) = src_index(to, kk, g, t) {
                        *yv += wv * xrow[src];
                    }
                }
            }
        }
    }
    y
}

/// Gradients of conv1d w.r.t. input and weight (bias grad is a row sum of `dy`).
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    cin: usize,
    t: usize,
    w: &[T],
    cout: usize,
    k: usize,
    g: &Conv1dGeom,
    tout: usize,
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    if g.groups == 1 {
        let pointwise = g.is_pointwise(k);
        let cols_owned;
        let cols: &[T] = if pointwise {
            x
        } else {
            cols_owned = im2col_1d(x, cin, t, k, g, tout);
            &cols_owned
        };
        let dw = want_dw.then(|| {
            let mut dw = vec![T::zero(); cout * cin * k];
            T::gemm(cout, tout, cin * k, T::one(), dy, false, cols, true, T::zero(), &mut dw);
            dw
        });
        let dx = want_dx.then(|| {
            let mut dcols = vec![T::zero(); cin * k * tout];
            T::gemm(cin * k, cout, tout, T::one(), w, true, dy, false, T::zero(), &mut dcols);
            if pointwise {
                dcols
            } else {
                let mut dx = vec![T::zero(); cin * t];
                col2im_1d(&dcols, cin, t, k, g, tout, &mut dx);
                dx
            }
        });
        return (dx, dw);
    }
    let cin_g = cin / g.groups;
    let cout_g = cout / g.groups;
    let mut dx = want_dx.then(|| vec![T::zero(); cin * t]);
    let mut dw = want_dw.then(|| vec![T::zero(); w.len()]);
    for co in 0..cout {
        let grp = co / cout_g;
        let dyrow = &dy[co * tout..(co + 1) * tout];
        for cl in 0..cin_g {
            let ci = grp * cin_g + cl;
            for kk in 0..k {
                let widx = (co * cin_g + cl) * k + kk;
                let wv = w[widx];
                let mut acc = T::zero();
                for (to, &d) in dyrow.iter().enumerate() {
                    if let Some(src) = src_index(to, kk, g, t) {
                        if let Some(dx) = dx.as_mut() {
                            dx[ci * t + src] += wv * d;
                        }
                        acc += d * x[ci * t + src];
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw)
}

/// Forward transposed conv1d. `x` is `cin x t`, `w` is `cin x cout x k`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d_forward<T: Scalar>(
    x: &[T],
    cin: usize,
    t: usize,
    w: &[T],
    cout: usize,
    k: usize,
    bias: Option<&[T]>,
    stride: usize,
    padding: usize,
    tout: usize,
) -> Vec<T> {
    // cols = W^T (cout*k x cin) . x (cin x t)
    let mut cols = vec![T::zero(); cout * k * t];
    T::gemm(cout * k, cin, t, T::one(), w, true, x, false, T::zero(), &mut cols);
    let mut y = vec![T::zero(); cout * tout];
    for co in 0..cout {
        let yrow = &mut y[co * tout..(co + 1) * tout];
        if let Some(b) = bias {
            yrow.fill(b[co]);
        }
        for kk in 0..k {
            let crow = &cols[(co * k + kk) * t..(co * k + kk + 1) * t];
            for (ti, &c) in crow.iter().enumerate() {
                let pos = (ti * stride + kk) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < tout {
                    yrow[pos as usize] += c;
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d_backward<T: Scalar>(
    x: &[T],
    cin: usize,
    t: usize,
    w: &[T],
    cout: usize,
    k: usize,
    stride: usize,
    padding: usize,
    tout: usize,
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut dcols = vec![T::zero(); cout * k * t];
    for co in 0..cout {
        let dyrow = &dy[co * tout..(co + 1) * tout];
        for kk in 0..k {
            let crow = &mut dcols[(co * k + kk) * t..(co * k + kk + 1) * t];
            for (ti, c) in crow.iter_mut().enumerate() {
                let pos = (ti * stride + kk) as isize - padding as isize;
                if pos >= 0 && (pos as usize) < tout {
                    *c = dyrow[pos as usize];
                }
            }
        }
    }
    let dx = want_dx.then(|| {
        let mut dx = vec![T::zero(); cin * t];
        T::gemm(cin, cout * k, t, T::one(), w, false, &dcols, false, T::zero(), &mut dx);
        dx
    });
    let dw = want_dw.then(|| {
        let mut dw = vec![T::zero(); cin * cout * k];
        T::gemm(cin, t, cout * k, T::one(), x, false, &dcols, true, T::zero(), &mut dw);
        dw
    });
    (dx, dw)
}

/// Geometry of a stride-1 "same" 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub struct Conv2dGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Conv2dGeom {
    fn pad(&self) -> (usize, usize) {
        ((self.kh - 1) / 2, (self.kw - 1) / 2)
    }
}

fn im2col_2d<T: Scalar>(x: &[T], g: &Conv2dGeom) -> Vec<T> {
    let (ph, pw) = g.pad();
    let hw = g.h * g.w;
    let mut cols = vec![T::zero(); g.cin * g.kh * g.kw * hw];
    for ci in 0..g.cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for a in 0..g.kh {
            for b in 0..g.kw {
                let row = (ci * g.kh + a) * g.kw + b;
                let crow = &mut cols[row * hw..(row + 1) * hw];
                for i in 0..g.h {
                    let si = i as isize + a as isize - ph as isize;
                    if si < 0 || si as usize >= g.h {
                        continue;
                    }
                    let src = &plane[si as usize * g.w..(si as usize + 1) * g.w];
                    let dst = &mut crow[i * g.w..(i + 1) * g.w];
                    // j + b - pw in [0, w)
                    let lo = pw.saturating_sub(b);
                    let hi = (g.w + pw).saturating_sub(b).min(g.w);
                    for j in lo..hi {
                        dst[j] = src[j + b - pw];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_2d<T: Scalar>(cols: &[T], g: &Conv2dGeom, dx: &mut [T]) {
    let (ph, pw) = g.pad();
    let hw = g.h * g.w;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for a in 0..g.kh {
            for b in 0..g.kw {
                let row = (ci * g.kh + a) * g.kw + b;
                let crow = &cols[row * hw..(row + 1) * hw];
                for i in 0..g.h {
                    let si = i as isize + a as isize - ph as isize;
                    if si < 0 || si as usize >= g.h {
                        continue;
                    }
                    let dst = &mut plane[si as usize * g.w..(si as usize + 1) * g.w];
                    let src = &crow[i * g.w..(i + 1) * g.w];
                    let lo = pw.saturating_sub(b);
                    let hi = (g.w + pw).saturating_sub(b).min(g.w);
                    for j in lo..hi {
                        dst[j + b - pw] += src[j];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &Conv2dGeom) -> Vec<T> {
    let hw = g.h * g.w;
    let mut y = vec![T::zero(); g.cout * hw];
    if let Some(b) = bias {
        for (co, plane) in y.chunks_mut(hw).enumerate() {
            plane.fill(b[co]);
        }
    }
    let cols = im2col_2d(x, g);
    T::gemm(g.cout, g.cin * g.kh * g.kw, hw, T::one(), w, false, &cols, false, T::one(), &mut y);
    y
}

pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &Conv2dGeom,
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let hw = g.h * g.w;
    let kdim = g.cin * g.kh * g.kw;
    let dw = want_dw.then(|| {
        let cols = im2col_2d(x, g);
        let mut dw = vec![T::zero(); g.cout * kdim];
        T::gemm(g.cout, hw, kdim, T::one(), dy, false, &cols, true, T::zero(), &mut dw);
        dw
    });
    let dx = want_dx.then(|| {
        let mut dcols = vec![T::zero(); kdim * hw];
        T::gemm(kdim, g.cout, hw, T::one(), w, true, dy, false, T::zero(), &mut dcols);
        let mut dx = vec![T::zero(); g.cin * hw];
        col2im_2d(&dcols, g, &mut dx);
        dx
    });
    (dx, dw)
}

/// Layout of a normalization: `outer x features x inner`, normalized over
/// `features` for every `(outer, inner)` pair.
#[derive(Clone, Copy, Debug)]
pub struct NormLayout {
    pub outer: usize,
    pub features: usize,
    pub inner: usize,
}

impl NormLayout {
    pub fn along(shape: &[usize], axis: usize) -> Self {
        NormLayout {
            outer: shape[..axis].iter().product(),
            features: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    #[inline]
    fn idx(&self, o: usize, f: usize, i: usize) -> usize {
        (o * self.features + f) * self.inner + i
    }
}

/// Returns `(y, xhat, inv_std)`; `inv_std` is indexed `o * inner + i`.
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    lay: &NormLayout,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::from_usize(lay.features).unwrap();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); lay.outer * lay.inner];
    for o in 0..lay.outer {
        for i in 0..lay.inner {
            let mut mean = T::zero();
            for f in 0..lay.features {
                mean += x[lay.idx(o, f, i)];
            }
            mean /= n;
            let mut var = T::zero();
            for f in 0..lay.features {
                let d = x[lay.idx(o, f, i)] - mean;
                var += d * d;
            }
            var /= n;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[o * lay.inner + i] = istd;
            for f in 0..lay.features {
                let j = lay.idx(o, f, i);
                xhat[j] = (x[j] - mean) * istd;
                y[j] = gain[f] * xhat[j] + bias[f];
            }
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    lay: &NormLayout,
    gain: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::from_usize(lay.features).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dg = vec![T::zero(); lay.features];
    let mut db = vec![T::zero(); lay.features];
    for o in 0..lay.outer {
        for i in 0..lay.inner {
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for f in 0..lay.features {
                let j = lay.idx(o, f, i);
                let dxhat = dy[j] * gain[f];
                mean_d += dxhat;
                mean_dx += dxhat * xhat[j];
                dg[f] += dy[j] * xhat[j];
                db[f] += dy[j];
            }
            mean_d /= n;
            mean_dx /= n;
            let istd = inv_std[o * lay.inner + i];
            for f in 0..lay.features {
                let j = lay.idx(o, f, i);
                dx[j] = istd * (dy[j] * gain[f] - mean_d - xhat[j] * mean_dx);
            }
        }
    }
    (dx, dg, db)
}

/// Global layer norm over a whole `c x t` map with per-channel affine.
/// Returns `(y, xhat, inv_std)`.
pub fn global_layer_norm_forward<T: Scalar>(
    x: &[T],
    c: usize,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, T) {
    let t = x.len() / c;
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let istd = T::one() / (var + eps).sqrt();
    let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * istd).collect();
    let y = xhat
        .iter()
        .enumerate()
        .map(|(j, &h)| gain[j / t] * h + bias[j / t])
        .collect();
    (y, xhat, istd)
}

pub fn global_layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv_std: T,
    c: usize,
    gain: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let t = dy.len() / c;
    let n = T::from_usize(dy.len()).unwrap();
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    let mut mean_d = T::zero();
    let mut mean_dx = T::zero();
    for j in 0..dy.len() {
        let ch = j / t;
        let dxhat = dy[j] * gain[ch];
        mean_d += dxhat;
        mean_dx += dxhat * xhat[j];
        dg[ch] += dy[j] * xhat[j];
        db[ch] += dy[j];
    }
    mean_d /= n;
    mean_dx /= n;
    let dx = (0..dy.len())
        .map(|j| inv_std * (dy[j] * gain[j / t] - mean_d - xhat[j] * mean_dx))
        .collect();
    (dx, dg, db)
}
