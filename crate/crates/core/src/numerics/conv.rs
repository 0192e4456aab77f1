//! Convolution and pooling primitives for the convolutional frontend and
//! the location-feature extractor.

use crate::error::{Error, Result};
use crate::numerics::tape::{BackCtx, Tape};
use crate::numerics::tensor::Tensor;

impl Tape {
    /// 3x3 convolution with zero 'same' padding over a `[C,H,W]` input.
    /// Weights are `[O,C,3,3]`, bias `[O]`; output `[O,H,W]`.
    pub fn conv2d_same3(&self, x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        let ws = weight.shape();
        if xs.len() != 3 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != xs[0] {
            return Err(Error::ShapeMismatch {
                op: "conv2d_same3",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let (ci, h, w) = (xs[0], xs[1], xs[2]);
        let co = ws[0];
        if bias.shape() != [co] {
            return Err(Error::ShapeMismatch {
                op: "conv2d_same3",
                lhs: ws.to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let xv = x.values();
        let wv = weight.values();
        let bv = bias.values();
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for r in 0..h {
                for c in 0..w {
                    let mut acc = bv[o];
                    for ic in 0..ci {
                        for kr in 0..3usize {
                            let rr = r as isize + kr as isize - 1;
                            if rr < 0 || rr >= h as isize {
                                continue;
                            }
                            for kc in 0..3usize {
                                let cc = c as isize + kc as isize - 1;
                                if cc < 0 || cc >= w as isize {
                                    continue;
                                }
                                acc += wv[((o * ci + ic) * 3 + kr) * 3 + kc]
                                    * xv[(ic * h + rr as usize) * w + cc as usize];
                            }
                        }
                    }
                    out[(o * h + r) * w + c] = acc;
                }
            }
        }
        drop(xv);
        drop(wv);
        drop(bv);
        let xc = x.clone();
        let wc = weight.clone();
        Ok(self.custom_op(
            &[x, weight, bias],
            out,
            &[co, h, w],
            Box::new(move |ctx: &BackCtx| {
                let xv = xc.values();
                let wv = wc.values();
                let dx = ctx.need[0].then(|| {
                    let mut d = vec![0.0; ci * h * w];
                    for o in 0..co {
                        for r in 0..h {
                            for c in 0..w {
                                let g = ctx.d_out[(o * h + r) * w + c];
                                if g == 0.0 {
                                    continue;
                                }
                                for ic in 0..ci {
                                    for kr in 0..3usize {
                                        let rr = r as isize + kr as isize - 1;
                                        if rr < 0 || rr >= h as isize {
                                            continue;
                                        }
                                        for kc in 0..3usize {
                                            let cc = c as isize + kc as isize - 1;
                                            if cc < 0 || cc >= w as isize {
                                                continue;
                                            }
                                            d[(ic * h + rr as usize) * w + cc as usize] +=
                                                g * wv[((o * ci + ic) * 3 + kr) * 3 + kc];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    d
                });
                let dw = ctx.need[1].then(|| {
                    let mut d = vec![0.0; co * ci * 9];
                    for o in 0..co {
                        for r in 0..h {
                            for c in 0..w {
                                let g = ctx.d_out[(o * h + r) * w + c];
                                if g == 0.0 {
                                    continue;
                                }
                                for ic in 0..ci {
                                    for kr in 0..3usize {
                                        let rr = r as isize + kr as isize - 1;
                                        if rr < 0 || rr >= h as isize {
                                            continue;
                                        }
                                        for kc in 0..3usize {
                                            let cc = c as isize + kc as isize - 1;
                                            if cc < 0 || cc >= w as isize {
                                                continue;
                                            }
                                            d[((o * ci + ic) * 3 + kr) * 3 + kc] +=
                                                g * xv[(ic * h + rr as usize) * w + cc as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    d
                });
                let db = ctx.need[2].then(|| {
                    let mut d = vec![0.0; co];
                    for o in 0..co {
                        d[o] = ctx.d_out[o * h * w..(o + 1) * h * w].iter().sum();
                    }
                    d
                });
                vec![dx, dw, db]
            }),
        ))
    }

    /// 2x2 max pooling with stride 2 and ceil-mode tails over `[C,H,W]`.
    /// Output is `[C, ceil(H/2), ceil(W/2)]`.
    pub fn maxpool2d_ceil2(&self, x: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        if xs.len() != 3 {
            return Err(Error::invalid(format!("maxpool2d_ceil2 on shape {:?}", xs)));
        }
        let (ch, h, w) = (xs[0], xs[1], xs[2]);
        let oh = h.div_ceil(2);
        let ow = w.div_ceil(2);
        let xv = x.values();
        let mut out = vec![0.0; ch * oh * ow];
        let mut arg = vec![0usize; ch * oh * ow];
        for c in 0..ch {
            for r in 0..oh {
                for q in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_ix = 0;
                    for dr in 0..2usize {
                        let rr = 2 * r + dr;
                        if rr >= h {
                            continue;
                        }
                        for dq in 0..2usize {
                            let qq = 2 * q + dq;
                            if qq >= w {
                                continue;
                            }
                            let ix = (c * h + rr) * w + qq;
                            if xv[ix] > best {
                                best = xv[ix];
                                best_ix = ix;
                            }
                        }
                    }
                    out[(c * oh + r) * ow + q] = best;
                    arg[(c * oh + r) * ow + q] = best_ix;
                }
            }
        }
        drop(xv);
        let n_in = ch * h * w;
        Ok(self.custom_op(
            &[x],
            out,
            &[ch, oh, ow],
            Box::new(move |ctx: &BackCtx| {
                vec![ctx.need[0].then(|| {
                    let mut d = vec![0.0; n_in];
                    for (i, &src) in arg.iter().enumerate() {
                        d[src] += ctx.d_out[i];
                    }
                    d
                })]
            }),
        ))
    }

    /// Rearrange `[C,H,W]` into a time-major matrix `[H, C*W]` so frame `h`
    /// carries all channels of its column.
    pub fn channels_last(&self, x: &Tensor) -> Result<Tensor> {
        let xs = x.shape();
        if xs.len() != 3 {
            return Err(Error::invalid(format!("channels_last on shape {:?}", xs)));
        }
        let (ch, h, w) = (xs[0], xs[1], xs[2]);
        let xv = x.values();
        let mut out = vec![0.0; ch * h * w];
        for c in 0..ch {
            for r in 0..h {
                for q in 0..w {
                    out[r * (ch * w) + c * w + q] = xv[(c * h + r) * w + q];
                }
            }
        }
        drop(xv);
        Ok(self.custom_op(
            &[x],
            out,
            &[h, ch * w],
            Box::new(move |ctx: &BackCtx| {
                vec![ctx.need[0].then(|| {
                    let mut d = vec![0.0; ch * h * w];
                    for c in 0..ch {
                        for r in 0..h {
                            for q in 0..w {
                                d[(c * h + r) * w + q] = ctx.d_out[r * (ch * w) + c * w + q];
                            }
                        }
                    }
                    d
                })]
            }),
        ))
    }

    /// 1-D convolution of a length-`T` signal with `M` filters of odd width
    /// `K`, zero 'same' padding. Output `[T, M]`.
    pub fn conv1d_same(&self, x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let t = x.len();
        let ws = weight.shape();
        if x.shape().len() != 1 || ws.len() != 2 || ws[1] % 2 == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv1d_same",
                lhs: x.shape().to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let (m, k) = (ws[0], ws[1]);
        if bias.shape() != [m] {
            return Err(Error::ShapeMismatch {
                op: "conv1d_same",
                lhs: ws.to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let half = (k / 2) as isize;
        let xv = x.values();
        let wv = weight.values();
        let bv = bias.values();
        let mut out = vec![0.0; t * m];
        for i in 0..t {
            for f in 0..m {
                let mut acc = bv[f];
                for j in 0..k {
                    let src = i as isize + j as isize - half;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    acc += wv[f * k + j] * xv[src as usize];
                }
                out[i * m + f] = acc;
            }
        }
        drop(xv);
        drop(wv);
        drop(bv);
        let xc = x.clone();
        let wc = weight.clone();
        Ok(self.custom_op(
            &[x, weight, bias],
            out,
            &[t, m],
            Box::new(move |ctx: &BackCtx| {
                let xv = xc.values();
                let wv = wc.values();
                let dx = ctx.need[0].then(|| {
                    let mut d = vec![0.0; t];
                    for i in 0..t {
                        for f in 0..m {
                            let g = ctx.d_out[i * m + f];
                            if g == 0.0 {
                                continue;
                            }
                            for j in 0..k {
                                let src = i as isize + j as isize - half;
                                if src < 0 || src >= t as isize {
                                    continue;
                                }
                                d[src as usize] += g * wv[f * k + j];
                            }
                        }
                    }
                    d
                });
                let dw = ctx.need[1].then(|| {
                    let mut d = vec![0.0; m * k];
                    for i in 0..t {
                        for f in 0..m {
                            let g = ctx.d_out[i * m + f];
                            if g == 0.0 {
                                continue;
                            }
                            for j in 0..k {
                                let src = i as isize + j as isize - half;
                                if src < 0 || src >= t as isize {
                                    continue;
                                }
                                d[f * k + j] += g * xv[src as usize];
                            }
                        }
                    }
                    d
                });
                let db = ctx.need[2].then(|| {
                    let mut d = vec![0.0; m];
                    for i in 0..t {
                        for f in 0..m {
                            d[f] += ctx.d_out[i * m + f];
                        }
                    }
                    d
                });
                vec![dx, dw, db]
            }),
        ))
    }
}
