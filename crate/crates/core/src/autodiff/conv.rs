//! Batched 2D cross-correlation kernels over NHWC arrays with HWIO kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero-pad so the output keeps the input's spatial size (odd kernels).
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    /// Input was given without a batch axis.
    pub unbatched: bool,
}

impl ConvGeom {
    pub fn infer(input: &[usize], kernel: &[usize], bias: &[usize], padding: Padding) -> Result<Self> {
        let (batch, h, w, cin, unbatched) = match *input {
            [h, w, c] => (1, h, w, c, true),
            [n, h, w, c] => (n, h, w, c, false),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("input must be H×W×C or N×H×W×C, got {input:?}"),
                ))
            }
        };
        let [kh, kw, kin, cout] = *kernel else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be kh×kw×Cin×Cout, got {kernel:?}"),
            ));
        };
        if kin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {kin} input channels, input has {cin}"),
            ));
        }
        if bias != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {bias:?} does not match {cout} output channels"),
            ));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::shape("conv2d", "empty kernel"));
        }
        let (oh, ow, pad_h, pad_w) = match padding {
            Padding::Same => (h, w, (kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::shape(
                        "conv2d",
                        format!("kernel {kh}×{kw} larger than input {h}×{w} with valid padding"),
                    ));
                }
                (h - kh + 1, w - kw + 1, 0, 0)
            }
        };
        Ok(Self {
            batch,
            h,
            w,
            cin,
            cout,
            kh,
            kw,
            oh,
            ow,
            pad_h,
            pad_w,
            unbatched,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        if self.unbatched {
            vec![self.oh, self.ow, self.cout]
        } else {
            vec![self.batch, self.oh, self.ow, self.cout]
        }
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if inside.
    #[inline]
    fn source(o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o + k).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }
}

pub(crate) fn forward(input: &[f64], kernel: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.oh * g.ow * g.cout];
    for n in 0..g.batch {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o0 = ((n * g.oh + oh) * g.ow + ow) * g.cout;
                let acc = &mut out[o0..o0 + g.cout];
                acc.copy_from_slice(bias);
                for ki in 0..g.kh {
                    let Some(ih) = ConvGeom::source(oh, ki, g.pad_h, g.h) else {
                        continue;
                    };
                    for kj in 0..g.kw {
                        let Some(iw) = ConvGeom::source(ow, kj, g.pad_w, g.w) else {
                            continue;
                        };
                        let i0 = ((n * g.h + ih) * g.w + iw) * g.cin;
                        let k0 = (ki * g.kw + kj) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let x = input[i0 + ci];
                            if x == 0.0 {
                                continue;
                            }
                            let row = &kernel[k0 + ci * g.cout..k0 + (ci + 1) * g.cout];
                            for (a, &k) in acc.iter_mut().zip(row) {
                                *a += x * k;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (d input, d kernel, d bias) for upstream gradient `gout`.
pub(crate) fn backward(
    input: &[f64],
    kernel: &[f64],
    gout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gin = vec![0.0; input.len()];
    let mut gk = vec![0.0; kernel.len()];
    let mut gb = vec![0.0; g.cout];
    for n in 0..g.batch {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o0 = ((n * g.oh + oh) * g.ow + ow) * g.cout;
                let go = &gout[o0..o0 + g.cout];
                if go.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for (b, &v) in gb.iter_mut().zip(go) {
                    *b += v;
                }
                for ki in 0..g.kh {
                    let Some(ih) = ConvGeom::source(oh, ki, g.pad_h, g.h) else {
                        continue;
                    };
                    for kj in 0..g.kw {
                        let Some(iw) = ConvGeom::source(ow, kj, g.pad_w, g.w) else {
                            continue;
                        };
                        let i0 = ((n * g.h + ih) * g.w + iw) * g.cin;
                        let k0 = (ki * g.kw + kj) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let x = input[i0 + ci];
                            let kr = k0 + ci * g.cout;
                            let row = &kernel[kr..kr + g.cout];
                            let grow = &mut gk[kr..kr + g.cout];
                            let mut dx = 0.0;
                            for co in 0..g.cout {
                                grow[co] += x * go[co];
                                dx += row[co] * go[co];
                            }
                            gin[i0 + ci] += dx;
                        }
                    }
                }
            }
        }
    }
    (gin, gk, gb)
}
