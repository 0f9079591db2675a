//! Patch extraction (im2col) and repatching between layers.
//!
//! Images are stored pixel-major, channel-minor: pixel `(r, c)` channel `ch`
//! lives at `(r·w + c)·channels + ch`. A patch vector uses the same order
//! within the window, `(a·k + b)·channels + ch`, so the output stream of a
//! layer (one vector of `d` channel values per timestep) is directly the
//! next layer's input image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photonic::PatchStream;

/// `(w, k, s, p, c, d)` for one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct LayerGeometry {
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    c: usize,
    d: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGeometry {
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    c: usize,
    d: usize,
}

impl LayerGeometry {
    /// Input width `w`, kernel width `k`, stride `s`, zero padding `p`,
    /// input channels `c`, kernel count `d`.
    pub fn new(w: usize, k: usize, s: usize, p: usize, c: usize, d: usize) -> Result<Self> {
        if s == 0 || d == 0 || c == 0 || k == 0 || w == 0 {
            return Err(Error::GeometryMismatch(format!(
                "w, k, s, c and d must be positive (w={w}, k={k}, s={s}, c={c}, d={d})"
            )));
        }
        if k > w + 2 * p {
            return Err(Error::GeometryMismatch(format!("kernel {k} wider than padded input {}", w + 2 * p)));
        }
        if !(w + 2 * p - k).is_multiple_of(s) {
            return Err(Error::GeometryMismatch(format!(
                "(w - k + 2p) = {} is not divisible by stride {s}",
                w + 2 * p - k
            )));
        }
        Ok(Self { w, k, s, p, c, d })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `(w - k + 2p)/s + 1`.
    pub fn output_width(&self) -> usize {
        (self.w + 2 * self.p - self.k) / self.s + 1
    }

    pub fn patch_count(&self) -> usize {
        self.output_width().pow(2)
    }

    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.c
    }
}

impl TryFrom<RawGeometry> for LayerGeometry {
    type Error = Error;

    fn try_from(r: RawGeometry) -> Result<Self> {
        LayerGeometry::new(r.w, r.k, r.s, r.p, r.c, r.d)
    }
}

impl From<LayerGeometry> for RawGeometry {
    fn from(g: LayerGeometry) -> Self {
        RawGeometry { w: g.w, k: g.k, s: g.s, p: g.p, c: g.c, d: g.d }
    }
}

/// Square multi-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * width * channels {
            return Err(Error::DimensionMismatch { expected: width * width * channels, found: data.len() });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("image has non-finite pixels".into()));
        }
        Ok(Self { width, channels, data })
    }

    pub fn zeros(width: usize, channels: usize) -> Self {
        Self { width, channels, data: vec![0.0; width * width * channels] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[(r * self.width + c) * self.channels + ch]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Reinterprets a stream of `width²` pixel vectors as an image.
    pub fn from_stream(stream: &PatchStream) -> Result<Self> {
        let n = stream.len();
        let width = (n as f64).sqrt().round() as usize;
        if width * width != n {
            return Err(Error::GeometryMismatch(format!("{n} outputs do not form a square image")));
        }
        Ok(Self { width, channels: stream.width(), data: stream.as_flat().to_vec() })
    }
}

/// Vectorizes every stride-aligned `k×k×c` window in row-major window
/// order. Positions outside the image read as zero padding.
pub fn extract_patches(img: &ImageTensor, g: &LayerGeometry) -> Result<PatchStream> {
    if img.width != g.w || img.channels != g.c {
        return Err(Error::GeometryMismatch(format!(
            "image is {}x{}x{}, geometry expects {}x{}x{}",
            img.width, img.width, img.channels, g.w, g.w, g.c
        )));
    }
    let (k, c, p) = (g.k, g.c, g.p as isize);
    let out_w = g.output_width();
    let mut data = Vec::with_capacity(out_w * out_w * g.patch_len());
    for orow in 0..out_w {
        for ocol in 0..out_w {
            let top = (orow * g.s) as isize - p;
            let left = (ocol * g.s) as isize - p;
            for a in 0..k {
                let r = top + a as isize;
                for b in 0..k {
                    let col = left + b as isize;
                    if r < 0 || col < 0 || r >= g.w as isize || col >= g.w as isize {
                        data.extend(std::iter::repeat_n(0.0, c));
                    } else {
                        let base = (r as usize * g.w + col as usize) * c;
                        data.extend_from_slice(&img.data[base..base + c]);
                    }
                }
            }
        }
    }
    PatchStream::from_flat(g.patch_len(), data)
}

/// Turns one layer's time-ordered outputs into the next layer's patches.
pub fn repatch(outputs: &PatchStream, g_next: &LayerGeometry) -> Result<PatchStream> {
    let img = ImageTensor::from_stream(outputs)?;
    if img.width != g_next.w {
        return Err(Error::GeometryMismatch(format!(
            "outputs form a {0}x{0} image, next layer expects width {1}",
            img.width, g_next.w
        )));
    }
    extract_patches(&img, g_next)
}

/// Scatter-adds patch gradients back onto the image they were cut from.
pub(crate) fn fold_patches(patches: &PatchStream, g: &LayerGeometry) -> Vec<f64> {
    let (k, c, p) = (g.k, g.c, g.p as isize);
    let out_w = g.output_width();
    let mut img = vec![0.0; g.w * g.w * c];
    for (t, patch) in patches.iter().enumerate() {
        let top = ((t / out_w) * g.s) as isize - p;
        let left = ((t % out_w) * g.s) as isize - p;
        for a in 0..k {
            let r = top + a as isize;
            if r < 0 || r >= g.w as isize {
                continue;
            }
            for b in 0..k {
                let col = left + b as isize;
                if col < 0 || col >= g.w as isize {
                    continue;
                }
                let base = (r as usize * g.w + col as usize) * c;
                let src = &patch[(a * k + b) * c..(a * k + b + 1) * c];
                img[base..base + c].iter_mut().zip(src).for_each(|(x, y)| *x += y);
            }
        }
    }
    img
}
