use crate::error::{Error, Result};
use crate::likelihood::HeadKind;
use crate::nn::{AutoregressiveNet, Conv2d};
use crate::tensor::kernels::{self, ConvGeometry};
use crate::tensor::{Element, Tensor};

/// Rows `y - R + 1 ..= y` of a `[C, H, W]` activation map.
#[derive(Debug, Clone)]
struct RowRing<T> {
    channels: usize,
    rows: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Element> RowRing<T> {
    fn new(channels: usize, rows: usize, width: usize) -> Self {
        Self {
            channels,
            rows,
            width,
            data: vec![T::zero(); channels * rows * width],
        }
    }

    #[inline]
    fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.rows + y % self.rows) * self.width + x]
    }

    #[inline]
    fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.rows + y % self.rows) * self.width + x] = v;
    }

    fn clear_row(&mut self, y: usize) {
        for c in 0..self.channels {
            let start = (c * self.rows + y % self.rows) * self.width;
            self.data[start..start + self.width].fill(T::zero());
        }
    }

    fn clear(&mut self) {
        self.data.fill(T::zero());
    }
}

/// Masked weights of one convolution, flattened for single-position evaluation.
#[derive(Debug, Clone)]
struct PointConv<T> {
    weight: Vec<T>,
    bias: Option<Vec<T>>,
    out_c: usize,
    in_c: usize,
    geom: ConvGeometry,
}

impl<T: Element> PointConv<T> {
    fn new(conv: &Conv2d<T>, net: &AutoregressiveNet<T>) -> Self {
        let w = conv.effective_weight(net.params());
        let shape = w.shape();
        Self {
            out_c: shape[0],
            in_c: shape[1],
            weight: w.into_data(),
            bias: conv.bias.map(|b| net.params().get(b).data().to_vec()),
            geom: conv.geometry().clone(),
        }
    }

    /// Output at `(y, x)`, accumulated in the same order as the full kernel.
    fn eval(&self, src: &RowRing<T>, height: usize, y: usize, x: usize, out: &mut [T]) {
        let k = self.geom.kernel;
        let pad = self.geom.pad as isize;
        for (oi, o) in out.iter_mut().enumerate().take(self.out_c) {
            let mut acc = self.bias.as_ref().map_or(T::zero(), |b| b[oi]);
            for ci in 0..self.in_c {
                let base = (oi * self.in_c + ci) * k * k;
                for &t in &self.geom.taps {
                    let iy = y as isize + (t / k) as isize - pad;
                    let ix = x as isize + (t % k) as isize - pad;
                    if iy < 0 || iy >= height as isize || ix < 0 || ix >= src.width as isize {
                        continue;
                    }
                    acc = acc + self.weight[base + t] * src.get(ci, iy as usize, ix as usize);
                }
            }
            *o = acc;
        }
    }
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    conv_in: PointConv<T>,
    conv_out: PointConv<T>,
    /// Conditioning bias for every position, `[2F, H, W]`.
    cond: Option<Vec<T>>,
    input: RowRing<T>,
    gate: RowRing<T>,
}

/// Per-layer row buffers that let a network be evaluated one raster
/// position at a time. Each layer keeps the rows its kernel can still read,
/// and `incremental_forward` yields the same bits as a full forward pass on
/// the partially generated image.
#[derive(Debug, Clone)]
pub struct ActivationCache<T: Element = f32> {
    head_kind: HeadKind,
    height: usize,
    width: usize,
    filters: usize,
    image: RowRing<T>,
    input: PointConv<T>,
    blocks: Vec<BlockCache<T>>,
    head: PointConv<T>,
    next: usize,
    awaiting_pixel: bool,
    scratch: Vec<T>,
    residual: Vec<T>,
}

impl<T: Element> ActivationCache<T> {
    /// `embedding` is the conditioning map `[1, E, H, W]` of a conditional net.
    pub fn new(net: &AutoregressiveNet<T>, embedding: Option<&Tensor<T>>, height: usize, width: usize) -> Result<Self> {
        if !net.is_initialized() {
            return Err(Error::Uninitialized);
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("cache needs a non-empty image".into()));
        }
        let cfg = net.config();
        let rows = cfg.kernel / 2 + 1;
        let f = cfg.n_filters;
        let mut blocks = Vec::with_capacity(net.blocks.len());
        for block in &net.blocks {
            let cond = match (&block.cond, embedding) {
                (Some(c), Some(e)) => {
                    let (n, _, eh, ew) = e.dims4("embedding")?;
                    for (axis, expected, got) in [(0, 1, n), (2, height, eh), (3, width, ew)] {
                        if expected != got {
                            return Err(Error::ShapeMismatch {
                                op: "embedding",
                                axis,
                                expected,
                                got,
                            });
                        }
                    }
                    let w = net.params().get(c.weight);
                    Some(kernels::conv2d_forward(e, w, None, c.geometry())?.into_data())
                }
                _ => None,
            };
            blocks.push(BlockCache {
                conv_in: PointConv::new(&block.conv_in, net),
                conv_out: PointConv::new(&block.conv_out, net),
                cond,
                input: RowRing::new(f, rows, width),
                gate: RowRing::new(f, rows, width),
            });
        }
        Ok(Self {
            head_kind: net.head(),
            height,
            width,
            filters: f,
            image: RowRing::new(cfg.in_channels, rows, width),
            input: PointConv::new(&net.input, net),
            blocks,
            head: PointConv::new(&net.head, net),
            next: 0,
            awaiting_pixel: false,
            scratch: vec![T::zero(); 2 * f],
            residual: vec![T::zero(); f],
        })
    }

    /// Next raster position to evaluate.
    pub fn position(&self) -> usize {
        self.next
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Head parameters at `pos`; `pos` must be the next ungenerated position.
    pub fn incremental_forward(&mut self, pos: usize) -> Result<Vec<f64>> {
        if pos != self.next || self.awaiting_pixel || pos >= self.pixels() {
            return Err(Error::CacheDesync {
                expected: self.next,
                got: pos,
            });
        }
        let (y, x) = (pos / self.width, pos % self.width);
        let (h, f) = (self.height, self.filters);
        if x == 0 {
            self.image.clear_row(y);
            for b in &mut self.blocks {
                b.input.clear_row(y);
                b.gate.clear_row(y);
            }
        }
        let mut hcur = std::mem::take(&mut self.residual);
        self.input.eval(&self.image, h, y, x, &mut hcur);
        let mut t = std::mem::take(&mut self.scratch);
        for block in &mut self.blocks {
            for (c, &v) in hcur.iter().enumerate() {
                block.input.set(c, y, x, v);
            }
            block.conv_in.eval(&block.input, h, y, x, &mut t);
            if let Some(cond) = &block.cond {
                for (c, tv) in t.iter_mut().enumerate() {
                    *tv = *tv + cond[(c * h + y) * self.width + x];
                }
            }
            for c in 0..f {
                let g = t[c].tanh() * kernels::sigmoid(t[f + c]);
                block.gate.set(c, y, x, g);
            }
            block.conv_out.eval(&block.gate, h, y, x, &mut t[..f]);
            for (hv, &u) in hcur.iter_mut().zip(&t[..f]) {
                *hv = *hv + u;
            }
        }
        let mut ring = RowRing::new(f, 1, 1);
        ring.data.copy_from_slice(&hcur);
        let mut out = vec![T::zero(); self.head.out_c];
        self.head.eval(&ring, 1, 0, 0, &mut out);
        self.scratch = t;
        self.residual = hcur;
        self.awaiting_pixel = true;
        Ok(out.iter().map(|v| v.as_f64()).collect())
    }

    /// Records the generated value of the pixel at `pos`.
    pub fn commit_pixel(&mut self, pos: usize, values: &[u8]) -> Result<()> {
        if pos != self.next || !self.awaiting_pixel {
            return Err(Error::CacheDesync {
                expected: self.next,
                got: pos,
            });
        }
        let (y, x) = (pos / self.width, pos % self.width);
        for (c, &v) in values.iter().enumerate().take(self.image.channels) {
            self.image.set(c, y, x, pixel_to_input(self.head_kind, v));
        }
        self.next += 1;
        self.awaiting_pixel = false;
        Ok(())
    }

    /// Forgets all generated pixels; the conditioning is kept.
    pub fn reset(&mut self) {
        self.image.clear();
        for b in &mut self.blocks {
            b.input.clear();
            b.gate.clear();
        }
        self.next = 0;
        self.awaiting_pixel = false;
    }
}

/// Network input value of a discrete pixel value.
pub(crate) fn pixel_to_input<T: Element>(head: HeadKind, v: u8) -> T {
    match head {
        HeadKind::Dmol { .. } => T::from_f64(v as f64 / 127.5 - 1.0),
        HeadKind::Categorical16 => T::from_f64(v as f64 / 7.5 - 1.0),
    }
}
