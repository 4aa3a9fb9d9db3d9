use crate::error::{Error, Result};

/// Dense NCHW tensor of f32 with an optional same-shape gradient buffer.
/// Layout is row-major within a plane, planes ordered channel-then-batch,
/// i.e. index = ((n * C + c) * H + y) * W + x.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Tensor {
        Tensor {
            shape: [n, c, h, w],
            data: vec![0.0; n * c * h * w],
            grad: None,
        }
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: f32) -> Tensor {
        Tensor {
            shape: [n, c, h, w],
            data: vec![value; n * c * h * w],
            grad: None,
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Tensor> {
        if data.len() != n * c * h * w {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{} elements for {}x{}x{}x{}", n * c * h * w, n, c, h, w),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor { shape: [n, c, h, w], data, grad: None })
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let [n, c, h, w] = self.shape;
        (n, c, h, w)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}x{}", self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f32 {
        let i = self.idx(n, c, y, x);
        &mut self.data[i]
    }

    /// Contiguous H*W slice for one (batch, channel) plane.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// Splits the whole buffer into per-plane mutable slices, in (n, c) order.
    /// The building block for parallel kernels: disjoint planes, no aliasing.
    pub fn planes_mut(&mut self) -> std::slice::ChunksMut<'_, f32> {
        let hw = self.shape[2] * self.shape[3];
        self.data.chunks_mut(hw.max(1))
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    /// Allocates the gradient buffer (zeroed) if not yet present.
    pub fn ensure_grad(&mut self) -> &mut [f32] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    pub fn drop_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `other`'s data into this tensor's gradient buffer.
    pub fn accumulate_grad(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "Tensor::accumulate_grad",
                self.shape_string(),
                other.shape_string(),
            ));
        }
        let g = self.ensure_grad();
        for (gi, oi) in g.iter_mut().zip(other.data.iter()) {
            *gi += *oi;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// New tensor with `f` applied elementwise (grad not carried over).
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Concatenates tensors along the channel axis; batch and spatial dims
    /// must agree. Used to assemble network inputs (RGB + trimap, RGB + raw
    /// alpha).
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| {
            Error::InvalidConfig("concat_channels: no tensors given".into())
        })?;
        let (n, _, h, w) = first.shape();
        let mut c_total = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.shape();
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{}x_x{}x{}", n, h, w),
                    p.shape_string(),
                ));
            }
            c_total += pc;
        }
        let mut out = Tensor::zeros(n, c_total, h, w);
        let hw = h * w;
        for b in 0..n {
            let mut c_off = 0;
            for p in parts {
                for c in 0..p.c() {
                    out.data[((b * c_total + c_off + c) * hw)..((b * c_total + c_off + c + 1) * hw)]
                        .copy_from_slice(p.plane(b, c));
                }
                c_off += p.c();
            }
        }
        Ok(out)
    }

    /// Extracts one sample of the batch as an (1, C, H, W) tensor.
    pub fn slice_batch(&self, n: usize) -> Tensor {
        let (_, c, h, w) = self.shape();
        let chw = c * h * w;
        Tensor {
            shape: [1, c, h, w],
            data: self.data[n * chw..(n + 1) * chw].to_vec(),
            grad: None,
        }
    }

    /// Stacks single-sample tensors along the batch axis.
    pub fn stack_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidConfig("stack_batch: no tensors given".into()))?;
        let (_, c, h, w) = first.shape();
        let mut n_total = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.shape();
            if (pc, ph, pw) != (c, h, w) {
                return Err(Error::shape("stack_batch", first.shape_string(), p.shape_string()));
            }
            n_total += pn;
        }
        let mut data = Vec::with_capacity(n_total * c * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape: [n_total, c, h, w], data, grad: None })
    }

    /// Spatial crop: rows [y0, y0+ch), cols [x0, x0+cw) of every plane.
    pub fn crop_rect(&self, y0: usize, x0: usize, ch: usize, cw: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.shape();
        if ch == 0 || cw == 0 || y0 + ch > h || x0 + cw > w {
            return Err(Error::shape(
                "Tensor::crop_rect",
                format!("rect {}+{}x{}+{} inside", y0, ch, x0, cw),
                self.shape_string(),
            ));
        }
        let mut out = Tensor::zeros(n, c, ch, cw);
        for b in 0..n {
            for cc in 0..c {
                let src = self.plane(b, cc);
                let dst = out.plane_mut(b, cc);
                for y in 0..ch {
                    let s = (y0 + y) * w + x0;
                    dst[y * cw..(y + 1) * cw].copy_from_slice(&src[s..s + cw]);
                }
            }
        }
        Ok(out)
    }

    /// Mirrors each row left-to-right.
    pub fn flip_horizontal(&self) -> Tensor {
        let (n, c, h, w) = self.shape();
        let mut out = self.clone();
        out.grad = None;
        for b in 0..n {
            for cc in 0..c {
                let plane = out.plane_mut(b, cc);
                for y in 0..h {
                    plane[y * w..(y + 1) * w].reverse();
                }
            }
        }
        out
    }
}
