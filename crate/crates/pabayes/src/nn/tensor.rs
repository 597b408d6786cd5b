//! Dense batched tensors, layout `[batch][channel][height][width]`.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// Slice of one (batch, channel) plane.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        let off = (n * self.c + c) * p;
        &self.data[off..off + p]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.plane_len();
        let off = (n * self.c + c) * p;
        &mut self.data[off..off + p]
    }

    pub fn same_shape(&self, other: &Tensor4) -> bool {
        self.n == other.n && self.c == other.c && self.h == other.h && self.w == other.w
    }
}
