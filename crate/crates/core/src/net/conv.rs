//! Stride-1, zero-padded ("same") 2-D convolution on single samples, lowered
//! to matrix products with im2col.

/// `c = a * b (+ beta * c)`, all row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `input` (`cin x h x w`) into `col` (`cin*k*k x h*w`).
pub fn im2col(input: &[f32], cin: usize, h: usize, w: usize, k: usize, col: &mut [f32]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..cin {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x0 = pad.saturating_sub(kx);
                let x1 = (w + pad).saturating_sub(kx).min(w);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let yy = y + ky;
                    if yy < pad || yy - pad >= h || x0 >= x1 {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(yy - pad) * w..(yy - pad + 1) * w];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    let sx0 = x0 + kx - pad;
                    dst[x0..x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds `col` back and accumulates into `out`.
pub fn col2im(col: &[f32], cin: usize, h: usize, w: usize, k: usize, out: &mut [f32]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x0 = pad.saturating_sub(kx);
                let x1 = (w + pad).saturating_sub(kx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let yy = y + ky;
                    if yy < pad || yy - pad >= h {
                        continue;
                    }
                    let src = &row[y * w + x0..y * w + x1];
                    let sx0 = x0 + kx - pad;
                    let dst = &mut plane[(yy - pad) * w + sx0..][..x1 - x0];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `cout x cin x k x k`
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl Conv2d {
    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// One sample: `x` is `cin x h x w`, `out` is `cout x h x w`.
    pub fn forward(&self, x: &[f32], h: usize, w: usize, out: &mut [f32]) {
        let hw = h * w;
        let kk = self.fan_in();
        let mut col = vec![0.0f32; kk * hw];
        im2col(x, self.cin, h, w, self.k, &mut col);
        gemm(self.cout, kk, hw, &self.weight, (kk, 1), &col, (hw, 1), 0.0, out);
        if let Some(bias) = &self.bias {
            for (o, b) in bias.iter().enumerate() {
                out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v += b);
            }
        }
    }

    /// One sample's backward pass. Accumulates into `gw`/`gb`; writes the
    /// input gradient into `gx` when given.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f32],
        gout: &[f32],
        h: usize,
        w: usize,
        gw: &mut [f32],
        gb: Option<&mut [f32]>,
        gx: Option<&mut [f32]>,
    ) {
        let hw = h * w;
        let kk = self.fan_in();
        let mut col = vec![0.0f32; kk * hw];
        im2col(x, self.cin, h, w, self.k, &mut col);
        // dW += gout * col^T
        gemm(self.cout, hw, kk, gout, (hw, 1), &col, (1, hw), 1.0, gw);
        if let Some(gb) = gb {
            for (o, g) in gb.iter_mut().enumerate() {
                *g += gout[o * hw..(o + 1) * hw].iter().sum::<f32>();
            }
        }
        if let Some(gx) = gx {
            // dcol = W^T * gout
            gemm(kk, self.cout, hw, &self.weight, (1, kk), gout, (hw, 1), 0.0, &mut col);
            gx.fill(0.0);
            col2im(&col, self.cin, h, w, self.k, gx);
        }
    }
}
