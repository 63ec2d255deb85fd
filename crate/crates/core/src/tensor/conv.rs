//! Convolution lowering.
//!
//! A filter bank `n × c × kh × kw` is reshaped to an `n × (c·kh·kw)` matrix and
//! each receptive field of the input becomes one column of the lowered input,
//! so that a convolution is a single matrix product. Both sides use the same
//! element order: channel-major, then kernel row, then kernel column. Output
//! positions are enumerated in raster order (row by row).

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Filter bank of shape `n × c × kh × kw`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(n: usize, c: usize, kh: usize, kw: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * kh * kw {
            return Err(Error::shape(
                "Tensor4::new",
                format!("{n}x{c}x{kh}x{kw} needs {} values, got {}", n * c * kh * kw, data.len()),
            ));
        }
        Ok(Tensor4 { n, c, kh, kw, data })
    }

    #[inline]
    pub fn at(&self, f: usize, ch: usize, y: usize, x: usize) -> f64 {
        self.data[((f * self.c + ch) * self.kh + y) * self.kw + x]
    }
}

/// Feature map of shape `c × h × w`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::shape(
                "Tensor3::new",
                format!("{c}x{h}x{w} needs {} values, got {}", c * h * w, data.len()),
            ));
        }
        Ok(Tensor3 { c, h, w, data })
    }

    #[inline]
    pub fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    /// Reinterprets an `n × (h·w)` layer output as an `n × h × w` map.
    pub fn from_lowered_output(out: Matrix, h: usize, w: usize) -> Result<Self> {
        let c = out.rows();
        if out.cols() != h * w {
            return Err(Error::shape(
                "Tensor3::from_lowered_output",
                format!("{} columns for a {h}x{w} map", out.cols()),
            ));
        }
        Tensor3::new(c, h, w, out.into_vec())
    }

    /// Flattens into a single column (`c·h·w × 1`), as a fully-connected layer sees it.
    pub fn flatten(&self) -> Matrix {
        Matrix::new(self.data.len(), 1, self.data.clone()).expect("length checked")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Square kernel, stride and padding shorthand.
    pub fn square(channels: usize, in_size: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            in_h: in_size,
            in_w: in_size,
            channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Geometry("stride must be at least 1".into()));
        }
        if self.channels == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Geometry("channels and kernel sizes must be positive".into()));
        }
        let padded_h = self.in_h + 2 * self.padding;
        let padded_w = self.in_w + 2 * self.padding;
        if padded_h < self.kernel_h || padded_w < self.kernel_w {
            return Err(Error::Geometry(format!(
                "kernel {}x{} larger than padded input {padded_h}x{padded_w}",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Rows of the lowered input, `c·kh·kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Reshapes a filter bank into its `n × (c·kh·kw)` lowered matrix.
pub fn lower_filter(w: &Tensor4) -> Matrix {
    Matrix::new(w.n, w.c * w.kh * w.kw, w.data.clone()).expect("Tensor4 length invariant")
}

/// Inverse of [`lower_filter`].
pub fn raise_filter(m: &Matrix, c: usize, kh: usize, kw: usize) -> Result<Tensor4> {
    if m.cols() != c * kh * kw {
        return Err(Error::shape(
            "raise_filter",
            format!("{} columns cannot hold {c}x{kh}x{kw} filters", m.cols()),
        ));
    }
    Tensor4::new(m.rows(), c, kh, kw, m.as_slice().to_vec())
}

/// Lowers an input feature map so that `lower_filter(w) · im2col(x)` is the
/// convolution output, one column per output position. Out-of-bounds taps
/// read zero padding.
pub fn im2col(input: &Tensor3, geom: &ConvGeometry) -> Result<Matrix> {
    geom.validate()?;
    if (input.c, input.h, input.w) != (geom.channels, geom.in_h, geom.in_w) {
        return Err(Error::Geometry(format!(
            "input is {}x{}x{} but geometry expects {}x{}x{}",
            input.c, input.h, input.w, geom.channels, geom.in_h, geom.in_w
        )));
    }
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let mut out = Matrix::zeros(geom.patch_len(), oh * ow);
    let pad = geom.padding as isize;
    for ch in 0..geom.channels {
        for ky in 0..geom.kernel_h {
            for kx in 0..geom.kernel_w {
                let row = (ch * geom.kernel_h + ky) * geom.kernel_w + kx;
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ky) as isize - pad;
                    if iy < 0 || iy >= geom.in_h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * geom.stride + kx) as isize - pad;
                        if ix < 0 || ix >= geom.in_w as isize {
                            continue;
                        }
                        out[(row, oy * ow + ox)] = input.at(ch, iy as usize, ix as usize);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_filter_reshape() {
        let w = Tensor4::new(1, 1, 1, 1, vec![5.0]).unwrap();
        assert_eq!(lower_filter(&w), Matrix::from_rows(&[&[5.0]]));
    }

    #[test]
    fn filter_enumeration_order() {
        let w = Tensor4::new(2, 1, 2, 2, (1..=8).map(f64::from).collect()).unwrap();
        let expect = Matrix::from_rows(&[&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]]);
        assert_eq!(lower_filter(&w), expect);
        assert_eq!(raise_filter(&expect, 1, 2, 2).unwrap(), w);
    }

    #[test]
    fn one_by_one_lowering_is_flattening() {
        let x = Tensor3::new(2, 2, 3, (0..12).map(f64::from).collect()).unwrap();
        let cols = im2col(
            &x,
            &ConvGeometry {
                in_h: 2,
                in_w: 3,
                channels: 2,
                kernel_h: 1,
                kernel_w: 1,
                stride: 1,
                padding: 0,
            },
        )
        .unwrap();
        assert_eq!(cols.shape(), (2, 6));
        assert_eq!(cols.as_slice(), x.data.as_slice());
    }

    #[test]
    fn three_by_three_windows() {
        let x = Tensor3::new(1, 3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let cols = im2col(&x, &ConvGeometry::square(1, 3, 2, 1, 0)).unwrap();
        assert_eq!(cols.shape(), (4, 4));
        assert_eq!(cols.column(0), vec![1.0, 2.0, 4.0, 5.0]);
        assert_eq!(cols.column(1), vec![2.0, 3.0, 5.0, 6.0]);
        assert_eq!(cols.column(2), vec![4.0, 5.0, 7.0, 8.0]);
        assert_eq!(cols.column(3), vec![5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn padding_reads_zeros() {
        let x = Tensor3::new(1, 1, 1, vec![7.0]).unwrap();
        let cols = im2col(&x, &ConvGeometry::square(1, 1, 3, 1, 1)).unwrap();
        assert_eq!(cols.shape(), (9, 1));
        assert_eq!(cols.column(0), vec![0.0, 0.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let x = Tensor3::new(1, 3, 3, vec![0.0; 9]).unwrap();
        assert!(matches!(
            im2col(&x, &ConvGeometry::square(2, 3, 2, 1, 0)),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            im2col(&x, &ConvGeometry::square(1, 3, 5, 1, 0)),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            im2col(&x, &ConvGeometry::square(1, 3, 2, 0, 0)),
            Err(Error::Geometry(_))
        ));
    }
}
