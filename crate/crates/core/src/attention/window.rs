//! Sliding-window geometry over zero-padded token maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Window side `k`, zero padding `p` and stride `s`, all in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub k: usize,
    pub p: usize,
    pub s: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { k: 3, p: 1, s: 1 }
    }
}

impl WindowSpec {
    pub fn new(k: usize, p: usize, s: usize) -> Result<Self> {
        let spec = Self { k, p, s };
        spec.validate()?;
        Ok(spec)
    }

    /// The resolution-preserving odd window of side `k` (`p = k/2`, `s = 1`).
    pub fn same(k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Geometry(format!(
                "window side {k} is even; no padding preserves resolution"
            )));
        }
        Self::new(k, k / 2, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.s == 0 {
            return Err(Error::Geometry(format!(
                "window needs k ≥ 1 and s ≥ 1, got k={} s={}",
                self.k, self.s
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.k * self.k
    }
}

/// Number of windows along each axis: `floor((n + 2p − k)/s) + 1`.
pub fn window_count(h: usize, w: usize, spec: WindowSpec) -> Result<(usize, usize)> {
    spec.validate()?;
    let axis = |n: usize| -> Result<usize> {
        let padded = n + 2 * spec.p;
        if padded < spec.k {
            return Err(Error::Geometry(format!(
                "window {} larger than padded extent {padded} (extent {n}, padding {})",
                spec.k, spec.p
            )));
        }
        Ok((padded - spec.k) / spec.s + 1)
    };
    Ok((axis(h)?, axis(w)?))
}

/// Source-token index of every window cell, `None` for padding.
///
/// Row-major over windows, then raster order within a window.
pub(crate) fn window_index(h: usize, w: usize, spec: WindowSpec) -> Result<Vec<Option<usize>>> {
    let (wh, ww) = window_count(h, w, spec)?;
    let mut idx = Vec::with_capacity(wh * ww * spec.cells());
    for i in 0..wh {
        for j in 0..ww {
            for a in 0..spec.k {
                for b in 0..spec.k {
                    let y = (i * spec.s + a).checked_sub(spec.p).filter(|&y| y < h);
                    let x = (j * spec.s + b).checked_sub(spec.p).filter(|&x| x < w);
                    idx.push(y.zip(x).map(|(y, x)| y * w + x));
                }
            }
        }
    }
    Ok(idx)
}

/// Gathers every `k×k` window of the zero-padded map: `[H'·W', k², C]`.
pub fn unfold_windows<T: Scalar>(x: &Tensor<T>, spec: WindowSpec) -> Result<Tensor<T>> {
    x.expect_rank("unfold_windows", 3)?;
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (wh, ww) = window_count(h, w, spec)?;
    let idx = window_index(h, w, spec)?;
    let mut out = vec![T::zero(); idx.len() * c];
    for (cell, src) in idx.iter().enumerate() {
        if let Some(t) = src {
            out[cell * c..(cell + 1) * c].copy_from_slice(&x.data()[t * c..(t + 1) * c]);
        }
    }
    Tensor::new([wh * ww, spec.cells(), c], out)
}

/// Scatter-adds window gradients back onto the unpadded map.
pub fn unfold_windows_backward<T: Scalar>(dy: &Tensor<T>, h: usize, w: usize, spec: WindowSpec) -> Result<Tensor<T>> {
    let idx = window_index(h, w, spec)?;
    let c = dy.last_dim();
    if dy.len() != idx.len() * c {
        return Err(Error::Dimension {
            op: "unfold_windows_backward",
            lhs: dy.shape().to_vec(),
            rhs: vec![h, w, c],
        });
    }
    let mut dx = vec![T::zero(); h * w * c];
    for (cell, src) in idx.iter().enumerate() {
        if let Some(t) = src {
            for (d, &g) in dx[t * c..(t + 1) * c]
                .iter_mut()
                .zip(&dy.data()[cell * c..(cell + 1) * c])
            {
                *d += g;
            }
        }
    }
    Tensor::new([h, w, c], dx)
}

/// Token index of each window's central cell. Errors when a center falls
/// outside the map, which happens only for geometries that do not map
/// windows onto tokens.
pub(crate) fn window_centers(h: usize, w: usize, spec: WindowSpec) -> Result<Vec<usize>> {
    let (wh, ww) = window_count(h, w, spec)?;
    let half = spec.k / 2;
    let mut centers = Vec::with_capacity(wh * ww);
    for i in 0..wh {
        for j in 0..ww {
            let y = (i * spec.s + half).checked_sub(spec.p).filter(|&y| y < h);
            let x = (j * spec.s + half).checked_sub(spec.p).filter(|&x| x < w);
            match y.zip(x) {
                Some((y, x)) => centers.push(y * w + x),
                None => {
                    return Err(Error::Geometry(format!(
                        "window ({i},{j}) of {:?} has its center in the padding",
                        spec
                    )))
                }
            }
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_examples() {
        let d = WindowSpec::default();
        assert_eq!(d, WindowSpec { k: 3, p: 1, s: 1 });
        assert_eq!(window_count(3, 3, d).unwrap(), (3, 3));
        assert_eq!(window_count(56, 56, d).unwrap(), (56, 56));
        let five = WindowSpec::new(5, 2, 1).unwrap();
        assert_eq!(window_count(7, 7, five).unwrap().0, 7);
        assert_eq!(window_count(8, 6, WindowSpec::new(2, 0, 2).unwrap()).unwrap(), (4, 3));
    }

    #[test]
    fn oversized_window_is_geometry_error() {
        let err = window_count(1, 1, WindowSpec::new(5, 1, 1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
        assert!(WindowSpec::new(0, 0, 1).is_err());
        assert!(WindowSpec::new(3, 1, 0).is_err());
        assert!(WindowSpec::same(4).is_err());
    }

    #[test]
    fn center_window_of_3x3_is_whole_map() {
        let x = Tensor::<f64>::from_fn([3, 3, 2], |i| i as f64 + 1.0);
        let u = unfold_windows(&x, WindowSpec::default()).unwrap();
        assert_eq!(u.shape(), &[9, 9, 2]);
        assert_eq!(&u.data()[4 * 18..5 * 18], x.data());
    }

    #[test]
    fn single_token_window_is_padding_ring() {
        let x = Tensor::<f64>::new([1, 1, 1], vec![7.0]).unwrap();
        let u = unfold_windows(&x, WindowSpec::default()).unwrap();
        assert_eq!(u.data(), &[0.0, 0.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn centers_are_tokens_for_same_windows() {
        for k in [1, 3, 5, 7] {
            let spec = WindowSpec::same(k).unwrap();
            let c = window_centers(4, 6, spec).unwrap();
            assert_eq!(c, (0..24).collect::<Vec<_>>());
        }
    }
}
