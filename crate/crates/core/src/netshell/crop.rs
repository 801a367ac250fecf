use crate::error::{Error, Result};
use crate::feature::FeatureMap;

/// Crops plus the indices of masks that were skipped for being empty.
#[derive(Debug, Clone)]
pub struct Crops {
    pub crops: Vec<FeatureMap>,
    pub skipped: Vec<usize>,
}

/// Inclusive `(row0, col0, row1, col1)` bounds of mask values above 0.5.
pub fn mask_bounds(mask: &FeatureMap) -> Option<(usize, usize, usize, usize)> {
    let (_, h, w) = mask.shape();
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for y in 0..h {
        for x in 0..w {
            if mask.get(0, y, x) > 0.5 {
                b = Some(match b {
                    None => (y, x, y, x),
                    Some((r0, c0, r1, c1)) => (r0.min(y), c0.min(x), r1.max(y), c1.max(x)),
                });
            }
        }
    }
    b
}

/// Square window around the mask bounds: side = longer bbox side, centered
/// on the box (extra pixel goes after). Returns `(top, left, side)` which may
/// reach outside the image.
pub fn square_window(bounds: (usize, usize, usize, usize)) -> (isize, isize, usize) {
    let (r0, c0, r1, c1) = bounds;
    let (bh, bw) = (r1 - r0 + 1, c1 - c0 + 1);
    let side = bh.max(bw);
    let top = r0 as isize - ((side - bh) / 2) as isize;
    let left = c0 as isize - ((side - bw) / 2) as isize;
    (top, left, side)
}

/// Copies a square window out of `image`, zero where it leaves the image.
pub fn extract_window(image: &FeatureMap, top: isize, left: isize, side: usize) -> FeatureMap {
    let (c, h, w) = image.shape();
    let mut out = FeatureMap::zeros(c, side, side);
    for ch in 0..c {
        for y in 0..side {
            let sy = top + y as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..side {
                let sx = left + x as isize;
                if sx >= 0 && sx < w as isize {
                    out.set(ch, y, x, image.get(ch, sy as usize, sx as usize));
                }
            }
        }
    }
    out
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(map: &FeatureMap, out_h: usize, out_w: usize) -> FeatureMap {
    let (c, h, w) = map.shape();
    let mut out = FeatureMap::zeros(c, out_h, out_w);
    let coord = |dst: usize, n_out: usize, n_in: usize| {
        let s = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, out_h, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, out_w, w);
            for ch in 0..c {
                let top = map.get(ch, y0, x0) * (1.0 - fx) + map.get(ch, y0, x1) * fx;
                let bot = map.get(ch, y1, x0) * (1.0 - fx) + map.get(ch, y1, x1) * fx;
                out.set(ch, y, x, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

/// Square crop per region mask, resized to `out_size x out_size`.
///
/// Empty masks are skipped and listed in [`Crops::skipped`]; it is an error
/// when every mask is empty.
pub fn crop_regions(image: &FeatureMap, masks: &[FeatureMap], out_size: usize) -> Result<Crops> {
    if out_size == 0 {
        return Err(Error::invalid("crop size must be positive"));
    }
    let (_, h, w) = image.shape();
    let mut crops = Vec::new();
    let mut skipped = Vec::new();
    for (i, m) in masks.iter().enumerate() {
        if m.shape() != (1, h, w) {
            return Err(Error::shape(format!(
                "mask {i} has shape {:?}, image is {h}x{w}",
                m.shape()
            )));
        }
        match mask_bounds(m) {
            None => skipped.push(i),
            Some(b) => {
                let (top, left, side) = square_window(b);
                let win = extract_window(image, top, left, side);
                crops.push(resize_bilinear(&win, out_size, out_size));
            }
        }
    }
    if crops.is_empty() {
        return Err(Error::Empty(format!("all {} region masks are empty", masks.len())));
    }
    Ok(Crops { crops, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> FeatureMap {
        let mut m = FeatureMap::zeros(3, h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    m.set(c, y, x, 1.0 + (c * 1000 + y * w + x) as f64 * 0.01);
                }
            }
        }
        m
    }

    fn box_mask(h: usize, w: usize, r0: usize, c0: usize, r1: usize, c1: usize) -> FeatureMap {
        let mut m = FeatureMap::zeros(1, h, w);
        for y in r0..=r1 {
            for x in c0..=c1 {
                m.set(0, y, x, 1.0);
            }
        }
        m
    }

    #[test]
    fn full_frame_is_resized_image() {
        let img = ramp(16, 16);
        let out = crop_regions(&img, &[FeatureMap::filled(1, 16, 16, 1.0)], 16).unwrap();
        assert!(out.crops[0].max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn box_squares_to_long_side() {
        let m = box_mask(40, 40, 10, 5, 19, 24);
        let (top, left, side) = square_window(mask_bounds(&m).unwrap());
        assert_eq!((top, left, side), (5, 5, 20));
    }

    #[test]
    fn corner_mask_pads_with_zeros() {
        let img = ramp(32, 32);
        let m = box_mask(32, 32, 0, 0, 3, 9);
        let (top, left, side) = square_window(mask_bounds(&m).unwrap());
        assert_eq!((top, left, side), (-3, 0, 10));
        let win = extract_window(&img, top, left, side);
        let zeros = win.data().iter().filter(|&&v| v == 0.0).count();
        // three rows above the image, all channels
        assert_eq!(zeros, 3 * 3 * 10);
        let crops = crop_regions(&img, &[m], 10).unwrap();
        assert!(crops.crops[0].max_abs_diff(&win) < 1e-12);
    }

    #[test]
    fn empty_masks_skipped_or_error() {
        let img = ramp(8, 8);
        let empty = FeatureMap::zeros(1, 8, 8);
        let out = crop_regions(&img, &[empty.clone(), box_mask(8, 8, 2, 2, 4, 4)], 4).unwrap();
        assert_eq!(out.skipped, vec![0]);
        assert_eq!(out.crops.len(), 1);
        assert!(crop_regions(&img, &[empty], 4).is_err());
    }

    #[test]
    fn zero_margin_padding_invariant() {
        let img = ramp(20, 24);
        let masks = [box_mask(20, 24, 0, 3, 5, 6), box_mask(20, 24, 12, 18, 19, 23)];
        let base = crop_regions(&img, &masks, 12).unwrap();
        let pad = 7;
        let mut big = FeatureMap::zeros(3, 20 + 2 * pad, 24 + 2 * pad);
        for c in 0..3 {
            for y in 0..20 {
                for x in 0..24 {
                    big.set(c, y + pad, x + pad, img.get(c, y, x));
                }
            }
        }
        let big_masks: Vec<_> = masks
            .iter()
            .map(|m| {
                let mut b = FeatureMap::zeros(1, 20 + 2 * pad, 24 + 2 * pad);
                for y in 0..20 {
                    for x in 0..24 {
                        b.set(0, y + pad, x + pad, m.get(0, y, x));
                    }
                }
                b
            })
            .collect();
        let padded = crop_regions(&big, &big_masks, 12).unwrap();
        for (a, b) in base.crops.iter().zip(&padded.crops) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }
}
