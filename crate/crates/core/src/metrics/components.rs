use serde::Serialize;

use super::BinaryMask;

/// An 8-connected foreground region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    /// `(x, y)` pixels in discovery order.
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    /// Mean `(x, y)` of the pixels.
    pub centroid: (f64, f64),
}

impl Component {
    fn from_pixels(pixels: Vec<(usize, usize)>) -> Self {
        let n = pixels.len() as f64;
        let (sx, sy) = pixels.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
        Component { area: pixels.len(), centroid: (sx / n, sy / n), pixels }
    }

    /// Inclusive `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> (usize, usize, usize, usize) {
        self.pixels.iter().fold((usize::MAX, usize::MAX, 0, 0), |(x0, y0, x1, y1), &(x, y)| {
            (x0.min(x), y0.min(y), x1.max(x), y1.max(y))
        })
    }
}

/// 8-connected components, ordered by their first pixel in row-major order.
pub fn label_components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && mask.bits()[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(Component::from_pixels(pixels));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_diagonal() {
        assert!(label_components(&BinaryMask::new(4, 4)).is_empty());
        let m = BinaryMask::from_fn(3, 3, |x, y| (x, y) == (0, 0) || (x, y) == (1, 1));
        let c = label_components(&m);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].area, 2);
        assert_eq!(c[0].centroid, (0.5, 0.5));
    }

    #[test]
    fn ordered_by_first_pixel() {
        // second blob starts earlier in row-major order even though it extends lower
        let m = BinaryMask::from_fn(6, 4, |x, y| (x == 0 && y >= 2) || (x == 4 && y <= 1) || (x == 5 && y == 3));
        let c = label_components(&m);
        assert_eq!(c.len(), 3);
        assert_eq!(c[0].bbox(), (4, 0, 4, 1));
        assert_eq!(c[1].bbox(), (0, 2, 0, 3));
        assert_eq!(c[2].bbox(), (5, 3, 5, 3));
    }
}
