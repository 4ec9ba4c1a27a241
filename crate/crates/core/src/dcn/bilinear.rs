//! Bilinear sampling with zero padding outside the map.

/// Corner indices, interpolation weights and their spatial derivatives for one
/// sample position. Corners outside the map get weight 0 and index 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BilinearTaps {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    /// d(weight)/dy per corner.
    pub dy: [f64; 4],
    /// d(weight)/dx per corner.
    pub dx: [f64; 4],
}

impl BilinearTaps {
    /// Taps for sampling an `h × w` map at `(y, x)`.
    ///
    /// At exactly-integer coordinates the derivative uses the interior
    /// (right-continuous) piece of the bilinear form.
    pub fn new(h: usize, w: usize, y: f64, x: f64) -> Self {
        let mut taps = Self::default();
        if !(y > -1.0 && y < h as f64 && x > -1.0 && x < w as f64) {
            return taps;
        }
        let y0 = libm::floor(y);
        let x0 = libm::floor(x);
        let ly = y - y0;
        let lx = x - x0;
        let hy = 1.0 - ly;
        let hx = 1.0 - lx;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let corners = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)];
        let weight = [hy * hx, hy * lx, ly * hx, ly * lx];
        let dy = [-hx, -lx, hx, lx];
        let dx = [-hy, hy, -ly, ly];
        for (i, &(cy, cx)) in corners.iter().enumerate() {
            if cy >= 0 && cx >= 0 && (cy as usize) < h && (cx as usize) < w {
                taps.index[i] = cy as usize * w + cx as usize;
                taps.weight[i] = weight[i];
                taps.dy[i] = dy[i];
                taps.dx[i] = dx[i];
            }
        }
        taps
    }

    /// Interpolated value, corners summed in fixed order.
    #[inline]
    pub fn sample(&self, map: &[f64]) -> f64 {
        self.weight[0] * map[self.index[0]]
            + self.weight[1] * map[self.index[1]]
            + self.weight[2] * map[self.index[2]]
            + self.weight[3] * map[self.index[3]]
    }

    /// `(∂v/∂y, ∂v/∂x)` of the interpolated value.
    #[inline]
    pub fn spatial_grad(&self, map: &[f64]) -> (f64, f64) {
        let mut gy = 0.0;
        let mut gx = 0.0;
        for i in 0..4 {
            let v = map[self.index[i]];
            gy += self.dy[i] * v;
            gx += self.dx[i] * v;
        }
        (gy, gx)
    }

    /// Adds `grad · weight` into the four corners of `target`.
    #[inline]
    pub fn scatter(&self, grad: f64, target: &mut [f64]) {
        for i in 0..4 {
            target[self.index[i]] += grad * self.weight[i];
        }
    }
}

/// Samples `map` (`h × w`, row-major) at fractional `(y, x)`; neighbours outside
/// `[0, h−1] × [0, w−1]` count as 0.
pub fn bilinear_sample(map: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    if !(y > -1.0 && y < h as f64 && x > -1.0 && x < w as f64) {
        return 0.0;
    }
    let y0 = libm::floor(y);
    let x0 = libm::floor(x);
    let ly = y - y0;
    let lx = x - x0;
    let hy = 1.0 - ly;
    let hx = 1.0 - lx;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let pixel = |r: isize, c: isize| -> f64 {
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            map[r as usize * w + c as usize]
        } else {
            0.0
        }
    };
    (hy * hx) * pixel(y0, x0) + (hy * lx) * pixel(y0, x0 + 1) + (ly * hx) * pixel(y0 + 1, x0) + (ly * lx) * pixel(y0 + 1, x0 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAP: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

    #[test]
    fn integer_site_is_exact() {
        assert_eq!(bilinear_sample(&MAP, 2, 2, 1.0, 0.0), 3.0);
        assert_eq!(BilinearTaps::new(2, 2, 1.0, 0.0).sample(&MAP), 3.0);
    }

    #[test]
    fn center_is_quarter_weighted() {
        assert_eq!(bilinear_sample(&MAP, 2, 2, 0.5, 0.5), 2.5);
    }

    #[test]
    fn left_neighbour_out_of_bounds() {
        assert_eq!(bilinear_sample(&MAP, 2, 2, 0.0, -0.5), 0.5);
        assert_eq!(BilinearTaps::new(2, 2, 0.0, -0.5).sample(&MAP), 0.5);
    }

    #[test]
    fn far_outside_is_zero() {
        assert_eq!(bilinear_sample(&MAP, 2, 2, 1e300, 0.0), 0.0);
        assert_eq!(bilinear_sample(&MAP, 2, 2, -1.0, 0.0), 0.0);
        assert_eq!(BilinearTaps::new(2, 2, 0.0, 2.0).sample(&MAP), 0.0);
    }

    #[test]
    fn spatial_grad_matches_differences() {
        let map = [0.3, -1.0, 2.0, 0.5, 1.5, -0.25, 0.0, 4.0, 1.0];
        for &(y, x) in &[(0.3, 0.6), (1.2, 1.7), (-0.4, 0.2), (1.8, 2.3)] {
            let (gy, gx) = BilinearTaps::new(3, 3, y, x).spatial_grad(&map);
            let e = 1e-6;
            let fy = (bilinear_sample(&map, 3, 3, y + e, x) - bilinear_sample(&map, 3, 3, y - e, x)) / (2.0 * e);
            let fx = (bilinear_sample(&map, 3, 3, y, x + e) - bilinear_sample(&map, 3, 3, y, x - e)) / (2.0 * e);
            assert!((gy - fy).abs() < 1e-8 && (gx - fx).abs() < 1e-8, "({y},{x}): {gy} vs {fy}, {gx} vs {fx}");
        }
    }
}
