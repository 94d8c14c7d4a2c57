//! Shape measurements on binary foreground masks (row-major, `width * height`).

use alloc::vec;
use alloc::vec::Vec;

fn points(mask: &[bool], width: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(move |(i, _)| ((i % width) as f64, (i / width) as f64))
}

pub fn area(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}

pub fn centroid(mask: &[bool], width: usize) -> Option<(f64, f64)> {
    let n = area(mask);
    if n == 0 {
        return None;
    }
    let (sx, sy) = points(mask, width).fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    Some((sx / n as f64, sy / n as f64))
}

/// RMS perpendicular distance of the foreground pixels to their total
/// least-squares line. `None` for an empty mask.
pub fn line_fit_rms(mask: &[bool], width: usize) -> Option<f64> {
    let (cx, cy) = centroid(mask, width)?;
    let n = area(mask) as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in points(mask, width) {
        let (dx, dy) = (x - cx, y - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);
    // smallest eigenvalue of the covariance is the mean squared residual
    let half_trace = 0.5 * (sxx + syy);
    let disc = num_traits::Float::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
    Some(num_traits::Float::sqrt((half_trace - disc).max(0.0)))
}

/// Number of 8-connected foreground components.
pub fn connected_components(mask: &[bool], width: usize) -> usize {
    let height = if width == 0 { 0 } else { mask.len() / width };
    let mut seen = vec![false; mask.len()];
    let mut stack: Vec<usize> = Vec::new();
    let mut count = 0;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

/// `area / (pi * r^2)`, `r` the largest centroid-to-pixel distance plus half
/// a pixel. 1 for an ideal disc, smaller for elongated or ragged shapes.
pub fn circularity(mask: &[bool], width: usize) -> f64 {
    let Some((cx, cy)) = centroid(mask, width) else {
        return 0.0;
    };
    let r2 = points(mask, width)
        .map(|(x, y)| (x - cx) * (x - cx) + (y - cy) * (y - cy))
        .fold(0.0, f64::max);
    let r = num_traits::Float::sqrt(r2) + 0.5;
    area(mask) as f64 / (core::f64::consts::PI * r * r)
}

/// Whether any foreground pixel lies within `margin` pixels of the border.
pub fn touches_border(mask: &[bool], width: usize, margin: usize) -> bool {
    let height = if width == 0 { 0 } else { mask.len() / width };
    points(mask, width).any(|(x, y)| {
        let (x, y) = (x as usize, y as usize);
        x < margin || y < margin || x + margin >= width || y + margin >= height
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(w: usize, r: f64) -> Vec<bool> {
        let c = w as f64 / 2.0;
        (0..w * w)
            .map(|i| {
                let (x, y) = ((i % w) as f64 - c, (i / w) as f64 - c);
                x * x + y * y <= r * r
            })
            .collect()
    }

    #[test]
    fn straight_row_fits_exactly() {
        let mut m = vec![false; 100];
        (0..10).for_each(|x| m[50 + x] = true);
        assert!(line_fit_rms(&m, 10).unwrap() < 1e-12);
        assert_eq!(connected_components(&m, 10), 1);
    }

    #[test]
    fn disc_is_circular() {
        let m = disc(40, 10.0);
        assert!(circularity(&m, 40) > 0.85);
        assert!(line_fit_rms(&m, 40).unwrap() > 4.0);
    }

    #[test]
    fn diagonal_neighbours_join() {
        let mut m = vec![false; 16];
        m[0] = true;
        m[5] = true;
        m[15] = true;
        assert_eq!(connected_components(&m, 4), 2);
    }
}
