use super::set::LabeledSet;
use crate::error::{contract, Result};
use crate::models::ImageShape;
use crate::numcore::{Matrix, RngStream};

/// Gaussian clusters in `[0, 1]^d_in`, one per class, `per_class` samples each.
///
/// Centres are drawn uniformly from `[0.2, 0.8]^d_in`; samples are the centre
/// plus `spread · N(0, I)`, clamped to the unit cube. Rows are interleaved by
/// class (`label = i mod k`).
pub fn make_synthetic_blobs(k: usize, d_in: usize, per_class: usize, spread: f64, rng: &mut RngStream) -> Result<LabeledSet> {
    contract!(k >= 2, "need at least two classes, got {k}");
    contract!(d_in >= 1, "input dimension must be positive");
    contract!(spread.is_finite() && spread >= 0.0, "spread must be finite and non-negative");
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d_in).map(|_| 0.2 + 0.6 * rng.uniform()).collect())
        .collect();
    let n = k * per_class;
    let mut data = Vec::with_capacity(n * d_in);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        data.extend(centers[y].iter().map(|&c| (c + spread * rng.standard_normal()).clamp(0.0, 1.0)));
        labels.push(y);
    }
    LabeledSet::new(Matrix::from_vec(n, d_in, data)?, labels, k, ImageShape::flat(d_in))
}

fn splat(img: &mut [f64], side: usize, x: f64, y: f64) {
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    for dy in -1..=1isize {
        for dx in -1..=1isize {
            let (px, py) = (cx + dx, cy + dy);
            if px < 0 || py < 0 || px >= side as isize || py >= side as isize {
                continue;
            }
            let w = if dx == 0 && dy == 0 { 1.0 } else if dx == 0 || dy == 0 { 0.5 } else { 0.2 };
            let p = &mut img[py as usize * side + px as usize];
            *p = p.max(w);
        }
    }
}

fn prototype(side: usize, strokes: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut img = vec![0.0; side * side];
    let lo = 2.0;
    let span = side as f64 - 5.0;
    let mut pt = (lo + span * rng.uniform(), lo + span * rng.uniform());
    for _ in 0..strokes {
        let next = (lo + span * rng.uniform(), lo + span * rng.uniform());
        let steps = (2.0 * side as f64) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            splat(&mut img, side, pt.0 + t * (next.0 - pt.0), pt.1 + t * (next.1 - pt.1));
        }
        pt = next;
    }
    img
}

/// Handwriting-like stand-in images: one random pen trajectory per class,
/// rendered on a `side × side` canvas.
///
/// Each sample shifts its class prototype by up to one pixel in each direction,
/// scales its ink by a factor in `[0.7, 1.0]` and adds `noise · N(0, 1)` per
/// pixel before clamping to `[0, 1]`. Rows are interleaved by class.
pub fn make_synthetic_glyphs(k: usize, side: usize, per_class: usize, noise: f64, rng: &mut RngStream) -> Result<LabeledSet> {
    contract!(k >= 2, "need at least two classes, got {k}");
    contract!(side >= 8, "glyph canvas must be at least 8 pixels wide");
    contract!(noise.is_finite() && noise >= 0.0, "noise must be finite and non-negative");
    let protos: Vec<Vec<f64>> = (0..k).map(|_| prototype(side, 3, rng)).collect();
    let n = k * per_class;
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        let dx = rng.below(3) as isize - 1;
        let dy = rng.below(3) as isize - 1;
        let ink = 0.7 + 0.3 * rng.uniform();
        for r in 0..side as isize {
            for c in 0..side as isize {
                let (sr, sc) = (r - dy, c - dx);
                let v = if sr < 0 || sc < 0 || sr >= side as isize || sc >= side as isize {
                    0.0
                } else {
                    protos[y][sr as usize * side + sc as usize]
                };
                data.push((ink * v + noise * rng.standard_normal()).clamp(0.0, 1.0));
            }
        }
        labels.push(y);
    }
    LabeledSet::new(Matrix::from_vec(n, side * side, data)?, labels, k, ImageShape::new(1, side, side))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_shape_and_labels() {
        let s = make_synthetic_blobs(3, 5, 4, 0.1, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s.label_histogram(), vec![4, 4, 4]);
        assert!(s.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn blobs_are_separated_at_small_spread() {
        let s = make_synthetic_blobs(2, 8, 50, 0.01, &mut RngStream::new(3, 0)).unwrap();
        let mean = |y: usize| -> Vec<f64> {
            let rows: Vec<usize> = (0..s.len()).filter(|&i| s.labels()[i] == y).collect();
            (0..8)
                .map(|j| rows.iter().map(|&i| s.image(i)[j]).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        let (a, b) = (mean(0), mean(1));
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.1);
    }

    #[test]
    fn same_seed_same_data() {
        let a = make_synthetic_glyphs(4, 12, 3, 0.05, &mut RngStream::new(7, 0)).unwrap();
        let b = make_synthetic_glyphs(4, 12, 3, 0.05, &mut RngStream::new(7, 0)).unwrap();
        let c = make_synthetic_glyphs(4, 12, 3, 0.05, &mut RngStream::new(8, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.shape(), ImageShape::new(1, 12, 12));
    }
}
