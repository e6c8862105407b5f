use alloc::vec;
use alloc::vec::Vec;

use super::EntropyModel;
use crate::math::dot;

/// Search box `[lo, hi]^{I+1}` for brute-force Legendre transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleBox {
    pub lo: f64,
    pub hi: f64,
    /// Grid points per axis on every level.
    pub points: usize,
}

impl Default for OracleBox {
    fn default() -> Self {
        Self {
            lo: 1e-3,
            hi: 50.0,
            points: 21,
        }
    }
}

/// Maximises `f` on the box `lo..hi` by a tensor grid, then re-grids a box of
/// two spacings around the incumbent `levels` more times. When the incumbent
/// sits on the edge of an inner box the box is moved, not shrunk. The
/// returned value never decreases with `levels`.
pub fn grid_supremum(
    f: impl Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    points: usize,
    levels: usize,
) -> (f64, Vec<f64>) {
    let d = lo.len();
    let points = points.max(2);
    let mut best = f64::NEG_INFINITY;
    let mut arg = lo.to_vec();
    let mut cur_lo = lo.to_vec();
    let mut cur_hi = hi.to_vec();
    let mut x = vec![0.0; d];
    let mut idx = vec![0usize; d];
    let mut shrinks = 0;
    let mut moves = 0;
    while shrinks <= levels {
        let step: Vec<f64> = (0..d)
            .map(|k| (cur_hi[k] - cur_lo[k]) / (points - 1) as f64)
            .collect();
        idx.iter_mut().for_each(|i| *i = 0);
        'grid: loop {
            for k in 0..d {
                x[k] = cur_lo[k] + step[k] * idx[k] as f64;
            }
            let val = f(&x);
            if val > best {
                best = val;
                arg.copy_from_slice(&x);
            }
            for k in 0..d {
                idx[k] += 1;
                if idx[k] < points {
                    continue 'grid;
                }
                idx[k] = 0;
            }
            break;
        }
        let on_edge = (0..d).any(|k| {
            (arg[k] == cur_lo[k] && cur_lo[k] > lo[k]) || (arg[k] == cur_hi[k] && cur_hi[k] < hi[k])
        });
        let half: Vec<f64> = if on_edge && moves < 50 * (levels + 1) {
            moves += 1;
            (0..d).map(|k| 0.5 * (cur_hi[k] - cur_lo[k])).collect()
        } else {
            shrinks += 1;
            step.iter().map(|s| 2.0 * s).collect()
        };
        for k in 0..d {
            cur_lo[k] = (arg[k] - half[k]).max(lo[k]);
            cur_hi[k] = (arg[k] + half[k]).min(hi[k]);
        }
    }
    (best, arg)
}

/// Brute-force `sup_{(c,u) in box} y.c + v u + S(c, u)`.
pub fn legendre_oracle<M: EntropyModel + ?Sized>(
    model: &M,
    y: &[f64],
    v: f64,
    bx: OracleBox,
    refinements: usize,
) -> f64 {
    let d = model.species_count() + 1;
    let lo = vec![bx.lo; d];
    let hi = vec![bx.hi; d];
    let f = |z: &[f64]| {
        let (c, u) = z.split_at(d - 1);
        match model.entropy(c, u[0]) {
            Ok(s) => dot(y, c) + v * u[0] + s,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    grid_supremum(f, &lo, &hi, bx.points, refinements).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::BoltzmannEntropy;

    #[test]
    fn anchor_and_monotonicity() {
        let m = BoltzmannEntropy::unit(vec![1.0]);
        let bx = OracleBox {
            lo: 0.01,
            hi: 20.0,
            points: 21,
        };
        let mut prev = f64::NEG_INFINITY;
        for lvl in 0..=3 {
            let val = legendre_oracle(&m, &[0.0], -1.0, bx, lvl);
            assert!(val >= prev);
            prev = val;
        }
        assert!((prev - 5.0).abs() < 1e-4, "{prev}");
        assert!(prev <= 5.0 + 1e-12);
    }

    #[test]
    fn dominates_single_evaluations() {
        let m = BoltzmannEntropy::unit(vec![1.0]);
        let val = legendre_oracle(&m, &[0.2], -0.7, OracleBox::default(), 2);
        for &(c, u) in &[(1.0, 1.0), (3.0, 2.0), (10.0, 7.0)] {
            let s = m.entropy(&[c], u).unwrap();
            assert!(0.2 * c - 0.7 * u + s <= val);
        }
    }
}
