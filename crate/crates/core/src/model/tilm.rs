//! Time- and feature-wise linear modulation: each frame's tokens are scaled
//! and shifted by maps of that frame's audio features.

use ndarray::{Array2, ArrayView2};

use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::nn;

/// The two modulation maps `s(a) = mish(a) W_s + b_s` and
/// `m(a) = mish(a) W_m + b_m`, both `D -> C`.
#[derive(Debug, Clone, Copy)]
pub struct Tilm<'a> {
    pub scale_w: &'a Array2<f64>,
    pub scale_b: &'a Array2<f64>,
    pub shift_w: &'a Array2<f64>,
    pub shift_b: &'a Array2<f64>,
}

impl LayerParams {
    pub fn tilm(&self) -> Tilm<'_> {
        Tilm {
            scale_w: &self.tilm_scale_w,
            scale_b: &self.tilm_scale_b,
            shift_w: &self.tilm_shift_w,
            shift_b: &self.tilm_shift_b,
        }
    }
}

/// `y_l = x_l * s(a_l) + m(a_l)` for every frame `l`.
pub fn tilm(x: ArrayView2<f64>, a: ArrayView2<f64>, maps: Tilm) -> Result<Array2<f64>> {
    if x.nrows() != a.nrows() {
        return Err(Error::Shape(format!(
            "{} token frames vs {} audio frames",
            x.nrows(),
            a.nrows()
        )));
    }
    if a.ncols() != maps.scale_w.nrows() || x.ncols() != maps.scale_w.ncols() {
        return Err(Error::Shape(format!(
            "modulation maps {:?} do not fit audio width {} and token width {}",
            maps.scale_w.dim(),
            a.ncols(),
            x.ncols()
        )));
    }
    let am = a.mapv(nn::mish);
    let scale = nn::linear(am.view(), maps.scale_w, maps.scale_b);
    let shift = nn::linear(am.view(), maps.shift_w, maps.shift_b);
    Ok(&x * &scale + &shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_maps(d: usize, c: usize, seed: u64) -> [Array2<f64>; 4] {
        let mut r = rng::seeded(seed);
        [
            rng::standard_normal(d, c, &mut r),
            rng::standard_normal(1, c, &mut r),
            rng::standard_normal(d, c, &mut r),
            rng::standard_normal(1, c, &mut r),
        ]
    }

    fn view(m: &[Array2<f64>; 4]) -> Tilm<'_> {
        Tilm {
            scale_w: &m[0],
            scale_b: &m[1],
            shift_w: &m[2],
            shift_b: &m[3],
        }
    }

    #[test]
    fn identity_modulation() {
        let mut r = rng::seeded(0);
        let x = rng::standard_normal(4, 3, &mut r);
        let a = rng::standard_normal(4, 2, &mut r);
        let maps = [
            Array2::zeros((2, 3)),
            Array2::ones((1, 3)),
            Array2::zeros((2, 3)),
            Array2::zeros((1, 3)),
        ];
        assert_eq!(tilm(x.view(), a.view(), view(&maps)).unwrap(), x);
    }

    #[test]
    fn affine_in_tokens() {
        let maps = random_maps(2, 3, 1);
        let mut r = rng::seeded(2);
        let x1 = rng::standard_normal(5, 3, &mut r);
        let x2 = rng::standard_normal(5, 3, &mut r);
        let a = rng::standard_normal(5, 2, &mut r);
        let am = a.mapv(nn::mish);
        let s = nn::linear(am.view(), &maps[0], &maps[1]);
        let lhs = tilm(x1.view(), a.view(), view(&maps)).unwrap()
            - tilm(x2.view(), a.view(), view(&maps)).unwrap();
        let rhs = (&x1 - &x2) * &s;
        assert!((&lhs - &rhs).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn frames_are_modulated_independently() {
        let maps = random_maps(2, 3, 3);
        let mut r = rng::seeded(4);
        let x = rng::standard_normal(6, 3, &mut r);
        let a = rng::standard_normal(6, 2, &mut r);
        let base = tilm(x.view(), a.view(), view(&maps)).unwrap();
        let mut a2 = a.clone();
        a2[[3, 1]] += 0.8;
        let moved = tilm(x.view(), a2.view(), view(&maps)).unwrap();
        for (l, (r1, r2)) in base.rows().into_iter().zip(moved.rows()).enumerate() {
            if l == 3 {
                assert_ne!(r1, r2);
            } else {
                assert_eq!(r1, r2);
            }
        }
    }

    #[test]
    fn length_mismatch_is_a_shape_error() {
        let maps = random_maps(2, 3, 5);
        let x = Array2::zeros((4, 3));
        let a = Array2::zeros((5, 2));
        assert!(matches!(
            tilm(x.view(), a.view(), view(&maps)),
            Err(Error::Shape(_))
        ));
    }
}
