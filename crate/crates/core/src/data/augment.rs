use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{Shape4, Tensor4};

/// Zero-pad, random crop, random horizontal mirror.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct AugmentPolicy {
    pub pad: usize,
    pub crop: usize,
    pub mirror_p: f64,
}

impl AugmentPolicy {
    pub fn identity(side: usize) -> Self {
        Self {
            pad: 0,
            crop: side,
            mirror_p: 0.0,
        }
    }

    fn validate(&self, s: Shape4) -> Result<()> {
        if self.crop == 0 || self.crop > s.h + 2 * self.pad || self.crop > s.w + 2 * self.pad {
            return Err(Error::Argument(format!(
                "crop {} does not fit {}x{} padded by {}",
                self.crop, s.h, s.w, self.pad
            )));
        }
        if !(0.0..=1.0).contains(&self.mirror_p) {
            return Err(Error::Argument(format!("mirror probability {} outside [0, 1]", self.mirror_p)));
        }
        Ok(())
    }
}

/// Crop offset into the padded image and mirror flag for one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub oy: usize,
    pub ox: usize,
    pub mirror: bool,
}

/// Draws for `n` images; image `i` uses `rng.split(i)` only.
pub fn draw_augment(n: usize, input: Shape4, policy: &AugmentPolicy, rng: &CounterRng) -> Result<Vec<AugmentDraw>> {
    policy.validate(input)?;
    let span_y = input.h + 2 * policy.pad - policy.crop + 1;
    let span_x = input.w + 2 * policy.pad - policy.crop + 1;
    Ok((0..n as u64)
        .map(|i| {
            let mut r = rng.split(i);
            AugmentDraw {
                oy: r.below(span_y),
                ox: r.below(span_x),
                mirror: r.next_f64() < policy.mirror_p,
            }
        })
        .collect())
}

pub fn apply_augment(x: &Tensor4<f32>, policy: &AugmentPolicy, draws: &[AugmentDraw]) -> Result<Tensor4<f32>> {
    let s = x.shape();
    policy.validate(s)?;
    if draws.len() != s.n {
        return Err(Error::Shape(format!("{} draws for {} images", draws.len(), s.n)));
    }
    let (pad, crop) = (policy.pad as isize, policy.crop);
    let out_shape = Shape4::new(s.n, s.c, crop, crop)?;
    let mut out = Tensor4::zeros(out_shape)?;
    let src = x.data();
    let dst = out.data_mut();
    for (i, d) in draws.iter().enumerate() {
        if d.oy + crop > s.h + 2 * policy.pad || d.ox + crop > s.w + 2 * policy.pad {
            return Err(Error::Argument(format!("draw {i} crops outside the padded image")));
        }
        for c in 0..s.c {
            for y in 0..crop {
                let sy = d.oy as isize + y as isize - pad;
                if sy < 0 || sy >= s.h as isize {
                    continue;
                }
                for xo in 0..crop {
                    let xc = if d.mirror { crop - 1 - xo } else { xo };
                    let sx = d.ox as isize + xc as isize - pad;
                    if sx < 0 || sx >= s.w as isize {
                        continue;
                    }
                    dst[out_shape.offset(i, c, y, xo)] = src[s.offset(i, c, sy as usize, sx as usize)];
                }
            }
        }
    }
    Ok(out)
}

pub fn augment(x: &Tensor4<f32>, policy: &AugmentPolicy, rng: &CounterRng) -> Result<Tensor4<f32>> {
    let draws = draw_augment(x.shape().n, x.shape(), policy, rng)?;
    apply_augment(x, policy, &draws)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, h: usize) -> Tensor4<f32> {
        let s = Shape4::new(n, 2, h, h).unwrap();
        Tensor4::from_vec(s, (1..=s.len()).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn identity_policy() {
        let x = ramp(3, 4);
        assert_eq!(augment(&x, &AugmentPolicy::identity(4), &CounterRng::new(1)).unwrap(), x);
    }

    #[test]
    fn mirror() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 2, 2).unwrap(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = AugmentPolicy {
            pad: 0,
            crop: 2,
            mirror_p: 1.0,
        };
        assert_eq!(augment(&x, &p, &CounterRng::new(0)).unwrap().data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn pad_crop_leaves_zero_border_off_centre() {
        let x = Tensor4::full(Shape4::new(64, 1, 32, 32).unwrap(), 1.0f32).unwrap();
        let p = AugmentPolicy {
            pad: 4,
            crop: 32,
            mirror_p: 0.5,
        };
        let draws = draw_augment(64, x.shape(), &p, &CounterRng::new(9)).unwrap();
        let y = apply_augment(&x, &p, &draws).unwrap();
        assert_eq!(y.shape(), x.shape());
        for (i, d) in draws.iter().enumerate() {
            let zeros = y.sample(i).iter().filter(|&&v| v == 0.0).count();
            let expect = 32 * 32 - (32 - d.oy.abs_diff(4)) * (32 - d.ox.abs_diff(4));
            assert_eq!(zeros, expect);
            assert_eq!(zeros == 0, (d.oy, d.ox) == (4, 4));
        }
    }

    #[test]
    fn double_mirror_recovers_crop() {
        let x = ramp(5, 6);
        let p = AugmentPolicy {
            pad: 2,
            crop: 6,
            mirror_p: 1.0,
        };
        let draws = draw_augment(5, x.shape(), &p, &CounterRng::new(4)).unwrap();
        let plain: Vec<_> = draws.iter().map(|d| AugmentDraw { mirror: false, ..*d }).collect();
        let once = apply_augment(&x, &p, &draws).unwrap();
        let back = apply_augment(&once, &AugmentPolicy { pad: 0, ..p }, &vec![AugmentDraw { oy: 0, ox: 0, mirror: true }; 5]).unwrap();
        assert_eq!(back, apply_augment(&x, &p, &plain).unwrap());
    }
}
