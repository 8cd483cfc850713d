use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Re-purposes a three-channel input layer for a stack of `k` RGB frames:
/// the weights are tiled `k` times along the input-channel axis, each copy
/// divided by `k` when `rescale` is set so that `k` identical frames
/// produce the same response as one frame through the base layer.
pub fn build_visual_stem(base: &Tensor, k: usize, rescale: bool) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::InvalidArgument("stem replication needs k >= 1".into()));
    }
    let (c, cin, kh, kw) = stem_dims(base)?;
    let plane = kh * kw;
    let scale = if rescale { 1.0 / k as f64 } else { 1.0 };
    let mut out = Vec::with_capacity(c * cin * k * plane);
    for co in 0..c {
        let filt = &base.data()[co * cin * plane..(co + 1) * cin * plane];
        for _ in 0..k {
            out.extend(filt.iter().map(|w| w * scale));
        }
    }
    Tensor::new(out, &[c, cin * k, kh, kw])
}

/// Collapses a three-channel input layer to one channel by averaging the
/// per-channel kernels.
pub fn build_audio_stem(base: &Tensor) -> Result<Tensor> {
    let (c, cin, kh, kw) = stem_dims(base)?;
    let plane = kh * kw;
    let mut out = vec![0.0; c * plane];
    for co in 0..c {
        for ch in 0..cin {
            let src = &base.data()[(co * cin + ch) * plane..][..plane];
            for (o, w) in out[co * plane..(co + 1) * plane].iter_mut().zip(src) {
                *o += w / cin as f64;
            }
        }
    }
    Tensor::new(out, &[c, 1, kh, kw])
}

fn stem_dims(base: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let s = base.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::shape("stem", format!("base weights must be [C, 3, kh, kw], got {s:?}")));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_stem_is_unchanged() {
        let base = Tensor::new((0..2 * 3 * 9).map(|v| v as f64 * 0.1).collect(), &[2, 3, 3, 3]).unwrap();
        let s = build_visual_stem(&base, 1, true).unwrap();
        assert_eq!(s.data(), base.data());
    }

    #[test]
    fn replicated_ones_become_one_over_k() {
        let base = Tensor::full(&[4, 3, 3, 3], 1.0);
        let s = build_visual_stem(&base, 3, true).unwrap();
        assert_eq!(s.shape(), &[4, 9, 3, 3]);
        assert!(s.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let raw = build_visual_stem(&base, 3, false).unwrap();
        assert!(raw.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn audio_stem_of_equal_channels_is_that_channel() {
        let base = Tensor::full(&[2, 3, 2, 2], 0.7);
        let s = build_audio_stem(&base).unwrap();
        assert_eq!(s.shape(), &[2, 1, 2, 2]);
        assert!(s.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn audio_stem_of_one_two_three_is_two() {
        let mut data = Vec::new();
        for ch in 1..=3 {
            data.extend(std::iter::repeat(ch as f64).take(4));
        }
        let base = Tensor::new(data, &[1, 3, 2, 2]).unwrap();
        assert!(build_audio_stem(&base).unwrap().data().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_non_rgb_base() {
        assert!(build_audio_stem(&Tensor::zeros(&[1, 2, 3, 3])).is_err());
        assert!(build_visual_stem(&Tensor::zeros(&[1, 3, 3, 3]), 0, true).is_err());
    }
}
