//! Congruence of surface patches up to a Lorentz motion, aligned by the
//! frames at the origin sample.

use crate::analysis::SurfacePatch;
use crate::error::{Error, Result};
use crate::minkowski::{apply_motion, motion_from_frames, LorentzMotion};

/// The motion carrying `s2`'s origin point and frame onto `s1`'s.
pub fn origin_alignment(s1: &SurfacePatch, s2: &SurfacePatch) -> Result<LorentzMotion> {
    if !s1.domain().matches(s2.domain()) {
        return Err(Error::DomainMismatch);
    }
    let f1 = s1.frame_at(0, 0).ok_or(Error::MissingFrames)?;
    let f2 = s2.frame_at(0, 0).ok_or(Error::MissingFrames)?;
    motion_from_frames(&s2.z.at(0, 0), f2, &s1.z.at(0, 0), f1)
}

/// Max Euclidean distance between `s1` and the aligned `s2` over all samples.
pub fn congruence_distance(s1: &SurfacePatch, s2: &SurfacePatch) -> Result<f64> {
    let m = origin_alignment(s1, s2)?;
    let moved = apply_motion(&m, s2);
    Ok(s1
        .z
        .values()
        .iter()
        .zip(moved.z.values())
        .map(|(a, b)| (*a - *b).euclidean_norm())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridDomain, Vec4Field};
    use crate::minkowski::{PseudoOrthonormalFrame, Vec4};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn framed_plane() -> SurfacePatch {
        let d = GridDomain::square(0.0, 0.0, 0.1, 6).unwrap();
        let f = PseudoOrthonormalFrame::standard();
        let z = Vec4Field::from_fn(d, |u, v| f.x * u + f.y * v + Vec4::new(0.0, u * u, v * v, 0.0)).unwrap();
        SurfacePatch::new(z).with_frames(vec![f; d.len()]).unwrap()
    }

    #[test]
    fn reflexive_and_motion_invariant() {
        let s = framed_plane();
        assert_eq!(congruence_distance(&s, &s).unwrap(), 0.0);
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..10 {
            let m = LorentzMotion::random(&mut rng, 1.0);
            let moved = apply_motion(&m, &s);
            assert!(congruence_distance(&s, &moved).unwrap() < 1e-10);
            let back = congruence_distance(&moved, &s).unwrap();
            assert!(back < 1e-9);
        }
    }

    #[test]
    fn detects_non_congruent_patches() {
        let s = framed_plane();
        let mut t = s.clone();
        t.z = t.z.map(|p| *p + Vec4::new(0.0, 0.0, p.0[0] * p.0[0], 0.0));
        assert!(congruence_distance(&s, &t).unwrap() > 1e-3);
    }

    #[test]
    fn errors_without_frames_or_on_mismatched_grids() {
        let s = framed_plane();
        let bare = SurfacePatch::new(s.z.clone());
        assert!(matches!(congruence_distance(&s, &bare), Err(Error::MissingFrames)));
        let d = GridDomain::square(0.0, 0.0, 0.1, 7).unwrap();
        let other = SurfacePatch::new(Vec4Field::from_fn(d, |u, _| Vec4::new(u, 0.0, 0.0, 0.0)).unwrap());
        assert!(matches!(congruence_distance(&s, &other), Err(Error::DomainMismatch)));
    }
}
