//! Clip layout over videos of `k·S + 1` frames.

use super::TrainError;

/// One training clip: frames `start..start+len` of a video, decoded from the
/// keyframes at `start` and `start+len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipRef {
    pub video: usize,
    pub index: usize,
    pub start: usize,
    pub len: usize,
}

impl ClipRef {
    pub fn end_keyframe(&self) -> usize {
        self.start + self.len
    }
}

/// Number of frames kept from a video of `n` frames.
pub fn retained_frames(n: usize, s: usize) -> usize {
    if s == 0 || n < s + 1 {
        0
    } else {
        (n - 1) / s * s + 1
    }
}

/// Clips of length `s` for video `video` with `n` frames.
pub fn build_clips(video: usize, n: usize, s: usize) -> Result<Vec<ClipRef>, TrainError> {
    if s == 0 || n < s + 1 {
        return Err(TrainError::Config(format!(
            "video {video} has {n} frames; clips of {s} need at least {}",
            s + 1
        )));
    }
    let kept = retained_frames(n, s);
    if kept < n {
        log::warn!(
            "video {video}: keeping frames 0..{} of {n}; {} trailing frame(s) dropped",
            kept - 1,
            n - kept
        );
    }
    Ok((0..(kept - 1) / s)
        .map(|j| ClipRef {
            video,
            index: j,
            start: j * s,
            len: s,
        })
        .collect())
}

/// Relative times `i/S` for `i in 0..S`.
pub fn clip_times(s: usize) -> Vec<f64> {
    (0..s).map(|i| i as f64 / s as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_examples() {
        let c = build_clips(0, 17, 8).unwrap();
        assert_eq!(c.len(), 2);
        let keys: Vec<usize> = c.iter().map(|c| c.start).chain([c[1].end_keyframe()]).collect();
        assert_eq!(keys, vec![0, 8, 16]);
        assert_eq!(build_clips(0, 9, 8).unwrap().len(), 1);
        let c = build_clips(0, 12, 8).unwrap();
        assert_eq!((c.len(), c[0].start, c[0].end_keyframe()), (1, 0, 8));
        assert!(build_clips(0, 8, 8).is_err());
    }

    #[test]
    fn clips_cover_retained_frames_once_and_share_keyframes() {
        for (n, s) in [(33, 8), (40, 4), (10, 3), (7, 1)] {
            let clips = build_clips(0, n, s).unwrap();
            let kept = retained_frames(n, s);
            let mut seen = vec![0; kept];
            for c in &clips {
                for f in c.start..c.start + c.len {
                    seen[f] += 1;
                }
            }
            // the final frame is only ever an end keyframe
            assert!(seen[..kept - 1].iter().all(|&k| k == 1));
            assert_eq!(seen[kept - 1], 0);
            for w in clips.windows(2) {
                assert_eq!(w[0].end_keyframe(), w[1].start);
            }
        }
        assert_eq!(clip_times(4), vec![0.0, 0.25, 0.5, 0.75]);
    }
}
