//! Procedural video corpora: smooth textured backgrounds with soft-edged
//! shapes moving under a per-class motion program.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::Video;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Program {
    Translate,
    Orbit,
    Scale,
    Oscillate,
}

/// Motion shared by every video of a class.
#[derive(Debug, Clone)]
struct ClassMotion {
    program: Program,
    speed: f64,
    amp: f64,
    drift: (f64, f64),
}

impl ClassMotion {
    fn new(class: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15 ^ class as u64);
        let program = [Program::Translate, Program::Orbit, Program::Scale, Program::Oscillate][class % 4];
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        Self {
            program,
            speed: rng.gen_range(0.6..1.2) * (1.0 + (class / 4) as f64 * 0.5),
            amp: rng.gen_range(0.15..0.25),
            drift: (ang.cos(), ang.sin()),
        }
    }
}

struct Shape {
    center: (f64, f64),
    radius: f64,
    color: [f64; 3],
    square: bool,
    phase: f64,
}

/// Cells per unit length of the background lattice; the lattice wraps with
/// period 1 so scrolling never runs off its edge.
const LATTICE: usize = 6;

struct Appearance {
    base: [f64; 3],
    tint: [[f64; 3]; 2],
    freq: [(f64, f64); 2],
    phase: [f64; 2],
    /// Random colour offsets on a wrapped `LATTICE x LATTICE` grid.
    texture: Vec<[f64; 3]>,
    shapes: Vec<Shape>,
}

impl Appearance {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut color = || [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
        let base = color();
        let tint = [color(), color()];
        let shapes_colors = [color(), color()];
        let freq = [
            (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)),
            (rng.gen_range(0.5..2.0), rng.gen_range(-2.0..-0.5)),
        ];
        let phase = [rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)];
        let texture = (0..LATTICE * LATTICE)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let shapes = shapes_colors
            .into_iter()
            .enumerate()
            .map(|(i, color)| Shape {
                center: (rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)),
                radius: rng.gen_range(0.12..0.2),
                color,
                square: i == 1,
                phase: rng.gen_range(0.0..6.3),
            })
            .collect();
        Self {
            base,
            tint,
            freq,
            phase,
            texture,
            shapes,
        }
    }

    /// Smoothly interpolated lattice colour at `(x, y)`, wrapping with period 1.
    fn texture_at(&self, x: f64, y: f64) -> [f64; 3] {
        let n = LATTICE as f64;
        let (gx, gy) = (x.rem_euclid(1.0) * n, y.rem_euclid(1.0) * n);
        let (x0, y0) = (gx.floor() as usize % LATTICE, gy.floor() as usize % LATTICE);
        let (x1, y1) = ((x0 + 1) % LATTICE, (y0 + 1) % LATTICE);
        let (sx, sy) = (smoothstep(0.0, 1.0, gx.fract()), smoothstep(0.0, 1.0, gy.fract()));
        let at = |i: usize, j: usize| self.texture[j * LATTICE + i];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = at(x0, y0)[c] * (1.0 - sx) + at(x1, y0)[c] * sx;
            let bottom = at(x0, y1)[c] * (1.0 - sx) + at(x1, y1)[c] * sx;
            *o = top * (1.0 - sy) + bottom * sy;
        }
        out
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn render(app: &Appearance, motion: &ClassMotion, u: f64, h: usize, w: usize) -> Tensor<f32> {
    let tau = std::f64::consts::TAU;
    let aspect = w as f64 / h as f64;
    // background scroll shared by the class
    let (bx, by) = match motion.program {
        Program::Translate => (motion.drift.0 * motion.speed * u, motion.drift.1 * motion.speed * u),
        Program::Oscillate => (0.3 * (tau * motion.speed * u).sin(), 0.0),
        _ => (0.0, 0.0),
    };
    let placed: Vec<((f64, f64), f64)> = app
        .shapes
        .iter()
        .map(|s| {
            let a = motion.amp;
            let ph = tau * motion.speed * u + s.phase;
            match motion.program {
                Program::Translate => (
                    (
                        s.center.0 + a * motion.drift.0 * (2.0 * motion.speed * u - 0.5),
                        s.center.1 + a * motion.drift.1 * (2.0 * motion.speed * u - 0.5),
                    ),
                    s.radius,
                ),
                Program::Orbit => ((0.5 + a * ph.cos(), 0.5 + a * ph.sin()), s.radius),
                Program::Scale => (s.center, s.radius * (1.0 + 0.5 * ph.sin())),
                Program::Oscillate => ((s.center.0 + a * ph.sin(), s.center.1), s.radius),
            }
        })
        .collect();
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            let px = fx * aspect;
            let t0 = (tau * (app.freq[0].0 * (px + bx) + app.freq[0].1 * (fy + by)) + app.phase[0]).sin();
            let t1 = (tau * (app.freq[1].0 * (px + bx) + app.freq[1].1 * (fy + by)) + app.phase[1]).sin();
            let tex = app.texture_at(px + bx, fy + by);
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = app.base[c]
                    + 0.2 * t0 * (app.tint[0][c] - 0.5)
                    + 0.2 * t1 * (app.tint[1][c] - 0.5)
                    + 0.2 * tex[c];
            }
            for (s, &((cx, cy), r)) in app.shapes.iter().zip(&placed) {
                let (dx, dy) = ((fx - cx) * aspect, fy - cy);
                let d = if s.square { dx.abs().max(dy.abs()) } else { (dx * dx + dy * dy).sqrt() };
                let cover = 1.0 - smoothstep(r - 0.04, r + 0.04, d);
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - cover) + s.color[c] * cover;
                }
            }
            for c in 0..3 {
                data[c * h * w + y * w + x] = rgb[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("frame shape")
}

/// `n_videos` videos of `frames` frames each; video `i` belongs to class
/// `i % n_classes`. Identical arguments give bit-identical output.
pub fn synth_corpus(n_videos: usize, n_classes: usize, frames: usize, size: (usize, usize), seed: u64) -> Vec<Video> {
    let n_classes = n_classes.max(1);
    let motions: Vec<ClassMotion> = (0..n_classes).map(|c| ClassMotion::new(c, seed)).collect();
    (0..n_videos)
        .map(|i| {
            let class = i % n_classes;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1));
            let app = Appearance::new(&mut rng);
            let frames = (0..frames)
                .map(|f| render(&app, &motions[class], f as f64 / frames.max(1) as f64, size.0, size.1))
                .collect();
            Video {
                id: format!("v{i:03}_c{class}"),
                frames,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_corpus(3, 2, 5, (16, 20), 7);
        assert_eq!(a, synth_corpus(3, 2, 5, (16, 20), 7));
        assert_ne!(a, synth_corpus(3, 2, 5, (16, 20), 8));
        for v in &a {
            assert_eq!(v.frames.len(), 5);
            for f in &v.frames {
                assert_eq!(f.shape(), &[3, 16, 20]);
                assert!(f.data().iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }

    #[test]
    fn single_class_shares_motion_but_not_appearance() {
        let v = synth_corpus(2, 1, 3, (12, 12), 1);
        assert_eq!(v[0].id, "v000_c0");
        assert_eq!(v[1].id, "v001_c0");
        assert_ne!(v[0].frames[0], v[1].frames[0]);
        let m0 = ClassMotion::new(0, 1);
        let m1 = ClassMotion::new(0, 1);
        assert_eq!((m0.program, m0.speed), (m1.program, m1.speed));
    }

    #[test]
    fn frames_change_over_time() {
        let v = synth_corpus(4, 4, 3, (16, 16), 2);
        for vid in &v {
            assert!(vid.frames[0].max_abs_diff(&vid.frames[2]) > 1e-3);
        }
    }
}
