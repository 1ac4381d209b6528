//! Seeded 2-D gradient noise for the global terrain cost.

use crate::autodiff::Scalar;
use crate::rng::SeededRng;

const STREAM_PERMUTATION: u64 = 11;

const GRADIENTS: [(f64, f64); 8] = [
    (1.0, 1.0),
    (-1.0, 1.0),
    (1.0, -1.0),
    (-1.0, -1.0),
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
];

/// Classic lattice gradient noise with a seeded permutation table and
/// smoothstep fade.
#[derive(Debug, Clone)]
pub struct Perlin {
    perm: [u8; 512],
}

fn fade<S: Scalar>(t: &S) -> S {
    // 3t^2 - 2t^3
    let t2 = t.square();
    t2.clone() * 3.0 - t2 * t.clone() * 2.0
}

fn lerp<S: Scalar>(a: S, b: S, t: S) -> S {
    a.clone() + (b - a) * t
}

impl Perlin {
    pub fn new(seed: u64) -> Self {
        let mut table: Vec<u8> = (0..=255u8).collect();
        SeededRng::new(seed, STREAM_PERMUTATION).shuffle(&mut table);
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        Self { perm }
    }

    fn hash(&self, ix: i64, iy: i64) -> usize {
        let a = self.perm[(ix & 255) as usize] as usize;
        self.perm[(a + (iy & 255) as usize) & 511] as usize
    }

    fn corner<S: Scalar>(&self, ix: i64, iy: i64, dx: &S, dy: &S) -> S {
        let (gx, gy) = GRADIENTS[self.hash(ix, iy) & 7];
        dx.clone() * gx + dy.clone() * gy
    }

    /// Single octave.
    pub fn noise<S: Scalar>(&self, x: &S, y: &S) -> S {
        let x0 = x.floor();
        let y0 = y.floor();
        let ix = x0.value() as i64;
        let iy = y0.value() as i64;
        let fx = x.clone() - x0;
        let fy = y.clone() - y0;
        let fx1 = fx.clone() - 1.0;
        let fy1 = fy.clone() - 1.0;
        let n00 = self.corner(ix, iy, &fx, &fy);
        let n10 = self.corner(ix + 1, iy, &fx1, &fy);
        let n01 = self.corner(ix, iy + 1, &fx, &fy1);
        let n11 = self.corner(ix + 1, iy + 1, &fx1, &fy1);
        let u = fade(&fx);
        let v = fade(&fy);
        lerp(lerp(n00, n10, u.clone()), lerp(n01, n11, u), v)
    }

    /// Octave sum with persistence 0.5 and lacunarity 2, normalized by the
    /// total amplitude and clamped to `[-1, 1]`.
    pub fn fbm<S: Scalar>(&self, x: &S, y: &S, octaves: u32) -> S {
        let mut sum = S::constant(0.0);
        let mut amp = 1.0;
        let mut freq = 1.0;
        let mut norm = 0.0;
        for _ in 0..octaves {
            let n = self.noise(&(x.clone() * freq), &(y.clone() * freq));
            sum = sum + n * amp;
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        (sum * (1.0 / norm)).clamp(-1.0, 1.0)
    }
}
