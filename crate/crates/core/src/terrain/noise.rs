//! Seeded value noise (smoothed lattice noise).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One octave of lattice noise with smoothstep interpolation.
struct Octave {
    spacing: f64,
    amplitude: f64,
    cols: usize,
    values: Vec<f64>,
}

impl Octave {
    fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = x / self.spacing;
        let fy = y / self.spacing;
        let ix = fx.floor() as usize;
        let iy = fy.floor() as usize;
        let tx = smoothstep(fx - ix as f64);
        let ty = smoothstep(fy - iy as f64);
        let at = |i: usize, j: usize| self.values[j * self.cols + i];
        let a = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let b = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        self.amplitude * (a * (1.0 - ty) + b * ty)
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Multi-octave value noise over `[0, length] x [0, width]`.
pub struct ValueNoise {
    octaves: Vec<Octave>,
}

impl ValueNoise {
    /// Each octave halves the lattice spacing and the amplitude.
    pub fn new(seed: u64, length: f64, width: f64, base_spacing: f64, octaves: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let octaves = (0..octaves.max(1))
            .map(|k| {
                let spacing = base_spacing / (1u32 << k) as f64;
                let cols = (length / spacing).ceil() as usize + 2;
                let rows = (width / spacing).ceil() as usize + 2;
                let values = (0..cols * rows).map(|_| rng.random_range(-1.0..=1.0)).collect();
                Octave {
                    spacing,
                    amplitude: 0.5f64.powi(k as i32),
                    cols,
                    values,
                }
            })
            .collect();
        Self { octaves }
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        self.octaves.iter().map(|o| o.sample(x.max(0.0), y.max(0.0))).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_points_reproduce_stored_values() {
        let n = ValueNoise::new(3, 4.0, 2.0, 1.0, 1);
        let o = &n.octaves[0];
        assert_eq!(n.sample(2.0, 1.0), o.values[o.cols + 2]);
    }

    #[test]
    fn same_seed_same_field() {
        let a = ValueNoise::new(9, 8.0, 4.0, 1.0, 2);
        let b = ValueNoise::new(9, 8.0, 4.0, 1.0, 2);
        for k in 0..50 {
            let x = k as f64 * 0.153;
            assert_eq!(a.sample(x, x * 0.4).to_bits(), b.sample(x, x * 0.4).to_bits());
        }
    }
}
