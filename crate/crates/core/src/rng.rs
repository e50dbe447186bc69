//! Seeded sampling. One 64-bit seed, independent ChaCha streams per purpose.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::spectral::{Field, SpectralBasis};

pub fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose);
    r
}

pub struct FieldSampler {
    rng: ChaCha8Rng,
}

impl FieldSampler {
    pub fn new(rng: ChaCha8Rng) -> Self {
        FieldSampler { rng }
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    /// Independent standard normals at every node.
    pub fn gaussian(&mut self, shape: (usize, usize)) -> Field {
        Field::from_fn(shape.0, shape.1, |_, _| self.rng.sample(StandardNormal))
    }

    /// `sum_{k <= kmax} g_k / k sin(k pi x)` (tensor index norm in 2D),
    /// normalized to unit discrete `L^2` norm. The coefficient draws depend
    /// only on the mode index, so the same seed gives the same function on
    /// every grid.
    pub fn sine_series(&mut self, basis: &SpectralBasis, kmax: usize, power: f64) -> Field {
        let dim = basis.dimension();
        let (n1, n2) = basis.shape();
        let mut c = basis.zeros();
        let k2max = if dim == 2 { kmax } else { 1 };
        for i in 1..=kmax {
            for j in 1..=k2max {
                let g: f64 = self.rng.sample(StandardNormal);
                if i <= n1 && j <= n2.max(1) {
                    let k = if dim == 2 {
                        ((i * i + j * j) as f64).sqrt()
                    } else {
                        i as f64
                    };
                    c[(i - 1, j - 1)] = g / k.powf(power);
                }
            }
        }
        let u = basis.from_modes(&c);
        let n = basis.norm(&u);
        if n > 0.0 {
            u / n
        } else {
            u
        }
    }
}
