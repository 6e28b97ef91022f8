//! Counter-based deterministic random number generation.
//!
//! Every random quantity in the engine is a pure function of an explicit
//! key, never of evaluation order. A key is built by folding stream tags and
//! indices (node, step, variable, …) through the splitmix64 finalizer; the
//! resulting 64-bit state is then expanded into uniforms or Gaussians on
//! demand. This is what makes runs bit-identical across worker counts: no
//! generator state is ever shared between loop iterations.

/// Stream tags keep independent uses of the same user seed decorrelated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Noise = 1,
    Init = 2,
    Lesion = 3,
    Spikes = 4,
    Lif = 5,
    Sweep = 6,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds key components into a well-mixed 64-bit value.
#[inline]
pub fn mix_key(parts: &[u64]) -> u64 {
    let mut h = splitmix64(0x6c62_272e_07bb_0142);
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

/// The i-th raw 64-bit draw for a key, as a pure function of (key, i).
#[inline]
pub fn draw_u64(key: u64, i: u64) -> u64 {
    splitmix64(key ^ splitmix64(i))
}

/// Uniform in [0, 1): 53 mantissa bits of the draw.
#[inline]
pub fn draw_unit_f64(key: u64, i: u64) -> f64 {
    (draw_u64(key, i) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard Gaussian deviate for a key via Box-Muller. Pure function of the
/// key; consumes draws 0 and 1.
pub fn gaussian(key: u64) -> f64 {
    // Map the first draw into (0, 1] so ln() is finite.
    let u1 = 1.0 - draw_unit_f64(key, 0);
    let u2 = draw_unit_f64(key, 1);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Small sequential generator for places that genuinely need a stream
/// (shuffles, network wiring). Still derived from one key, so reproducible.
#[derive(Debug, Clone)]
pub struct KeyedRng {
    state: u64,
}

impl KeyedRng {
    pub fn new(stream: Stream, parts: &[u64]) -> Self {
        let mut all = Vec::with_capacity(parts.len() + 1);
        all.push(stream as u64);
        all.extend_from_slice(parts);
        KeyedRng {
            state: mix_key(&all),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        splitmix64(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi]; degenerate ranges return lo exactly.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            lo
        } else {
            lo + (hi - lo) * self.next_f64()
        }
    }

    /// Unbiased uniform integer in [0, n) by rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Chooses k distinct indices from 0..m uniformly at random (partial
    /// Fisher-Yates), returned in selection order.
    pub fn choose_k(&mut self, m: usize, k: usize) -> Vec<usize> {
        assert!(k <= m);
        let mut pool: Vec<usize> = (0..m).collect();
        let mut picked = Vec::with_capacity(k);
        for i in 0..k {
            let j = i + self.below((m - i) as u64) as usize;
            pool.swap(i, j);
            picked.push(pool[i]);
        }
        picked
    }
}

/// Gaussian noise deviate for a simulation step, keyed by
/// (seed, node, step, state variable). Independent of worker count and
/// evaluation order by construction.
#[inline]
pub fn noise_deviate(seed: u64, node: usize, step: u64, var: usize) -> f64 {
    gaussian(mix_key(&[
        Stream::Noise as u64,
        seed,
        node as u64,
        step,
        var as u64,
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_key() {
        let k = mix_key(&[1, 2, 3]);
        assert_eq!(draw_u64(k, 7), draw_u64(k, 7));
        assert_eq!(gaussian(k).to_bits(), gaussian(k).to_bits());
        assert_ne!(draw_u64(k, 0), draw_u64(k, 1));
    }

    #[test]
    fn distinct_keys_decorrelate() {
        let a = mix_key(&[Stream::Noise as u64, 42, 0, 0, 0]);
        let b = mix_key(&[Stream::Noise as u64, 42, 0, 0, 1]);
        assert_ne!(a, b);
        assert_ne!(gaussian(a).to_bits(), gaussian(b).to_bits());
    }

    #[test]
    fn gaussian_moments() {
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let z = gaussian(mix_key(&[99, i]));
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn choose_k_is_uniformish_and_distinct() {
        let mut rng = KeyedRng::new(Stream::Lesion, &[5]);
        let picked = rng.choose_k(10, 4);
        assert_eq!(picked.len(), 4);
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        // Full selection is a permutation.
        let mut all = rng.choose_k(6, 6);
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn uniform_mean_in_unit_interval() {
        let mut rng = KeyedRng::new(Stream::Init, &[1]);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| rng.uniform(0.0, 1.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }
}
