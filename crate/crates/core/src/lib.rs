//! Simulation engine for large-scale brain network models.
//!
//! A brain network model couples neural-mass dynamics through a sparse,
//! delay-weighted structural connectome. This crate provides:
//!
//! * [`connectome`] — loading, validating, lesioning and sparsifying
//!   structural connectomes stored in the plaintext-zip exchange format.
//! * [`dsl`] — an XML model language parsed and compiled to a stack-machine
//!   bytecode kernel, plus the built-in model registry with hand-written
//!   native kernels.
//! * [`engine`] — ring-buffer delay history, coupling accumulation,
//!   stochastic Euler-Maruyama / Heun integration, deterministic
//!   multi-worker runs and parameter sweeps.
//! * [`observables`] — monitors (raw, temporal average, BOLD, EEG
//!   projection) and analyses (functional connectivity, FC fit,
//!   seizure-zone classification).
//! * [`cosim`] — window-synchronized macro/micro co-simulation against a
//!   small spiking network over in-process or socket transports.
//!
//! Everything random flows from explicit seeds through counter-based
//! generators, so results are bit-identical across repeated runs and across
//! worker counts.

// Validation writes `!(x > 0.0)` on purpose so NaN fails the check; the
// Lanczos coefficients keep their published digit counts; stencil loops
// index several arrays at once.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::excessive_precision,
    clippy::needless_range_loop
)]

pub mod connectome;
pub mod cosim;
pub mod dsl;
pub mod engine;
pub mod observables;
pub mod rng;

#[cfg(feature = "testref")]
pub mod testref;

/// 64-bit FNV-1a over a byte stream. Used for run checksums and derived
/// sweep seeds; a regression-detection device, not cryptography.
pub fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Checksum of an f64 slice as the FNV-1a of its canonical little-endian
/// byte stream.
pub fn checksum_f64(values: &[f64]) -> u64 {
    fnv1a64(values.iter().flat_map(|v| v.to_le_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_known_vectors() {
        // Standard FNV-1a test vectors.
        assert_eq!(fnv1a64([]), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(*b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(*b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn checksum_distinguishes_sign_of_zero() {
        assert_ne!(checksum_f64(&[0.0]), checksum_f64(&[-0.0]));
    }
}
