//! Stateless derivation of RNG streams from a master seed.
//!
//! Every random draw in the pipeline uses a seed derived from the run seed
//! plus a tag path (epoch, sample index, purpose). Streams are therefore
//! independent of execution order, which makes checkpoint resume and batched
//! evaluation bit-reproducible.

/// splitmix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a tag path.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = mix(master ^ 0x51ed_270b_a5e6_3abc);
    for &t in tags {
        state = mix(state ^ t.wrapping_mul(0x2545_f491_4f6c_dd1d));
    }
    state
}

/// Stable numeric tags for the pipeline's RNG purposes.
pub mod stream {
    pub const DATASET: u64 = 1;
    pub const GEOMETRY_CLOUD: u64 = 2;
    pub const SURFACE_POINTS: u64 = 3;
    pub const VOLUME_POINTS: u64 = 4;
    pub const STENCIL: u64 = 5;
    pub const PARAM_INIT: u64 = 6;
    pub const VALIDATION: u64 = 7;
    pub const EVAL: u64 = 8;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_deterministic_and_tag_sensitive() {
        let a = derive_seed(42, &[1, 2, 3]);
        let b = derive_seed(42, &[1, 2, 3]);
        let c = derive_seed(42, &[1, 3, 2]);
        let d = derive_seed(43, &[1, 2, 3]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
