use half::bf16;

use crate::layout::DistilledSet;

/// Rounds to the nearest bfloat16 (ties to even) and widens back.
#[inline]
pub fn bf16_round(x: f32) -> f32 {
    bf16::from_f32(x).to_f32()
}

pub fn bf16_round_slice(values: &mut [f32]) {
    for v in values {
        *v = bf16_round(*v);
    }
}

/// Quantized copy of the set for the forward pass. Gradients computed on
/// the copy are applied to the full-precision masters unchanged.
pub fn bf16_cast(set: &DistilledSet) -> DistilledSet {
    let mut out = set.clone();
    bf16_round_slice(&mut out.params);
    out
}
