use crate::scalar::Scalar;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn checksum_values<'a, F: Scalar, I: IntoIterator<Item = &'a F>>(values: I) -> u64 {
    let mut buf = Vec::new();
    for v in values {
        v.write_le(&mut buf);
    }
    fnv1a(&buf)
}
