//! Conversion between implicit ("same"/"valid") and numeric padding.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PaddingMode {
    Numeric(Vec<i64>),
    Same,
    Valid,
}

impl PaddingMode {
    pub fn from_name(name: &str) -> Option<PaddingMode> {
        match name {
            "same" => Some(PaddingMode::Same),
            "valid" => Some(PaddingMode::Valid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PaddingError {
    #[error("AsymmetricPadding: dimension {dim} needs {total} total padding, which cannot be split evenly")]
    AsymmetricPadding { dim: usize, total: i64 },
    #[error("padding arguments disagree on rank: {0}")]
    RankMismatch(String),
}

/// Spreads a one-entry per-dimension list over `rank` entries.
pub fn per_dim(values: &[i64], rank: usize) -> Option<Vec<i64>> {
    match values.len() {
        1 => Some(vec![values[0]; rank]),
        n if n == rank => Some(values.to_vec()),
        _ => None,
    }
}

/// Total padding a "same" convolution needs along one dimension.
pub fn same_total(input: i64, kernel: i64, stride: i64) -> i64 {
    let out = (input + stride - 1) / stride;
    ((out - 1) * stride + kernel - input).max(0)
}

/// Total padding a "same" transposed convolution needs (output = in·stride).
pub fn same_total_transposed(kernel: i64, stride: i64) -> i64 {
    (kernel - stride).max(0)
}

/// `floor((in + 2·pad − kernel) / stride) + 1`, or `None` when that is below 1.
pub fn conv_output_size(input: i64, kernel: i64, stride: i64, pad: i64) -> Option<i64> {
    let span = input + 2 * pad - kernel;
    if span < 0 || stride < 1 {
        return None;
    }
    Some(span / stride + 1)
}

/// Caffe's pooling size rule: rounds up, then drops a trailing window that
/// would start inside the padding.
pub fn pool_output_size_ceil(input: i64, kernel: i64, stride: i64, pad: i64) -> Option<i64> {
    let span = input + 2 * pad - kernel;
    if span < 0 || stride < 1 {
        return None;
    }
    let mut out = (span + stride - 1) / stride + 1;
    if pad > 0 && (out - 1) * stride >= input + pad {
        out -= 1;
    }
    Some(out)
}

/// Resolves `mode` to symmetric numeric padding for the given spatial
/// input dims. `kernel` and `stride` may hold one entry for every dim.
pub fn resolve_padding(
    mode: &PaddingMode,
    input: &[usize],
    kernel: &[i64],
    stride: &[i64],
) -> Result<Vec<i64>, PaddingError> {
    let rank = input.len();
    match mode {
        PaddingMode::Numeric(p) => {
            per_dim(p, rank).ok_or_else(|| PaddingError::RankMismatch(format!("{} pads for {rank} dims", p.len())))
        }
        PaddingMode::Valid => Ok(vec![0; rank]),
        PaddingMode::Same => {
            let (k, s) = kernel_stride(kernel, stride, rank)?;
            (0..rank).map(|d| split(d, same_total(input[d] as i64, k[d], s[d]))).collect()
        }
    }
}

/// Like [`resolve_padding`] for transposed convolution, where "same" means
/// output = input·stride. Needs no input shape.
pub fn resolve_padding_transposed(
    mode: &PaddingMode,
    kernel: &[i64],
    stride: &[i64],
    rank: usize,
) -> Result<Vec<i64>, PaddingError> {
    match mode {
        PaddingMode::Numeric(p) => {
            per_dim(p, rank).ok_or_else(|| PaddingError::RankMismatch(format!("{} pads for {rank} dims", p.len())))
        }
        PaddingMode::Valid => Ok(vec![0; rank]),
        PaddingMode::Same => {
            let (k, s) = kernel_stride(kernel, stride, rank)?;
            (0..rank).map(|d| split(d, same_total_transposed(k[d], s[d]))).collect()
        }
    }
}

fn kernel_stride(kernel: &[i64], stride: &[i64], rank: usize) -> Result<(Vec<i64>, Vec<i64>), PaddingError> {
    let k = per_dim(kernel, rank)
        .ok_or_else(|| PaddingError::RankMismatch(format!("{} kernel dims for {rank} input dims", kernel.len())))?;
    let s = per_dim(stride, rank)
        .ok_or_else(|| PaddingError::RankMismatch(format!("{} strides for {rank} input dims", stride.len())))?;
    Ok((k, s))
}

fn split(dim: usize, total: i64) -> Result<i64, PaddingError> {
    if total % 2 == 0 {
        Ok(total / 2)
    } else {
        Err(PaddingError::AsymmetricPadding { dim, total })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_3x3_on_224() {
        assert_eq!(resolve_padding(&PaddingMode::Same, &[224, 224], &[3], &[1]).unwrap(), [1, 1]);
    }

    #[test]
    fn same_even_kernel_is_asymmetric() {
        assert_eq!(
            resolve_padding(&PaddingMode::Same, &[224], &[2], &[1]),
            Err(PaddingError::AsymmetricPadding { dim: 0, total: 1 })
        );
    }

    #[test]
    fn valid_is_zero() {
        assert_eq!(resolve_padding(&PaddingMode::Valid, &[7, 9], &[3], &[2]).unwrap(), [0, 0]);
    }

    #[test]
    fn ceil_rule_matches_caffe() {
        // AlexNet pool1: 55 -> 27 (k3 s2); GoogLeNet pool1: 112 -> 56.
        assert_eq!(pool_output_size_ceil(55, 3, 2, 0), Some(27));
        assert_eq!(pool_output_size_ceil(112, 3, 2, 0), Some(56));
        assert_eq!(conv_output_size(112, 3, 2, 0), Some(55));
        // The last window would start in the padding and is dropped.
        assert_eq!(pool_output_size_ceil(5, 2, 2, 1), Some(3));
    }
}
