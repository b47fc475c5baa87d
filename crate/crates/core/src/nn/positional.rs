use ndarray::Array2;

use crate::error::{Error, Result};

/// Fixed sinusoidal position table:
/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn sinusoidal_positions(length: usize, d_model: usize) -> Result<Array2<f64>> {
    if d_model < 2 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional width must be even and at least 2, got {d_model}"
        )));
    }
    if length == 0 {
        return Err(Error::Config("positional table length must be at least 1".into()));
    }
    let mut pe = Array2::zeros((length, d_model));
    for pos in 0..length {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
            pe[[pos, 2 * i]] = angle.sin();
            pe[[pos, 2 * i + 1]] = angle.cos();
        }
    }
    Ok(pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_alternates_zero_one() {
        let pe = sinusoidal_positions(4, 8).unwrap();
        for c in 0..8 {
            let want = if c % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe[[0, c]], want);
        }
    }

    #[test]
    fn second_row_first_column_is_sin_one() {
        let pe = sinusoidal_positions(2, 16).unwrap();
        assert!((pe[[1, 0]] - 0.841_470_984_8).abs() < 1e-10);
    }

    #[test]
    fn entries_bounded() {
        let pe = sinusoidal_positions(300, 32).unwrap();
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn odd_width_rejected() {
        assert!(matches!(sinusoidal_positions(3, 7), Err(Error::Config(_))));
        assert!(sinusoidal_positions(0, 8).is_err());
    }
}
