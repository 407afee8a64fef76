use super::RasterImage;
use crate::{Error, Result};

pub const DEFAULT_LO_DB: f64 = -25.0;
pub const DEFAULT_HI_DB: f64 = 5.0;

/// Clips backscatter in dB to `[lo_db, hi_db]` and maps it affinely onto `[0, 1]`.
pub fn normalize_db(raster: &RasterImage, lo_db: f64, hi_db: f64) -> Result<RasterImage> {
    if !lo_db.is_finite() || !hi_db.is_finite() || lo_db >= hi_db {
        return Err(Error::Config(format!("normalization bounds must satisfy lo < hi, got [{lo_db}, {hi_db}]")));
    }
    let span = hi_db - lo_db;
    let data = raster.data().iter().map(|&v| ((v.clamp(lo_db, hi_db) - lo_db) / span).clamp(0.0, 1.0)).collect();
    RasterImage::new(raster.height(), raster.width(), data)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn one(v: f64) -> f64 {
        let r = RasterImage::filled(1, 1, v).unwrap();
        normalize_db(&r, DEFAULT_LO_DB, DEFAULT_HI_DB).unwrap().data()[0]
    }

    #[test]
    fn endpoints_midpoint_and_clipping() {
        assert_eq!(one(-25.0), 0.0);
        assert_eq!(one(5.0), 1.0);
        assert_eq!(one(-10.0), 0.5);
        assert_eq!(one(-40.0), 0.0);
        assert_eq!(one(12.0), 1.0);
    }

    #[test]
    fn reversed_bounds_rejected() {
        let r = RasterImage::filled(2, 2, 0.0).unwrap();
        assert!(matches!(normalize_db(&r, 5.0, -25.0), Err(Error::Config(_))));
        assert!(matches!(normalize_db(&r, 1.0, 1.0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn monotone_into_unit_interval(a in -100.0f64..100.0, b in -100.0f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (x, y) = (one(lo), one(hi));
            prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
            prop_assert!(x <= y);
        }
    }
}
