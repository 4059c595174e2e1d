use clothsr_core::{TriMesh, Vec3};

use crate::error::{NetError, Result};

/// `10·log10(1/MSE)` for images in `[0, 1]`; identical inputs give `+∞`.
pub fn psnr(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NetError::Precondition(format!(
            "psnr over {} and {} samples",
            pred.len(),
            target.len()
        )));
    }
    let mse = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean squared vertex distance.
pub fn vmse(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(NetError::Precondition(format!("vmse over {} and {} vertices", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>() / a.len() as f64)
}

pub fn vmse_mesh(a: &TriMesh, b: &TriMesh) -> Result<f64> {
    vmse(&a.positions, &b.positions)
}

/// Report formatting for PSNR, with the `inf` sentinel spelled out.
pub fn fmt_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = vec![0.25; 100];
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b: Vec<f64> = a.iter().map(|x| x + 0.01).collect();
        assert!((psnr(&a, &b).unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr(&a, &b[..10]).is_err());
        assert_eq!(fmt_psnr(f64::INFINITY), "inf");
    }

    #[test]
    fn vmse_closed_forms() {
        let a: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.5, -1.0)).collect();
        assert_eq!(vmse(&a, &a).unwrap(), 0.0);
        let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(0.01, 0.0, 0.0)).collect();
        assert!((vmse(&a, &b).unwrap() - 1e-4).abs() < 1e-15);
        assert!(vmse(&a, &b[..3]).is_err());
    }
}
