use crate::error::{param_err, Result};
use crate::tensor::CTensor;

/// Magnitude NRMSE `‖|x| − |ref|‖₂ / ‖ref‖₂`.
pub fn nrmse(x: &CTensor, reference: &CTensor) -> Result<f64> {
    nrmse_masked(x, reference, None)
}

/// NRMSE restricted to positions where `mask` is true.
pub fn nrmse_masked(x: &CTensor, reference: &CTensor, mask: Option<&[bool]>) -> Result<f64> {
    x.same_layout(reference)?;
    let (err, refn) = sums(x, reference, mask)?;
    if refn == 0.0 {
        return param_err("reference has zero norm");
    }
    Ok((err / refn).sqrt())
}

/// PSNR in dB referenced to `max |ref|`.
pub fn psnr(x: &CTensor, reference: &CTensor) -> Result<f64> {
    x.same_layout(reference)?;
    let (err, refn) = sums(x, reference, None)?;
    if refn == 0.0 {
        return param_err("reference has zero norm");
    }
    let peak = reference.max_abs();
    let mse = err / x.len() as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

fn sums(x: &CTensor, reference: &CTensor, mask: Option<&[bool]>) -> Result<(f64, f64)> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            return param_err(format!("metric mask has {} entries for {} values", m.len(), x.len()));
        }
    }
    let mut err = 0.0;
    let mut refn = 0.0;
    for (i, (a, b)) in x.data().iter().zip(reference.data()).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let d = a.norm() - b.norm();
        err += d * d;
        refn += b.norm_sqr();
    }
    Ok((err, refn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Axis, C64};

    fn t(vals: &[f64]) -> CTensor {
        CTensor::new(vec![Axis::Kx], vec![vals.len()], vals.iter().map(|&v| C64::new(v, v * 0.5)).collect()).unwrap()
    }

    #[test]
    fn basic_values() {
        let r = t(&[1.0, -2.0, 3.0, 0.5]);
        assert_eq!(nrmse(&r, &r).unwrap(), 0.0);
        assert!((nrmse(&t(&[0.0; 4]), &r).unwrap() - 1.0).abs() < 1e-15);
        assert!((nrmse(&r.scale(C64::new(1.1, 0.0)), &r).unwrap() - 0.1).abs() < 1e-12);
        assert!(psnr(&r, &r).unwrap().is_infinite());
        assert!(nrmse(&r, &t(&[0.0; 4])).is_err());
        assert!(nrmse(&t(&[1.0]), &r).is_err());
    }
}
