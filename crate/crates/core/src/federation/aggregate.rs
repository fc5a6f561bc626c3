use crate::error::{contract, Result};
use crate::numcore::ParamVector;

/// Sample-count weighted mean of client models: `Σ N_j w_j / Σ N_j`.
pub fn fedavg_aggregate(updates: &[(ParamVector, usize)]) -> Result<ParamVector> {
    contract!(!updates.is_empty(), "nothing to aggregate");
    let first = &updates[0].0;
    for (p, n) in updates {
        contract!(*n > 0, "client update with zero samples");
        contract!(p.is_compatible(first), "client updates have different layouts");
    }
    let total: f64 = updates.iter().map(|(_, n)| *n as f64).sum();
    let mut out = ParamVector::zeros(first.layout().clone());
    for (p, n) in updates {
        out.axpy(*n as f64 / total, p)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_segments(vec![("w", vec![v.len()], v.to_vec())]).unwrap()
    }

    #[test]
    fn single_client_verbatim() {
        let p = pv(&[0.1, -2.5, 3.0]);
        assert_eq!(fedavg_aggregate(&[(p.clone(), 7)]).unwrap(), p);
    }

    #[test]
    fn weighted_example() {
        let out = fedavg_aggregate(&[(pv(&[2.0]), 1), (pv(&[6.0]), 3)]).unwrap();
        assert!((out.values()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_mismatch_rejected() {
        assert!(fedavg_aggregate(&[]).is_err());
        assert!(fedavg_aggregate(&[(pv(&[1.0]), 1), (pv(&[1.0, 2.0]), 1)]).is_err());
        assert!(fedavg_aggregate(&[(pv(&[1.0]), 0)]).is_err());
    }
}
