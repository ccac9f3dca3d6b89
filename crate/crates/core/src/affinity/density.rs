use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mi::AffinityMatrix;
use crate::error::{invalid, Error, Result};

/// Eccentricities below this are raised to it before `q^-alpha`.
pub const ECCENTRICITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EccentricitySource {
    Lattice,
    None,
}

/// Per-dimension density `p(i) = q(i)^-alpha n(i)^beta`, rescaled to max 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityVector {
    pub p: Vec<f64>,
    pub q: Option<Vec<f64>>,
    /// Affinity mass `n(i) = sum_j A_ji`.
    pub n: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub source: EccentricitySource,
}

impl DensityVector {
    pub fn uniform(dims: usize) -> Self {
        Self {
            p: vec![1.0; dims],
            q: None,
            n: vec![0.0; dims],
            alpha: 0.0,
            beta: 0.0,
            source: EccentricitySource::None,
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

pub fn density(
    eccentricity: Option<&[f64]>,
    affinity: &AffinityMatrix,
    alpha: f64,
    beta: f64,
) -> Result<DensityVector> {
    let d = affinity.dim();
    if eccentricity.is_none() && alpha != 0.0 {
        return Err(invalid("alpha must be 0 without eccentricities"));
    }
    if let Some(q) = eccentricity {
        if q.len() != d {
            return Err(invalid(format!("{} eccentricities for {d} dimensions", q.len())));
        }
        if let Some(v) = q.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid(format!("eccentricity {v} is not a nonnegative number")));
        }
    }
    let a = affinity.values();
    let n: Vec<f64> = (0..d).map(|i| a.column(i).sum()).collect();

    let mut p = Vec::with_capacity(d);
    for i in 0..d {
        if beta != 0.0 && n[i] <= 0.0 {
            return Err(Error::DegenerateNode { index: i, beta });
        }
        let q_term = match eccentricity {
            Some(q) if alpha != 0.0 => q[i].max(ECCENTRICITY_FLOOR).powf(-alpha),
            _ => 1.0,
        };
        let n_term = if beta != 0.0 { n[i].powf(beta) } else { 1.0 };
        p.push(q_term * n_term);
    }
    let max = p.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::Numeric(format!("density maximum is {max}")));
    }
    p.iter_mut().for_each(|v| *v /= max);
    Ok(DensityVector {
        p,
        q: eccentricity.map(<[f64]>::to_vec),
        n,
        alpha,
        beta,
        source: if eccentricity.is_some() {
            EccentricitySource::Lattice
        } else {
            EccentricitySource::None
        },
    })
}

/// Writes `index,q,n,p` rows.
pub fn write_density_csv(path: impl AsRef<Path>, density: &DensityVector) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["index", "q", "n", "p"])?;
    for i in 0..density.len() {
        let q = density
            .q
            .as_ref()
            .map(|q| format!("{:e}", q[i]))
            .unwrap_or_default();
        w.write_record([
            i.to_string(),
            q,
            format!("{:e}", density.n[i]),
            format!("{:e}", density.p[i]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}
