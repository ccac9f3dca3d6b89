//! Foveated sampling lattices: concentric rings of Gaussian kernels whose
//! radius grows exponentially with eccentricity.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One ring of kernels at a fixed eccentricity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    /// Distance from the lattice center, in upsampled pixels.
    pub eccentricity: f64,
    pub count: usize,
    /// Angular offset of the first kernel, radians.
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub rings: Vec<RingSpec>,
    /// Place one kernel exactly at the lattice center.
    pub center_kernel: bool,
    /// Kernel radius at zero eccentricity.
    pub sigma0: f64,
    /// Exponential growth rate of the radius with eccentricity.
    pub gamma: f64,
    /// Lattice center (x, y) in pixel coordinates.
    pub origin: [f64; 2],
}

impl LatticeConfig {
    /// The retina lattice used for foveated CIFAR-10: 1038 kernels over the
    /// 96x96 upsampled image, radius `0.75 * exp(0.035 e)`.
    ///
    /// Rings are laid out outward from the fovea; each ring sits `1.43` radii
    /// beyond the previous one and holds as many kernels as fit around its
    /// circumference at that same spacing. Odd rings are rotated by half a
    /// step.
    pub fn retina() -> Self {
        Self::ring_law(0.75, 0.035, 1.43, 52.0, [47.5, 47.5])
    }

    /// Rings generated by the spacing law described on [`LatticeConfig::retina`].
    pub fn ring_law(sigma0: f64, gamma: f64, spacing: f64, max_eccentricity: f64, origin: [f64; 2]) -> Self {
        let mut rings = Vec::new();
        let mut e = spacing * sigma0;
        while e <= max_eccentricity {
            let sigma = sigma0 * (gamma * e).exp();
            let count = ((TAU * e / (spacing * sigma)).round() as usize).max(4);
            let phase = if rings.len() % 2 == 1 {
                TAU / (2.0 * count as f64)
            } else {
                0.0
            };
            rings.push(RingSpec {
                eccentricity: e,
                count,
                phase,
            });
            e += spacing * sigma;
        }
        Self {
            rings,
            center_kernel: true,
            sigma0,
            gamma,
            origin,
        }
    }

    pub fn kernel_count(&self) -> usize {
        self.rings.iter().map(|r| r.count).sum::<usize>() + usize::from(self.center_kernel)
    }

    pub fn sigma_at(&self, eccentricity: f64) -> f64 {
        self.sigma0 * (self.gamma * eccentricity).exp()
    }
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self::retina()
    }
}

/// Kernel centers and radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingLattice {
    /// (x, y) in pixel coordinates.
    pub centers: Vec<[f64; 2]>,
    pub sigmas: Vec<f64>,
    pub eccentricities: Vec<f64>,
}

impl SamplingLattice {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

pub fn build_retina_lattice(config: &LatticeConfig) -> Result<SamplingLattice> {
    if !(config.sigma0 > 0.0) || !config.sigma0.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "sigma0 must be positive, got {}",
            config.sigma0
        )));
    }
    if !(config.gamma >= 0.0) || !config.gamma.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "gamma must be nonnegative, got {}",
            config.gamma
        )));
    }
    for (r, ring) in config.rings.iter().enumerate() {
        if ring.count == 0 {
            return Err(Error::InvalidConfig(format!("ring {r} has zero kernels")));
        }
        if !(ring.eccentricity >= 0.0) || !ring.eccentricity.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "ring {r} has eccentricity {}",
                ring.eccentricity
            )));
        }
    }

    let [ox, oy] = config.origin;
    let n = config.kernel_count();
    let mut lattice = SamplingLattice {
        centers: Vec::with_capacity(n),
        sigmas: Vec::with_capacity(n),
        eccentricities: Vec::with_capacity(n),
    };
    if config.center_kernel {
        lattice.centers.push([ox, oy]);
        lattice.sigmas.push(config.sigma_at(0.0));
        lattice.eccentricities.push(0.0);
    }
    for ring in &config.rings {
        let sigma = config.sigma_at(ring.eccentricity);
        for j in 0..ring.count {
            let angle = TAU * j as f64 / ring.count as f64 + ring.phase;
            lattice.centers.push([
                ox + ring.eccentricity * angle.cos(),
                oy + ring.eccentricity * angle.sin(),
            ]);
            lattice.sigmas.push(sigma);
            lattice.eccentricities.push(ring.eccentricity);
        }
    }
    Ok(lattice)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lattice_has_1038_kernels() {
        let cfg = LatticeConfig::retina();
        assert_eq!(cfg.kernel_count(), 1038);
        let lattice = build_retina_lattice(&cfg).unwrap();
        assert_eq!(lattice.len(), 1038);
        assert_eq!(lattice.sigmas.len(), lattice.centers.len());
    }

    #[test]
    fn four_kernel_ring() {
        let cfg = LatticeConfig {
            rings: vec![RingSpec {
                eccentricity: 10.0,
                count: 4,
                phase: 0.0,
            }],
            center_kernel: false,
            sigma0: 1.0,
            gamma: 0.0,
            origin: [0.0, 0.0],
        };
        let l = build_retina_lattice(&cfg).unwrap();
        let expected = [[10.0, 0.0], [0.0, 10.0], [-10.0, 0.0], [0.0, -10.0]];
        for (c, e) in l.centers.iter().zip(expected) {
            assert!((c[0] - e[0]).abs() < 1e-12 && (c[1] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn radius_increases_with_eccentricity() {
        let l = build_retina_lattice(&LatticeConfig::retina()).unwrap();
        for w in l.eccentricities.windows(2).zip(l.sigmas.windows(2)) {
            let (e, s) = w;
            if e[1] > e[0] {
                assert!(s[1] > s[0]);
            }
            assert!(s[0] > 0.0);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = LatticeConfig::retina();
        cfg.rings[0].count = 0;
        assert!(matches!(build_retina_lattice(&cfg), Err(Error::InvalidConfig(_))));
        let mut cfg = LatticeConfig::retina();
        cfg.rings[1].eccentricity = -1.0;
        assert!(build_retina_lattice(&cfg).is_err());
    }
}
