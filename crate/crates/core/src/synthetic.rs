//! Ground-truth orientation datasets for validation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bingham::sample_symmetric_bingham;
use crate::error::Result;
use crate::kde::sample_symmetric_dvp;
use crate::mixture::MixtureState;
use crate::quat::{euler_to_quat, EulerAngles, SymmetryGroup, UnitQuaternion};

pub const SANTAFE_WEIGHT: f64 = 0.27;
pub const SANTAFE_KAPPA: f64 = 80.0;
/// Bunge angles of the kernel center, degrees.
pub const SANTAFE_CENTER_DEG: [f64; 3] = [60.0, 54.7, 45.0];

/// How a synthetic dataset was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroundTruth {
    /// Kernel component with weight `weight`, uniform otherwise.
    Santafe {
        weight: f64,
        kappa: f64,
        center_euler_deg: [f64; 3],
        center: [f64; 4],
        crystal: String,
        specimen: String,
    },
    Sbm {
        state: MixtureState,
        crystal: String,
        specimen: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub observations: Vec<UnitQuaternion>,
    /// Component index of each draw (0 = concentrated for Santafe data).
    pub labels: Vec<usize>,
    pub truth: GroundTruth,
    pub seed: Option<u64>,
}

pub fn santafe_center() -> UnitQuaternion {
    let [a, b, c] = SANTAFE_CENTER_DEG;
    euler_to_quat(EulerAngles::from_degrees(a, b, c).expect("center angles in range"))
}

/// `n` draws: with probability 0.27 from the kernel symmetrized over
/// cubic-24 × `specimen`, otherwise uniform.
pub fn santafe_generate<R: Rng + ?Sized>(n: usize, specimen: &SymmetryGroup, rng: &mut R) -> Result<SyntheticData> {
    let qc = SymmetryGroup::named("cubic-24")?;
    let center = santafe_center();
    let mut observations = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random::<f64>() < SANTAFE_WEIGHT {
            observations.push(sample_symmetric_dvp(center, SANTAFE_KAPPA, &qc, specimen, rng));
            labels.push(0);
        } else {
            observations.push(UnitQuaternion::random(rng));
            labels.push(1);
        }
    }
    Ok(SyntheticData {
        observations,
        labels,
        truth: GroundTruth::Santafe {
            weight: SANTAFE_WEIGHT,
            kappa: SANTAFE_KAPPA,
            center_euler_deg: SANTAFE_CENTER_DEG,
            center: center.to_array(),
            crystal: qc.name().to_string(),
            specimen: specimen.name().to_string(),
        },
        seed: None,
    })
}

/// `n` draws from a symmetric Bingham mixture.
pub fn sbm_generate<R: Rng + ?Sized>(
    n: usize,
    state: &MixtureState,
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    rng: &mut R,
) -> SyntheticData {
    let mut observations = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut m = state.m() - 1;
        for (i, a) in state.alpha().iter().enumerate() {
            acc += a;
            if u < acc {
                m = i;
                break;
            }
        }
        observations.push(sample_symmetric_bingham(&state.components()[m], qc, qs, rng));
        labels.push(m);
    }
    SyntheticData {
        observations,
        labels,
        truth: GroundTruth::Sbm {
            state: state.clone(),
            crystal: qc.name().to_string(),
            specimen: qs.name().to_string(),
        },
        seed: None,
    }
}
