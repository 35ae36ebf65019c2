//! Modal orientations by spherical k-means under crystal/specimen symmetry.
//!
//! The distance between an observation and a center is `1 − max |c·e|` over
//! the equivalence class of the observation, so clusters that straddle the
//! boundary of the fundamental zone are not split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bingham::{dot4, normalize4};
use crate::error::{Error, Result};
use crate::quat::{canonicalize, equivalence_class, SymmetryGroup, UnitQuaternion};

const RESTARTS: usize = 10;
const MAX_ITERS: usize = 100;

/// Cluster centers ordered by cluster size, largest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalOrientations(pub Vec<UnitQuaternion>);

impl ModalOrientations {
    pub fn get(&self, m: usize) -> UnitQuaternion {
        self.0[m.min(self.0.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Seed derived from the sorted canonical observations, so the result does not
/// depend on input order.
fn data_seed(points: &[[f64; 4]]) -> u64 {
    let mut h = Sha256::new();
    for p in points {
        for c in p {
            h.update(c.to_le_bytes());
        }
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

struct Clustering {
    centers: Vec<[f64; 4]>,
    sizes: Vec<usize>,
    cost: f64,
}

fn nearest(classes: &[Vec<[f64; 4]>], i: usize, c: &[f64; 4]) -> (f64, [f64; 4]) {
    let mut best = -1.0;
    let mut rep = classes[i][0];
    for e in &classes[i] {
        let d = dot4(e, c);
        if d.abs() > best {
            best = d.abs();
            rep = if d < 0.0 { e.map(|x| -x) } else { *e };
        }
    }
    (1.0 - best, rep)
}

fn kmeans_once(classes: &[Vec<[f64; 4]>], k: usize, rng: &mut ChaCha8Rng) -> Clustering {
    let n = classes.len();
    // k-means++ seeding
    let mut centers = vec![classes[rng.random_range(0..n)][0]];
    let mut dist: Vec<f64> = (0..n).map(|i| nearest(classes, i, &centers[0]).0).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = classes[pick][0];
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(nearest(classes, i, &c).0);
        }
        centers.push(c);
    }

    let mut assign = vec![usize::MAX; n];
    let mut cost = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let mut sums = vec![[0.0; 4]; k];
        let mut sizes = vec![0usize; k];
        let mut changed = false;
        let mut new_cost = 0.0;
        let mut worst = (0usize, -1.0);
        for i in 0..n {
            let (mut bd, mut bm, mut brep) = (f64::INFINITY, 0, [0.0; 4]);
            for (m, c) in centers.iter().enumerate() {
                let (d, rep) = nearest(classes, i, c);
                if d < bd {
                    (bd, bm, brep) = (d, m, rep);
                }
            }
            if assign[i] != bm {
                changed = true;
                assign[i] = bm;
            }
            new_cost += bd;
            if bd > worst.1 {
                worst = (i, bd);
            }
            sizes[bm] += 1;
            for (s, r) in sums[bm].iter_mut().zip(brep) {
                *s += r;
            }
        }
        cost = new_cost;
        for m in 0..k {
            if sizes[m] == 0 {
                // reseed an empty cluster at the worst-fit observation
                centers[m] = classes[worst.0][0];
                changed = true;
            } else if dot4(&sums[m], &sums[m]) > 0.0 {
                centers[m] = normalize4(sums[m]);
            }
        }
        if !changed {
            break;
        }
    }
    let mut sizes = vec![0usize; k];
    for a in &assign {
        sizes[*a] += 1;
    }
    Clustering {
        centers,
        sizes,
        cost,
    }
}

/// `m_max` modal orientations of the data, canonicalized and ordered by
/// cluster size (ties by center order).
pub fn modal_orientations(
    observations: &[UnitQuaternion],
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
    m_max: usize,
) -> Result<ModalOrientations> {
    if m_max == 0 {
        return Err(Error::invalid("need at least one modal orientation"));
    }
    if observations.len() < m_max {
        return Err(Error::invalid(format!(
            "{} observations cannot define {m_max} modal orientations",
            observations.len()
        )));
    }
    let mut canon: Vec<[f64; 4]> = observations
        .iter()
        .map(|g| canonicalize(*g, qc, qs).to_array())
        .collect();
    canon.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let classes: Vec<Vec<[f64; 4]>> = canon
        .iter()
        .map(|c| {
            equivalence_class(UnitQuaternion::from_unit_array(*c), qc, qs)
                .into_iter()
                .map(|q| q.to_array())
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed(&canon));
    let mut best: Option<Clustering> = None;
    for _ in 0..RESTARTS {
        let c = kmeans_once(&classes, m_max, &mut rng);
        if best.as_ref().is_none_or(|b| c.cost < b.cost) {
            best = Some(c);
        }
    }
    let best = best.expect("at least one restart");
    let mut order: Vec<usize> = (0..m_max).collect();
    order.sort_by(|a, b| best.sizes[*b].cmp(&best.sizes[*a]));
    Ok(ModalOrientations(
        order
            .into_iter()
            .map(|m| canonicalize(UnitQuaternion::from_unit_array(best.centers[m]), qc, qs))
            .collect(),
    ))
}
