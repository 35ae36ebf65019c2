//! Unit quaternions, crystal/specimen symmetry groups and Bunge Euler angles.
//!
//! Convention: scalar-first `(w, x, y, z)`, Hamilton product, active rotations.
//! An orientation `g` and its negation `-g` describe the same rotation.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::fmt;
use std::ops::{Mul, Neg};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point on S³.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes `(w, x, y, z)` onto the unit sphere.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidQuaternion(w, x, y, z));
        }
        Ok(UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Builds a quaternion from components already known to be unit length
    /// (up to rounding); the result is renormalized.
    pub(crate) fn from_unit_array(a: [f64; 4]) -> Self {
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt();
        UnitQuaternion {
            w: a[0] / n,
            x: a[1] / n,
            y: a[2] / n,
            z: a[3] / n,
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::invalid("rotation axis must be nonzero"));
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Ok(Self::from_unit_array([
            c,
            s * axis[0] / n,
            s * axis[1] / n,
            s * axis[2] / n,
        ]))
    }

    /// Uniform draw on S³ (normalized Gaussian 4-vector).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            if let Ok(q) = Self::from_array(v) {
                return q;
            }
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn conjugate(self) -> Self {
        UnitQuaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn inverse(self) -> Self {
        self.conjugate()
    }

    /// Euclidean inner product in R⁴.
    pub fn dot(&self, other: &UnitQuaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Rotation angle of `self * other⁻¹` in `[0, π]`.
    pub fn angle_to(&self, other: &UnitQuaternion) -> f64 {
        2.0 * self.dot(other).abs().min(1.0).acos()
    }

    /// Equality as rotations: `self == ±other` within `tol` per component.
    pub fn approx_eq_rotation(&self, other: &UnitQuaternion, tol: f64) -> bool {
        let a = self.to_array();
        let b = other.to_array();
        let same = a.iter().zip(&b).all(|(p, q)| (p - q).abs() <= tol);
        let flipped = a.iter().zip(&b).all(|(p, q)| (p + q).abs() <= tol);
        same || flipped
    }

    /// Representative with `w >= 0`.
    pub fn positive_hemisphere(self) -> Self {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    /// The 4×4 matrix `L(a)` with `L(a) b = a * b`.
    pub fn left_matrix(&self) -> [[f64; 4]; 4] {
        let [w, x, y, z] = self.to_array();
        [[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]]
    }

    /// The 4×4 matrix `R(b)` with `R(b) a = a * b`.
    pub fn right_matrix(&self) -> [[f64; 4]; 4] {
        let [w, x, y, z] = self.to_array();
        [[w, -x, -y, -z], [x, w, z, -y], [y, -z, w, x], [z, y, -x, w]]
    }

    /// Rotates a 3-vector: `v' = q v q⁻¹`.
    pub fn rotate_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let [w, x, y, z] = self.to_array();
        // t = 2 * (q_vec × v)
        let t = [
            2.0 * (y * v[2] - z * v[1]),
            2.0 * (z * v[0] - x * v[2]),
            2.0 * (x * v[1] - y * v[0]),
        ];
        [
            v[0] + w * t[0] + (y * t[2] - z * t[1]),
            v[1] + w * t[1] + (z * t[0] - x * t[2]),
            v[2] + w * t[2] + (x * t[1] - y * t[0]),
        ]
    }
}

/// Raw Hamilton product of two 4-vectors (no normalization).
#[inline]
pub(crate) fn hamilton(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Hamilton product, renormalized.
pub fn qmul(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion::from_unit_array(hamilton(a.to_array(), b.to_array()))
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        qmul(self, rhs)
    }
}

impl Neg for UnitQuaternion {
    type Output = UnitQuaternion;

    fn neg(self) -> UnitQuaternion {
        UnitQuaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Error;

    fn try_from(a: [f64; 4]) -> Result<Self> {
        Self::from_array(a)
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_array()
    }
}

impl fmt::Display for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

/// Names accepted by [`SymmetryGroup::named`].
pub const GROUP_CATALOG: [&str; 7] = [
    "identity",
    "cyclic-2",
    "orthorhombic",
    "tetragonal",
    "hexagonal",
    "cubic-24",
    "octahedral-48",
];

/// Finite set of rotations acting on orientations (crystal group on the left,
/// specimen group on the right).
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryGroup {
    name: String,
    elements: Vec<UnitQuaternion>,
}

impl SymmetryGroup {
    /// Looks up a catalog group.
    pub fn named(name: &str) -> Result<Self> {
        let s = FRAC_1_SQRT_2;
        let elements: Vec<[f64; 4]> = match name {
            "identity" => vec![[1.0, 0.0, 0.0, 0.0]],
            "cyclic-2" => vec![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
            "orthorhombic" => vec![
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            "tetragonal" => vec![
                [1.0, 0.0, 0.0, 0.0],
                [s, 0.0, 0.0, s],
                [0.0, 0.0, 0.0, 1.0],
                [s, 0.0, 0.0, -s],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, s, s, 0.0],
                [0.0, s, -s, 0.0],
            ],
            "hexagonal" => {
                let mut v = Vec::with_capacity(12);
                for k in 0..6 {
                    let (sn, cs) = (k as f64 * PI / 6.0).sin_cos();
                    v.push([cs, 0.0, 0.0, sn]);
                }
                for k in 0..6 {
                    let (sn, cs) = (k as f64 * PI / 6.0).sin_cos();
                    v.push([0.0, cs, sn, 0.0]);
                }
                v
            }
            "cubic-24" => cubic_rotations(),
            "octahedral-48" => {
                let mut v = cubic_rotations();
                let negated: Vec<[f64; 4]> =
                    v.iter().map(|q| [-q[0], -q[1], -q[2], -q[3]]).collect();
                v.extend(negated);
                v
            }
            _ => {
                return Err(Error::UnknownGroup {
                    name: name.to_string(),
                    valid: GROUP_CATALOG.to_vec(),
                })
            }
        };
        Ok(SymmetryGroup {
            name: name.to_string(),
            elements: elements
                .into_iter()
                .map(UnitQuaternion::from_unit_array)
                .collect(),
        })
    }

    pub fn identity() -> Self {
        Self::named("identity").expect("catalog group")
    }

    /// Builds a custom group and validates identity, closure and distinctness.
    pub fn from_elements(name: &str, elements: Vec<UnitQuaternion>) -> Result<Self> {
        let g = SymmetryGroup {
            name: name.to_string(),
            elements,
        };
        g.validate(false)?;
        Ok(g)
    }

    /// Reads a custom group: one quaternion per line, four whitespace-separated
    /// decimals. Blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut elements = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(e.to_string()))?;
            if vals.len() != 4 {
                return Err(parse_err(format!("expected 4 values, found {}", vals.len())));
            }
            let q = UnitQuaternion::new(vals[0], vals[1], vals[2], vals[3])
                .map_err(|e| parse_err(e.to_string()))?;
            elements.push(q);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::from_elements(&name, elements)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn elements(&self) -> &[UnitQuaternion] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Checks the group axioms up to sign. `allow_double_cover` permits
    /// elements that coincide up to sign (the binary-cover listing).
    pub fn validate(&self, allow_double_cover: bool) -> Result<()> {
        const TOL: f64 = 1e-9;
        let fail = |reason: String| Error::InvalidGroup {
            name: self.name.clone(),
            reason,
        };
        if self.elements.is_empty() {
            return Err(fail("group is empty".into()));
        }
        if !self
            .elements
            .iter()
            .any(|e| e.approx_eq_rotation(&UnitQuaternion::IDENTITY, TOL))
        {
            return Err(fail("identity element missing".into()));
        }
        if !allow_double_cover {
            for (i, a) in self.elements.iter().enumerate() {
                for b in &self.elements[i + 1..] {
                    if a.approx_eq_rotation(b, TOL) {
                        return Err(fail(format!("duplicate element {a} (up to sign)")));
                    }
                }
            }
        }
        for a in &self.elements {
            for b in &self.elements {
                let c = *a * *b;
                if !self.elements.iter().any(|e| e.approx_eq_rotation(&c, TOL)) {
                    return Err(fail(format!("not closed: {a} * {b} = {c}")));
                }
            }
        }
        Ok(())
    }
}

fn cubic_rotations() -> Vec<[f64; 4]> {
    let s = FRAC_1_SQRT_2;
    let mut v = vec![
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    // 90° about the coordinate axes
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut q = [s, 0.0, 0.0, 0.0];
            q[axis + 1] = sign * s;
            v.push(q);
        }
    }
    // 120° about the body diagonals
    for sx in [0.5, -0.5] {
        for sy in [0.5, -0.5] {
            for sz in [0.5, -0.5] {
                v.push([0.5, sx, sy, sz]);
            }
        }
    }
    // 180° about the face diagonals
    for (i, j) in [(1, 2), (1, 3), (2, 3)] {
        for sign in [1.0, -1.0] {
            let mut q = [0.0; 4];
            q[i] = s;
            q[j] = sign * s;
            v.push(q);
        }
    }
    v
}

/// All `J·K` products `q_c * g * q_s` in row-major `(j, k)` order; duplicates kept.
pub fn equivalence_class(
    g: UnitQuaternion,
    qc: &SymmetryGroup,
    qs: &SymmetryGroup,
) -> Vec<UnitQuaternion> {
    let mut out = Vec::with_capacity(qc.len() * qs.len());
    for c in qc.elements() {
        let cg = *c * g;
        for s in qs.elements() {
            out.push(cg * *s);
        }
    }
    out
}

const CANON_TOL: f64 = 1e-10;

// true when `a` ranks strictly above `b`: larger w, then larger x, y, z.
fn canon_ranks_above(a: &[f64; 4], b: &[f64; 4]) -> bool {
    for (p, q) in a.iter().zip(b) {
        if *p > q + CANON_TOL {
            return true;
        }
        if *p < q - CANON_TOL {
            return false;
        }
    }
    false
}

/// Fundamental-zone representative: the element of `±[g]` with the largest
/// `w`, ties broken lexicographically on `(x, y, z)`.
pub fn canonicalize(g: UnitQuaternion, qc: &SymmetryGroup, qs: &SymmetryGroup) -> UnitQuaternion {
    let mut best = g.positive_hemisphere().to_array();
    for e in equivalence_class(g, qc, qs) {
        for cand in [e, -e] {
            let c = cand.to_array();
            if canon_ranks_above(&c, &best) {
                best = c;
            }
        }
    }
    UnitQuaternion::from_unit_array(best)
}

/// Bunge (Z-X-Z) Euler angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub phi1: f64,
    /// The middle angle Φ.
    pub phi: f64,
    pub phi2: f64,
}

impl EulerAngles {
    /// Wraps `phi1`, `phi2` into `[0, 2π)`; `phi` must lie in `[0, π]`.
    pub fn new(phi1: f64, phi: f64, phi2: f64) -> Result<Self> {
        if !(phi1.is_finite() && phi.is_finite() && phi2.is_finite()) {
            return Err(Error::invalid("Euler angles must be finite"));
        }
        const SLACK: f64 = 1e-9;
        if !(-SLACK..=PI + SLACK).contains(&phi) {
            return Err(Error::invalid(format!("Phi = {phi} outside [0, pi]")));
        }
        Ok(EulerAngles {
            phi1: wrap_tau(phi1),
            phi: phi.clamp(0.0, PI),
            phi2: wrap_tau(phi2),
        })
    }

    pub fn from_degrees(phi1: f64, phi: f64, phi2: f64) -> Result<Self> {
        Self::new(phi1.to_radians(), phi.to_radians(), phi2.to_radians())
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [
            self.phi1.to_degrees(),
            self.phi.to_degrees(),
            self.phi2.to_degrees(),
        ]
    }
}

fn wrap_tau(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// `g = Rz(φ1) · Rx(Φ) · Rz(φ2)`.
pub fn euler_to_quat(e: EulerAngles) -> UnitQuaternion {
    let (sp, cp) = (0.5 * e.phi).sin_cos();
    let (ss, cs) = (0.5 * (e.phi1 + e.phi2)).sin_cos();
    let (sd, cd) = (0.5 * (e.phi1 - e.phi2)).sin_cos();
    UnitQuaternion::from_unit_array([cp * cs, sp * cd, sp * sd, cp * ss])
}

/// Inverse of [`euler_to_quat`] up to sign. At the gimbal points `Φ ∈ {0, π}`
/// the representative with `φ2 = 0` is returned.
pub fn quat_to_euler(g: UnitQuaternion) -> EulerAngles {
    const DEGENERATE: f64 = 1e-12;
    let [w, x, y, z] = g.to_array();
    let c = (w * w + z * z).sqrt();
    let s = (x * x + y * y).sqrt();
    let phi = 2.0 * s.atan2(c);
    let (phi1, phi2) = if s < DEGENERATE {
        (2.0 * z.atan2(w), 0.0)
    } else if c < DEGENERATE {
        (2.0 * y.atan2(x), 0.0)
    } else {
        let sum = z.atan2(w);
        let diff = y.atan2(x);
        (sum + diff, sum - diff)
    };
    EulerAngles {
        phi1: wrap_tau(phi1),
        phi: phi.clamp(0.0, PI),
        phi2: wrap_tau(phi2),
    }
}
