//! Atoms, contracted s-type Gaussian shells, synthetic clusters and
//! Hilbert-curve shell ordering.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = [f64; 3];

/// Ångström to Bohr.
pub const ANGSTROM_TO_BOHR: f64 = 1.8897259886;

/// Liquid water at STP: 0.0334 molecules per Å³, expressed per Bohr³.
pub const WATER_NUMBER_DENSITY: f64 =
    0.0334 / (ANGSTROM_TO_BOHR * ANGSTROM_TO_BOHR * ANGSTROM_TO_BOHR);

/// O–H bond length of the synthetic water monomer, Bohr.
pub const OH_DISTANCE: f64 = 1.81;
/// H–O–H angle of the synthetic water monomer, degrees.
pub const HOH_ANGLE_DEG: f64 = 104.5;
/// Minimum distance between heavy centers of different molecules, Bohr.
pub const MIN_HEAVY_DISTANCE: f64 = 4.0;
/// Minimum distance between any two atoms of different molecules, Bohr.
pub const MIN_INTERMOLECULAR_DISTANCE: f64 = 2.5;

#[inline]
pub fn distance_sq(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    distance_sq(a, b).sqrt()
}

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported element '{element}' at line {line}")]
    UnsupportedElement { element: String, line: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub element: String,
    /// Bohr.
    pub position: Vec3,
}

/// A normalized primitive: `coefficient` already includes `(2α/π)^¾` and
/// the contraction renormalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub exponent: f64,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianShell {
    pub center: Vec3,
    pub primitives: Vec<Primitive>,
    pub function_offset: usize,
    /// Index of the owning atom in [`BasisSystem::atoms`].
    pub atom: usize,
}

impl GaussianShell {
    /// Builds a normalized contracted s shell from `(exponent, coefficient)`
    /// pairs given for normalized primitives.
    pub fn new(center: Vec3, contraction: &[(f64, f64)]) -> Result<Self, BasisError> {
        if contraction.is_empty() {
            return Err(BasisError::InvalidArgument(
                "shell without primitives".into(),
            ));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(BasisError::InvalidArgument(format!(
                "non-finite shell center {center:?}"
            )));
        }
        let mut primitives = Vec::with_capacity(contraction.len());
        for &(exponent, coefficient) in contraction {
            if !(exponent > 0.0) || !exponent.is_finite() {
                return Err(BasisError::InvalidArgument(format!(
                    "exponent must be > 0, got {exponent}"
                )));
            }
            if !coefficient.is_finite() {
                return Err(BasisError::InvalidArgument(format!(
                    "non-finite coefficient {coefficient}"
                )));
            }
            primitives.push(Primitive {
                exponent,
                coefficient: coefficient * (2.0 * exponent / PI).powf(0.75),
            });
        }
        let mut self_overlap = 0.0;
        for a in &primitives {
            for b in &primitives {
                self_overlap +=
                    a.coefficient * b.coefficient * (PI / (a.exponent + b.exponent)).powf(1.5);
            }
        }
        if !(self_overlap > 0.0) {
            return Err(BasisError::InvalidArgument(
                "contraction has zero norm".into(),
            ));
        }
        let scale = self_overlap.sqrt().recip();
        for p in &mut primitives {
            p.coefficient *= scale;
        }
        Ok(GaussianShell {
            center,
            primitives,
            function_offset: 0,
            atom: 0,
        })
    }

    /// Functions carried by the shell; always 1 for s shells.
    pub fn n_functions(&self) -> usize {
        1
    }
}

/// Ordered shells on a set of atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSystem {
    pub atoms: Vec<Atom>,
    pub shells: Vec<GaussianShell>,
}

impl BasisSystem {
    /// Attaches shells from `table` to every atom, in atom order.
    pub fn from_atoms(atoms: Vec<Atom>, table: &ShellTable) -> Result<Self, BasisError> {
        let mut shells = Vec::new();
        for (i, atom) in atoms.iter().enumerate() {
            let spec = table
                .get(&atom.element)
                .ok_or_else(|| BasisError::UnsupportedElement {
                    element: atom.element.clone(),
                    line: 0,
                })?;
            for contraction in spec {
                let mut shell = GaussianShell::new(atom.position, contraction)?;
                shell.atom = i;
                shells.push(shell);
            }
        }
        let mut system = BasisSystem { atoms, shells };
        system.renumber();
        Ok(system)
    }

    pub fn n_functions(&self) -> usize {
        self.shells.iter().map(GaussianShell::n_functions).sum()
    }

    pub fn n_shells(&self) -> usize {
        self.shells.len()
    }

    /// Recomputes contiguous function offsets in shell order.
    pub fn renumber(&mut self) {
        let mut offset = 0;
        for shell in &mut self.shells {
            shell.function_offset = offset;
            offset += shell.n_functions();
        }
    }

    /// Center of the shell owning each basis function.
    pub fn function_centers(&self) -> Vec<Vec3> {
        let mut centers = Vec::with_capacity(self.n_functions());
        for shell in &self.shells {
            centers.extend(std::iter::repeat_n(shell.center, shell.n_functions()));
        }
        centers
    }

    pub fn max_shell_size(&self) -> usize {
        self.shells
            .iter()
            .map(GaussianShell::n_functions)
            .max()
            .unwrap_or(0)
    }
}

/// Per-element contractions: each entry is a list of shells, each shell a
/// list of `(exponent, coefficient)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ShellTable {
    entries: BTreeMap<String, Vec<Vec<(f64, f64)>>>,
}

impl ShellTable {
    /// Split-valence-like s table: heavy centers carry a contracted core
    /// shell plus a diffuse shell, light centers one shell.
    pub fn builtin() -> Self {
        let heavy = vec![
            vec![
                (130.7093, 0.15432897),
                (23.8089, 0.53532814),
                (6.4436, 0.44463454),
            ],
            vec![(0.27, 1.0)],
        ];
        let light = vec![vec![(1.24, 1.0)]];
        let mut entries = BTreeMap::new();
        for el in ["O", "N", "C"] {
            entries.insert(el.to_string(), heavy.clone());
        }
        entries.insert("H".to_string(), light);
        ShellTable { entries }
    }

    pub fn get(&self, element: &str) -> Option<&Vec<Vec<(f64, f64)>>> {
        self.entries.get(element)
    }

    pub fn insert(&mut self, element: &str, shells: Vec<Vec<(f64, f64)>>) {
        self.entries.insert(element.to_string(), shells);
    }

    /// Parses the plain-text table format: one line per element,
    /// `El exp:coef exp:coef ; exp:coef`, shells separated by `;`.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, BasisError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (element, rest) =
                line.split_once(char::is_whitespace)
                    .ok_or_else(|| BasisError::Format {
                        line: line_no,
                        message: "element without shells".into(),
                    })?;
            let mut shells = Vec::new();
            for shell_text in rest.split(';') {
                let mut prims = Vec::new();
                for token in shell_text.split_whitespace() {
                    let (e, c) = token.split_once(':').ok_or_else(|| BasisError::Format {
                        line: line_no,
                        message: format!("expected exponent:coefficient, got '{token}'"),
                    })?;
                    let parse = |s: &str| {
                        s.parse::<f64>().map_err(|_| BasisError::Format {
                            line: line_no,
                            message: format!("bad number '{s}'"),
                        })
                    };
                    prims.push((parse(e)?, parse(c)?));
                }
                if prims.is_empty() {
                    return Err(BasisError::Format {
                        line: line_no,
                        message: "empty shell".into(),
                    });
                }
                shells.push(prims);
            }
            entries.insert(element.to_string(), shells);
        }
        Ok(ShellTable { entries })
    }

    pub fn load(path: &Path) -> Result<Self, BasisError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl Default for ShellTable {
    fn default() -> Self {
        Self::builtin()
    }
}

impl fmt::Display for ShellTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (element, shells) in &self.entries {
            let body: Vec<String> = shells
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|(e, c)| format!("{e}:{c}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            writeln!(f, "{element} {}", body.join(" ; "))?;
        }
        Ok(())
    }
}

/// splitmix64 generator; fixed so generated geometries are reproducible
/// across implementations.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniformly distributed unit vector.
    pub fn unit_vector(&mut self) -> Vec3 {
        let z = self.uniform(-1.0, 1.0);
        let phi = self.uniform(0.0, 2.0 * PI);
        let r = (1.0 - z * z).max(0.0).sqrt();
        [r * phi.cos(), r * phi.sin(), z]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterModel {
    /// O-like center with two H-like satellites per molecule.
    WaterLike,
    /// One heavy center per molecule, no satellites.
    UniformBlob,
}

impl std::str::FromStr for ClusterModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "water_like" | "water" => Ok(ClusterModel::WaterLike),
            "uniform_blob" | "blob" => Ok(ClusterModel::UniformBlob),
            other => Err(format!("unknown cluster model '{other}'")),
        }
    }
}

/// Seeded synthetic cluster of `n_molecules` molecules at liquid-water
/// number density.
///
/// Heavy centers come from a fixed pool of jittered cubic-lattice sites
/// (spacing set by [`WATER_NUMBER_DENSITY`]) ordered by distance from the
/// origin, so a cluster of `n` molecules is the `n` innermost sites and
/// clusters of increasing size are nested. Molecular orientations are
/// drawn per molecule by rejection until every intermolecular atom pair
/// is at least [`MIN_INTERMOLECULAR_DISTANCE`] apart.
pub fn generate_cluster(
    n_molecules: usize,
    seed: u64,
    model: ClusterModel,
) -> Result<BasisSystem, BasisError> {
    generate_cluster_with(n_molecules, seed, model, &ShellTable::builtin())
}

pub fn generate_cluster_with(
    n_molecules: usize,
    seed: u64,
    model: ClusterModel,
    table: &ShellTable,
) -> Result<BasisSystem, BasisError> {
    if n_molecules == 0 {
        return Err(BasisError::InvalidArgument(
            "n_molecules must be >= 1".into(),
        ));
    }
    let sites = heavy_sites(n_molecules, seed);
    let mut atoms: Vec<Atom> = Vec::with_capacity(3 * n_molecules);
    let theta = HOH_ANGLE_DEG.to_radians();
    for (k, &o) in sites.iter().enumerate() {
        match model {
            ClusterModel::UniformBlob => atoms.push(Atom {
                element: "O".into(),
                position: o,
            }),
            ClusterModel::WaterLike => {
                let mut rng =
                    SplitMix64::new(mix_seed(seed, 0x5a7e_111e_u64.wrapping_add(k as u64)));
                let mut attempt = 0;
                let molecule = loop {
                    let u = rng.unit_vector();
                    let v = perpendicular_unit(&u, &rng.unit_vector());
                    let h1 = add_scaled(&o, &u, OH_DISTANCE);
                    let dir2 = [
                        theta.cos() * u[0] + theta.sin() * v[0],
                        theta.cos() * u[1] + theta.sin() * v[1],
                        theta.cos() * u[2] + theta.sin() * v[2],
                    ];
                    let h2 = add_scaled(&o, &dir2, OH_DISTANCE);
                    let candidate = [o, h1, h2];
                    let clear = candidate.iter().all(|x| {
                        atoms
                            .iter()
                            .all(|a| distance(x, &a.position) >= MIN_INTERMOLECULAR_DISTANCE)
                    });
                    attempt += 1;
                    if clear || attempt >= 10_000 {
                        break candidate;
                    }
                };
                atoms.push(Atom {
                    element: "O".into(),
                    position: molecule[0],
                });
                atoms.push(Atom {
                    element: "H".into(),
                    position: molecule[1],
                });
                atoms.push(Atom {
                    element: "H".into(),
                    position: molecule[2],
                });
            }
        }
    }
    BasisSystem::from_atoms(atoms, table)
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut g = SplitMix64::new(seed ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    g.next_u64()
}

/// Heavy-center positions for the innermost `n` sites of the seeded pool.
fn heavy_sites(n: usize, seed: u64) -> Vec<Vec3> {
    let spacing = WATER_NUMBER_DENSITY.powf(-1.0 / 3.0);
    // Jitter keeps neighbouring sites at least MIN_HEAVY_DISTANCE apart.
    let jitter = 0.5 * (spacing - MIN_HEAVY_DISTANCE) * 0.999;
    // Sites out to a radius comfortably beyond the n-th one; the pool for a
    // given half-width is fixed, so smaller clusters are prefixes.
    let mut half = 2i64;
    loop {
        let full = (2 * half + 1).pow(3) as usize;
        // only sites inside the inscribed sphere are safe to rank by radius
        let inscribed =
            (4.0 / 3.0 * PI * ((half as f64 - 1.0) * spacing).powi(3) / spacing.powi(3)) as usize;
        if inscribed >= n && full >= n {
            break;
        }
        half += 1;
    }
    let mut sites = Vec::new();
    for i in -half..=half {
        for j in -half..=half {
            for k in -half..=half {
                let mut rng = SplitMix64::new(mix_seed(seed, lattice_key(i, j, k)));
                let p = [
                    i as f64 * spacing + rng.uniform(-jitter, jitter),
                    j as f64 * spacing + rng.uniform(-jitter, jitter),
                    k as f64 * spacing + rng.uniform(-jitter, jitter),
                ];
                sites.push(p);
            }
        }
    }
    sites.sort_by(|a, b| {
        let ra = distance_sq(a, &[0.0; 3]);
        let rb = distance_sq(b, &[0.0; 3]);
        ra.total_cmp(&rb)
            .then_with(|| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
    });
    sites.truncate(n);
    sites
}

fn lattice_key(i: i64, j: i64, k: i64) -> u64 {
    let enc = |x: i64| (x + (1 << 20)) as u64;
    (enc(i) << 42) | (enc(j) << 21) | enc(k)
}

fn add_scaled(a: &Vec3, d: &Vec3, s: f64) -> Vec3 {
    [a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]]
}

fn perpendicular_unit(u: &Vec3, w: &Vec3) -> Vec3 {
    let dot = u[0] * w[0] + u[1] * w[1] + u[2] * w[2];
    let mut v = [w[0] - dot * u[0], w[1] - dot * u[1], w[2] - dot * u[2]];
    let mut norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm < 1e-8 {
        // w parallel to u: pick any axis not parallel to u
        let axis = if u[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        let dot = u[0] * axis[0] + u[1] * axis[1] + u[2] * axis[2];
        v = [
            axis[0] - dot * u[0],
            axis[1] - dot * u[1],
            axis[2] - dot * u[2],
        ];
        norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    }
    [v[0] / norm, v[1] / norm, v[2] / norm]
}

/// Parses XYZ text (Ångström) into atoms in Bohr.
pub fn parse_xyz(text: &str) -> Result<Vec<Atom>, BasisError> {
    let mut lines = text.lines();
    let count_line = lines.next().ok_or(BasisError::Format {
        line: 1,
        message: "empty file".into(),
    })?;
    let count: usize = count_line.trim().parse().map_err(|_| BasisError::Format {
        line: 1,
        message: format!("expected atom count, got '{}'", count_line.trim()),
    })?;
    if lines.next().is_none() {
        return Err(BasisError::Format {
            line: 2,
            message: "missing comment line".into(),
        });
    }
    let mut atoms = Vec::with_capacity(count);
    for i in 0..count {
        let line_no = i + 3;
        let line = lines.next().ok_or(BasisError::Format {
            line: line_no,
            message: format!("expected {count} atoms, found {i}"),
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(BasisError::Format {
                line: line_no,
                message: "expected 'El x y z'".into(),
            });
        }
        let mut position = [0.0; 3];
        for (d, f) in fields[1..4].iter().enumerate() {
            let x: f64 = f.parse().map_err(|_| BasisError::Format {
                line: line_no,
                message: format!("bad coordinate '{f}'"),
            })?;
            if !x.is_finite() {
                return Err(BasisError::Format {
                    line: line_no,
                    message: format!("non-finite coordinate '{f}'"),
                });
            }
            position[d] = x * ANGSTROM_TO_BOHR;
        }
        atoms.push(Atom {
            element: fields[0].to_string(),
            position,
        });
    }
    Ok(atoms)
}

/// Reads an XYZ file and attaches shells from `table`.
pub fn load_xyz(path: &Path, table: &ShellTable) -> Result<BasisSystem, BasisError> {
    let text = std::fs::read_to_string(path)?;
    xyz_system(&text, table)
}

pub fn xyz_system(text: &str, table: &ShellTable) -> Result<BasisSystem, BasisError> {
    let atoms = parse_xyz(text)?;
    for (i, atom) in atoms.iter().enumerate() {
        if table.get(&atom.element).is_none() {
            return Err(BasisError::UnsupportedElement {
                element: atom.element.clone(),
                line: i + 3,
            });
        }
    }
    BasisSystem::from_atoms(atoms, table)
}

/// Hilbert index of a point on the `[0, 2^bits)³` lattice (Skilling's
/// transposed-axes construction).
pub fn hilbert_index(coords: [u32; 3], bits: u32) -> u64 {
    debug_assert!((1..=21).contains(&bits));
    let mut x = coords;
    let m = 1u32 << (bits - 1);
    // inverse undo
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for xi in &mut x {
        *xi ^= t;
    }
    let mut h = 0u64;
    for b in (0..bits).rev() {
        for xi in &x {
            h = (h << 1) | u64::from((xi >> b) & 1);
        }
    }
    h
}

/// Result of [`hilbert_order`].
#[derive(Clone, Debug, PartialEq)]
pub struct HilbertOrdering {
    pub system: BasisSystem,
    /// `shell_permutation[new] = old` shell index.
    pub shell_permutation: Vec<usize>,
    /// `function_permutation[new] = old` function index, for reordering
    /// externally supplied matrices.
    pub function_permutation: Vec<usize>,
}

/// Stably sorts shells by the Hilbert index of their centers on the
/// bounding-box lattice.
pub fn hilbert_order(
    system: &BasisSystem,
    bits_per_axis: u32,
) -> Result<HilbertOrdering, BasisError> {
    if !(1..=20).contains(&bits_per_axis) {
        return Err(BasisError::InvalidArgument(format!(
            "bits_per_axis must be in [1, 20], got {bits_per_axis}"
        )));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for s in &system.shells {
        for d in 0..3 {
            lo[d] = lo[d].min(s.center[d]);
            hi[d] = hi[d].max(s.center[d]);
        }
    }
    let cells = (1u64 << bits_per_axis) as f64;
    let max_coord = (1u32 << bits_per_axis) - 1;
    let keys: Vec<u64> = system
        .shells
        .iter()
        .map(|s| {
            let mut c = [0u32; 3];
            for d in 0..3 {
                let extent = hi[d] - lo[d];
                if extent > 0.0 {
                    let x = ((s.center[d] - lo[d]) / extent * cells).floor();
                    c[d] = (x as u32).min(max_coord);
                }
            }
            hilbert_index(c, bits_per_axis)
        })
        .collect();
    let mut perm: Vec<usize> = (0..system.shells.len()).collect();
    perm.sort_by_key(|&i| keys[i]);
    let mut function_permutation = Vec::with_capacity(system.n_functions());
    for &old in &perm {
        let s = &system.shells[old];
        function_permutation.extend(s.function_offset..s.function_offset + s.n_functions());
    }
    let mut reordered = BasisSystem {
        atoms: system.atoms.clone(),
        shells: perm.iter().map(|&i| system.shells[i].clone()).collect(),
    };
    reordered.renumber();
    Ok(HilbertOrdering {
        system: reordered,
        shell_permutation: perm,
        function_permutation,
    })
}
