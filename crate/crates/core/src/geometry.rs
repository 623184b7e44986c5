//! Rigid-rotor Cartesian construction.
//!
//! Bond lengths and bond angles are frozen at a single template; a conformer
//! is fully described by its torsion vector. The template is laid out
//! breadth-first from atom 0 with tetrahedral local frames (children of each
//! center are assigned frame slots in neighbor-index order), then every
//! rotatable dihedral is set by rotating the `b4` side of its central bond.
//!
//! Dihedrals follow the IUPAC right-hand convention about `b2 -> b3` and are
//! reported in `[0, 2π)`.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::chem::{Element, MoleculeGraph, TorsionQuad};

pub type Vec3 = Vector3<f64>;

/// cos of the tetrahedral angle, arccos(-1/3).
pub const COS_TETRAHEDRAL: f64 = -1.0 / 3.0;

/// Fixed bond length in Ångström for an element pair.
pub fn bond_length(a: Element, b: Element) -> f64 {
    match (a, b) {
        (Element::C, Element::C) => 1.54,
        (Element::C, Element::O) | (Element::O, Element::C) => 1.43,
        (Element::O, Element::O) => 1.48,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("molecular graph is disconnected")]
    DisconnectedGraph,
    #[error("expected {expected} torsion angles, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("torsion index {0} out of range")]
    BadTorsion(usize),
}

/// Per-atom Cartesian positions in Ångström.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates(pub Vec<Vec3>);

impl Coordinates {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (self.0[i] - self.0[j]).norm()
    }

    /// Bond angle at `b` in radians.
    pub fn angle(&self, a: usize, b: usize, c: usize) -> f64 {
        let u = self.0[a] - self.0[b];
        let v = self.0[c] - self.0[b];
        (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.0.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        sum / self.0.len().max(1) as f64
    }
}

fn wrap(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    wrap(angle)
}

/// Signed IUPAC dihedral of four points in `(-π, π]`.
pub fn dihedral_of(p1: &Vec3, p2: &Vec3, p3: &Vec3, p4: &Vec3) -> Result<f64, GeometryError> {
    let v1 = p2 - p1;
    let v2 = p3 - p2;
    let v3 = p4 - p3;
    let n1 = v1.cross(&v2);
    let n2 = v2.cross(&v3);
    let scale = v2.norm();
    if n1.norm() < 1e-9 * v1.norm() * scale || n2.norm() < 1e-9 * scale * v3.norm() {
        return Err(GeometryError::DegenerateGeometry("three consecutive atoms are collinear"));
    }
    let y = scale * v1.dot(&n2);
    let x = n1.dot(&n2);
    Ok(y.atan2(x))
}

/// Rotates `p` about the axis through `pivot` with unit direction `axis`.
fn rotate_about(p: &Vec3, pivot: &Vec3, axis: &Vec3, cos: f64, sin: f64) -> Vec3 {
    let v = p - pivot;
    let rotated = v * cos + axis.cross(&v) * sin + axis * (axis.dot(&v) * (1.0 - cos));
    pivot + rotated
}

/// Precomputed rigid-rotor template for one molecule.
#[derive(Debug, Clone)]
pub struct RigidRotor {
    torsions: Vec<TorsionQuad>,
    template: Vec<Vec3>,
    moving: Vec<Vec<usize>>,
    moving_mask: Vec<Vec<bool>>,
}

impl RigidRotor {
    pub fn new(g: &MoleculeGraph) -> Result<Self, GeometryError> {
        let template = build_template(g)?;
        let n = g.atom_count();
        let mut moving = Vec::with_capacity(g.torsion_count());
        let mut moving_mask = Vec::with_capacity(g.torsion_count());
        for t in g.torsions() {
            let mut mask = vec![false; n];
            mask[t.b3] = true;
            let mut stack = vec![t.b3];
            while let Some(u) = stack.pop() {
                for &v in g.neighbors(u) {
                    if v != t.b2 && !mask[v] {
                        mask[v] = true;
                        stack.push(v);
                    }
                }
            }
            moving.push((0..n).filter(|&i| mask[i]).collect());
            moving_mask.push(mask);
        }
        Ok(RigidRotor { torsions: g.torsions().to_vec(), template, moving, moving_mask })
    }

    pub fn torsion_count(&self) -> usize {
        self.torsions.len()
    }

    pub fn atom_count(&self) -> usize {
        self.template.len()
    }

    pub fn torsions(&self) -> &[TorsionQuad] {
        &self.torsions
    }

    /// Atoms carried along when torsion `i` rotates (the `b4` side, including `b3`).
    pub fn moving_atoms(&self, i: usize) -> &[usize] {
        &self.moving[i]
    }

    pub fn moves(&self, torsion: usize, atom: usize) -> bool {
        self.moving_mask[torsion][atom]
    }

    pub fn build(&self, theta: &[f64]) -> Result<Coordinates, GeometryError> {
        if theta.len() != self.torsions.len() {
            return Err(GeometryError::LengthMismatch {
                expected: self.torsions.len(),
                got: theta.len(),
            });
        }
        let mut c = Coordinates(self.template.clone());
        for (i, &angle) in theta.iter().enumerate() {
            self.set_in_place(&mut c, i, angle)?;
        }
        Ok(c)
    }

    pub fn measure(&self, c: &Coordinates, i: usize) -> Result<f64, GeometryError> {
        let t = self.torsions.get(i).ok_or(GeometryError::BadTorsion(i))?;
        let p = &c.0;
        dihedral_of(&p[t.b1], &p[t.b2], &p[t.b3], &p[t.b4]).map(wrap)
    }

    /// Sets dihedral `i` to `angle` by rotating only the `b4`-side fragment.
    pub fn set_in_place(
        &self,
        c: &mut Coordinates,
        i: usize,
        angle: f64,
    ) -> Result<(), GeometryError> {
        let t = self.torsions.get(i).ok_or(GeometryError::BadTorsion(i))?;
        let current = self.measure(c, i)?;
        let delta = angle - current;
        let (sin, cos) = delta.sin_cos();
        let pivot = c.0[t.b3];
        let axis = (c.0[t.b3] - c.0[t.b2]).normalize();
        for &a in &self.moving[i] {
            c.0[a] = rotate_about(&c.0[a], &pivot, &axis, cos, sin);
        }
        Ok(())
    }
}

/// Tetrahedral frame directions around a center, given the unit vector toward
/// the already-placed "parent" slot and a perpendicular reference.
fn tetrahedral_slots(toward_parent: &Vec3, reference: &Vec3) -> [Vec3; 3] {
    let sin_t = (1.0 - COS_TETRAHEDRAL * COS_TETRAHEDRAL).sqrt();
    let w = reference;
    let v = toward_parent.cross(w);
    let mut out = [Vec3::zeros(); 3];
    for (k, slot) in out.iter_mut().enumerate() {
        // First slot anti to the reference atom.
        let phi = PI + TAU * k as f64 / 3.0;
        *slot = toward_parent * COS_TETRAHEDRAL + (w * phi.cos() + v * phi.sin()) * sin_t;
    }
    out
}

fn perpendicular_reference(axis: &Vec3, hint: Option<Vec3>) -> Vec3 {
    if let Some(h) = hint {
        let perp = h - axis * axis.dot(&h);
        if perp.norm() > 1e-8 {
            return perp.normalize();
        }
    }
    let fallback = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (fallback - axis * axis.dot(&fallback)).normalize()
}

fn build_template(g: &MoleculeGraph) -> Result<Vec<Vec3>, GeometryError> {
    let n = g.atom_count();
    let elements: Vec<Element> = g.atoms().iter().map(|a| a.element).collect();
    let mut pos: Vec<Option<Vec3>> = vec![None; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    pos[0] = Some(Vec3::zeros());
    let mut order = vec![0usize];
    let mut head = 0;
    while head < order.len() {
        let a = order[head];
        head += 1;
        let pa = pos[a].expect("placed before expansion");
        let children: Vec<usize> =
            g.neighbors(a).iter().copied().filter(|&c| Some(c) != parent[a]).collect();
        if children.is_empty() {
            continue;
        }
        // Directions for the children of `a`.
        let directions: Vec<Vec3> = match parent[a] {
            None => {
                // Root: a virtual parent slot along -x is given to the first child.
                let up = -Vec3::x();
                let slots = tetrahedral_slots(&up, &Vec3::y());
                std::iter::once(up).chain(slots).collect()
            }
            Some(p) => {
                let toward = (pos[p].expect("parent placed") - pa).normalize();
                let hint = g
                    .neighbors(p)
                    .iter()
                    .copied()
                    .filter(|&x| x != a)
                    .find_map(|x| pos[x])
                    .map(|q| q - pos[p].expect("parent placed"));
                let reference = perpendicular_reference(&toward, hint);
                tetrahedral_slots(&toward, &reference).to_vec()
            }
        };
        for (child, dir) in children.iter().zip(directions) {
            let len = bond_length(elements[a], elements[*child]);
            pos[*child] = Some(pa + dir * len);
            parent[*child] = Some(a);
            order.push(*child);
        }
    }
    pos.into_iter()
        .map(|p| p.ok_or(GeometryError::DisconnectedGraph))
        .collect()
}

pub fn build_coordinates(g: &MoleculeGraph, theta: &[f64]) -> Result<Coordinates, GeometryError> {
    RigidRotor::new(g)?.build(theta)
}

pub fn set_dihedral(
    c: &Coordinates,
    g: &MoleculeGraph,
    i: usize,
    angle: f64,
) -> Result<Coordinates, GeometryError> {
    let rotor = RigidRotor::new(g)?;
    let mut out = c.clone();
    rotor.set_in_place(&mut out, i, angle)?;
    Ok(out)
}

pub fn measure_dihedral(c: &Coordinates, g: &MoleculeGraph, i: usize) -> Result<f64, GeometryError> {
    let t = g.torsions().get(i).ok_or(GeometryError::BadTorsion(i))?;
    let p = &c.0;
    dihedral_of(&p[t.b1], &p[t.b2], &p[t.b3], &p[t.b4]).map(wrap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseStatus {
    /// Centered and aligned to the principal axes.
    Aligned,
    /// Covariance rank below two; only centering was applied.
    CenteredOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPose {
    pub coords: Coordinates,
    pub status: PoseStatus,
}

/// Centers on the origin and rotates so that covariance eigenvectors lie on
/// the coordinate axes in descending-eigenvalue order. For each axis the first
/// atom with a nonzero coordinate on it is made nonnegative.
///
/// A planar cloud (rank two) is still aligned: its normal is the remaining
/// eigenvector. Collinear clouds and fewer than three atoms fall back to
/// centering only.
pub fn normalize_pose(c: &Coordinates) -> NormalizedPose {
    let center = c.centroid();
    let centered: Vec<Vec3> = c.0.iter().map(|p| p - center).collect();
    if centered.len() < 3 {
        return NormalizedPose { coords: Coordinates(centered), status: PoseStatus::CenteredOnly };
    }
    let mut cov = Matrix3::zeros();
    for p in &centered {
        cov += p * p.transpose();
    }
    cov /= centered.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[idx[0]];
    if largest <= 0.0 || eig.eigenvalues[idx[1]] < 1e-10 * largest {
        return NormalizedPose { coords: Coordinates(centered), status: PoseStatus::CenteredOnly };
    }
    let mut axes: Vec<Vec3> = idx.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
    // Third axis from the first two; exact for planar clouds.
    axes[2] = axes[0].cross(&axes[1]).normalize();
    let scale = largest.sqrt();
    for axis in axes.iter_mut() {
        let first = centered
            .iter()
            .map(|p| p.dot(axis))
            .find(|v| v.abs() > 1e-9 * scale.max(1.0));
        if matches!(first, Some(v) if v < 0.0) {
            *axis = -*axis;
        }
    }
    let coords = centered
        .iter()
        .map(|p| Vec3::new(p.dot(&axes[0]), p.dot(&axes[1]), p.dot(&axes[2])))
        .collect();
    NormalizedPose { coords: Coordinates(coords), status: PoseStatus::Aligned }
}

/// XYZ text: atom count, comment line, then `element x y z` rows.
pub fn to_xyz(g: &MoleculeGraph, c: &Coordinates, comment: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", c.len());
    let _ = writeln!(out, "{}", comment.replace('\n', " "));
    for (atom, p) in g.atoms().iter().zip(&c.0) {
        let _ = writeln!(out, "{} {:.6} {:.6} {:.6}", atom.element, p.x, p.y, p.z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{generate_branched_alkane, parse_smiles, t_branched_alkane};
    use proptest::prelude::*;

    fn circ(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(TAU);
        d.min(TAU - d)
    }

    #[test]
    fn butane_anti_distance_matches_closed_form() {
        let g = parse_smiles("CCCC").unwrap();
        let c = build_coordinates(&g, &[PI]).unwrap();
        // Planar zigzag: 1-3 distance d13 = 2 l sin(θ/2); anti 1-4 from law of
        // cosines in the plane.
        let l = 1.54;
        let theta = COS_TETRAHEDRAL.acos();
        let p1 = Vec3::new(0.0, 0.0, 0.0);
        let p2 = Vec3::new(l, 0.0, 0.0);
        let p3 = p2 + Vec3::new(-l * theta.cos(), l * theta.sin(), 0.0);
        let p4 = p3 + (p2 - p1);
        let expected = (p4 - p1).norm();
        assert!((c.distance(0, 3) - expected).abs() < 1e-9);
        // Zigzag projection: 3 l sin(θ/2) along the chain, l cos(θ/2) across.
        let along = 3.0 * l * (theta / 2.0).sin();
        let across = l * (theta / 2.0).cos();
        assert!((expected - along.hypot(across)).abs() < 1e-12);
        assert!((expected - 3.8756).abs() < 1e-4, "{expected}");
    }

    #[test]
    fn butane_syn_is_shorter_than_anti() {
        let g = parse_smiles("CCCC").unwrap();
        let syn = build_coordinates(&g, &[0.0]).unwrap();
        let anti = build_coordinates(&g, &[PI]).unwrap();
        assert!(syn.distance(0, 3) < anti.distance(0, 3));
    }

    #[test]
    fn rebuild_is_bitwise_identical() {
        let g = generate_branched_alkane(3, 14);
        let theta: Vec<f64> = (0..g.torsion_count()).map(|i| 0.37 * i as f64 + 0.1).collect();
        assert_eq!(build_coordinates(&g, &theta).unwrap(), build_coordinates(&g, &theta).unwrap());
    }

    #[test]
    fn set_dihedral_identity_periodicity_and_composition() {
        let g = t_branched_alkane(4);
        let rotor = RigidRotor::new(&g).unwrap();
        let c = rotor.build(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let current = measure_dihedral(&c, &g, 2).unwrap();
        let same = set_dihedral(&c, &g, 2, current).unwrap();
        for (a, b) in c.0.iter().zip(&same.0) {
            assert!((a - b).norm() < 1e-12);
        }
        let zero = set_dihedral(&c, &g, 1, 0.0).unwrap();
        let full = set_dihedral(&c, &g, 1, TAU).unwrap();
        for (a, b) in zero.0.iter().zip(&full.0) {
            assert!((a - b).norm() < 1e-9);
        }
        let composed = set_dihedral(&set_dihedral(&c, &g, 3, 0.4).unwrap(), &g, 3, 2.2).unwrap();
        let direct = set_dihedral(&c, &g, 3, 2.2).unwrap();
        for (a, b) in composed.0.iter().zip(&direct.0) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn set_moves_only_b4_side() {
        let g = t_branched_alkane(3);
        let rotor = RigidRotor::new(&g).unwrap();
        let c = rotor.build(&[PI, PI, PI]).unwrap();
        let moved = set_dihedral(&c, &g, 1, 1.0).unwrap();
        let t = g.torsions()[1];
        for i in 0..g.atom_count() {
            if !rotor.moves(1, i) || i == t.b3 {
                assert!((c.0[i] - moved.0[i]).norm() < 1e-12, "atom {i} moved");
            }
        }
        assert!((c.0[t.b4] - moved.0[t.b4]).norm() > 0.1);
    }

    #[test]
    fn round_trip_at_special_angles() {
        let g = parse_smiles("CCCCC").unwrap();
        for angle in [0.0, PI / 3.0, 5.0 * PI / 3.0] {
            let c = build_coordinates(&g, &[angle, 1.0]).unwrap();
            assert!(circ(measure_dihedral(&c, &g, 0).unwrap(), angle) < 1e-9);
        }
    }

    #[test]
    fn positive_rotation_increases_dihedral() {
        // b2 at origin, b3 on +z, b1 on +x side; b4 at angle φ counterclockwise.
        let p1 = Vec3::new(1.0, 0.0, 0.0);
        let p2 = Vec3::zeros();
        let p3 = Vec3::new(0.0, 0.0, 1.0);
        let phi: f64 = 0.7;
        let p4 = p3 + Vec3::new(phi.cos(), phi.sin(), 0.0);
        assert!((dihedral_of(&p1, &p2, &p3, &p4).unwrap() - phi).abs() < 1e-12);
    }

    #[test]
    fn collinear_atoms_are_degenerate() {
        let p = [Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::new(2.0, 1.0, 0.0)];
        assert!(matches!(
            dihedral_of(&p[0], &p[1], &p[2], &p[3]),
            Err(GeometryError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn length_mismatch() {
        let g = parse_smiles("CCCC").unwrap();
        assert_eq!(
            build_coordinates(&g, &[]).unwrap_err(),
            GeometryError::LengthMismatch { expected: 1, got: 0 }
        );
    }

    #[test]
    fn neopentane_template_is_tetrahedral() {
        let g = parse_smiles("CC(C)(C)C").unwrap();
        let c = build_coordinates(&g, &[]).unwrap();
        let n = g.neighbors(1).to_vec();
        for a in 0..n.len() {
            for b in a + 1..n.len() {
                assert!((c.angle(n[a], 1, n[b]).cos() - COS_TETRAHEDRAL).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_atom_pose_is_centered_only() {
        let c = Coordinates(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(2.0, 2.0, 3.0)]);
        let pose = normalize_pose(&c);
        assert_eq!(pose.status, PoseStatus::CenteredOnly);
        assert!(pose.coords.centroid().norm() < 1e-12);
    }

    #[test]
    fn xyz_format() {
        let g = parse_smiles("CC").unwrap();
        let c = build_coordinates(&g, &[]).unwrap();
        let text = to_xyz(&g, &c, "ethane");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "2");
        assert_eq!(lines[1], "ethane");
        assert!(lines[2].starts_with("C 0.000000 0.000000 0.000000"));
        assert_eq!(lines.len(), 4);
    }

    fn rotation(ax: f64, ay: f64, az: f64) -> Matrix3<f64> {
        let rx = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), ax);
        let ry = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), ay);
        let rz = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), az);
        (rz * ry * rx).into_inner()
    }

    proptest! {
        #[test]
        fn measured_dihedrals_match_requested(
            seed in 0u64..200,
            n in 6usize..16,
            raw in proptest::collection::vec(0.0f64..TAU, 16),
        ) {
            let g = generate_branched_alkane(seed, n);
            let theta = &raw[..g.torsion_count()];
            let c = build_coordinates(&g, theta).unwrap();
            for (i, &want) in theta.iter().enumerate() {
                prop_assert!(circ(measure_dihedral(&c, &g, i).unwrap(), want) < 1e-9);
            }
        }

        #[test]
        fn bond_lengths_and_angles_are_frozen(
            seed in 0u64..100,
            raw in proptest::collection::vec(0.0f64..TAU, 12),
        ) {
            let g = generate_branched_alkane(seed, 12);
            let rotor = RigidRotor::new(&g).unwrap();
            let zero = rotor.build(&vec![0.0; g.torsion_count()]).unwrap();
            let c = rotor.build(&raw[..g.torsion_count()]).unwrap();
            for b in g.bonds() {
                prop_assert!((c.distance(b.i, b.j) - 1.54).abs() < 1e-9);
            }
            for center in 0..g.atom_count() {
                let nb = g.neighbors(center);
                for a in 0..nb.len() {
                    for b in a + 1..nb.len() {
                        let want = zero.angle(nb[a], center, nb[b]);
                        prop_assert!((c.angle(nb[a], center, nb[b]) - want).abs() < 1e-9);
                        prop_assert!((want.cos() - COS_TETRAHEDRAL).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn pose_normalization_is_rotation_invariant_and_idempotent(
            raw in proptest::collection::vec(0.0f64..TAU, 4),
            ax in 0.0f64..TAU, ay in 0.0f64..TAU, az in 0.0f64..TAU,
            shift in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let g = t_branched_alkane(4);
            let c = build_coordinates(&g, &raw).unwrap();
            let rot = rotation(ax, ay, az);
            let t = Vec3::new(shift[0], shift[1], shift[2]);
            let moved = Coordinates(c.0.iter().map(|p| rot * p + t).collect());
            let a = normalize_pose(&c);
            let b = normalize_pose(&moved);
            prop_assert_eq!(a.status, PoseStatus::Aligned);
            for (p, q) in a.coords.0.iter().zip(&b.coords.0) {
                prop_assert!((p - q).norm() < 1e-6, "{:?} vs {:?}", p, q);
            }
            let again = normalize_pose(&a.coords);
            for (p, q) in a.coords.0.iter().zip(&again.coords.0) {
                prop_assert!((p - q).norm() < 1e-9);
            }
        }
    }
}
