//! Rigid-body shapes, their implicit functions, and inertia tensors.
//!
//! Shapes are CSG trees ([`ShapeNode`]) over ellipsoids, ε-rounded convex
//! polyhedra and half-spaces. Every node evaluates to an implicit function that
//! is negative inside, positive outside and zero on the boundary. Ellipsoids use
//! the normalized function ‖I_E⁻¹ z‖ − 1 (no closed-form metric SDF exists);
//! polyhedra use the exact distance to the hull minus ε.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{is_symmetric, skew, Mat3, Vec3, SKEW_TOL};

/// Tie tolerance between two child values in union/intersection gradients.
pub const CSG_TIE_TOL: f64 = 1e-12;
/// Consistency tolerance for the J ↔ J_d relations.
pub const INERTIA_TOL: f64 = 1e-12;
/// Allowed centroid offset of a sampled composite, relative to the radius of
/// the origin-centred ball enclosing its bounding box.
pub const CENTROID_REL_TOL: f64 = 2e-3;
/// Polyhedron vertices must average (as a solid) to the origin within this.
pub const POLY_CENTROID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Ellipsoid {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0) || !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("ellipsoid semiaxes must be positive, got ({a}, {b}, {c})")));
        }
        Ok(Ellipsoid { a, b, c })
    }

    pub fn sphere(r: f64) -> Result<Self> {
        Ellipsoid::new(r, r, r)
    }

    pub fn semiaxes(&self) -> Vec3 {
        Vec3::new(self.a, self.b, self.c)
    }

    /// I_E = diag(a, b, c)
    pub fn shape_matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&self.semiaxes())
    }

    /// f_E(z) = z₁²/a² + z₂²/b² + z₃²/c²
    pub fn quadratic_form(&self, z: &Vec3) -> f64 {
        z.component_div(&self.semiaxes()).norm_squared()
    }

    /// Normalized implicit function ‖I_E⁻¹ z‖ − 1.
    pub fn implicit(&self, z: &Vec3) -> f64 {
        z.component_div(&self.semiaxes()).norm() - 1.0
    }

    pub fn implicit_grad(&self, z: &Vec3) -> Result<Vec3> {
        let ax = self.semiaxes();
        let q = z.component_div(&ax);
        let n = q.norm();
        if n == 0.0 {
            return Err(Error::GradientUndefined);
        }
        Ok(q.component_div(&ax) / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Face {
    normal: Vec3,
    offset: f64,
}

/// Convex hull of a vertex list, inflated by ε (ε-rounding).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolyhedron {
    vertices: Vec<Vec3>,
    eps: f64,
    faces: Vec<Face>,
    /// Outward-oriented boundary triangles (indices into `vertices`).
    triangles: Vec<[usize; 3]>,
}

impl ConvexPolyhedron {
    pub fn new(vertices: Vec<Vec3>, eps: f64) -> Result<Self> {
        if vertices.len() < 4 {
            return Err(Error::InvalidParameter(format!(
                "polyhedron needs at least 4 vertices, got {}",
                vertices.len()
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("rounding must be positive, got {eps}")));
        }
        let scale = vertices.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        let (faces, triangles) = hull_faces(&vertices, scale)?;
        let poly = ConvexPolyhedron { vertices, eps, faces, triangles };
        let centroid = poly.hull_centroid();
        if centroid.norm() > POLY_CENTROID_TOL * scale.max(1.0) {
            return Err(Error::OffOriginCentroid {
                offset: [centroid.x, centroid.y, centroid.z],
                tolerance: POLY_CENTROID_TOL,
            });
        }
        Ok(poly)
    }

    /// Axis-aligned cube with side `s`, centred on the origin, vertices in
    /// binary order over (x, y, z) with −s/2 first.
    pub fn cube(s: f64, eps: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("cube side must be positive, got {s}")));
        }
        let h = 0.5 * s;
        let mut vertices = Vec::with_capacity(8);
        for &z in &[-h, h] {
            for &y in &[-h, h] {
                for &x in &[-h, h] {
                    vertices.push(Vec3::new(x, y, z));
                }
            }
        }
        // listed bottom face first so the R = I tie resolves to index 0
        ConvexPolyhedron::new(vertices, eps)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn hull_volume(&self) -> f64 {
        self.tetra_fold().0
    }

    pub fn hull_centroid(&self) -> Vec3 {
        let (v, m) = self.tetra_fold();
        m / v
    }

    fn tetra_fold(&self) -> (f64, Vec3) {
        let apex = self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64;
        let mut vol = 0.0;
        let mut moment = Vec3::zeros();
        for t in &self.triangles {
            let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            let v = (a - apex).dot(&(b - apex).cross(&(c - apex))) / 6.0;
            vol += v;
            moment += (apex + a + b + c) * (v / 4.0);
        }
        (vol, moment)
    }

    /// Distance to the (unrounded) hull; negative inside.
    fn hull_distance(&self, z: &Vec3) -> (f64, Vec3) {
        let (best_face, inside) = self
            .faces
            .iter()
            .enumerate()
            .map(|(i, f)| (i, f.normal.dot(z) - f.offset))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if inside <= 0.0 {
            return (inside, self.faces[best_face].normal);
        }
        let mut best = f64::INFINITY;
        let mut dir = Vec3::zeros();
        for t in &self.triangles {
            let q = closest_point_on_triangle(z, &self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]);
            let d = (z - q).norm();
            if d < best {
                best = d;
                dir = z - q;
            }
        }
        (best, dir / best)
    }

    pub fn sdf(&self, z: &Vec3) -> f64 {
        self.hull_distance(z).0 - self.eps
    }

    pub fn sdf_grad(&self, z: &Vec3) -> Vec3 {
        self.hull_distance(z).1
    }

    fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo.add_scalar(-self.eps), hi.add_scalar(self.eps))
    }
}

/// Enumerates supporting planes through vertex triples and fan-triangulates
/// each face. Quartic in the vertex count; intended for small hulls.
fn hull_faces(vertices: &[Vec3], scale: f64) -> Result<(Vec<Face>, Vec<[usize; 3]>)> {
    let tol = 1e-10 * scale;
    let n = vertices.len();
    let mut faces: Vec<Face> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let cr = (vertices[j] - vertices[i]).cross(&(vertices[k] - vertices[i]));
                let len = cr.norm();
                if len <= tol * scale {
                    continue;
                }
                let mut normal = cr / len;
                let mut offset = normal.dot(&vertices[i]);
                let (mut above, mut below) = (false, false);
                for v in vertices {
                    let s = normal.dot(v) - offset;
                    above |= s > tol;
                    below |= s < -tol;
                }
                if above && below {
                    continue;
                }
                if above {
                    normal = -normal;
                    offset = -offset;
                }
                let dup = faces.iter().any(|f| (f.normal - normal).norm() < 1e-9 && (f.offset - offset).abs() < tol);
                if !dup {
                    faces.push(Face { normal, offset });
                }
            }
        }
    }
    if faces.len() < 4 {
        return Err(Error::InvalidParameter("polyhedron vertices are coplanar".into()));
    }
    let mut triangles = Vec::new();
    for f in &faces {
        let on: Vec<usize> = (0..n).filter(|&i| (f.normal.dot(&vertices[i]) - f.offset).abs() <= tol).collect();
        let center = on.iter().map(|&i| vertices[i]).sum::<Vec3>() / on.len() as f64;
        let u = (vertices[on[0]] - center).normalize();
        let w = f.normal.cross(&u);
        let mut ordered: Vec<(f64, usize)> = on
            .iter()
            .map(|&i| {
                let d = vertices[i] - center;
                (d.dot(&w).atan2(d.dot(&u)), i)
            })
            .collect();
        ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
        for t in 1..ordered.len() - 1 {
            triangles.push([ordered[0].1, ordered[t].1, ordered[t + 1].1]);
        }
    }
    Ok((faces, triangles))
}

/// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection §5.1.5).
fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// CSG tree over convex primitives.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeNode {
    Ellipsoid {
        shape: Ellipsoid,
        offset: Vec3,
    },
    Polyhedron(ConvexPolyhedron),
    /// {z : nᵀz + D ≤ 0}
    HalfSpace {
        normal: Vec3,
        offset: f64,
    },
    Union(Box<ShapeNode>, Box<ShapeNode>),
    Intersection(Box<ShapeNode>, Box<ShapeNode>),
    Complement(Box<ShapeNode>),
}

impl ShapeNode {
    pub fn ellipsoid(shape: Ellipsoid) -> Self {
        ShapeNode::Ellipsoid { shape, offset: Vec3::zeros() }
    }

    pub fn ellipsoid_at(shape: Ellipsoid, offset: Vec3) -> Self {
        ShapeNode::Ellipsoid { shape, offset }
    }

    pub fn half_space(normal: Vec3, offset: f64) -> Self {
        ShapeNode::HalfSpace { normal, offset }
    }

    pub fn union(a: ShapeNode, b: ShapeNode) -> Self {
        ShapeNode::Union(Box::new(a), Box::new(b))
    }

    pub fn intersection(a: ShapeNode, b: ShapeNode) -> Self {
        ShapeNode::Intersection(Box::new(a), Box::new(b))
    }

    pub fn complement(a: ShapeNode) -> Self {
        ShapeNode::Complement(Box::new(a))
    }

    /// Implicit function value at a body-frame point.
    pub fn sdf_eval(&self, z: &Vec3) -> f64 {
        match self {
            ShapeNode::Ellipsoid { shape, offset } => shape.implicit(&(z - offset)),
            ShapeNode::Polyhedron(p) => p.sdf(z),
            ShapeNode::HalfSpace { normal, offset } => normal.dot(z) + offset,
            ShapeNode::Union(a, b) => a.sdf_eval(z).min(b.sdf_eval(z)),
            ShapeNode::Intersection(a, b) => a.sdf_eval(z).max(b.sdf_eval(z)),
            ShapeNode::Complement(a) => -a.sdf_eval(z),
        }
    }

    /// Gradient of the implicit function, following the active child of each
    /// CSG node. Ties with differing child gradients are reported as
    /// [`Error::GradientUndefined`].
    pub fn sdf_grad(&self, z: &Vec3) -> Result<Vec3> {
        match self {
            ShapeNode::Ellipsoid { shape, offset } => shape.implicit_grad(&(z - offset)),
            ShapeNode::Polyhedron(p) => Ok(p.sdf_grad(z)),
            ShapeNode::HalfSpace { normal, .. } => Ok(*normal),
            ShapeNode::Union(a, b) => select_grad(a, b, z, |pa, pb| pa < pb),
            ShapeNode::Intersection(a, b) => select_grad(a, b, z, |pa, pb| pa > pb),
            ShapeNode::Complement(a) => Ok(-a.sdf_grad(z)?),
        }
    }

    /// Axis-aligned bounds of the solid, or `None` if unbounded.
    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        match self {
            ShapeNode::Ellipsoid { shape, offset } => Some((offset - shape.semiaxes(), offset + shape.semiaxes())),
            ShapeNode::Polyhedron(p) => Some(p.bounds()),
            ShapeNode::HalfSpace { .. } | ShapeNode::Complement(_) => None,
            ShapeNode::Union(a, b) => {
                let (la, ha) = a.bounding_box()?;
                let (lb, hb) = b.bounding_box()?;
                Some((la.inf(&lb), ha.sup(&hb)))
            }
            ShapeNode::Intersection(a, b) => match (a.bounding_box(), b.bounding_box()) {
                (Some((la, ha)), Some((lb, hb))) => Some((la.sup(&lb), ha.inf(&hb))),
                (Some(bb), None) | (None, Some(bb)) => Some(bb),
                (None, None) => None,
            },
        }
    }
}

fn select_grad<F>(a: &ShapeNode, b: &ShapeNode, z: &Vec3, prefer_a: F) -> Result<Vec3>
where
    F: Fn(f64, f64) -> bool,
{
    let (pa, pb) = (a.sdf_eval(z), b.sdf_eval(z));
    if (pa - pb).abs() <= CSG_TIE_TOL {
        let (ga, gb) = (a.sdf_grad(z)?, b.sdf_grad(z)?);
        if (ga - gb).norm() <= CSG_TIE_TOL {
            Ok(ga)
        } else {
            Err(Error::GradientUndefined)
        }
    } else if prefer_a(pa, pb) {
        a.sdf_grad(z)
    } else {
        b.sdf_grad(z)
    }
}

/// Rigid body: mass, standard inertia J, nonstandard inertia J_d, and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBody {
    mass: f64,
    j: Mat3,
    jd: Mat3,
    j_inv: Mat3,
    shape: ShapeNode,
}

impl RigidBody {
    pub fn new(mass: f64, j: Mat3, shape: ShapeNode) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {mass}")));
        }
        let jd = jd_from_j(&j)?;
        if nalgebra::Cholesky::new(j).is_none() {
            return Err(Error::SingularInertia);
        }
        let j_inv = j.try_inverse().ok_or(Error::SingularInertia)?;
        Ok(RigidBody { mass, j, jd, j_inv, shape })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Mat3 {
        &self.j
    }

    pub fn nonstandard_inertia(&self) -> &Mat3 {
        &self.jd
    }

    pub fn inertia_inverse(&self) -> &Mat3 {
        &self.j_inv
    }

    pub fn shape(&self) -> &ShapeNode {
        &self.shape
    }

    /// Smallest eigenvalue of J.
    pub fn min_principal_moment(&self) -> f64 {
        self.j.symmetric_eigenvalues().min()
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Uniform-density ellipsoid: (m/5) diag(b² + c², a² + c², a² + b²).
pub fn inertia_ellipsoid(m: f64, a: f64, b: f64, c: f64) -> Result<Mat3> {
    require_positive("mass", m)?;
    Ellipsoid::new(a, b, c)?;
    let (a2, b2, c2) = (a * a, b * b, c * c);
    Ok(Mat3::from_diagonal(&Vec3::new(m * (b2 + c2) / 5.0, m * (a2 + c2) / 5.0, m * (a2 + b2) / 5.0)))
}

/// Uniform-density cube: (m s² / 6) I.
pub fn inertia_cube(m: f64, s: f64) -> Result<Mat3> {
    require_positive("mass", m)?;
    require_positive("side", s)?;
    Ok(Mat3::identity() * (m * s * s / 6.0))
}

/// J_d = ½ tr[J] I − J
pub fn jd_from_j(j: &Mat3) -> Result<Mat3> {
    if !is_symmetric(j, SKEW_TOL) {
        return Err(Error::NotSymmetric { deviation: (j - j.transpose()).abs().max() });
    }
    Ok(Mat3::identity() * (0.5 * j.trace()) - j)
}

/// J = tr[J_d] I − J_d
pub fn j_from_jd(jd: &Mat3) -> Result<Mat3> {
    if !is_symmetric(jd, SKEW_TOL) {
        return Err(Error::NotSymmetric { deviation: (jd - jd.transpose()).abs().max() });
    }
    Ok(Mat3::identity() * jd.trace() - jd)
}

/// Both sides of S(JΩ) = S(Ω) J_d + J_d S(Ω).
pub fn identity_sj(j: &Mat3, jd: &Mat3, omega: &Vec3) -> Result<(Mat3, Mat3)> {
    let expected = jd_from_j(j)?;
    let deviation = (expected - jd).abs().max();
    if deviation > INERTIA_TOL * j.abs().max().max(1.0) {
        return Err(Error::InconsistentInertia { deviation });
    }
    let s = skew(omega);
    Ok((skew(&(j * omega)), s * jd + jd * s))
}

/// Uniform-density inertia about the body origin by midpoint quadrature on a
/// `resolution`³ grid over the bounding box. Points are classified by the sign
/// of [`ShapeNode::sdf_eval`]. The sampled centroid must sit at the origin
/// within [`CENTROID_REL_TOL`] of the bounding radius.
pub fn inertia_composite(node: &ShapeNode, m: f64, resolution: usize) -> Result<Mat3> {
    require_positive("mass", m)?;
    if resolution < 32 {
        return Err(Error::InvalidParameter(format!("quadrature resolution must be at least 32, got {resolution}")));
    }
    let (lo, hi) = node.bounding_box().ok_or(Error::UnboundedShape)?;
    if !(0..3).all(|k| hi[k] > lo[k]) {
        return Err(Error::InvalidParameter("shape has an empty bounding box".into()));
    }
    let cell = (hi - lo) / resolution as f64;
    let slices: Vec<(u64, Vec3, Mat3)> = (0..resolution)
        .into_par_iter()
        .map(|i| {
            let x = lo.x + (i as f64 + 0.5) * cell.x;
            let mut count = 0u64;
            let mut first = Vec3::zeros();
            let mut second = Mat3::zeros();
            for jy in 0..resolution {
                let y = lo.y + (jy as f64 + 0.5) * cell.y;
                for kz in 0..resolution {
                    let z = Vec3::new(x, y, lo.z + (kz as f64 + 0.5) * cell.z);
                    if node.sdf_eval(&z) <= 0.0 {
                        count += 1;
                        first += z;
                        second += z * z.transpose();
                    }
                }
            }
            (count, first, second)
        })
        .collect();

    let (mut count, mut first, mut second) = (0u64, Vec3::zeros(), Mat3::zeros());
    for (c, f, s) in slices {
        count += c;
        first += f;
        second += s;
    }
    if count == 0 {
        return Err(Error::InvalidParameter("shape contains no quadrature points".into()));
    }
    let n = count as f64;
    let centroid = first / n;
    let radius = (0..8)
        .map(|corner| {
            Vec3::new(
                if corner & 1 == 0 { lo.x } else { hi.x },
                if corner & 2 == 0 { lo.y } else { hi.y },
                if corner & 4 == 0 { lo.z } else { hi.z },
            )
            .norm()
        })
        .fold(0.0, f64::max);
    let tolerance = CENTROID_REL_TOL * radius;
    if centroid.norm() > tolerance {
        return Err(Error::OffOriginCentroid { offset: [centroid.x, centroid.y, centroid.z], tolerance });
    }
    let second = second * (m / n);
    let j = Mat3::identity() * second.trace() - second;
    let j = (j + j.transpose()) * 0.5;
    if nalgebra::Cholesky::new(j).is_none() {
        return Err(Error::SingularInertia);
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(a: f64, b: f64, c: f64) -> Mat3 {
        Mat3::from_diagonal(&Vec3::new(a, b, c))
    }

    fn rel_err(a: &Mat3, b: &Mat3) -> f64 {
        (a - b).abs().max() / b.abs().max()
    }

    #[test]
    fn ellipsoid_inertia_formula() {
        assert_eq!(inertia_ellipsoid(1.0, 2.0, 3.0, 4.0).unwrap(), diag(5.0, 4.0, 2.6));
        assert_eq!(inertia_ellipsoid(1.0, 1.0, 1.0, 1.0).unwrap(), diag(0.4, 0.4, 0.4));
        assert_eq!(inertia_ellipsoid(2.0, 2.0, 3.0, 4.0).unwrap(), diag(10.0, 8.0, 5.2));
        assert!(inertia_ellipsoid(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(inertia_ellipsoid(1.0, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn cube_inertia_formula() {
        let j = inertia_cube(1.0, 2.0 * 3f64.sqrt()).unwrap();
        assert!((j - Mat3::identity() * 2.0).abs().max() <= 4.0 * f64::EPSILON);
        assert_eq!(inertia_cube(1.0, 1.0).unwrap(), Mat3::identity() / 6.0);
        assert_eq!(inertia_cube(3.0, 1.0).unwrap(), Mat3::identity() * 0.5);
        assert!(inertia_cube(1.0, 0.0).is_err());
    }

    #[test]
    fn jd_examples() {
        let jd = jd_from_j(&diag(5.0, 4.0, 2.6)).unwrap();
        assert!((jd - diag(0.8, 1.8, 3.2)).abs().max() < 1e-15);
        let sphere = jd_from_j(&(Mat3::identity() * 0.4)).unwrap();
        assert!((sphere - Mat3::identity() * 0.2).abs().max() < 1e-16);
        let mut asym = Mat3::identity();
        asym[(0, 1)] = 1e-6;
        assert!(jd_from_j(&asym).is_err());
    }

    #[test]
    fn sdf_examples() {
        let hs = ShapeNode::half_space(Vec3::z(), 0.0);
        assert_eq!(hs.sdf_eval(&Vec3::new(0.0, 0.0, 2.0)), 2.0);
        assert_eq!(hs.sdf_grad(&Vec3::new(3.0, -1.0, 5.0)).unwrap(), Vec3::z());
        let unit = ShapeNode::ellipsoid(Ellipsoid::sphere(1.0).unwrap());
        assert_eq!(unit.sdf_eval(&Vec3::zeros()), -1.0);
        let u = ShapeNode::union(
            ShapeNode::ellipsoid_at(Ellipsoid::sphere(1.0).unwrap(), Vec3::new(1.0, 0.0, 0.0)),
            ShapeNode::ellipsoid_at(Ellipsoid::sphere(1.0).unwrap(), Vec3::new(-1.0, 0.0, 0.0)),
        );
        assert_eq!(u.sdf_eval(&Vec3::zeros()), 0.0);
    }

    #[test]
    fn union_gradient_cases() {
        let left = ShapeNode::ellipsoid_at(Ellipsoid::sphere(1.0).unwrap(), Vec3::new(-1.0, 0.0, 0.0));
        let right = ShapeNode::ellipsoid_at(Ellipsoid::sphere(1.0).unwrap(), Vec3::new(1.0, 0.0, 0.0));
        let u = ShapeNode::union(left.clone(), right);
        let z = Vec3::new(-1.5, 0.2, 0.0);
        assert_eq!(u.sdf_grad(&z).unwrap(), left.sdf_grad(&z).unwrap());
        // the two spheres touch at the origin with opposite normals
        assert!(matches!(u.sdf_grad(&Vec3::zeros()), Err(Error::GradientUndefined)));
        // equal values and equal gradients take the first child
        let same = ShapeNode::union(left.clone(), left.clone());
        assert_eq!(same.sdf_grad(&z).unwrap(), left.sdf_grad(&z).unwrap());
        let c = ShapeNode::complement(left.clone());
        assert_eq!(c.sdf_grad(&z).unwrap(), -left.sdf_grad(&z).unwrap());
    }

    #[test]
    fn cube_hull_and_sdf() {
        let cube = ConvexPolyhedron::cube(2.0, 0.01).unwrap();
        assert_eq!(cube.face_count(), 6);
        assert!((cube.hull_volume() - 8.0).abs() < 1e-12);
        assert!(cube.hull_centroid().norm() < 1e-14);
        assert!((cube.sdf(&Vec3::zeros()) + 1.01).abs() < 1e-15);
        assert!((cube.sdf(&Vec3::new(0.0, 0.0, 3.0)) - 1.99).abs() < 1e-14);
        // corner region uses the Euclidean distance to the vertex
        let p = Vec3::new(2.0, 2.0, 2.0);
        assert!((cube.sdf(&p) - (3f64.sqrt() - 0.01)).abs() < 1e-14);
        let g = cube.sdf_grad(&p);
        assert!((g - Vec3::repeat(1.0 / 3f64.sqrt())).norm() < 1e-14);
    }

    #[test]
    fn polyhedron_validation() {
        let flat = vec![Vec3::new(1., 0., 0.), Vec3::new(0., 1., 0.), Vec3::new(-1., 0., 0.), Vec3::new(0., -1., 0.)];
        assert!(ConvexPolyhedron::new(flat, 0.1).is_err());
        let shifted: Vec<Vec3> =
            ConvexPolyhedron::cube(1.0, 0.1).unwrap().vertices().iter().map(|v| v + Vec3::new(0.1, 0.0, 0.0)).collect();
        assert!(matches!(ConvexPolyhedron::new(shifted, 0.1), Err(Error::OffOriginCentroid { .. })));
        assert!(ConvexPolyhedron::cube(1.0, 0.0).is_err());
    }

    #[test]
    fn de_morgan_consistency() {
        let a = ShapeNode::ellipsoid_at(Ellipsoid::new(2.0, 1.0, 1.5).unwrap(), Vec3::new(0.5, 0.0, 0.0));
        let b = ShapeNode::Polyhedron(ConvexPolyhedron::cube(2.0, 0.05).unwrap());
        let lhs = ShapeNode::complement(ShapeNode::union(a.clone(), b.clone()));
        let rhs = ShapeNode::intersection(ShapeNode::complement(a), ShapeNode::complement(b));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let z = Vec3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            assert_eq!(lhs.sdf_eval(&z), rhs.sdf_eval(&z));
        }
    }

    #[test]
    fn sdf_sign_matches_membership() {
        let e = Ellipsoid::new(3.0, 1.0, 2.0).unwrap();
        let eo = Vec3::new(0.5, -0.2, 0.1);
        let node = ShapeNode::union(
            ShapeNode::ellipsoid_at(e, eo),
            ShapeNode::Polyhedron(ConvexPolyhedron::cube(2.0, 1e-3).unwrap()),
        );
        let inside_cube = |z: &Vec3| z.iter().all(|c| c.abs() <= 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let z = Vec3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..3.0));
            let in_e = e.quadratic_form(&(z - eo)) < 1.0;
            let v = node.sdf_eval(&z);
            // skip the thin rounded shell where the analytic cube test differs
            let shell = z.iter().all(|c| c.abs() <= 1.0 + 1e-3) && !inside_cube(&z);
            if shell && !in_e {
                continue;
            }
            assert_eq!(v < 0.0, in_e || inside_cube(&z), "z = {z:?}, v = {v}");
        }
    }

    #[test]
    fn composite_matches_ellipsoid_formula() {
        let node = ShapeNode::ellipsoid(Ellipsoid::new(2.0, 3.0, 4.0).unwrap());
        let j = inertia_composite(&node, 1.0, 128).unwrap();
        assert!(rel_err(&j, &diag(5.0, 4.0, 2.6)) < 1e-3, "{j}");
        let sphere = ShapeNode::ellipsoid(Ellipsoid::sphere(1.0).unwrap());
        let js = inertia_composite(&sphere, 1.0, 128).unwrap();
        assert!((js - Mat3::identity() * 0.4).abs().max() < 1e-3);
    }

    #[test]
    fn composite_converges_with_resolution() {
        let node = ShapeNode::ellipsoid(Ellipsoid::new(2.0, 3.0, 4.0).unwrap());
        let exact = diag(5.0, 4.0, 2.6);
        let coarse = rel_err(&inertia_composite(&node, 1.0, 32).unwrap(), &exact);
        let fine = rel_err(&inertia_composite(&node, 1.0, 128).unwrap(), &exact);
        assert!(fine < coarse, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn composite_errors() {
        let hs = ShapeNode::half_space(Vec3::z(), 0.0);
        assert!(matches!(inertia_composite(&hs, 1.0, 32), Err(Error::UnboundedShape)));
        let off = ShapeNode::ellipsoid_at(Ellipsoid::sphere(1.0).unwrap(), Vec3::new(0.5, 0.0, 0.0));
        assert!(matches!(inertia_composite(&off, 1.0, 32), Err(Error::OffOriginCentroid { .. })));
        let ok = ShapeNode::ellipsoid(Ellipsoid::sphere(1.0).unwrap());
        assert!(inertia_composite(&ok, 1.0, 16).is_err());
    }

    #[test]
    fn sj_identity_examples() {
        let j = Mat3::identity() * 0.4;
        let jd = jd_from_j(&j).unwrap();
        let (l, r) = identity_sj(&j, &jd, &Vec3::zeros()).unwrap();
        assert_eq!(l, Mat3::zeros());
        assert_eq!(r, Mat3::zeros());
        let (l, r) = identity_sj(&j, &jd, &Vec3::x()).unwrap();
        assert!((l - skew(&(Vec3::x() * 0.4))).abs().max() < 1e-16);
        assert!((r - l).abs().max() < 1e-15);
        assert!(identity_sj(&j, &(jd * 2.0), &Vec3::x()).is_err());
    }

    fn spd() -> impl Strategy<Value = Mat3> {
        (0.5..10.0f64, 0.5..10.0f64, 0.5..10.0f64, -3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(
            |(a, b, c, x, y, z)| {
                let r = exp_so3(&Vec3::new(x, y, z));
                r.matrix() * diag(a, b, c) * r.matrix().transpose()
            },
        )
    }

    proptest! {
        #[test]
        fn jd_round_trip(j in spd()) {
            let back = j_from_jd(&jd_from_j(&j).unwrap()).unwrap();
            prop_assert!((back - j).abs().max() <= 1e-12);
        }

        #[test]
        fn sj_identity_random(j in spd(), w in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64)) {
            let j = (j + j.transpose()) * 0.5;
            let jd = jd_from_j(&j).unwrap();
            let omega = Vec3::new(w.0, w.1, w.2);
            let (l, r) = identity_sj(&j, &jd, &omega).unwrap();
            prop_assert!((l - r).abs().max() <= 1e-12);
        }

        #[test]
        fn kinetic_energy_equivalence(j in spd(), w in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64)) {
            let j = (j + j.transpose()) * 0.5;
            let jd = jd_from_j(&j).unwrap();
            let omega = Vec3::new(w.0, w.1, w.2);
            let s = skew(&omega);
            let lhs = 0.5 * (s * jd * s.transpose()).trace();
            let rhs = 0.5 * omega.dot(&(j * omega));
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }
}
