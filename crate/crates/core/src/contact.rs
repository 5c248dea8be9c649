//! Signed distance between a rigid body and a fixed plane.
//!
//! For a convex body B placed at (x, R) above the plane ñᵀz + D = 0 the
//! collision function is Φ = ñᵀRρ_C + ñᵀx + D, where ρ_C is the body-frame point
//! of B minimizing ñᵀRρ. Since ρ_C is a minimizer of a function that is linear
//! in R, ∂Φ/∂R = ñρ_Cᵀ without any contribution from ∂ρ_C/∂R.
//!
//! The ellipsoid–plane helpers at the bottom work with a general plane offset
//! and serve as independent oracles for the dynamics code.

use crate::body::{ConvexPolyhedron, Ellipsoid, RigidBody, ShapeNode};
use crate::error::{Error, Result};
use crate::geom::{asym, unskew_unchecked, Mat3, Pose, Rotation, Vec3};

/// Candidates strictly inside another union member by more than this are discarded.
pub const UNION_INTERIOR_TOL: f64 = 1e-12;
const UNIT_TOL: f64 = 1e-14;

/// The plane ñᵀz + D = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    /// An upward-facing plane: ‖ñ‖ = 1 and ñ₃ > 0.
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        let plane = Plane::unoriented(normal, offset)?;
        if !(normal.z > 0.0) {
            return Err(Error::InvalidParameter(format!("plane normal must point upward (n3 > 0), got {normal:?}")));
        }
        Ok(plane)
    }

    /// A plane with arbitrary unit normal, as obtained by pulling a world-frame
    /// plane back into a body frame.
    pub fn unoriented(normal: Vec3, offset: f64) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > UNIT_TOL || !offset.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "plane normal must be a unit vector, got norm {}",
                normal.norm()
            )));
        }
        Ok(Plane { normal, offset })
    }

    pub fn horizontal() -> Self {
        Plane { normal: Vec3::z(), offset: 0.0 }
    }

    /// Horizontal plane through the origin rotated by `theta` about the y axis.
    pub fn tilted_about_y(theta: f64) -> Result<Self> {
        Plane::new(Vec3::new(theta.sin(), 0.0, theta.cos()), 0.0)
    }

    pub fn normal(&self) -> &Vec3 {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// The same plane expressed in the frame of a body at `pose`.
    pub fn pulled_back(&self, pose: &Pose) -> Result<Plane> {
        Plane::unoriented(
            pose.attitude.matrix().transpose() * self.normal,
            self.offset + self.normal.dot(&pose.position),
        )
    }
}

/// Φ at a pose together with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactGeometry {
    pub phi: f64,
    pub dphi_dx: Vec3,
    pub dphi_dr: Mat3,
    /// χ with S(χ) = asym(Rᵀ ∂Φ/∂R).
    pub chi: Vec3,
    /// Body-frame contact point.
    pub rho_c: Vec3,
}

/// Φ = ñᵀx + D − ‖I_E Rᵀñ‖
pub fn phi_ellipsoid(pose: &Pose, e: &Ellipsoid, p: &Plane) -> f64 {
    let c = pose.attitude.matrix().transpose() * p.normal;
    p.normal.dot(&pose.position) + p.offset - c.component_mul(&e.semiaxes()).norm()
}

/// (∂Φ/∂x, ∂Φ/∂R) = (ñ, −ññᵀR I_E² / ‖I_E Rᵀñ‖)
pub fn phi_grad_ellipsoid(pose: &Pose, e: &Ellipsoid, p: &Plane) -> (Vec3, Mat3) {
    let r = pose.attitude.matrix();
    let i = e.shape_matrix();
    let c = r.transpose() * p.normal;
    let norm = (i * c).norm();
    let dr = -(p.normal * p.normal.transpose()) * r * i * i / norm;
    (p.normal, dr)
}

/// χ = unskew(asym(Rᵀ ∂Φ/∂R)).
pub fn chi_vector(r: &Rotation, dphi_dr: &Mat3) -> Vec3 {
    let chi = unskew_unchecked(&asym(&(r.matrix().transpose() * dphi_dr)));
    debug_assert!(
        (chi - chi_vector_columns(r, dphi_dr)).norm() <= 1e-12 * dphi_dr.abs().max().max(1.0),
        "column and unskew evaluations of chi disagree"
    );
    chi
}

/// χ = Σ φ_k × r_k with r_k the columns of Rᵀ and φ_k those of (∂Φ/∂R)ᵀ.
pub fn chi_vector_columns(r: &Rotation, dphi_dr: &Mat3) -> Vec3 {
    let rt = r.matrix().transpose();
    let pt = dphi_dr.transpose();
    (0..3).map(|k| pt.column(k).cross(&rt.column(k))).sum()
}

/// ρ_C = −I_E² Rᵀñ / ‖I_E Rᵀñ‖, the body-frame point closest to the plane.
pub fn closest_point_ellipsoid(r: &Rotation, e: &Ellipsoid, p: &Plane) -> Vec3 {
    support_point_ellipsoid(e, &(r.matrix().transpose() * p.normal))
}

/// Minimizer of cᵀρ over the ellipsoid boundary.
fn support_point_ellipsoid(e: &Ellipsoid, c: &Vec3) -> Vec3 {
    let ax = e.semiaxes();
    let ic = c.component_mul(&ax);
    -ic.component_mul(&ax) / ic.norm()
}

/// Vertex minimizing ñᵀRv (lowest index on ties) and the rounded contact
/// point v − εRᵀñ.
pub fn closest_point_polyhedron(r: &Rotation, poly: &ConvexPolyhedron, p: &Plane) -> (usize, Vec3) {
    support_point_polyhedron(poly, &(r.matrix().transpose() * p.normal))
}

fn support_point_polyhedron(poly: &ConvexPolyhedron, c: &Vec3) -> (usize, Vec3) {
    let (index, _) = poly.vertices().iter().enumerate().fold((0, f64::INFINITY), |best, (i, v)| {
        let h = c.dot(v);
        if h < best.1 {
            (i, h)
        } else {
            best
        }
    });
    (index, poly.vertices()[index] - c * poly.eps())
}

/// Minimizer of cᵀρ over the intersection of two ellipsoids.
///
/// Each nonnegative combination (1−t)q₁ + tq₂ of the two constraint quadrics
/// bounds an ellipsoid containing the intersection, whose support point is
/// available in closed form. The dual optimum is attained where the support
/// point balances q₁ = q₂ (or at an endpoint when one member's support point
/// already lies in the other); the balance is located by bisection on t.
fn support_point_intersection((e1, o1): (&Ellipsoid, &Vec3), (e2, o2): (&Ellipsoid, &Vec3), c: &Vec3) -> Result<Vec3> {
    let a1 = Mat3::from_diagonal(&e1.semiaxes().map(|s| 1.0 / (s * s)));
    let a2 = Mat3::from_diagonal(&e2.semiaxes().map(|s| 1.0 / (s * s)));
    let q1 = |z: &Vec3| e1.quadratic_form(&(z - o1)) - 1.0;
    let q2 = |z: &Vec3| e2.quadratic_form(&(z - o2)) - 1.0;
    let k1 = o1.dot(&(a1 * o1)) - 1.0;
    let k2 = o2.dot(&(a2 * o2)) - 1.0;
    let point = |t: f64| -> Result<Vec3> {
        let a = a1 * (1.0 - t) + a2 * t;
        let b = a1 * o1 * (1.0 - t) + a2 * o2 * t;
        let k = k1 * (1.0 - t) + k2 * t;
        let a_inv = Mat3::from_diagonal(&a.diagonal().map(|d| 1.0 / d));
        let center = a_inv * b;
        let r2 = b.dot(&center) - k;
        if r2 < 0.0 {
            return Err(Error::UnsupportedShape("intersection of ellipsoids is empty".into()));
        }
        let ac = a_inv * c;
        Ok(center - ac * (r2.sqrt() / c.dot(&ac).sqrt()))
    };

    let start = point(0.0)?;
    if q2(&start) <= 0.0 {
        return Ok(start);
    }
    let end = point(1.0)?;
    if q1(&end) <= 0.0 {
        return Ok(end);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let z = point(mid)?;
        if q2(&z) - q1(&z) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    point(0.5 * (lo + hi))
}

/// ρ_C × c for a centred ellipsoid, expanded so that equal semiaxes cancel
/// exactly: −(I_E²c × c)/‖I_E c‖.
fn chi_centred_ellipsoid(e: &Ellipsoid, c: &Vec3) -> Vec3 {
    let (a2, b2, c2) = (e.a * e.a, e.b * e.b, e.c * e.c);
    let v = Vec3::new(c.y * c.z * (b2 - c2), c.z * c.x * (c2 - a2), c.x * c.y * (a2 - b2));
    -v / c.component_mul(&e.semiaxes()).norm()
}

/// Body-frame minimizer of cᵀρ over the shape.
pub fn support_point(node: &ShapeNode, c: &Vec3) -> Result<Vec3> {
    match node {
        ShapeNode::Ellipsoid { shape, offset } => Ok(offset + support_point_ellipsoid(shape, c)),
        ShapeNode::Polyhedron(poly) => Ok(support_point_polyhedron(poly, c).1),
        ShapeNode::Union(a, b) => {
            let mut best: Option<(f64, Vec3)> = None;
            for (this, other) in [(a, b), (b, a)] {
                let z = support_point(this, c)?;
                if other.sdf_eval(&z) < -UNION_INTERIOR_TOL {
                    continue;
                }
                let h = c.dot(&z);
                if best.is_none_or(|(bh, _)| h < bh) {
                    best = Some((h, z));
                }
            }
            let (_, z) = best.ok_or_else(|| Error::UnsupportedShape("every union candidate is interior".into()))?;
            // a contact point on the seam between members has no unique normal
            node.sdf_grad(&z)?;
            Ok(z)
        }
        ShapeNode::Intersection(a, b) => match (a.as_ref(), b.as_ref()) {
            (ShapeNode::Ellipsoid { shape: e1, offset: o1 }, ShapeNode::Ellipsoid { shape: e2, offset: o2 }) => {
                support_point_intersection((e1, o1), (e2, o2), c)
            }
            _ => Err(Error::UnsupportedShape("intersections are supported between two ellipsoids only".into())),
        },
        ShapeNode::HalfSpace { .. } => Err(Error::UnsupportedShape("half-space body".into())),
        ShapeNode::Complement(_) => Err(Error::UnsupportedShape("complement body".into())),
    }
}

/// Φ, ∂Φ/∂x = ñ, ∂Φ/∂R = ñρ_Cᵀ, χ and ρ_C for any supported body shape.
///
/// For rounded polyhedra ρ_C is the rounded point v − εRᵀñ, so ñρ_Cᵀ equals
/// ñvᵀ − εññᵀR.
pub fn phi_general(pose: &Pose, body: &RigidBody, p: &Plane) -> Result<ContactGeometry> {
    let r = pose.attitude.matrix();
    let c = r.transpose() * p.normal;
    let rho_c = support_point(body.shape(), &c)?;
    let phi = c.dot(&rho_c) + p.normal.dot(&pose.position) + p.offset;
    let dphi_dr = p.normal * rho_c.transpose();
    let chi = match body.shape() {
        ShapeNode::Ellipsoid { shape, offset } => offset.cross(&c) + chi_centred_ellipsoid(shape, &c),
        _ => rho_c.cross(&c),
    };
    Ok(ContactGeometry { phi, dphi_dx: p.normal, dphi_dr, chi, rho_c })
}

/// Distance between the ellipsoid at `pose` and a plane with general offset:
/// min |(D + ñᵀx) ± ‖I_E Rᵀñ‖|. Meaningful as a distance when
/// [`is_separated`] holds; it is zero at grazing contact.
pub fn ellipsoid_plane_distance(pose: &Pose, e: &Ellipsoid, p: &Plane) -> f64 {
    let (d, r) = center_offset_and_radius(pose, e, p);
    (d - r).abs().min((d + r).abs())
}

/// The ellipsoid and plane are disjoint iff ‖I_E Rᵀñ‖ < |D + ñᵀx|.
pub fn is_separated(pose: &Pose, e: &Ellipsoid, p: &Plane) -> bool {
    let (d, r) = center_offset_and_radius(pose, e, p);
    r < d.abs()
}

fn center_offset_and_radius(pose: &Pose, e: &Ellipsoid, p: &Plane) -> (f64, f64) {
    let c = pose.attitude.matrix().transpose() * p.normal;
    (p.offset + p.normal.dot(&pose.position), c.component_mul(&e.semiaxes()).norm())
}

/// Pole of a point with respect to a centred ellipsoid: p / f_E(p).
pub fn pole_of_point(p: &Vec3, e: &Ellipsoid) -> Result<Vec3> {
    let f = e.quadratic_form(p);
    if f == 0.0 {
        return Err(Error::InvalidParameter("the centre of an ellipsoid has no pole".into()));
    }
    Ok(p / f)
}

/// Pole of a body-frame plane Ax + By + Cz + D = 0 with respect to a centred
/// ellipsoid: −(Aa², Bb², Cc²) / D.
pub fn pole_of_plane(p: &Plane, e: &Ellipsoid) -> Result<Vec3> {
    if p.offset == 0.0 {
        return Err(Error::InvalidParameter("a plane through the centre has no pole".into()));
    }
    let ax = e.semiaxes();
    Ok(-p.normal.component_mul(&ax).component_mul(&ax) / p.offset)
}
