//! Synthetic analytic benchmark: parametric ellipsoidal bodies carrying a
//! stretched potential-flow solution as ground truth.
//!
//! Fields for non-spherical bodies are the affinely stretched unit-sphere
//! potential flow. They are smooth, geometry-dependent, and closed-form, but
//! NOT physically exact for ellipsoids; the wall-shear and turbulent
//! viscosity patterns are synthetic stand-ins with the right variable roles.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleSurface;
use crate::pipeline::integrate_drag;
use crate::seeding::{derive_seed, stream};
use crate::spatial::{make_domain_box, Axis, BoundingBox, TrimFactors};
use crate::vec3::Vec3;

/// Synthetic wall-shear scale.
const SHEAR_COEFFICIENT: f64 = 0.01;
/// Synthetic turbulent-viscosity scale.
const TURB_VISC_COEFFICIENT: f64 = 0.1;
/// Tolerance below the unit radius before a volume point counts as inside.
const INSIDE_TOL: f64 = 1e-12;

/// Parametric body: an icosphere stretched by the semi-axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub id: String,
    pub semi_axes: Vec3,
    pub center: Vec3,
    pub subdivision: usize,
    pub freestream: f64,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.semi_axes.x <= 0.0 || self.semi_axes.y <= 0.0 || self.semi_axes.z <= 0.0 {
            return Err(Error::config("semi-axes must be positive"));
        }
        if self.subdivision < 1 {
            return Err(Error::config("subdivision must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    TestIn,
    TestOut,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::TestIn => "test_in",
            SplitTag::TestOut => "test_out",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            SplitTag::Train => 0,
            SplitTag::TestIn => 1,
            SplitTag::TestOut => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(SplitTag::Train),
            1 => Ok(SplitTag::TestIn),
            2 => Ok(SplitTag::TestOut),
            _ => Err(Error::dataset(format!("unknown split code {code}"))),
        }
    }
}

/// Per-face-center surface fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceTable {
    pub position: Vec<Vec3>,
    pub normal: Vec<Vec3>,
    pub area: Vec<f64>,
    pub pressure: Vec<f64>,
    pub shear: Vec<Vec3>,
}

impl SurfaceTable {
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }
}

/// Per-point volume fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VolumeTable {
    pub position: Vec<Vec3>,
    pub pressure: Vec<f64>,
    pub velocity: Vec<Vec3>,
    pub turb_visc: Vec<f64>,
}

impl VolumeTable {
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }
}

/// One training/evaluation sample: geometry, field tables, metadata.
#[derive(Debug, Clone)]
pub struct SampleBundle {
    pub spec: ShapeSpec,
    pub geometry: TriangleSurface,
    pub surface: SurfaceTable,
    pub volume: VolumeTable,
    pub drag_label: f64,
    pub split: SplitTag,
}

/// Unit icosphere: icosahedron subdivided `subdivision` times, vertices
/// projected to the unit sphere, outward winding.
pub fn icosphere(subdivision: usize) -> TriangleSurface {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|(x, y, z)| Vec3::new(x, y, z).normalized())
    .collect();

    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivision {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = ((vertices[a as usize] + vertices[b as usize]) * 0.5).normalized();
                vertices.push(m);
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    TriangleSurface::from_parts(vertices, faces).expect("icosphere construction is valid")
}

/// Generate the body mesh: icosphere scaled anisotropically and translated.
pub fn generate_shape(spec: &ShapeSpec) -> Result<TriangleSurface> {
    spec.validate()?;
    let unit = icosphere(spec.subdivision);
    let vertices = unit
        .vertices
        .iter()
        .map(|&v| v.scale(spec.semi_axes) + spec.center)
        .collect();
    TriangleSurface::from_parts(vertices, unit.faces)
}

/// The analytic flow around one body: exact potential flow past the unit
/// sphere, mapped through the inverse anisotropic stretch.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticFlow<'a> {
    pub spec: &'a ShapeSpec,
}

impl<'a> AnalyticFlow<'a> {
    pub fn new(spec: &'a ShapeSpec) -> Self {
        AnalyticFlow { spec }
    }

    /// Map a world point to the unit-sphere frame.
    #[inline]
    pub fn sphere_frame(&self, p: Vec3) -> Vec3 {
        (p - self.spec.center).div_comp(self.spec.semi_axes)
    }

    /// (radius, cos theta, sin theta) in the sphere frame; theta measured
    /// from the +x flow axis.
    fn polar(&self, q: Vec3) -> (f64, f64, f64) {
        let r = q.norm();
        let cos = if r > 0.0 { q.x / r } else { 1.0 };
        let cos = cos.clamp(-1.0, 1.0);
        (r, cos, (1.0 - cos * cos).max(0.0).sqrt())
    }

    /// Sphere-frame velocity of the potential-flow solution at `q`.
    fn sphere_velocity(&self, q: Vec3) -> Vec3 {
        let u_inf = self.spec.freestream;
        let (r, cos, sin) = self.polar(q);
        let r3 = r * r * r;
        let u_r = u_inf * cos * (1.0 - 1.0 / r3);
        let u_t = -u_inf * sin * (1.0 + 1.0 / (2.0 * r3));
        let r_hat = q / r;
        let theta_hat = if sin > 1e-14 {
            (r_hat * cos - Vec3::new(1.0, 0.0, 0.0)) / sin
        } else {
            Vec3::ZERO
        };
        r_hat * u_r + theta_hat * u_t
    }

    /// Volume fields at a world point: `(pressure, velocity, turbulent viscosity)`.
    /// Errors when the point sits inside the body (`r < 1` in the sphere frame).
    pub fn volume_fields(&self, p: Vec3) -> Result<(f64, Vec3, f64)> {
        let q = self.sphere_frame(p);
        let r = q.norm();
        if r < 1.0 - INSIDE_TOL {
            return Err(Error::PointInsideBody { x: p.x, y: p.y, z: p.z, r });
        }
        let u_inf = self.spec.freestream;
        let u_sphere = self.sphere_velocity(q);
        let pressure = 0.5 * (u_inf * u_inf - u_sphere.norm_sq());
        let velocity = u_sphere.scale(self.spec.semi_axes);
        Ok((pressure, velocity, self.turb_visc(p)))
    }

    /// Synthetic wake viscosity: a Gaussian tube downstream of the body tail.
    pub fn turb_visc(&self, p: Vec3) -> f64 {
        let rel = p - self.spec.center;
        let a = self.spec.semi_axes.x;
        let tail = rel.x - a;
        if tail <= 0.0 {
            return 0.0;
        }
        let w = 0.5 * (self.spec.semi_axes.y + self.spec.semi_axes.z);
        let body_length = 2.0 * a;
        let radial = (rel.y * rel.y + rel.z * rel.z) / (w * w);
        TURB_VISC_COEFFICIENT * self.spec.freestream * (-radial).exp() * tail / body_length
    }

    /// Surface fields at a world point on (or near) the body surface:
    /// `(pressure, shear vector)`. Pressure follows `cp = 1 - 9/4 sin^2`,
    /// shear is the synthetic pattern `mu_s * U * sin * t_hat` along the
    /// local flow direction.
    pub fn surface_fields(&self, p: Vec3) -> (f64, Vec3) {
        let u_inf = self.spec.freestream;
        let q = self.sphere_frame(p);
        let (_, _, sin) = self.polar(q);
        let cp = 1.0 - 2.25 * sin * sin;
        let pressure = 0.5 * u_inf * u_inf * cp;
        // Tangential flow direction: the surface velocity mapped back through
        // the stretch, normalized.
        let q_surface = q.normalized();
        let v_world = self.sphere_velocity(q_surface).scale(self.spec.semi_axes);
        let tangent = v_world.normalized();
        let shear = tangent * (SHEAR_COEFFICIENT * u_inf * sin);
        (pressure, shear)
    }
}

/// Fill the surface and volume tables of one sample at the given points.
/// Surface rows use the cp/shear closed forms; volume rows require every
/// point to lie outside the body in the sphere frame.
pub fn generate_fields(
    spec: &ShapeSpec,
    surface_points: &[(Vec3, Vec3, f64)],
    volume_points: &[Vec3],
) -> Result<(SurfaceTable, VolumeTable)> {
    let flow = AnalyticFlow::new(spec);
    let mut surface = SurfaceTable::default();
    for &(position, normal, area) in surface_points {
        let (pressure, shear) = flow.surface_fields(position);
        surface.position.push(position);
        surface.normal.push(normal);
        surface.area.push(area);
        surface.pressure.push(pressure);
        surface.shear.push(shear);
    }
    let mut volume = VolumeTable::default();
    for &position in volume_points {
        let (pressure, velocity, nu_t) = flow.volume_fields(position)?;
        volume.position.push(position);
        volume.pressure.push(pressure);
        volume.velocity.push(velocity);
        volume.turb_visc.push(nu_t);
    }
    Ok((surface, volume))
}

/// Dataset generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test_in: usize,
    pub n_test_out: usize,
    pub subdivision: usize,
    pub freestream: f64,
    /// Streamwise semi-axis range for train/in-distribution draws.
    pub axis_a: (f64, f64),
    /// Transverse semi-axis range for train/in-distribution draws.
    pub axis_bc: (f64, f64),
    /// Whole-shape scale ranges used for out-of-distribution draws.
    pub ood_low_scale: (f64, f64),
    pub ood_high_scale: (f64, f64),
    /// Volume-table rows per sample.
    pub volume_points: usize,
    pub flow_axis: Axis,
    pub trim: TrimFactors,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_train: 16,
            n_test_in: 4,
            n_test_out: 2,
            subdivision: 3,
            freestream: 1.0,
            axis_a: (0.7, 1.3),
            axis_bc: (0.6, 1.1),
            ood_low_scale: (0.35, 0.5),
            ood_high_scale: (1.5, 1.8),
            volume_points: 8192,
            flow_axis: Axis::X,
            trim: TrimFactors::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::config("n_train must be >= 1"));
        }
        if self.subdivision < 1 {
            return Err(Error::config("subdivision must be >= 1"));
        }
        if self.freestream <= 0.0 {
            return Err(Error::config("freestream must be positive"));
        }
        for (lo, hi) in [self.axis_a, self.axis_bc, self.ood_low_scale, self.ood_high_scale] {
            if !(0.0 < lo && lo < hi) {
                return Err(Error::config("axis/scale ranges must satisfy 0 < lo < hi"));
            }
        }
        if self.volume_points == 0 {
            return Err(Error::config("volume_points must be >= 1"));
        }
        Ok(())
    }
}

const OOD_MAX_ATTEMPTS: usize = 64;

/// The computational-domain box of one sample's geometry.
pub fn sample_domain_box(
    geometry: &TriangleSurface,
    flow_axis: Axis,
    trim: TrimFactors,
) -> Result<BoundingBox> {
    Ok(make_domain_box(BoundingBox::of_surface(geometry)?, flow_axis, trim))
}

/// Build one complete sample for a shape.
pub fn build_sample(
    shape: &ShapeSpec,
    dataset: &DatasetSpec,
    split: SplitTag,
    seed: u64,
) -> Result<SampleBundle> {
    let geometry = generate_shape(shape)?;
    let domain = sample_domain_box(&geometry, dataset.flow_axis, dataset.trim)?;

    let surface_points: Vec<(Vec3, Vec3, f64)> = (0..geometry.faces.len())
        .map(|f| (geometry.face_center[f], geometry.face_normal[f], geometry.face_area[f]))
        .collect();

    // Uniform volume points, rejected against the smooth body (r >= 1 in the
    // sphere frame implies the point is also outside the inscribed facet mesh).
    let flow = AnalyticFlow::new(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = domain.extent();
    let mut volume_points = Vec::with_capacity(dataset.volume_points);
    let budget = 100 * dataset.volume_points;
    let mut candidates = 0;
    while volume_points.len() < dataset.volume_points {
        if candidates >= budget {
            return Err(Error::RejectionBoundExceeded {
                requested: dataset.volume_points,
                accepted: volume_points.len(),
                candidates,
            });
        }
        candidates += 1;
        let p = domain.min
            + Vec3::new(
                rng.gen::<f64>() * extent.x,
                rng.gen::<f64>() * extent.y,
                rng.gen::<f64>() * extent.z,
            );
        if flow.sphere_frame(p).norm() >= 1.0 {
            volume_points.push(p);
        }
    }

    let (surface, volume) = generate_fields(shape, &surface_points, &volume_points)?;
    let drag_label = integrate_drag(
        &surface.normal,
        &surface.area,
        &surface.pressure,
        &shear_component(&surface, dataset.flow_axis),
        dataset.flow_axis,
    );
    Ok(SampleBundle { spec: shape.clone(), geometry, surface, volume, drag_label, split })
}

/// Flow-axis component of the shear column.
pub fn shear_component(surface: &SurfaceTable, axis: Axis) -> Vec<f64> {
    surface.shear.iter().map(|s| s[axis.index()]).collect()
}

/// Generate the full train / in-distribution test / out-of-distribution test
/// dataset. A sample is tagged out-of-distribution exactly when its drag
/// label falls outside the min-max drag range of the training set.
pub fn make_dataset(dataset: &DatasetSpec, seed: u64) -> Result<Vec<SampleBundle>> {
    dataset.validate()?;
    let mut bundles = Vec::new();

    let draw_shape = |rng: &mut ChaCha8Rng, id: String| -> ShapeSpec {
        ShapeSpec {
            id,
            semi_axes: Vec3::new(
                rng.gen_range(dataset.axis_a.0..dataset.axis_a.1),
                rng.gen_range(dataset.axis_bc.0..dataset.axis_bc.1),
                rng.gen_range(dataset.axis_bc.0..dataset.axis_bc.1),
            ),
            center: Vec3::ZERO,
            subdivision: dataset.subdivision,
            freestream: dataset.freestream,
        }
    };

    for i in 0..dataset.n_train {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::DATASET, 0, i as u64]));
        let shape = draw_shape(&mut rng, format!("train_{i:03}"));
        let sample_seed = derive_seed(seed, &[stream::DATASET, 0, i as u64, 1]);
        bundles.push(build_sample(&shape, dataset, SplitTag::Train, sample_seed)?);
    }
    let train_drags: Vec<f64> = bundles.iter().map(|b| b.drag_label).collect();
    let drag_min = train_drags.iter().cloned().fold(f64::INFINITY, f64::min);
    let drag_max = train_drags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    for i in 0..dataset.n_test_in {
        let mut ok = false;
        for attempt in 0..OOD_MAX_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[stream::DATASET, 1, i as u64, attempt as u64],
            ));
            let shape = draw_shape(&mut rng, format!("test_in_{i:03}"));
            let sample_seed =
                derive_seed(seed, &[stream::DATASET, 1, i as u64, attempt as u64, 1]);
            let sample = build_sample(&shape, dataset, SplitTag::TestIn, sample_seed)?;
            if sample.drag_label >= drag_min && sample.drag_label <= drag_max {
                bundles.push(sample);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::dataset(
                "failed to draw an in-distribution test sample inside the train drag range",
            ));
        }
    }

    for i in 0..dataset.n_test_out {
        let scale_range =
            if i % 2 == 0 { dataset.ood_high_scale } else { dataset.ood_low_scale };
        let mut ok = false;
        for attempt in 0..OOD_MAX_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[stream::DATASET, 2, i as u64, attempt as u64],
            ));
            let mut shape = draw_shape(&mut rng, format!("test_out_{i:03}"));
            let scale = rng.gen_range(scale_range.0..scale_range.1);
            shape.semi_axes = shape.semi_axes * scale;
            let sample_seed =
                derive_seed(seed, &[stream::DATASET, 2, i as u64, attempt as u64, 1]);
            let sample = build_sample(&shape, dataset, SplitTag::TestOut, sample_seed)?;
            if sample.drag_label < drag_min || sample.drag_label > drag_max {
                bundles.push(sample);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::OodGenerationFailed { attempts: OOD_MAX_ATTEMPTS });
        }
    }
    Ok(bundles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_area_converges_to_sphere() {
        let sphere = icosphere(3);
        let area = sphere.total_area();
        let exact = 4.0 * std::f64::consts::PI;
        assert!(
            (area - exact).abs() / exact < 0.01,
            "area {area} vs {exact}"
        );
        assert_eq!(sphere.faces.len(), 20 * 4usize.pow(3));
    }

    #[test]
    fn icosphere_normals_point_outward() {
        let sphere = icosphere(2);
        for f in 0..sphere.faces.len() {
            assert!(
                sphere.face_normal[f].dot(sphere.face_center[f]) > 0.0,
                "face {f} winds inward"
            );
        }
    }

    #[test]
    fn stretched_shape_has_scaled_bbox() {
        let spec = ShapeSpec {
            id: "s".into(),
            semi_axes: Vec3::new(2.0, 1.0, 1.0),
            center: Vec3::ZERO,
            subdivision: 2,
            freestream: 1.0,
        };
        let shape = generate_shape(&spec).unwrap();
        let (lo, hi) = shape.vertex_bounds().unwrap();
        assert!((hi.x - lo.x - 4.0).abs() < 1e-12);
        assert!((hi.y - lo.y - 2.0).abs() < 1e-12);
        assert!((hi.z - lo.z - 2.0).abs() < 1e-12);
    }

    fn unit_spec() -> ShapeSpec {
        ShapeSpec {
            id: "unit".into(),
            semi_axes: Vec3::splat(1.0),
            center: Vec3::ZERO,
            subdivision: 3,
            freestream: 1.0,
        }
    }

    #[test]
    fn stagnation_point_has_zero_velocity_and_cp_one() {
        let spec = unit_spec();
        let flow = AnalyticFlow::new(&spec);
        let (p, u, _) = flow.volume_fields(Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!(u.norm() < 1e-12);
        assert!((p - 0.5).abs() < 1e-12, "cp = {}", p / 0.5);
        let (ps, _) = flow.surface_fields(Vec3::new(1.0, 0.0, 0.0));
        assert!((ps - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equator_cp_is_minus_one_and_a_quarter() {
        let spec = unit_spec();
        let flow = AnalyticFlow::new(&spec);
        let (p, _) = flow.surface_fields(Vec3::new(0.0, 1.0, 0.0));
        assert!((p / 0.5 - (-1.25)).abs() < 1e-12);
        // Bernoulli at the surface agrees with cp.
        let (pv, u, _) = flow.volume_fields(Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((u.norm() - 1.5).abs() < 1e-12);
        assert!((pv - p).abs() < 1e-12);
    }

    #[test]
    fn far_field_recovers_freestream() {
        let spec = unit_spec();
        let flow = AnalyticFlow::new(&spec);
        let (_, u, nu) = flow.volume_fields(Vec3::new(-100.0, 3.0, -2.0)).unwrap();
        let decay = 2.0 / 100.0f64.powi(3);
        assert!((u - Vec3::new(1.0, 0.0, 0.0)).norm() < decay);
        assert_eq!(nu, 0.0); // upstream of the wake
    }

    #[test]
    fn no_penetration_on_the_sphere_frame_surface() {
        let spec = unit_spec();
        let flow = AnalyticFlow::new(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let dir = Vec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalized();
            if dir.norm() == 0.0 {
                continue;
            }
            let (_, u, _) = flow.volume_fields(dir).unwrap();
            assert!(u.dot(dir).abs() < 1e-9, "penetration at {dir:?}");
        }
    }

    #[test]
    fn inside_points_are_rejected() {
        let spec = unit_spec();
        let flow = AnalyticFlow::new(&spec);
        assert!(matches!(
            flow.volume_fields(Vec3::new(0.2, 0.1, 0.0)),
            Err(Error::PointInsideBody { .. })
        ));
    }

    #[test]
    fn fields_are_deterministic() {
        let spec = unit_spec();
        let flow = AnalyticFlow::new(&spec);
        let p = Vec3::new(1.7, -0.4, 2.2);
        let a = flow.volume_fields(p).unwrap();
        let b = flow.volume_fields(p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wake_viscosity_lives_downstream() {
        let spec = unit_spec();
        let flow = AnalyticFlow::new(&spec);
        assert_eq!(flow.turb_visc(Vec3::new(-2.0, 0.0, 0.0)), 0.0);
        assert!(flow.turb_visc(Vec3::new(2.0, 0.1, 0.0)) > 0.0);
        // Decays off-axis.
        assert!(
            flow.turb_visc(Vec3::new(2.0, 0.0, 0.0))
                > flow.turb_visc(Vec3::new(2.0, 1.5, 0.0))
        );
    }

    #[test]
    fn small_dataset_has_consistent_splits() {
        let dataset = DatasetSpec {
            n_train: 3,
            n_test_in: 1,
            n_test_out: 1,
            subdivision: 2,
            volume_points: 64,
            ..DatasetSpec::default()
        };
        let bundles = make_dataset(&dataset, 7).unwrap();
        assert_eq!(bundles.len(), 5);
        let train_drags: Vec<f64> = bundles
            .iter()
            .filter(|b| b.split == SplitTag::Train)
            .map(|b| b.drag_label)
            .collect();
        let lo = train_drags.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = train_drags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for b in &bundles {
            match b.split {
                SplitTag::TestIn => assert!(b.drag_label >= lo && b.drag_label <= hi),
                SplitTag::TestOut => assert!(b.drag_label < lo || b.drag_label > hi),
                SplitTag::Train => {}
            }
            // Drag label is self-consistent with the surface table.
            let recomputed = integrate_drag(
                &b.surface.normal,
                &b.surface.area,
                &b.surface.pressure,
                &shear_component(&b.surface, Axis::X),
                Axis::X,
            );
            assert_eq!(recomputed, b.drag_label);
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let dataset = DatasetSpec {
            n_train: 2,
            n_test_in: 0,
            n_test_out: 1,
            subdivision: 2,
            volume_points: 32,
            ..DatasetSpec::default()
        };
        let a = make_dataset(&dataset, 99).unwrap();
        let b = make_dataset(&dataset, 99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.drag_label, y.drag_label);
            assert_eq!(x.surface.pressure, y.surface.pressure);
            assert_eq!(x.volume.position, y.volume.position);
        }
    }

    #[test]
    fn volume_rows_lie_outside_the_body() {
        let dataset = DatasetSpec {
            n_train: 1,
            n_test_in: 0,
            n_test_out: 0,
            subdivision: 2,
            volume_points: 256,
            ..DatasetSpec::default()
        };
        let bundles = make_dataset(&dataset, 3).unwrap();
        let flow = AnalyticFlow::new(&bundles[0].spec);
        for &p in &bundles[0].volume.position {
            assert!(flow.sphere_frame(p).norm() >= 1.0);
        }
    }
}
