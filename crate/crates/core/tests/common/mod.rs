//! Analytic scenes and oracles shared by the integration suites.
//!
//! Every surface is a rectangle, so ray intersections are exact and dense
//! samplings have a known density. Nothing here calls the code under test
//! except for constructing its value types.

#![allow(dead_code)]

use std::f64::consts::PI;

use lidarsim::geometry::{ClassLabel, OrientedBox3, PointCloud, RigidTransform, SphericalDirection};
use lidarsim::ingest::{FrameRecord, SequenceDataset};
use lidarsim::raycast::{Beam, BeamTable};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `origin + s·a + t·b` for `s, t ∈ [0, 1]`, with `a ⟂ b`.
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub origin: Vector3<f64>,
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Rect {
    pub fn normal(&self) -> Vector3<f64> {
        self.a.cross(&self.b).normalize()
    }

    pub fn area(&self) -> f64 {
        self.a.norm() * self.b.norm()
    }

    /// Ray parameter of the hit, for unit `d`.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let n = self.normal();
        let denom = n.dot(d);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.origin - o)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let q = o + d * t - self.origin;
        let s = q.dot(&self.a) / self.a.norm_squared();
        let u = q.dot(&self.b) / self.b.norm_squared();
        ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&u)).then_some(t)
    }

    /// Cell-centered grid with spacing at most `h` along both edges.
    pub fn sample(&self, h: f64) -> Vec<Vector3<f64>> {
        let nx = (self.a.norm() / h).ceil().max(1.0) as usize;
        let ny = (self.b.norm() / h).ceil().max(1.0) as usize;
        let mut out = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                out.push(self.origin + self.a * ((i as f64 + 0.5) / nx as f64) + self.b * ((j as f64 + 0.5) / ny as f64));
            }
        }
        out
    }
}

/// Axis-aligned rectangle helpers.
pub fn rect(origin: [f64; 3], a: [f64; 3], b: [f64; 3]) -> Rect {
    Rect {
        origin: Vector3::from(origin),
        a: Vector3::from(a),
        b: Vector3::from(b),
    }
}

/// The six faces of a yawed box.
pub fn box_faces(center: Vector3<f64>, dims: Vector3<f64>, yaw: f64) -> Vec<Rect> {
    let (s, c) = yaw.sin_cos();
    let ex = Vector3::new(c, s, 0.0) * dims.x;
    let ey = Vector3::new(-s, c, 0.0) * dims.y;
    let ez = Vector3::new(0.0, 0.0, dims.z);
    let lo = center - (ex + ey + ez) / 2.0;
    let hi = center + (ex + ey + ez) / 2.0;
    vec![
        Rect { origin: lo, a: ey, b: ez },
        Rect { origin: lo, a: ez, b: ex },
        Rect { origin: lo, a: ex, b: ey },
        Rect { origin: hi, a: -ez, b: -ey },
        Rect { origin: hi, a: -ex, b: -ez },
        Rect { origin: hi, a: -ey, b: -ex },
    ]
}

/// Smooth intensity texture in `[0.1, 0.9]`.
pub fn texture(q: &Vector3<f64>) -> f64 {
    0.5 + 0.4 * (0.7 * q.x).sin() * (0.9 * q.y + 0.5 * q.z).cos()
}

#[derive(Debug, Clone, Default)]
pub struct AnalyticScene {
    pub rects: Vec<Rect>,
}

impl AnalyticScene {
    pub fn push(&mut self, r: Rect) {
        self.rects.push(r);
    }

    pub fn extend(&mut self, rs: impl IntoIterator<Item = Rect>) {
        self.rects.extend(rs);
    }

    /// Nearest hit as (range, surface index).
    pub fn first_hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
        self.rects
            .iter()
            .enumerate()
            .filter_map(|(k, r)| r.intersect(o, d).map(|t| (t, k)))
            .min_by(|x, y| x.0.total_cmp(&y.0))
    }

    /// Dense global cloud with the texture intensity.
    pub fn dense_cloud(&self, h: f64) -> PointCloud {
        let pts: Vec<Vector3<f64>> = self.rects.iter().flat_map(|r| r.sample(h)).collect();
        let i = pts.iter().map(texture).collect();
        PointCloud::new(pts).unwrap().with_intensity(i).unwrap()
    }

    /// Noiseless sampling fine enough that every range-image bin of angular
    /// width `pixel` seen from `viewpoint` holds a sample of each visible surface.
    ///
    /// Rectangles are cut into patches of at most 1 m; each patch uses a
    /// spacing of 70% of the pixel footprint at its nearest distance, capped at
    /// 5 cm (400 points/m²).
    pub fn view_dense_cloud(&self, viewpoint: &Vector3<f64>, pixel: f64) -> PointCloud {
        let mut pts = Vec::new();
        for r in &self.rects {
            let (na, nb) = (r.a.norm().ceil() as usize, r.b.norm().ceil() as usize);
            for i in 0..na {
                for j in 0..nb {
                    let patch = Rect {
                        origin: r.origin + r.a * (i as f64 / na as f64) + r.b * (j as f64 / nb as f64),
                        a: r.a / na as f64,
                        b: r.b / nb as f64,
                    };
                    let near = patch_distance(&patch, viewpoint);
                    pts.extend(patch.sample((0.7 * pixel * near).clamp(0.002, 0.05)));
                }
            }
        }
        let i = pts.iter().map(texture).collect();
        PointCloud::new(pts).unwrap().with_intensity(i).unwrap()
    }

    /// Exact scan from `pose`: one sensor-frame point per beam that hits within range.
    pub fn scan(&self, pose: &RigidTransform, beams: &BeamTable) -> PointCloud {
        let o = pose.apply(&Vector3::zeros());
        let mut pts = Vec::new();
        let mut ids = Vec::new();
        let mut inten = Vec::new();
        for b in &beams.beams {
            let u = unit(&b.direction);
            let d = pose.apply_vector(&u);
            if let Some((t, _)) = self.first_hit(&o, &d) {
                if t <= beams.max_range {
                    pts.push(u * t);
                    ids.push(b.beam_id);
                    inten.push(texture(&(o + d * t)));
                }
            }
        }
        PointCloud::new(pts).unwrap().with_intensity(inten).unwrap().with_beam_ids(ids).unwrap()
    }
}

/// Distance from `v` to the closest point of a rectangle.
pub fn patch_distance(r: &Rect, v: &Vector3<f64>) -> f64 {
    let d = v - r.origin;
    let s = (d.dot(&r.a) / r.a.norm_squared()).clamp(0.0, 1.0);
    let t = (d.dot(&r.b) / r.b.norm_squared()).clamp(0.0, 1.0);
    (r.origin + r.a * s + r.b * t - v).norm()
}

pub fn unit(s: &SphericalDirection) -> Vector3<f64> {
    let (se, ce) = s.elevation.sin_cos();
    let (sa, ca) = s.azimuth.sin_cos();
    Vector3::new(ce * ca, ce * sa, se)
}

/// Uniformly spaced spinning pattern over a full turn.
pub fn spinning_beams(n_elev: usize, el_lo_deg: f64, el_hi_deg: f64, az_res_deg: f64, max_range: f64) -> BeamTable {
    let mut beams = Vec::new();
    let n_az = (360.0 / az_res_deg).round() as usize;
    for e in 0..n_elev {
        let el = if n_elev == 1 {
            el_lo_deg
        } else {
            el_lo_deg + (el_hi_deg - el_lo_deg) * e as f64 / (n_elev - 1) as f64
        };
        for k in 0..n_az {
            let az = -PI + (k as f64) * az_res_deg.to_radians();
            beams.push(Beam {
                direction: SphericalDirection::new(az, el.to_radians()).unwrap(),
                beam_id: e as u32,
            });
        }
    }
    BeamTable::new(beams, max_range).unwrap()
}

/// Ground at z = −1.8 over [0, 10] × [−10, 10], walls at x = 10 and y = 10, and
/// a yawed box. The sensor sits at the origin.
pub fn room_scene() -> AnalyticScene {
    let mut s = AnalyticScene::default();
    s.push(rect([0.0, -10.0, -1.8], [10.0, 0.0, 0.0], [0.0, 20.0, 0.0]));
    s.push(rect([10.0, -10.0, -1.8], [0.0, 20.0, 0.0], [0.0, 0.0, 5.0]));
    s.push(rect([0.0, 10.0, -1.8], [10.0, 0.0, 0.0], [0.0, 0.0, 5.0]));
    s.extend(box_faces(Vector3::new(5.0, -4.0, -0.9), Vector3::new(4.0, 2.0, 1.8), 0.3));
    s
}

/// Sample spacing of the room scene: finer than the smallest pixel footprint
/// on any visible surface, so no bin on a surface is empty.
pub const ROOM_SPACING: f64 = 0.01;

/// Radial Gaussian noise about `origin`, seeded.
pub fn radial_noise(cloud: &PointCloud, origin: &Vector3<f64>, sigma: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
    let pts: Vec<Vector3<f64>> = cloud
        .points()
        .iter()
        .map(|p| {
            let r = p - origin;
            p + r.normalize() * rng.sample(normal)
        })
        .collect();
    let mut out = PointCloud::new(pts).unwrap();
    if let Some(i) = cloud.intensity() {
        out = out.with_intensity(i.to_vec()).unwrap();
    }
    out
}

/// An object of the drive fixture: its body and its (looser) annotation box.
#[derive(Debug, Clone)]
pub struct FixtureObject {
    pub track_id: &'static str,
    pub class: ClassLabel,
    pub body_dims: Vector3<f64>,
    /// Global body center per frame.
    pub centers: Vec<Vector3<f64>>,
    pub yaw: f64,
}

impl FixtureObject {
    pub fn faces(&self, frame: usize) -> Vec<Rect> {
        box_faces(self.centers[frame], self.body_dims, self.yaw)
    }

    /// Annotation: 5 cm margin on every side.
    pub fn label(&self, frame: usize) -> OrientedBox3 {
        OrientedBox3::new(self.centers[frame], self.body_dims.add_scalar(0.1), self.yaw, self.track_id, self.class).unwrap()
    }
}

/// A street: ground, two façades and three objects, one of them driving.
pub struct DriveFixture {
    pub statics: AnalyticScene,
    pub objects: Vec<FixtureObject>,
    pub poses: Vec<RigidTransform>,
    pub beams: BeamTable,
}

/// Ground is z = 0; the sensor rides 1.8 m above it.
pub fn drive_fixture(frames: usize, beams: BeamTable) -> DriveFixture {
    let mut statics = AnalyticScene::default();
    statics.push(rect([-40.0, -12.0, 0.0], [80.0, 0.0, 0.0], [0.0, 24.0, 0.0]));
    statics.push(rect([-40.0, 12.0, 0.0], [80.0, 0.0, 0.0], [0.0, 0.0, 6.0]));
    statics.push(rect([-40.0, -12.0, 0.0], [0.0, 0.0, 6.0], [80.0, 0.0, 0.0]));
    let parked = FixtureObject {
        track_id: "parked",
        class: ClassLabel::Vehicle,
        body_dims: Vector3::new(4.2, 1.9, 1.2),
        centers: vec![Vector3::new(6.0, -7.0, 0.9); frames],
        yaw: 0.1,
    };
    let driving = FixtureObject {
        track_id: "driving",
        class: ClassLabel::Vehicle,
        body_dims: Vector3::new(4.5, 2.0, 1.3),
        centers: (0..frames).map(|k| Vector3::new(-6.0 + 3.0 * k as f64, 4.0, 0.95)).collect(),
        yaw: 0.0,
    };
    let walker = FixtureObject {
        track_id: "walker",
        class: ClassLabel::Pedestrian,
        body_dims: Vector3::new(0.5, 0.6, 1.7),
        centers: vec![Vector3::new(14.0, -4.0, 0.9); frames],
        yaw: 0.5,
    };
    let poses = (0..frames)
        .map(|k| RigidTransform::from_yaw(0.02 * k as f64, Vector3::new(1.5 * k as f64, 0.0, 1.8)))
        .collect();
    DriveFixture {
        statics,
        objects: vec![parked, driving, walker],
        poses,
        beams,
    }
}

impl DriveFixture {
    /// Every surface present in `frame`.
    pub fn scene(&self, frame: usize) -> AnalyticScene {
        let mut s = self.statics.clone();
        for o in &self.objects {
            s.extend(o.faces(frame));
        }
        s
    }

    /// Exact scans, thinned per point with probability `1 − keep(d, cosθ, i)` when given.
    pub fn sequence(&self, keep: Option<&dyn Fn(f64, f64, f64) -> f64>, seed: u64) -> SequenceDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..self.poses.len())
            .map(|k| {
                let pose = self.poses[k];
                let scene = self.scene(k);
                let mut cloud = scene.scan(&pose, &self.beams);
                if let Some(keep) = keep {
                    let o = pose.apply(&Vector3::zeros());
                    let mask: Vec<bool> = cloud
                        .points()
                        .iter()
                        .zip(cloud.intensity().unwrap())
                        .map(|(p, &i)| {
                            let d = pose.apply_vector(&p.normalize());
                            let (_, s) = scene.first_hit(&o, &d).unwrap();
                            let cos = scene.rects[s].normal().dot(&d).abs();
                            rng.random::<f64>() < keep(p.norm(), cos, i)
                        })
                        .collect();
                    cloud = cloud.partition(&mask).0;
                }
                FrameRecord {
                    timestamp_us: 1_000_000 + 100_000 * k as i64,
                    sensor_pose: pose,
                    cloud,
                    boxes: self.objects.iter().map(|o| o.label(k).transformed(&pose.inverse())).collect(),
                }
            })
            .collect();
        SequenceDataset {
            sequence_id: "street".into(),
            sensor_name: "spinning-64".into(),
            max_range: self.beams.max_range,
            frames,
        }
    }
}

/// Elevation count, span and azimuth step of the drive fixture's sensor.
pub const FIXTURE_BEAMS: usize = 64;
pub const FIXTURE_ELEVATION_DEG: [f64; 2] = [-16.0, 2.0];
pub const FIXTURE_AZIMUTH_DEG: f64 = 0.16;

/// A 64-beam roof sensor: −16°…+2°, 0.16° azimuth steps.
pub fn fixture_beams() -> BeamTable {
    spinning_beams(FIXTURE_BEAMS, FIXTURE_ELEVATION_DEG[0], FIXTURE_ELEVATION_DEG[1], FIXTURE_AZIMUTH_DEG, 75.0)
}

pub fn brute_nearest_sq(p: &Vector3<f64>, cloud: &[Vector3<f64>]) -> f64 {
    cloud.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
}

/// Size-normalized symmetric Chamfer by exhaustive search.
pub fn brute_chamfer(p: &[Vector3<f64>], q: &[Vector3<f64>]) -> f64 {
    let a: f64 = p.iter().map(|x| brute_nearest_sq(x, q)).sum::<f64>() / p.len() as f64;
    let b: f64 = q.iter().map(|x| brute_nearest_sq(x, p)).sum::<f64>() / q.len() as f64;
    a + b
}

pub fn random_points(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vector3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)))
        .collect()
}

/// Lighter sensor for the command-line fixtures: 32 beams, 0.4° azimuth.
pub fn cli_beams() -> BeamTable {
    spinning_beams(32, -16.0, 2.0, 0.4, 75.0)
}

/// Return law the command-line fixture's real scans are thinned by.
pub fn cli_keep_law(d: f64, cos: f64, i: f64) -> f64 {
    (0.05 + 0.95 * i) * (1.0 - 0.5 * d / 80.0) * (0.4 + 0.6 * cos)
}

/// Axis-aligned box mesh centered at the origin, as OBJ text.
pub fn box_obj(dims: [f64; 3]) -> String {
    let h = dims.map(|d| d / 2.0);
    let mut s = String::from("# box\n");
    for k in 0..8 {
        let sx = if k & 1 == 0 { -h[0] } else { h[0] };
        let sy = if k & 2 == 0 { -h[1] } else { h[1] };
        let sz = if k & 4 == 0 { -h[2] } else { h[2] };
        s.push_str(&format!("v {sx} {sy} {sz}\n"));
    }
    for f in [
        [1, 3, 4], [1, 4, 2], [5, 6, 8], [5, 8, 7], [1, 2, 6], [1, 6, 5],
        [3, 7, 8], [3, 8, 4], [1, 5, 7], [1, 7, 3], [2, 4, 8], [2, 8, 6],
    ] {
        s.push_str(&format!("f {} {} {}\n", f[0], f[1], f[2]));
    }
    s
}

/// Writes a complete command-line workspace under `root` and returns the config path.
///
/// Inputs: a 3-frame street sequence thinned by [`cli_keep_law`], its full
/// beam table, a 16-beam
/// sensor spec mounted 0.3 m forward and 0.2 m up, a box mesh and a scenario
/// placing it. Outputs go to `root/out`.
pub fn write_cli_workspace(root: &std::path::Path) -> std::path::PathBuf {
    use lidarsim::ingest::{write_sequence, CloudFormat};
    let inputs = root.join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    let fx = drive_fixture(3, cli_beams());
    let seq = fx.sequence(Some(&cli_keep_law), 3);
    write_sequence(&seq, &inputs.join("sequence"), CloudFormat::Binary).unwrap();
    std::fs::write(inputs.join("beams.json"), cli_beams().to_json()).unwrap();

    let elevations: Vec<f64> = (0..16).map(|k| -16.0 + 18.0 * (2 * k) as f64 / 31.0).collect();
    let ids: Vec<u32> = (0..16).map(|k| 2 * k).collect();
    let spec = serde_json::json!({
        "name": "roof-16",
        "elevations_deg": elevations,
        "beam_ids": ids,
        "azimuth_resolution_deg": 0.4,
        "max_range": 60.0,
        "mount": [[1.0, 0.0, 0.0, 0.3], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.2], [0.0, 0.0, 0.0, 1.0]],
    });
    std::fs::write(inputs.join("roof16.json"), spec.to_string()).unwrap();
    std::fs::write(inputs.join("van.obj"), box_obj([4.4, 2.0, 1.35])).unwrap();
    let scenario = serde_json::json!({
        "background": "street",
        "placements": [{"asset": "van", "center": [12.0, -6.0, 0.7], "dims": [4.4, 2.0, 1.35], "yaw": 0.4, "class": "vehicle"}],
    });
    std::fs::write(inputs.join("scenario.json"), scenario.to_string()).unwrap();

    let config = r#"seed = 17

[paths]
sequence = "inputs/sequence/manifest.json"
output = "out"
beams = "inputs/beams.json"

# One bin per ray of the 32-beam sensor.
[raycast]
width = 900
height = 32
elevation_min_deg = -16.290322580645161
elevation_max_deg = 2.290322580645161

[synth]
sensor = "inputs/roof16.json"
scenario = "inputs/scenario.json"
raydrop = true

[[synth.meshes]]
path = "inputs/van.obj"
asset_id = "van"
class = "vehicle"
samples = 5000

[gridsearch]
widths = [450, 900]
heights = [32, 64]
peak_widths = [0.2]
max_frames = 2
"#;
    let path = root.join("pipeline.toml");
    std::fs::write(&path, config).unwrap();
    path
}

/// Every pipeline subcommand in dependency order.
pub const STAGES: [&str; 7] = ["reconstruct", "raycast", "raydrop-train", "raydrop-apply", "synth", "metrics", "gridsearch"];

/// Runs the command-line tool, returning (exit code, stdout, stderr).
pub fn run_cli(bin: &str, args: &[&str], workers: Option<usize>) -> (i32, String, String) {
    let mut cmd = std::process::Command::new(bin);
    cmd.args(args).env_remove("LIDARSIM_WORKERS");
    if let Some(w) = workers {
        cmd.args(["--workers", &w.to_string()]);
    }
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}
