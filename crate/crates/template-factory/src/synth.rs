//! Synthetic face-scan dataset generation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use mesh_core::io::{
    write_landmarks, write_mesh, write_point_cloud, write_vertex_set, MeshFormat,
};
use mesh_core::sampling::{derive_seed, sample_surface};
use mesh_core::shapes::{unit_grid, GridDiagonals};
use mesh_core::TriMesh;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blend::build_blending_mask;
use crate::pca::PcaBasis;
use crate::{Result, TemplateError};

const X_HALF: f64 = 0.085;
const Y_HALF: f64 = 0.13;
const MOUTH_Y: f64 = -0.05;

const SEED_ID: u64 = 1;
const SEED_EXP: u64 = 2;
const SEED_NOISE: u64 = 3;
const SEED_PCA_ID: u64 = 4;
const SEED_PCA_EXP: u64 = 5;
const SEED_SYNTH: u64 = 6;
const SEED_CLOUD: u64 = 7;

/// Knobs for the generated dataset.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    /// Template grid resolution across the face.
    pub nx: usize,
    pub ny: usize,
    /// Number of scanned identities.
    pub subjects: usize,
    /// Expressive scans per subject.
    pub expressions: usize,
    /// Statistically sampled mouth-displacement scans.
    pub synthetic: usize,
    /// Subjects that additionally get a raw point-cloud scan.
    pub clouds: usize,
    pub id_components: usize,
    pub exp_components: usize,
    pub id_samples: usize,
    pub exp_samples: usize,
    /// Per-coordinate noise on scanned meshes.
    pub noise: f64,
    pub c: f64,
    pub epsilon: f64,
    pub d: f64,
    pub t_factor: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            nx: 41,
            ny: 61,
            subjects: 4,
            expressions: 2,
            synthetic: 12,
            clouds: 1,
            id_components: 30,
            exp_components: 20,
            id_samples: 40,
            exp_samples: 32,
            noise: 2e-4,
            c: 3.5e-2,
            epsilon: 5e-4,
            d: 0.15,
            t_factor: 1.0,
            seed: 7,
        }
    }
}

/// Locations of everything a generated dataset contains.
#[derive(Debug)]
pub struct SynthPaths {
    pub dir: PathBuf,
    pub template: PathBuf,
    pub inner_lips: PathBuf,
    pub boundary_crop: PathBuf,
    pub landmarks: PathBuf,
    pub pca_id: PathBuf,
    pub pca_exp: PathBuf,
    pub manifest: PathBuf,
    pub scans: Vec<PathBuf>,
}

/// Writes a complete synthetic dataset into `dir`.
///
/// Produces the template with its vertex sets, landmarks and mouth bases,
/// plus neutral, expressive, statistical and point-cloud scans listed in a
/// manifest. Deterministic for a fixed seed.
pub fn generate(dir: &Path, opts: &SynthOptions) -> Result<SynthPaths> {
    validate(opts)?;
    let scan_dir = dir.join("scans");
    std::fs::create_dir_all(&scan_dir).map_err(|e| TemplateError::io(&scan_dir, e))?;

    // 1. Template mesh, vertex sets and landmarks.
    let template = face_template(opts.nx, opts.ny);
    let lips = inner_lips(&template, opts.nx, opts.ny);
    let crop = boundary_crop(opts.nx, opts.ny);
    let landmarks = landmark_map(&template);

    // 2. Mouth region, then displacement bases restricted to it.
    let blend =
        build_blending_mask(&template, &lips, opts.c, opts.epsilon, opts.d, opts.t_factor)?;
    let mouth = &blend.mouth;
    let pca_id = fit_mouth_basis(&template, mouth, opts, false)?;
    let pca_exp = fit_mouth_basis(&template, mouth, opts, true)?;

    let paths = SynthPaths {
        dir: dir.to_path_buf(),
        template: dir.join("template.obj"),
        inner_lips: dir.join("inner_lips.txt"),
        boundary_crop: dir.join("boundary_crop.txt"),
        landmarks: dir.join("landmarks.txt"),
        pca_id: dir.join("pca_id.spca"),
        pca_exp: dir.join("pca_exp.spca"),
        manifest: dir.join("manifest.csv"),
        scans: Vec::new(),
    };
    write_mesh(&paths.template, &template, MeshFormat::Obj)?;
    write_vertex_set(&paths.inner_lips, &lips)?;
    write_vertex_set(&paths.boundary_crop, &crop)?;
    write_landmarks(&paths.landmarks, &landmarks)?;
    pca_id.save(&paths.pca_id)?;
    pca_exp.save(&paths.pca_exp)?;

    // 3. Scans: per-subject neutral and expressive meshes with annotations.
    let mut paths = paths;
    let mut manifest = vec!["path,kind,label,subject_id".to_string()];
    let mut neutrals = Vec::new();
    for s in 0..opts.subjects {
        let id_coeff = draw_normals(opts.seed, &[SEED_ID, s as u64], opts.id_components);
        let neutral = deformed(&template, &id_coeff, &[], opts, s as u64, 0);
        let name = format!("subj{s:02}_neutral.ply");
        add_scan(&scan_dir, &name, &neutral, &landmarks, "mesh", "neutral", &format!("s{s:02}"), &mut manifest, &mut paths)?;
        neutrals.push(neutral);
        for e in 0..opts.expressions {
            let exp_coeff =
                draw_normals(opts.seed, &[SEED_EXP, s as u64, e as u64], opts.exp_components);
            let scan = deformed(&template, &id_coeff, &exp_coeff, opts, s as u64, e as u64 + 1);
            let name = format!("subj{s:02}_exp{e}.ply");
            add_scan(&scan_dir, &name, &scan, &landmarks, "mesh", "expressive", &format!("s{s:02}"), &mut manifest, &mut paths)?;
        }
    }

    // 4. Statistical scans: basis draws applied to the mouth region.
    for i in 0..opts.synthetic {
        let scan = statistical_scan(&template, mouth, &pca_id, &pca_exp, opts.seed, i as u64);
        let name = format!("synth{i:03}.ply");
        add_scan(&scan_dir, &name, &scan, &landmarks, "mesh", "synthetic", "synth", &mut manifest, &mut paths)?;
    }

    // 5. Point-cloud scans sampled off the first few neutral meshes.
    for s in 0..opts.clouds {
        let seed = derive_seed(opts.seed, &[SEED_CLOUD, s as u64]);
        let cloud = sample_surface(&neutrals[s], 20000, seed)?;
        let name = format!("subj{s:02}_cloud.ply");
        let path = scan_dir.join(&name);
        write_point_cloud(&path, &cloud, true, None)?;
        manifest.push(format!("scans/{name},cloud,neutral,s{s:02}"));
        paths.scans.push(path);
    }

    std::fs::write(&paths.manifest, manifest.join("\n") + "\n")
        .map_err(|e| TemplateError::io(&paths.manifest, e))?;
    Ok(paths)
}

fn validate(opts: &SynthOptions) -> Result<()> {
    let bad = |what: &'static str, msg: String| Err(TemplateError::Invalid { what, msg });
    if opts.nx < 9 || opts.ny < 9 {
        return bad("grid", format!("need at least 9x9 vertices, got {}x{}", opts.nx, opts.ny));
    }
    if opts.subjects == 0 {
        return bad("subjects", "need at least one subject".into());
    }
    if opts.clouds > opts.subjects {
        return bad("clouds", format!("{} cloud scans exceed {} subjects", opts.clouds, opts.subjects));
    }
    for (what, k, n) in [
        ("identity basis", opts.id_components, opts.id_samples),
        ("expression basis", opts.exp_components, opts.exp_samples),
    ] {
        if k == 0 || n < k + 1 {
            return bad(
                "pca sizing",
                format!("{what}: {n} samples cannot support {k} components (need at least k + 1)"),
            );
        }
    }
    if !(opts.noise >= 0.0) || !opts.noise.is_finite() {
        return bad("noise", format!("must be finite and non-negative, got {}", opts.noise));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn add_scan(
    scan_dir: &Path,
    name: &str,
    mesh: &TriMesh,
    landmarks: &BTreeMap<String, usize>,
    kind: &str,
    label: &str,
    subject: &str,
    manifest: &mut Vec<String>,
    paths: &mut SynthPaths,
) -> Result<()> {
    let path = scan_dir.join(name);
    write_mesh(&path, mesh, MeshFormat::PlyBinary)?;
    let ann: BTreeMap<String, [f64; 3]> =
        landmarks.iter().map(|(l, &v)| (l.clone(), mesh.vertices[v])).collect();
    let ann_path = scan_dir.join(format!("{}.landmarks.txt", name.trim_end_matches(".ply")));
    mesh_core::io::write_annotations(&ann_path, &ann)?;
    manifest.push(format!("scans/{name},{kind},{label},{subject}"));
    paths.scans.push(path);
    Ok(())
}

/// Analytic face-like height field over a regular grid.
pub fn face_template(nx: usize, ny: usize) -> TriMesh {
    let grid = unit_grid(nx, ny, GridDiagonals::Uniform);
    let vertices = grid
        .vertices
        .iter()
        .map(|p| {
            let x = -X_HALF + 2.0 * X_HALF * p[0] / (nx - 1) as f64;
            let y = -Y_HALF + 2.0 * Y_HALF * p[1] / (ny - 1) as f64;
            [x, y, height(x, y)]
        })
        .collect();
    TriMesh::new(vertices, grid.faces.clone()).expect("grid template is valid")
}

fn height(x: f64, y: f64) -> f64 {
    let dome = 0.06 * (-(x / 0.07).powi(2) - (y / 0.10).powi(2)).exp();
    let nose = 0.025 * (-(x / 0.018).powi(2) - ((y - 0.01) / 0.022).powi(2)).exp();
    let groove = 0.004 * (-(x / 0.025).powi(2) - ((y - MOUTH_Y) / 0.008).powi(2)).exp();
    dome + nose - groove
}

fn inner_lips(template: &TriMesh, nx: usize, ny: usize) -> Vec<usize> {
    let sy = 2.0 * Y_HALF / (ny - 1) as f64;
    let row = ((MOUTH_Y + Y_HALF) / sy).round() as usize;
    (0..nx)
        .map(|col| row * nx + col)
        .filter(|&v| template.vertices[v][0].abs() <= 0.02)
        .collect()
}

fn boundary_crop(nx: usize, ny: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for row in 0..ny {
        for col in 0..nx {
            if row < 2 || row >= ny - 2 || col < 2 || col >= nx - 2 {
                out.push(row * nx + col);
            }
        }
    }
    out
}

fn landmark_map(template: &TriMesh) -> BTreeMap<String, usize> {
    let anchors: [(&str, f64, f64); 21] = [
        ("nose_tip", 0.0, 0.005),
        ("nose_bridge", 0.0, 0.045),
        ("eye_l_outer", -0.055, 0.045),
        ("eye_l_inner", -0.02, 0.045),
        ("eye_r_inner", 0.02, 0.045),
        ("eye_r_outer", 0.055, 0.045),
        ("eyebrow_l_outer", -0.06, 0.07),
        ("eyebrow_l_inner", -0.025, 0.072),
        ("eyebrow_r_inner", 0.025, 0.072),
        ("eyebrow_r_outer", 0.06, 0.07),
        ("mouth_l_corner", -0.028, MOUTH_Y),
        ("mouth_r_corner", 0.028, MOUTH_Y),
        ("mouth_upper", 0.0, -0.042),
        ("mouth_lower", 0.0, -0.058),
        ("chin_center", 0.0, -0.105),
        ("chin_l", -0.03, -0.1),
        ("chin_r", 0.03, -0.1),
        ("contour_l_upper", -0.08, 0.02),
        ("contour_l_lower", -0.075, -0.04),
        ("contour_r_upper", 0.08, 0.02),
        ("contour_r_lower", 0.075, -0.04),
    ];
    anchors
        .iter()
        .map(|&(label, x, y)| {
            let v = template
                .vertices
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da = (a[0] - x).powi(2) + (a[1] - y).powi(2);
                    let db = (b[0] - x).powi(2) + (b[1] - y).powi(2);
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)
                .expect("template has vertices");
            (label.to_string(), v)
        })
        .collect()
}

/// Smooth displacement field `k`; expression fields focus on mouth and brow.
fn field_at(k: usize, expression: bool, x: f64, y: f64, env: f64) -> [f64; 3] {
    let p = (k % 4) as f64 + 1.0;
    let q = ((k / 4) % 4) as f64 + 1.0;
    let off = if expression { 2.17 } else { 0.0 };
    let pa = 0.7391 * (k as f64 + 1.0) + off;
    let pb = 1.1931 * (k as f64 + 1.0) + off;
    let s = (PI * p * (x + X_HALF) / (2.0 * X_HALF) + pa).cos()
        * (PI * q * (y + Y_HALF) / (2.0 * Y_HALF) + pb).cos();
    let amp0 = if expression { 0.006 } else { 0.008 };
    let local = if expression {
        (-((y - MOUTH_Y) / 0.05).powi(2)).exp() + 0.5 * (-((y - 0.05) / 0.04).powi(2)).exp()
    } else {
        1.0
    };
    let a = amp0 / (p + q - 1.0) * env * local * s;
    [0.35 * pa.sin() * a, 0.35 * pb.cos() * a, a]
}

/// Falloff to zero within a band along the grid boundary, so scanned shapes
/// keep the template rim in place.
fn envelope(x: f64, y: f64, hmax: f64) -> f64 {
    let edge = (X_HALF - x.abs()).min(Y_HALF - y.abs());
    let t = ((edge - 2.5 * hmax) / 0.025).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn grid_spacing(nx: usize, ny: usize) -> f64 {
    (2.0 * X_HALF / (nx - 1) as f64).max(2.0 * Y_HALF / (ny - 1) as f64)
}

fn displacement(template: &TriMesh, coeff: &[f64], expression: bool, hmax: f64) -> Vec<[f64; 3]> {
    template
        .vertices
        .iter()
        .map(|p| {
            let env = envelope(p[0], p[1], hmax);
            let mut d = [0.0f64; 3];
            if env > 0.0 {
                for (k, &c) in coeff.iter().enumerate() {
                    let f = field_at(k, expression, p[0], p[1], env);
                    for axis in 0..3 {
                        d[axis] += c * f[axis];
                    }
                }
            }
            d
        })
        .collect()
}

fn deformed(
    template: &TriMesh,
    id_coeff: &[f64],
    exp_coeff: &[f64],
    opts: &SynthOptions,
    subject: u64,
    variant: u64,
) -> TriMesh {
    let hmax = grid_spacing(opts.nx, opts.ny);
    let id_disp = displacement(template, id_coeff, false, hmax);
    let exp_disp = displacement(template, exp_coeff, true, hmax);
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[SEED_NOISE, subject, variant]));
    let vertices = template
        .vertices
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let mut q = *p;
            for axis in 0..3 {
                q[axis] += id_disp[v][axis] + exp_disp[v][axis] + opts.noise * normal(&mut rng);
            }
            q
        })
        .collect();
    TriMesh::new(vertices, template.faces.clone()).expect("deformation keeps vertices finite")
}

/// Restriction of random field draws to the mouth region, fitted as a basis.
fn fit_mouth_basis(
    template: &TriMesh,
    mouth: &[usize],
    opts: &SynthOptions,
    expression: bool,
) -> Result<PcaBasis> {
    let (tag, k, n) = if expression {
        (SEED_PCA_EXP, opts.exp_components, opts.exp_samples)
    } else {
        (SEED_PCA_ID, opts.id_components, opts.id_samples)
    };
    let hmax = grid_spacing(opts.nx, opts.ny);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let coeff = draw_normals(opts.seed, &[tag, i as u64], k);
        let disp = displacement(template, &coeff, expression, hmax);
        let mut restricted = Vec::with_capacity(3 * mouth.len());
        for &v in mouth {
            restricted.extend_from_slice(&disp[v]);
        }
        samples.push(restricted);
    }
    PcaBasis::fit(&samples, k)
}

fn statistical_scan(
    template: &TriMesh,
    mouth: &[usize],
    pca_id: &PcaBasis,
    pca_exp: &PcaBasis,
    seed: u64,
    index: u64,
) -> TriMesh {
    let mut vertices = template.vertices.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SEED_SYNTH, index]));
    for basis in [pca_id, pca_exp] {
        let k = basis.k();
        let coeff: Vec<f64> = (0..k).map(|c| basis.sigma[c] * normal(&mut rng)).collect();
        for (m, &v) in mouth.iter().enumerate() {
            for axis in 0..3 {
                let row = 3 * m + axis;
                let mut acc = 0.0;
                for (c, &w) in coeff.iter().enumerate() {
                    acc += basis.basis[row * k + c] * w;
                }
                vertices[v][axis] += acc;
            }
        }
    }
    TriMesh::new(vertices, template.faces.clone()).expect("statistical draws stay finite")
}

fn draw_normals(seed: u64, parts: &[u64], n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, parts));
    (0..n).map(|_| normal(&mut rng)).collect()
}

/// One standard normal draw via the Box-Muller transform.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}
