use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use dentreg::eval::{landmark_error, sweep_csv, sweep_summary, RegistrationReport, SweepRow};
use dentreg::geometry::{pca_axes, TransformParams};
use dentreg::mesh_io::{load_mesh, save_mesh};
use dentreg::phantom::{generate_phantom, noisy_cues, random_gt_params, PhantomConfig, PhantomTruth};
use dentreg::pipeline::{initial_pose, register, register_icp, RegisterOptions};
use dentreg::pose::{heuristic_pose_estimate, load_pose_cues, save_pose_cues, CueFile, ImageKind, Jaw};
use dentreg::projection::depth_image;
use dentreg::volume::{load_image, load_volume, mip_project_x, save_image, save_volume};
use dentreg::{CtVolume, TriMesh};

#[derive(Parser)]
#[command(name = "dentreg", version, about = "Register a scanned dental mesh to a CBCT volume")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic CT/mesh pair with ground truth.
    Phantom(PhantomArgs),
    /// Render the mesh depth image and/or the CT projection.
    Project(ProjectArgs),
    /// Estimate pose cues from a depth image or CT projection.
    Pose(PoseArgs),
    /// Register a mesh to a CT volume.
    Register(RegisterArgs),
    /// Score a registration report against phantom ground truth.
    Evaluate(EvaluateArgs),
    /// Compare the cluster method, its non-stochastic variant and ICP on phantoms.
    Benchmark(BenchmarkArgs),
    /// Registration error and runtime over several cluster radii.
    Sweep(SweepArgs),
}

/// Phantom options shared by the commands that generate phantoms.
#[derive(Args, Clone)]
struct PhantomOpts {
    /// Phantom config JSON; flags below override it.
    #[arg(long = "phantom-config")]
    phantom_config: Option<PathBuf>,
    #[arg(long)]
    jaw: Option<Jaw>,
    #[arg(long)]
    artifact_fraction: Option<f64>,
    #[arg(long)]
    mesh_noise: Option<f64>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom config JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    jaw: Option<Jaw>,
    #[arg(long)]
    artifact_fraction: Option<f64>,
    #[arg(long)]
    mesh_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mesh pose as RX,RY,RZ,TX,TY,TZ in degrees and mm.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "random_pose")]
    pose: Option<Vec<f64>>,
    /// Draw the mesh pose uniformly within ±DEG and ±MM from the seed.
    #[arg(long, value_delimiter = ',', value_names = ["DEG,MM"])]
    random_pose: Option<Vec<f64>>,
    /// Also write cues with uniform noise of ±MM and ±DEG to cues_noisy.json.
    #[arg(long, value_delimiter = ',', value_names = ["MM,DEG"])]
    cue_noise: Option<Vec<f64>>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    ct: Option<PathBuf>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PoseArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    kind: ImageKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    ct: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    jaw: Jaw,
    /// Cue files; repeat to combine model and CT cues. Missing cues are estimated.
    #[arg(long)]
    cues: Vec<PathBuf>,
    #[command(flatten)]
    run: RunOpts,
    /// Flip mesh normals (for meshes whose normals point out of the tissue).
    #[arg(long)]
    flip_normals: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Registration settings; flags override `--config`.
#[derive(Args, Clone)]
struct RunOpts {
    /// Registration options JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_stochastic: bool,
    #[arg(long)]
    tol_f: Option<f64>,
    #[arg(long)]
    tol_x: Option<f64>,
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Write the report with the evaluation filled in.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    phantom: PhantomOpts,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 1)]
    first_seed: u64,
    /// Cue noise as MM,DEG; zero gives exact cues.
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 2.5])]
    cue_noise: Vec<f64>,
    #[command(flatten)]
    run: RunOpts,
    /// Per-seed results as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    phantom: PhantomOpts,
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 10.0, 20.0, 30.0])]
    radii: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 1)]
    first_seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 2.5])]
    cue_noise: Vec<f64>,
    #[command(flatten)]
    run: RunOpts,
    /// CSV output.
    #[arg(long)]
    out: PathBuf,
}

/// Marks errors caused by bad input rather than a failed pipeline.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<serde_json::Error>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<dentreg::Error>() {
            return if e.is_input_error() { 2 } else { 3 };
        }
    }
    3
}

/// `println!` that tolerates a closed stdout.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Project(a) => project(a),
        Command::Pose(a) => pose(a),
        Command::Register(a) => register_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn phantom_config(opts: &PhantomOpts) -> anyhow::Result<PhantomConfig> {
    let mut cfg: PhantomConfig = match &opts.phantom_config {
        Some(p) => read_json(p)?,
        None => PhantomConfig::default(),
    };
    if let Some(j) = opts.jaw {
        cfg.jaw = j;
    }
    if let Some(f) = opts.artifact_fraction {
        cfg.artifact_tooth_fraction = f;
    }
    if let Some(s) = opts.mesh_noise {
        cfg.mesh_noise_sigma = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_options(opts: &RunOpts) -> anyhow::Result<RegisterOptions> {
    let mut r: RegisterOptions = match &opts.config {
        Some(p) => read_json(p)?,
        None => RegisterOptions::default(),
    };
    if let Some(v) = opts.radius {
        r.radius = v;
    }
    if let Some(v) = opts.seed {
        r.seed = v;
    }
    if opts.no_stochastic {
        r.stochastic = false;
    }
    if let Some(v) = opts.tol_f {
        r.simplex.tol_f = v;
    }
    if let Some(v) = opts.tol_x {
        r.simplex.tol_x = v;
    }
    if let Some(v) = opts.max_evals {
        r.simplex.max_evals = v;
    }
    if opts.threads.is_some() {
        r.threads = opts.threads;
    }
    r.validate()?;
    Ok(r)
}

fn noise_pair(v: &[f64]) -> anyhow::Result<(f64, f64)> {
    match v {
        [mm, deg] if *mm >= 0.0 && *deg >= 0.0 => Ok((*mm, *deg)),
        _ => Err(invalid("cue noise must be two non-negative numbers MM,DEG")),
    }
}

/// A generated phantom with the cues a suite run uses.
struct Suite {
    vol: CtVolume,
    mesh: TriMesh,
    truth: PhantomTruth,
    cues: CueFile,
}

fn suite_case(base: &PhantomConfig, seed: u64, noise: (f64, f64)) -> anyhow::Result<Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = PhantomConfig {
        seed,
        gt_params: random_gt_params(&mut rng, 15.0, 10.0),
        ..base.clone()
    };
    let (vol, mesh, truth) = generate_phantom(&cfg)?;
    let cues = if noise.0 > 0.0 || noise.1 > 0.0 {
        noisy_cues(&truth.gt_cues, &vol, &mut rng, noise.0, noise.1)
    } else {
        truth.gt_cues.clone()
    };
    Ok(Suite { vol, mesh, truth, cues })
}

fn phantom(a: PhantomArgs) -> anyhow::Result<()> {
    let mut cfg = phantom_config(&PhantomOpts {
        phantom_config: a.config.clone(),
        jaw: a.jaw,
        artifact_fraction: a.artifact_fraction,
        mesh_noise: a.mesh_noise,
    })?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if let Some(p) = &a.pose {
        if p.len() != 6 {
            return Err(invalid("--pose needs six values RX,RY,RZ,TX,TY,TZ"));
        }
        cfg.gt_params = TransformParams::from_degrees(p[0], p[1], p[2], p[3], p[4], p[5]);
    } else if let Some(r) = &a.random_pose {
        let [deg, mm] = r[..] else {
            return Err(invalid("--random-pose needs two values DEG,MM"));
        };
        if !(deg >= 0.0 && mm >= 0.0) {
            return Err(invalid("--random-pose bounds must be non-negative"));
        }
        cfg.gt_params = random_gt_params(&mut rng, deg, mm);
    }
    let noise = a.cue_noise.as_deref().map(noise_pair).transpose()?;
    let (vol, mesh, truth) = generate_phantom(&cfg)?;
    let d = &a.out_dir;
    create_dir(d)?;
    save_volume(d.join("ct.hdr"), &vol)?;
    save_mesh(d.join("mesh.obj"), &mesh)?;
    write_json(&d.join("truth.json"), &truth)?;
    write_json(&d.join("config.json"), &cfg)?;
    save_pose_cues(d.join("cues.json"), &truth.gt_cues)?;
    if let Some((mm, deg)) = noise {
        save_pose_cues(d.join("cues_noisy.json"), &noisy_cues(&truth.gt_cues, &vol, &mut rng, mm, deg))?;
    }
    let (depth, _) = depth_image(&mesh, &pca_axes(&mesh)?, dentreg::projection::DEFAULT_DEPTH_PIXEL_SIZE)?;
    save_image(d.join("depth.pgm"), &depth)?;
    save_image(d.join("mip.pgm"), &mip_project_x(&vol))?;
    say!(
        "wrote phantom (seed {}, {} jaw, {} vertices, volume {:?}) to {}",
        cfg.seed,
        match cfg.jaw {
            Jaw::Upper => "upper",
            Jaw::Lower => "lower",
        },
        mesh.vertex_count(),
        vol.dims(),
        d.display()
    );
    Ok(())
}

fn project(a: ProjectArgs) -> anyhow::Result<()> {
    if a.ct.is_none() && a.mesh.is_none() {
        return Err(invalid("project needs --ct, --mesh or both"));
    }
    create_dir(&a.out_dir)?;
    if let Some(p) = &a.mesh {
        let mesh = load_mesh(p)?;
        let (depth, frame) = depth_image(&mesh, &pca_axes(&mesh)?, dentreg::projection::DEFAULT_DEPTH_PIXEL_SIZE)?;
        save_image(a.out_dir.join("depth.pgm"), &depth)?;
        write_json(&a.out_dir.join("depth_frame.json"), &frame)?;
        say!("depth image {}x{}", depth.width, depth.height);
    }
    if let Some(p) = &a.ct {
        let mip = mip_project_x(&load_volume(p)?);
        save_image(a.out_dir.join("mip.pgm"), &mip)?;
        say!("CT projection {}x{}", mip.width, mip.height);
    }
    Ok(())
}

fn pose(a: PoseArgs) -> anyhow::Result<()> {
    let img = load_image(&a.image)?;
    let cues = heuristic_pose_estimate(&img, a.kind)?;
    let frame_path = a.image.with_file_name("depth_frame.json");
    let frame = if a.kind == ImageKind::Depth && frame_path.exists() {
        Some(read_json(&frame_path)?)
    } else {
        None
    };
    let file = CueFile {
        cues,
        frame,
        image_ref: Some(a.image.display().to_string()),
    };
    save_pose_cues(&a.out, &file)?;
    for c in &file.cues {
        say!(
            "{}: point ({:.1}, {:.1}) px, angle {:.2}°",
            c.source.as_str(),
            c.point[0],
            c.point[1],
            c.angle.to_degrees()
        );
    }
    Ok(())
}

fn merged_cues(paths: &[PathBuf]) -> anyhow::Result<Option<CueFile>> {
    let mut merged: Option<CueFile> = None;
    for p in paths {
        let f = load_pose_cues(p)?;
        match &mut merged {
            None => merged = Some(f),
            Some(m) => {
                for c in f.cues {
                    if m.find(c.source).is_some() {
                        return Err(invalid(format!("{}: duplicate {} cue", p.display(), c.source.as_str())));
                    }
                    m.cues.push(c);
                }
                m.frame = m.frame.or(f.frame);
            }
        }
    }
    Ok(merged)
}

fn print_summary(r: &RegistrationReport) {
    let p = r.final_params;
    say!(
        "{}: {} clusters ({} base), survivors {:?}, rotation ({:.2}°, {:.2}°, {:.2}°), translation ({:.2}, {:.2}, {:.2}) mm, {:.2} s",
        r.method,
        r.counts.base + r.counts.augmented,
        r.counts.base,
        r.survivors,
        p.rx.to_degrees(),
        p.ry.to_degrees(),
        p.rz.to_degrees(),
        p.tx,
        p.ty,
        p.tz,
        r.runtime_s.total
    );
}

fn register_cmd(a: RegisterArgs) -> anyhow::Result<()> {
    let opts = run_options(&a.run)?;
    let vol = load_volume(&a.ct)?;
    let mut mesh = load_mesh(&a.mesh)?;
    if a.flip_normals {
        mesh = mesh.flipped();
    }
    let cues = merged_cues(&a.cues)?;
    let reg = register(&mesh, &vol, a.jaw, cues.as_ref(), &opts)?;
    write_json(&a.out, &reg.report)?;
    print_summary(&reg.report);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let mut report: RegistrationReport = read_json(&a.report)?;
    let truth: PhantomTruth = read_json(&a.truth)?;
    let ev = report.evaluate(&truth.landmarks, &truth.gt_transform)?.clone();
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    say!("mean landmark error {:.3} mm (initial {:.3} mm)", ev.mean_mm, ev.initial_mean_mm);
    for (i, e) in ev.per_landmark_mm.iter().enumerate() {
        say!("  landmark {i}: {e:.3} mm");
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkRow {
    seed: u64,
    initial_mm: f64,
    full_mm: f64,
    no_stochastic_mm: f64,
    icp_mm: f64,
    full_s: f64,
    no_stochastic_s: f64,
    icp_s: f64,
}

fn benchmark(a: BenchmarkArgs) -> anyhow::Result<()> {
    let cfg = phantom_config(&a.phantom)?;
    let opts = run_options(&a.run)?;
    let noise = noise_pair(&a.cue_noise)?;
    if a.seeds == 0 {
        return Err(invalid("--seeds must be at least 1"));
    }
    let no_stochastic = RegisterOptions {
        stochastic: false,
        ..opts.clone()
    };
    let mut rows = Vec::new();
    for seed in a.first_seed..a.first_seed + a.seeds {
        let c = suite_case(&cfg, seed, noise)?;
        let err = |t| landmark_error(&c.truth.landmarks, t, &c.truth.gt_transform).map(|e| e.1);
        let init = initial_pose(&c.mesh, &c.vol, c.truth.jaw, Some(&c.cues), opts.depth_pixel_size)?;
        let full = register(&c.mesh, &c.vol, c.truth.jaw, Some(&c.cues), &opts)?;
        let plain = register(&c.mesh, &c.vol, c.truth.jaw, Some(&c.cues), &no_stochastic)?;
        let icp = register_icp(&c.mesh, &c.vol, &init.transform)?;
        let row = BenchmarkRow {
            seed,
            initial_mm: err(&init.transform)?,
            full_mm: err(&full.final_fit.transform)?,
            no_stochastic_mm: err(&plain.final_fit.transform)?,
            icp_mm: err(&icp.final_transform)?,
            full_s: full.report.runtime_s.total,
            no_stochastic_s: plain.report.runtime_s.total,
            icp_s: icp.runtime_s.total,
        };
        eprintln!(
            "seed {seed}: initial {:.3}, full {:.3}, no-stochastic {:.3}, ICP {:.3} mm",
            row.initial_mm, row.full_mm, row.no_stochastic_mm, row.icp_mm
        );
        rows.push(row);
    }
    let stats = |f: fn(&BenchmarkRow) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        (m, sd)
    };
    say!("| method | landmark error (mm) | runtime (s) |");
    say!("|---|---|---|");
    let lines: [(&str, fn(&BenchmarkRow) -> f64, fn(&BenchmarkRow) -> f64); 3] = [
        ("ICP", |r| r.icp_mm, |r| r.icp_s),
        ("clusters, no stochastic", |r| r.no_stochastic_mm, |r| r.no_stochastic_s),
        ("clusters", |r| r.full_mm, |r| r.full_s),
    ];
    for (name, e, t) in lines {
        let ((em, esd), (tm, tsd)) = (stats(e), stats(t));
        say!("| {name} | {em:.3} ± {esd:.3} | {tm:.2} ± {tsd:.2} |");
    }
    if let Some(out) = &a.out {
        write_json(out, &rows)?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let cfg = phantom_config(&a.phantom)?;
    let base = run_options(&a.run)?;
    let noise = noise_pair(&a.cue_noise)?;
    if a.radii.is_empty() || a.radii.iter().any(|r| !(*r > 0.0)) {
        return Err(invalid("--radii must be positive"));
    }
    let cases = (a.first_seed..a.first_seed + a.seeds)
        .map(|s| suite_case(&cfg, s, noise).map(|c| (s, c)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &r in &a.radii {
        let opts = RegisterOptions { radius: r, ..base.clone() };
        for (seed, c) in &cases {
            let reg = register(&c.mesh, &c.vol, c.truth.jaw, Some(&c.cues), &opts)
                .map_err(|e| anyhow!(e).context(format!("radius {r}, seed {seed}")))?;
            let (_, err) = landmark_error(&c.truth.landmarks, &reg.final_fit.transform, &c.truth.gt_transform)?;
            rows.push(SweepRow {
                radius_mm: r,
                mean_error_mm: err,
                runtime_s: reg.report.runtime_s.total,
                seed: *seed,
            });
        }
    }
    fs::write(&a.out, sweep_csv(&rows)).with_context(|| format!("cannot write {}", a.out.display()))?;
    for (r, e, t) in sweep_summary(&rows) {
        say!("r = {r} mm: mean error {e:.3} mm, mean runtime {t:.2} s");
    }
    Ok(())
}
