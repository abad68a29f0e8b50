//! `neurocond`: phantom generation, conductor assignment, network training
//! and inference, coil fields, field solves and GE comparison.

mod manifest;

use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neurocond::condnet::{self, infer_volume, load_weights, save_weights, NetConfig, SliceModel, TrainConfig};
use neurocond::conductor::{
    assign_uniform, denormalize, normalize_conductor, NormParams, TissueTable, DEFAULT_TAU,
};
use neurocond::grid::normalize_mri;
use neurocond::io::{read_any, read_volume, write_volume, Volume};
use neurocond::metrics::{peak_center, phantom_regions, region_report, report_csv, report_text, RegionMask};
use neurocond::phantom::{generate_phantom, PhantomSpec, Sample, TrainingSet};
use neurocond::spfd::{self, SolveConfig, SphereFixture};
use neurocond::{coil, Axis, Dims, LabelGrid, ScalarGrid, VectorGrid};

use manifest::RunManifest;

type Res<T> = Result<T, Box<dyn StdError>>;

#[derive(Parser)]
#[command(name = "neurocond", version, about = "Voxel volume conductors and TMS field solves")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where to write the run manifest (default: next to the first output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic head phantoms.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Uniform conductor assignment and normalization.
    #[command(subcommand)]
    Conductor(ConductorCmd),
    /// Train or apply the conductivity network.
    #[command(subcommand)]
    Net(NetCmd),
    /// Coil vector potentials.
    #[command(subcommand)]
    Coil(CoilCmd),
    /// Scalar-potential solve and electric field.
    #[command(subcommand)]
    Field(FieldCmd),
    /// GE of two |E| maps over explicit region masks.
    Compare(CompareArgs),
    /// GE table over coil-side ROI, brain, non-brain and head.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Writes <prefix>_labels.nvv, <prefix>_t1.nvv and <prefix>_t2.nvv.
    Gen(PhantomGen),
}

#[derive(Args)]
struct PhantomGen {
    /// Phantom description; the built-in head is used when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Cube edge in voxels for the built-in head.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    table: TableArgs,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args, Clone)]
struct TableArgs {
    /// Built-in tissue table, A or B.
    #[arg(long, default_value = "A")]
    table: String,
    /// Tissue table file; overrides --table.
    #[arg(long)]
    table_file: Option<PathBuf>,
}

impl TableArgs {
    fn load(&self) -> Res<TissueTable> {
        Ok(match &self.table_file {
            Some(p) => TissueTable::load(p)?,
            None => TissueTable::by_letter(&self.table)?,
        })
    }

    fn describe(&self) -> String {
        match &self.table_file {
            Some(p) => p.display().to_string(),
            None => self.table.clone(),
        }
    }
}

#[derive(Subcommand)]
enum ConductorCmd {
    /// Labels to conductivity (S/m).
    Assign {
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        table: TableArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Conductivity (S/m) to [0, 1 - tau], or back with --inverse.
    Normalize {
        #[arg(long)]
        cond: PathBuf,
        #[command(flatten)]
        table: TableArgs,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        inverse: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum NetCmd {
    /// Trains one direction network on phantom prefixes.
    Train(TrainArgs),
    /// Averages three direction networks into a conductivity volume.
    Infer(InferArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Prefix written by `phantom gen`; repeat for several subjects.
    #[arg(long = "phantom", required = true)]
    phantoms: Vec<PathBuf>,
    #[arg(long, default_value = "axial")]
    axis: Axis,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Encoder/decoder levels.
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[command(flatten)]
    table: TableArgs,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Weight file (CNW1).
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    axial: PathBuf,
    #[arg(long)]
    sagittal: PathBuf,
    #[arg(long)]
    coronal: PathBuf,
    #[arg(long)]
    t1: PathBuf,
    #[arg(long)]
    t2: PathBuf,
    #[command(flatten)]
    table: TableArgs,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CoilCmd {
    /// dA/dt (V/m) on the voxel centers of a reference volume.
    Field {
        /// Volume whose geometry the field is sampled on.
        #[arg(long)]
        like: PathBuf,
        /// Coil description; without it the coil sits over the top of the
        /// non-zero region of --like.
        #[arg(long)]
        coil: Option<PathBuf>,
        /// Scalp-to-coil distance for the automatic placement, mm.
        #[arg(long, default_value_t = 5.0)]
        standoff: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FieldCmd {
    /// Solves for ψ and writes <prefix>_psi.nvv, _e.nvv, _emag.nvv, _solve.txt.
    Solve(SolveArgs),
    /// E and |E| from a stored potential.
    Efield {
        #[arg(long)]
        psi: PathBuf,
        #[arg(long)]
        cond: PathBuf,
        #[arg(long)]
        dadt: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, required_unless_present = "sphere")]
    cond: Option<PathBuf>,
    #[arg(long, required_unless_present = "sphere")]
    dadt: Option<PathBuf>,
    /// Homogeneous sphere (R = 24 mm, 64³, 1 mm) in uniform dB/dt instead of
    /// --cond/--dadt.
    #[arg(long, conflicts_with_all = ["cond", "dadt"])]
    sphere: bool,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_cycles: usize,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    e: PathBuf,
    #[arg(long)]
    ehat: PathBuf,
    /// Mask volume (non-zero voxels belong to the region); repeatable.
    #[arg(long = "region", required = true)]
    regions: Vec<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Reference |E| (V/m).
    #[arg(long)]
    e: PathBuf,
    /// Compared |E| (V/m).
    #[arg(long)]
    ehat: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// ROI center "x,y,z" in mm; defaults to the voxel of largest reference |E|.
    #[arg(long, value_parser = parse_point)]
    roi: Option<[f64; 3]>,
    #[arg(long, default_value_t = 5.0)]
    roi_radius: f64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number `{t}`")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected x,y,z".to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(mut m) => {
            m.set("threads", cli.threads.map_or("default".to_string(), |n| n.to_string()));
            match m.write(cli.manifest.as_deref()) {
                Ok(p) => {
                    println!("manifest: {}", p.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Res<RunManifest> {
    match cmd {
        Command::Phantom(PhantomCmd::Gen(a)) => phantom_gen(a),
        Command::Conductor(ConductorCmd::Assign { labels, table, out }) => conductor_assign(&labels, &table, &out),
        Command::Conductor(ConductorCmd::Normalize { cond, table, tau, inverse, out }) => {
            conductor_normalize(&cond, &table, tau, inverse, &out)
        }
        Command::Net(NetCmd::Train(a)) => net_train(a),
        Command::Net(NetCmd::Infer(a)) => net_infer(a),
        Command::Coil(CoilCmd::Field { like, coil, standoff, out }) => coil_field(&like, coil.as_deref(), standoff, &out),
        Command::Field(FieldCmd::Solve(a)) => field_solve(a),
        Command::Field(FieldCmd::Efield { psi, cond, dadt, out_prefix }) => field_efield(&psi, &cond, &dadt, &out_prefix),
        Command::Compare(a) => compare(a),
        Command::Report(a) => report(a),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn phantom_gen(a: PhantomGen) -> Res<RunManifest> {
    let mut m = RunManifest::new("phantom gen");
    let table = a.table.load()?;
    let spec = match &a.spec {
        Some(p) => {
            m.input(p);
            PhantomSpec::load(p)?
        }
        None => PhantomSpec::head(a.size, a.seed),
    };
    m.seed("phantom", spec.seed);
    m.set("table", a.table.describe());
    m.set("dims", spec.dims);
    let ph = m.stage("generate", || generate_phantom(&spec, &table))?;
    let paths = ["_labels.nvv", "_t1.nvv", "_t2.nvv"].map(|s| with_suffix(&a.out_prefix, s));
    m.stage("write", || -> Res<()> {
        write_volume(&ph.labels, &paths[0])?;
        write_volume(&ph.t1, &paths[1])?;
        write_volume(&ph.t2, &paths[2])?;
        Ok(())
    })?;
    for p in &paths {
        m.output(p);
        println!("wrote {}", p.display());
    }
    println!("phantom {} voxels of {} mm", spec.dims, spec.voxel_mm);
    Ok(m)
}

fn print_range(what: &str, g: &ScalarGrid, unit: &str) {
    let (lo, hi) = g.min_max();
    println!("{what}: {lo:.4} to {hi:.4} {unit}");
}

fn conductor_assign(labels: &Path, table: &TableArgs, out: &Path) -> Res<RunManifest> {
    let mut m = RunManifest::new("conductor assign");
    m.input(labels);
    m.set("table", table.describe());
    let t = table.load()?;
    let l: LabelGrid = read_volume(labels)?;
    let cond = m.stage("assign", || assign_uniform(&l, &t))?;
    write_volume(&cond, out)?;
    m.output(out);
    print_range("conductivity", &cond, "S/m");
    Ok(m)
}

fn conductor_normalize(cond: &Path, table: &TableArgs, tau: f64, inverse: bool, out: &Path) -> Res<RunManifest> {
    let mut m = RunManifest::new(if inverse { "conductor normalize --inverse" } else { "conductor normalize" });
    m.input(cond);
    m.set("table", table.describe());
    m.set("tau", tau);
    let p = NormParams::for_table(&table.load()?, tau)?;
    let g: ScalarGrid = read_volume(cond)?;
    let res = if inverse { denormalize(&g, &p)? } else { normalize_conductor(&g, &p)? };
    write_volume(&res, out)?;
    m.output(out);
    if inverse {
        print_range("conductivity", &res, "S/m");
    } else {
        print_range("normalized conductor", &res, "(dimensionless)");
    }
    Ok(m)
}

fn load_sample(prefix: &Path, table: &TissueTable, norm: &NormParams, m: &mut RunManifest) -> Res<Sample> {
    let [lp, t1p, t2p] = ["_labels.nvv", "_t1.nvv", "_t2.nvv"].map(|s| with_suffix(prefix, s));
    let labels: LabelGrid = read_volume(&lp)?;
    let t1 = normalize_mri(&read_volume(&t1p)?)?;
    let t2 = normalize_mri(&read_volume(&t2p)?)?;
    let target = normalize_conductor(&assign_uniform(&labels, table)?, norm)?;
    for p in [lp, t1p, t2p] {
        m.input(p);
    }
    Ok(Sample { labels, t1, t2, targets: vec![target] })
}

fn net_train(a: TrainArgs) -> Res<RunManifest> {
    let mut m = RunManifest::new("net train");
    let table = a.table.load()?;
    let norm = NormParams::for_table(&table, a.tau)?;
    let samples = a
        .phantoms
        .iter()
        .map(|p| load_sample(p, &table, &norm, &mut m))
        .collect::<Res<Vec<_>>>()?;
    let data = TrainingSet { samples, tables: vec![table], norms: vec![norm] };
    let (side, _) = data.dims().plane(a.axis);
    if !side.is_power_of_two() {
        return Err(format!("{} slices are {side} voxels wide; the network needs a power of two", a.axis).into());
    }
    let cfg = NetConfig::uniform(2, 1, a.depth, side.trailing_zeros() as usize, 3, 5, 5);
    let tcfg = TrainConfig { epochs: a.epochs, batch: a.batch, seed: a.seed, ..Default::default() };
    m.seed("train", a.seed);
    for (k, v) in [
        ("axis", a.axis.to_string()),
        ("epochs", a.epochs.to_string()),
        ("batch", a.batch.to_string()),
        ("depth", a.depth.to_string()),
        ("log2_size", cfg.log2_size.to_string()),
        ("table", a.table.describe()),
        ("tau", a.tau.to_string()),
    ] {
        m.set(k, v);
    }
    let (net, curve) = m.stage("train", || {
        condnet::train_with(&cfg, &tcfg, &data, a.axis, |e, t, v| {
            println!("epoch {e:>3}  train BCE {t:.5}  validation BCE {v:.5}");
        })
    })?;
    save_weights(&net, &a.out)?;
    m.output(&a.out);
    if let Some(p) = &a.losses {
        fs::write(p, curve.to_csv())?;
        m.output(p);
    }
    println!(
        "{} training and {} validation slices, {} parameters",
        curve.train_slices,
        curve.validation_slices,
        net.parameter_count()
    );
    Ok(m)
}

fn net_infer(a: InferArgs) -> Res<RunManifest> {
    let mut m = RunManifest::new("net infer");
    let nets = [&a.axial, &a.sagittal, &a.coronal]
        .map(|p| {
            m.input(p);
            load_weights(p)
        });
    let [ax, sa, co] = nets;
    let (ax, sa, co) = (ax?, sa?, co?);
    m.input(&a.t1);
    m.input(&a.t2);
    m.set("table", a.table.describe());
    m.set("tau", a.tau);
    let norm = NormParams::for_table(&a.table.load()?, a.tau)?;
    let t1 = normalize_mri(&read_volume(&a.t1)?)?;
    let t2 = normalize_mri(&read_volume(&a.t2)?)?;
    let models: [&dyn SliceModel; 3] = [&ax, &sa, &co];
    let cond = m.stage("infer", || infer_volume(models, &[&t1, &t2], &[norm]))?.remove(0);
    write_volume(&cond, &a.out)?;
    m.output(&a.out);
    print_range("conductivity", &cond, "S/m");
    Ok(m)
}

/// Geometry and a "non-zero" mask of any NVV1 volume.
fn geometry(v: &Volume) -> (Dims, f64, Vec<bool>) {
    match v {
        Volume::Scalar(g) => (g.dims(), g.voxel_mm(), g.data().iter().map(|&x| x != 0.0).collect()),
        Volume::Labels(g) => (g.dims(), g.voxel_mm(), g.data().iter().map(|&x| x != 0).collect()),
        Volume::Vector(g) => (g.dims(), g.voxel_mm(), g.data().iter().map(|x| x.iter().any(|&c| c != 0.0)).collect()),
    }
}

fn coil_field(like: &Path, coil_file: Option<&Path>, standoff: f64, out: &Path) -> Res<RunManifest> {
    let mut m = RunManifest::new("coil field");
    m.input(like);
    let (dims, h, mask) = geometry(&read_any(like)?);
    let cfg = match coil_file {
        Some(p) => {
            m.input(p);
            coil::CoilConfig::load(p)?
        }
        None => coil::CoilConfig::new(coil::CoilPlacement::above_top(&mask, dims, h, standoff)?),
    };
    for line in cfg.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            m.set(&format!("coil.{k}"), v);
        }
    }
    let wire = cfg.wire()?;
    let field = m.stage("vector_potential", || coil::da_dt_field(&wire, cfg.didt, dims, h))?;
    write_volume(&field, out)?;
    m.output(out);
    let peak = field
        .data()
        .iter()
        .map(|v| (v[0] as f64).hypot(v[1] as f64).hypot(v[2] as f64))
        .fold(0.0, f64::max);
    println!("max |dA/dt|: {peak:.4} V/m");
    Ok(m)
}

fn write_field(prefix: &Path, e: &VectorGrid, mag: &ScalarGrid, m: &mut RunManifest) -> Res<()> {
    let (pe, pm) = (with_suffix(prefix, "_e.nvv"), with_suffix(prefix, "_emag.nvv"));
    write_volume(e, &pe)?;
    write_volume(mag, &pm)?;
    m.output(pe);
    m.output(pm);
    let (_, hi) = mag.min_max();
    println!("max |E|: {hi:.4} V/m");
    Ok(())
}

fn field_solve(a: SolveArgs) -> Res<RunManifest> {
    let mut m = RunManifest::new("field solve");
    let (cond, dadt, sphere) = if a.sphere {
        let s = SphereFixture::default();
        m.set("fixture", format!("sphere R={} mm sigma={} S/m dB/dt={} T/s", s.radius_mm, s.sigma, s.db_dt));
        (s.conductivity()?, s.da_dt()?, Some(s))
    } else {
        let (c, d) = (a.cond.as_ref().ok_or("--cond missing")?, a.dadt.as_ref().ok_or("--dadt missing")?);
        m.input(c);
        m.input(d);
        (read_volume::<f32>(c)?, read_volume::<[f32; 3]>(d)?, None)
    };
    let cfg = SolveConfig { tol: a.tol, max_cycles: a.max_cycles, ..Default::default() };
    m.set("tol", a.tol);
    m.set("max_cycles", a.max_cycles);
    m.set("omega", cfg.omega);
    let system = m.stage("assemble", || spfd::assemble(&cond, &dadt))?;
    let sol = m.stage("solve", || spfd::solve(&system, &cfg))?;
    let (e, mag) = m.stage("efield", || spfd::electric_field(&sol.potential, &dadt, &cond))?;
    let psi_path = with_suffix(&a.out_prefix, "_psi.nvv");
    write_volume(&sol.to_grid()?, &psi_path)?;
    m.output(&psi_path);
    write_field(&a.out_prefix, &e, &mag, &mut m)?;
    let mut report = sol.stats.report();
    if let Some(s) = sphere {
        let err = s.errors(&mag);
        report.push_str(&format!(
            "sphere_interior_max_relative_error = {:.4} %\nsphere_max_relative_error = {:.4} %\n",
            100.0 * err.interior_max,
            100.0 * err.cylinder_max
        ));
    }
    let rp = with_suffix(&a.out_prefix, "_solve.txt");
    fs::write(&rp, &report)?;
    m.output(&rp);
    print!("{report}");
    if !sol.stats.converged {
        eprintln!("warning: residual {:.3e} above tolerance after {} cycles", sol.stats.final_residual, sol.stats.cycles);
    }
    Ok(m)
}

fn field_efield(psi: &Path, cond: &Path, dadt: &Path, prefix: &Path) -> Res<RunManifest> {
    let mut m = RunManifest::new("field efield");
    for p in [psi, cond, dadt] {
        m.input(p);
    }
    let potential: Vec<f64> = read_volume::<f32>(psi)?.data().iter().map(|&v| v as f64).collect();
    let c: ScalarGrid = read_volume(cond)?;
    let d: VectorGrid = read_volume(dadt)?;
    let (e, mag) = m.stage("efield", || spfd::electric_field(&potential, &d, &c))?;
    write_field(prefix, &e, &mag, &mut m)?;
    Ok(m)
}

fn region_from_file(p: &Path) -> Res<RegionMask> {
    let name = p.file_stem().map_or("region".into(), |s| s.to_string_lossy().into_owned());
    let (dims, _, mask) = geometry(&read_any(p)?);
    Ok(RegionMask::from_vec(name, dims, mask)?)
}

fn emit_report(rows: &[neurocond::metrics::ReportRow], csv: Option<&Path>, m: &mut RunManifest) -> Res<()> {
    print!("{}", report_text(rows));
    if let Some(p) = csv {
        fs::write(p, report_csv(rows))?;
        m.output(p);
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Res<RunManifest> {
    let mut m = RunManifest::new("compare");
    m.input(&a.e);
    m.input(&a.ehat);
    let e: ScalarGrid = read_volume(&a.e)?;
    let eh: ScalarGrid = read_volume(&a.ehat)?;
    let regions = a
        .regions
        .iter()
        .map(|p| {
            m.input(p);
            region_from_file(p)
        })
        .collect::<Res<Vec<_>>>()?;
    let rows = region_report(&e, &eh, &regions)?;
    emit_report(&rows, a.csv.as_deref(), &mut m)?;
    Ok(m)
}

fn report(a: ReportArgs) -> Res<RunManifest> {
    let mut m = RunManifest::new("report");
    for p in [&a.e, &a.ehat, &a.labels] {
        m.input(p);
    }
    let e: ScalarGrid = read_volume(&a.e)?;
    let eh: ScalarGrid = read_volume(&a.ehat)?;
    let labels: LabelGrid = read_volume(&a.labels)?;
    m.set("roi_radius_mm", a.roi_radius);
    let center = match a.roi {
        Some(c) => c,
        None => {
            let head = RegionMask::from_vec("head", labels.dims(), labels.data().iter().map(|&l| l != 0).collect())?;
            peak_center(&e, &head)?
        }
    };
    m.set("roi_center_mm", format!("{} {} {}", center[0], center[1], center[2]));
    let regions = phantom_regions(&labels, center, a.roi_radius)?;
    let rows = region_report(&e, &eh, &regions)?;
    emit_report(&rows, a.csv.as_deref(), &mut m)?;
    Ok(m)
}
