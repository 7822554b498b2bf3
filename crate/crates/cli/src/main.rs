//! `dexgrasp`: transfer a demonstrated grasp across a category and score it.
//!
//! Exit codes: 0 success, 1 internal failure, 2 invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dexgrasp::geometry::sample_surface;
use dexgrasp::io::{self, ContactsRecord, GraspRecord, CONTACTS_SCHEMA, GRASP_SCHEMA, OBJSTATE_SCHEMA};
use dexgrasp::metrics::to_csv;
use dexgrasp::pipeline::{self, RunConfig};
use dexgrasp::synth::CategoryKind;
use dexgrasp::Error;
use log::{error, info, warn};

#[derive(Parser)]
#[command(name = "dexgrasp", version, about = "Functional grasp transfer for robot hands")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Optimization restarts per grasp.
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Optimization steps per restart.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Surface samples per object.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
}

#[derive(Subcommand)]
enum Command {
    /// Extract contact targets from a demonstration.
    Contacts {
        #[arg(long)]
        demo: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a grasp for every instance of a category.
    Synthesize {
        #[arg(long)]
        category: PathBuf,
        #[arg(long)]
        demo: PathBuf,
        /// Shipped hand name or handspec/1 file.
        #[arg(long)]
        hand: String,
        #[arg(long)]
        out: PathBuf,
        /// Instances processed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Estimate template, pose and scale of a partial point cloud.
    Fit {
        #[arg(long)]
        cloud: PathBuf,
        /// Template meshes or category directories.
        #[arg(long, num_args = 1.., required = true)]
        library: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score grasps on an object; one CSV row per grasp, in argument order.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        grasp: Vec<PathBuf>,
        #[arg(long)]
        object: PathBuf,
        /// contacts/1 file on the same object; enables functionality columns.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// grasp/1 file whose wrist rotation HRD is measured against.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Overrides the hand named in the grasp files.
        #[arg(long)]
        hand: Option<String>,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the posed hand and the object as one labeled PLY.
    Export {
        #[arg(long)]
        grasp: PathBuf,
        #[arg(long)]
        object: PathBuf,
        #[arg(long)]
        hand: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic categories, demonstrations and partial views.
    MakeFixtures {
        #[arg(long)]
        out: PathBuf,
        /// Categories to generate (bottle, mug, bar); all when absent.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
        #[arg(long, default_value_t = pipeline::FIXTURE_INSTANCES)]
        instances: usize,
    },
}

fn config(c: &Common) -> dexgrasp::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.restarts {
        cfg.optimize.restarts = r;
    }
    if let Some(s) = c.steps {
        cfg.optimize.steps = s;
    }
    if let Some(n) = c.samples {
        cfg.object_samples = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_grasp(path: &Path, hand: Option<&str>) -> dexgrasp::Result<(GraspRecord, dexgrasp::hand::HandSpec)> {
    let rec: GraspRecord = io::read_record(path, GRASP_SCHEMA)?;
    let spec = io::load_hand(hand.unwrap_or(&rec.hand))?;
    if rec.q.len() != spec.dof() {
        return Err(Error::invalid(format!(
            "{}: {} joints for hand `{}` with {}",
            path.display(),
            rec.q.len(),
            spec.name,
            spec.dof()
        )));
    }
    Ok((rec, spec))
}

fn run(cli: Cli) -> dexgrasp::Result<ExitCode> {
    let cfg = config(&cli.common)?;
    match cli.cmd {
        Command::Contacts { demo, out } => {
            let d = pipeline::load_demo(&demo)?;
            let rec = pipeline::demo_contacts(&d, &cfg)?;
            if rec.bundle.object_contact.is_empty() {
                warn!("the hand does not touch the object; no contact targets");
            }
            io::write_record(&out, CONTACTS_SCHEMA, &rec)?;
            println!(
                "contact points: {}  active anchors: {}  segments touching: {}",
                rec.bundle.object_contact.len(),
                rec.bundle.active_anchors(),
                rec.bundle.segments.iter().filter(|s| !s.region.is_empty()).count()
            );
        }
        Command::Synthesize {
            category,
            demo,
            hand,
            out,
            jobs,
        } => {
            let spec = io::load_hand(&hand)?;
            let r = pipeline::synthesize(&category, &demo, &spec, &hand, &cfg, &out, jobs)?;
            for f in &r.manifest.failures {
                error!("{}: {}", f.instance, f.error);
            }
            println!(
                "{} of {} instances succeeded; manifest in {}",
                r.succeeded(),
                r.succeeded() + r.manifest.failures.len(),
                out.join(pipeline::MANIFEST_FILE).display()
            );
            if r.succeeded() == 0 {
                let all_input = r.input_failures == r.manifest.failures.len();
                return Ok(ExitCode::from(if all_input { 2 } else { 1 }));
            }
        }
        Command::Fit { cloud, library, out } => {
            let state = pipeline::fit_cloud(&cloud, &library, &cfg)?;
            io::write_record(&out, OBJSTATE_SCHEMA, &state)?;
            println!(
                "template {}  scale {:.4}  loss {:.5}",
                state.template_id, state.scale, state.losses.total
            );
        }
        Command::Eval {
            grasp,
            object,
            truth,
            reference,
            hand,
            out,
        } => {
            let mesh = pipeline::read_mesh_checked(&object)?;
            let name = object.file_stem().map_or_else(|| "object".into(), |s| s.to_string_lossy().into_owned());
            let truth: Option<ContactsRecord> = match &truth {
                Some(p) => {
                    let t: ContactsRecord = io::read_record(p, CONTACTS_SCHEMA)?;
                    t.validate()?;
                    Some(t)
                }
                None => None,
            };
            let samples = match &truth {
                Some(t) => t.samples.clone(),
                None => sample_surface(&mesh, cfg.object_samples, cfg.seed)?,
            };
            let reference = match &reference {
                Some(p) => Some(load_grasp(p, hand.as_deref())?.0.wrist.to_isometry()?.rotation),
                None => None,
            };
            let mut rows = Vec::new();
            for g in &grasp {
                let (rec, spec) = load_grasp(g, hand.as_deref())?;
                rows.push(pipeline::evaluate_grasp(
                    &name,
                    &g.display().to_string(),
                    &spec,
                    &rec.grasp()?,
                    &mesh,
                    &samples,
                    truth.as_ref().map(|t| t.bundle.object_omega.as_slice()),
                    reference.as_ref(),
                )?);
            }
            let csv = to_csv(&rows);
            match out {
                Some(p) => io::write_text(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Export {
            grasp,
            object,
            hand,
            out,
        } => {
            let (rec, spec) = load_grasp(&grasp, hand.as_deref())?;
            let mesh = dexgrasp::geometry::meshio::read_mesh(&object)?;
            let text = pipeline::export_scene(&spec, &rec.grasp()?, &mesh, rec.feasible)?;
            io::write_text(&out, &text)?;
            if !rec.feasible {
                warn!("exported grasp is flagged infeasible");
            }
        }
        Command::MakeFixtures { out, kinds, instances } => {
            if instances == 0 {
                return Err(Error::invalid("need at least one instance"));
            }
            let kinds = if kinds.is_empty() {
                CategoryKind::ALL.to_vec()
            } else {
                kinds
                    .iter()
                    .map(|k| CategoryKind::from_name(k).ok_or_else(|| Error::invalid(format!("unknown category `{k}`"))))
                    .collect::<dexgrasp::Result<Vec<_>>>()?
            };
            for dir in pipeline::make_fixtures(&out, &kinds, instances, cfg.seed)? {
                info!("wrote {}", dir.display());
                println!("{}", dir.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.common.log).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
