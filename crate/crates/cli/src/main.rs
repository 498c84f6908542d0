use clap::{Args, Parser, Subcommand};
use mvskew::aecm::{fit, FitOptions};
use mvskew::datagen::{generate, SimConfig};
use mvskew::io::{FitMetadata, ModelFile, MvStack};
use mvskew::metrics::{ari, mcr};
use mvskew::selection::{bic, count_free_params, grid_search_resume, Cell, CellScore, ModelGridSpec};
use mvskew::{Error, Family};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

#[derive(Parser)]
#[command(name = "mvskew", version, about = "Mixtures of skewed matrix-variate bilinear factor analyzers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FitArgs {
    /// Number of random starts.
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Treat nonzero labels in the data file as known memberships.
    #[arg(long)]
    labels: bool,
}

impl FitArgs {
    fn options(&self) -> FitOptions {
        FitOptions {
            starts: self.starts,
            seed: self.seed,
            max_iter: self.max_iter,
            ..FitOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit one (family, G, q, r) model to an MVSTACK file.
    Fit {
        data: PathBuf,
        #[arg(long)]
        family: Family,
        #[arg(short = 'G', long = "groups")]
        g: usize,
        #[arg(short, long)]
        q: usize,
        #[arg(short, long)]
        r: usize,
        #[command(flatten)]
        fit: FitArgs,
        /// Where to write the model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// MAP labels and membership probabilities under a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        data: PathBuf,
        /// One line per observation: label followed by the G probabilities.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a two-component benchmark dataset.
    Simulate {
        #[arg(long)]
        family: Family,
        /// Rows and columns of each observation.
        #[arg(long)]
        d: usize,
        /// Number of observations.
        #[arg(long = "n-obs")]
        n_obs: usize,
        /// Location separation between the components.
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of labels kept in the data file; the rest are written as 0.
        #[arg(long, default_value_t = 1.0)]
        label_fraction: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the full true labels, one per line.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// ARI and MCR between two label files (or MVSTACK files with labels).
    Evaluate { pred: PathBuf, truth: PathBuf },
    /// BIC search over families, G, q and r.
    Grid {
        data: PathBuf,
        /// Comma-separated families.
        #[arg(long, value_delimiter = ',', default_values_t = Family::SKEWED)]
        families: Vec<Family>,
        /// Range such as `1..4` or a single value.
        #[arg(short = 'G', long = "groups", value_parser = parse_range)]
        g: RangeInclusive<usize>,
        #[arg(short, long, value_parser = parse_range)]
        q: RangeInclusive<usize>,
        #[arg(short, long, value_parser = parse_range)]
        r: RangeInclusive<usize>,
        #[command(flatten)]
        fit: FitArgs,
        /// Keep q and r inside the given ranges.
        #[arg(long)]
        no_extend: bool,
        /// Tab-separated score table; existing rows are kept and their cells skipped.
        #[arg(long)]
        out: PathBuf,
        /// Write the winning model here.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let bad = || format!("invalid range {s:?}; expected N or LO..HI");
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (s, s),
    };
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse(_) => EXIT_IO,
        Error::Domain(_) | Error::Shape(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "io",
        Error::Parse(_) => "parse",
        Error::Domain(_) => "domain",
        Error::Shape(_) => "shape",
        Error::FitFailed { .. } => "fit",
        Error::SelectionFailed(_) => "selection",
        _ => "numerical",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": kind(&e), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> mvskew::Result<()> {
    match cmd {
        Command::Fit { data, family, g, q, r, fit: args, out } => cmd_fit(&data, family, g, q, r, &args, &out),
        Command::Predict { model, data, out } => cmd_predict(&model, &data, &out),
        Command::Simulate { family, d, n_obs, c, seed, label_fraction, out, truth } => {
            cmd_simulate(family, d, n_obs, c, seed, label_fraction, &out, truth.as_deref())
        }
        Command::Evaluate { pred, truth } => cmd_evaluate(&pred, &truth),
        Command::Grid { data, families, g, q, r, fit: args, no_extend, out, model } => {
            let spec = ModelGridSpec {
                families,
                g_range: g,
                q_range: q,
                r_range: r,
                options: args.options(),
                extend: !no_extend,
            };
            cmd_grid(&data, &spec, args.labels, &out, model.as_deref())
        }
    }
}

fn labels_for(stack: &MvStack, use_labels: bool) -> mvskew::Result<Option<&[usize]>> {
    match (&stack.labels, use_labels) {
        (Some(l), true) => Ok(Some(l.as_slice())),
        (None, true) => Err(Error::Domain("--labels given but the data file has no labels".into())),
        _ => Ok(None),
    }
}

fn class_sizes(labels: &[usize], g: usize) -> String {
    (1..=g)
        .map(|k| format!("{k}:{}", labels.iter().filter(|&&l| l == k).count()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_fit(data: &Path, family: Family, g: usize, q: usize, r: usize, args: &FitArgs, out: &Path) -> mvskew::Result<()> {
    let stack = MvStack::read(data)?;
    let labels = labels_for(&stack, args.labels)?;
    let sample = &stack.sample;
    let res = fit(sample, family, g, q, r, labels, &args.options())?;
    let (n, p) = sample.dims();
    let rho = count_free_params(family, g, n, p, q, r);
    let score = bic(res.final_loglik, rho, sample.len());
    let meta = FitMetadata {
        final_loglik: res.final_loglik,
        bic: score,
        rho,
        n_obs: sample.len(),
        iterations: res.iterations,
        converged: res.converged,
        seed: res.start_seed,
    };
    ModelFile::from_model(&res.model, Some(meta)).write(out)?;

    let map = mvskew::model::map_labels(&res.z_hat);
    let trace = &res.loglik_trace;
    let mut report = String::new();
    let _ = writeln!(report, "model {} ({family}) G={g} q={q} r={r} N={} n={n} p={p}", family.acronym(), sample.len());
    let _ = writeln!(report, "iterations {} converged {}", res.iterations, res.converged);
    let _ = writeln!(
        report,
        "loglik_trace entries={} first={:?} last={:?}",
        trace.len(),
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN)
    );
    let _ = writeln!(report, "loglik {:?}", res.final_loglik);
    let _ = writeln!(report, "rho {rho}");
    let _ = writeln!(report, "bic {score:?}");
    let _ = writeln!(report, "fallbacks {}", res.fallbacks);
    let _ = writeln!(report, "class_sizes {}", class_sizes(&map, g));
    print!("{report}");
    Ok(())
}

fn cmd_predict(model: &Path, data: &Path, out: &Path) -> mvskew::Result<()> {
    let model = ModelFile::read(model)?.to_model()?;
    let stack = MvStack::read(data)?;
    let (labels, z) = model.predict(&stack.sample)?;
    let mut text = String::new();
    for (i, l) in labels.iter().enumerate() {
        let _ = write!(text, "{l}");
        for v in z.row(i).iter() {
            let _ = write!(text, " {v:?}");
        }
        text.push('\n');
    }
    std::fs::write(out, text)?;
    println!("class_sizes {}", class_sizes(&labels, model.g()));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    family: Family,
    d: usize,
    n_obs: usize,
    c: f64,
    seed: u64,
    label_fraction: f64,
    out: &Path,
    truth: Option<&Path>,
) -> mvskew::Result<()> {
    if !(0.0..=1.0).contains(&label_fraction) {
        return Err(Error::Domain(format!("label fraction {label_fraction} outside [0, 1]")));
    }
    let sim = generate(&SimConfig::benchmark(family, d, n_obs, c, seed))?;
    // separate stream so masking never perturbs the data
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1ABE_1000_0000);
    let kept: Vec<usize> = sim
        .labels
        .iter()
        .map(|&l| if rng.random::<f64>() < label_fraction { l } else { 0 })
        .collect();
    let labels = (label_fraction > 0.0).then_some(kept);
    MvStack { sample: sim.sample, labels }.write(out)?;
    if let Some(path) = truth {
        write_labels(path, &sim.labels)?;
    }
    println!("class_sizes {}", class_sizes(&sim.labels, 2));
    Ok(())
}

fn write_labels(path: &Path, labels: &[usize]) -> mvskew::Result<()> {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    Ok(std::fs::write(path, text)?)
}

/// First token of each nonempty line, or the labels block of an MVSTACK file.
fn read_labels(path: &Path) -> mvskew::Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with(mvskew::io::MVSTACK_MAGIC) {
        return MvStack::parse(&text)?
            .labels
            .ok_or_else(|| Error::Parse(format!("{} has no labels", path.display())));
    }
    text.lines()
        .filter_map(|l| l.split_whitespace().next())
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("invalid label {t:?} in {}", path.display()))))
        .collect()
}

fn cmd_evaluate(pred: &Path, truth: &Path) -> mvskew::Result<()> {
    let (pred, truth) = (read_labels(pred)?, read_labels(truth)?);
    println!("ari {:?}", ari(&truth, &pred)?);
    println!("mcr {:?}", mcr(&truth, &pred)?);
    Ok(())
}

const TABLE_HEADER: &str = "family\tG\tq\tr\tloglik\trho\tBIC\tstatus";

fn format_row(s: &CellScore) -> String {
    let num = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:?}"));
    let status = match &s.error {
        None => "ok".to_string(),
        Some(e) => format!("failed: {}", e.replace(['\t', '\n'], " ")),
    };
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{status}",
        s.cell.family,
        s.cell.g,
        s.cell.q,
        s.cell.r,
        num(s.loglik),
        s.rho,
        num(s.bic)
    )
}

fn parse_row(line: &str) -> mvskew::Result<CellScore> {
    let f: Vec<&str> = line.split('\t').collect();
    let bad = || Error::Parse(format!("bad score table row {line:?}"));
    if f.len() != 8 {
        return Err(bad());
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
    let num = |s: &str| if s == "NA" { Ok(None) } else { s.parse::<f64>().map(Some).map_err(|_| bad()) };
    Ok(CellScore {
        cell: Cell {
            family: f[0].parse().map_err(|_| bad())?,
            g: int(f[1])?,
            q: int(f[2])?,
            r: int(f[3])?,
        },
        loglik: num(f[4])?,
        rho: int(f[5])?,
        bic: num(f[6])?,
        error: f[7].strip_prefix("failed: ").map(str::to_string),
    })
}

/// Rows already in the table; a truncated last line (interrupted write) is dropped.
fn read_table(path: &Path) -> mvskew::Result<Vec<CellScore>> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..i],
        None => "",
    };
    complete
        .lines()
        .filter(|l| !l.is_empty() && *l != TABLE_HEADER)
        .map(parse_row)
        .collect()
}

fn cmd_grid(data: &Path, spec: &ModelGridSpec, use_labels: bool, out: &Path, model_out: Option<&Path>) -> mvskew::Result<()> {
    let stack = MvStack::read(data)?;
    let labels = labels_for(&stack, use_labels)?;
    let done = read_table(out)?;
    // rewrite the complete rows so a torn trailing line does not linger
    let mut text = format!("{TABLE_HEADER}\n");
    done.iter().for_each(|s| text.push_str(&(format_row(s) + "\n")));
    std::fs::write(out, text)?;
    let file = Mutex::new(OpenOptions::new().append(true).open(out)?);
    let write_err = Mutex::new(None);
    let on_cell = |s: &CellScore| {
        let mut f = file.lock().expect("table lock");
        if let Err(e) = writeln!(f, "{}", format_row(s)).and_then(|_| f.flush()) {
            write_err.lock().expect("error lock").get_or_insert(e);
        }
    };
    let outcome = grid_search_resume(&stack.sample, spec, labels, &done, &on_cell)?;
    if let Some(e) = write_err.into_inner().expect("error lock") {
        return Err(e.into());
    }
    let best = &outcome.best;
    if let Some(path) = model_out {
        let meta = FitMetadata {
            final_loglik: best.fit.final_loglik,
            bic: best.bic,
            rho: best.rho,
            n_obs: stack.sample.len(),
            iterations: best.fit.iterations,
            converged: best.fit.converged,
            seed: best.fit.start_seed,
        };
        ModelFile::from_model(&best.fit.model, Some(meta)).write(path)?;
    }
    let c = best.cell;
    println!(
        "winner family={} G={} q={} r={} loglik={:?} rho={} bic={:?} extension_rounds={}",
        c.family, c.g, c.q, c.r, best.fit.final_loglik, best.rho, best.bic, outcome.extension_rounds
    );
    Ok(())
}
