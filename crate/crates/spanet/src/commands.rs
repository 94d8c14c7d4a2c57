//! The four subcommands as library functions; `main` only parses arguments
//! and maps errors to exit codes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use spanet_core::cost::{self, RATIO_GRID};
use spanet_core::data::{generate_set, preprocess};
use spanet_core::metrics::MetricsReport;
use spanet_core::network::{build_network, Network};
use spanet_core::train::{self, Dataset, EpochRecord, Evaluation};
use spanet_core::Tensor;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{self, SampleRecord, Split};
use crate::pnm;
use crate::report;

pub const CONFIG_ECHO: &str = "config.echo";
pub const RUN_CSV: &str = "run.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const MODEL: &str = "model.spa1";
pub const CONFUSION: &str = "confusion.txt";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Whether the `k`-th sample of a class lands in a split drawn at rate
/// `fraction`: spreads `round(fraction * count)` picks evenly.
fn picked(k: usize, fraction: f64) -> bool {
    ((k + 1) as f64 * fraction).floor() > (k as f64 * fraction).floor()
}

/// Test picks come first, then validation picks spread over the remaining
/// samples, so the split of a sample depends only on its index within its
/// class. Both fractions are of the whole class.
pub fn assign_split(k: usize, val_fraction: f64, test_fraction: f64) -> Split {
    if picked(k, test_fraction) {
        return Split::Test;
    }
    let rest = k - ((k + 1) as f64 * test_fraction).floor() as usize;
    if test_fraction < 1.0 && picked(rest, val_fraction / (1.0 - test_fraction)) {
        Split::Val
    } else {
        Split::Train
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub manifest: PathBuf,
    pub per_class: Vec<(String, usize)>,
    pub per_split: [usize; 3],
}

impl GenSummary {
    pub fn line(&self) -> String {
        let classes: Vec<String> = self.per_class.iter().map(|(c, n)| format!("{c} {n}")).collect();
        let total: usize = self.per_class.iter().map(|(_, n)| n).sum();
        format!(
            "generated {total} images -> {} ({}; train {}, val {}, test {})",
            self.manifest.display(),
            if classes.is_empty() { "no classes".into() } else { classes.join(", ") },
            self.per_split[0],
            self.per_split[1],
            self.per_split[2]
        )
    }
}

/// Renders `per_class` images of every configured class next to the
/// manifest and writes the manifest.
pub fn gen_data(cfg: &RunConfig) -> Result<GenSummary> {
    let d = &cfg.data;
    let classes = cfg.defect_classes()?;
    let dir = d.manifest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(dir)?;
    let samples = generate_set(&classes, d.per_class, d.image_size, d.image_size, d.gen_seed, &d.generator)?;
    let mut rows = Vec::with_capacity(samples.len());
    let mut per_split = [0usize; 3];
    for (i, s) in samples.iter().enumerate() {
        let k = i / classes.len();
        let name = format!("{i:05}_{}.pgm", s.label.name().to_lowercase());
        pnm::write(&dir.join(&name), &s.image)?;
        let split = assign_split(k, d.val_fraction, d.test_fraction);
        per_split[split as usize] += 1;
        rows.push((name, s.label.name(), split));
    }
    let text = manifest::to_csv(rows.iter().map(|(p, l, s)| (p.as_str(), *l, *s)));
    write_file(&d.manifest, text)?;
    Ok(GenSummary {
        manifest: d.manifest.clone(),
        per_class: classes.iter().map(|c| (c.name().to_string(), d.per_class)).collect(),
        per_split,
    })
}

/// Decodes and preprocesses the given records (no augmentation).
pub fn load_dataset(cfg: &RunConfig, records: &[&SampleRecord]) -> Result<Dataset<f32>> {
    let n = &cfg.network;
    let norm = cfg.normalization();
    let channels = cfg.network_config().input_channels;
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        let img = pnm::read(&r.path)?;
        let t: Tensor<f32> = preprocess(&img, n.input_size, n.input_size, channels, &norm, None)
            .map_err(|e| CliError::Data(format!("{}: {e}", r.path.display())))?;
        samples.push(t);
    }
    Ok(Dataset::new(samples, records.iter().map(|r| r.label).collect())?)
}

fn by_split(records: &[SampleRecord], split: Split) -> Vec<&SampleRecord> {
    records.iter().filter(|r| r.split == split).collect()
}

fn write_reports(dir: &Path, prefix: &str, report: &MetricsReport, cfg: &RunConfig, plot: bool) -> Result<()> {
    let classes = &cfg.data.classes;
    write_file(&dir.join(format!("{prefix}{METRICS_CSV}")), report::metrics_csv(report, classes))?;
    write_file(&dir.join(format!("{prefix}{CONFUSION}")), report::confusion_text(report, classes))?;
    if plot {
        write_file(&dir.join(format!("{prefix}metrics.svg")), report::class_chart(report))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub records: Vec<EpochRecord>,
    /// Split the final metrics were computed on.
    pub eval_split: Split,
    pub report: MetricsReport,
}

/// Trains on the manifest's train rows, validating on its val rows, and
/// fills the run directory. The final metrics use the test rows, falling
/// back to val and then train when a split is empty. `progress` sees every
/// run-log record as it is written.
pub fn train(cfg: &RunConfig, mut progress: impl FnMut(&EpochRecord)) -> Result<TrainSummary> {
    let records = manifest::load(&cfg.data.manifest, &cfg.data.classes)?;
    let train_rows = by_split(&records, Split::Train);
    if train_rows.is_empty() {
        return Err(CliError::Data(format!("{}: no rows with split train", cfg.data.manifest.display())));
    }
    let train_set = load_dataset(cfg, &train_rows)?;
    let val_rows = by_split(&records, Split::Val);
    let val_set = if val_rows.is_empty() { None } else { Some(load_dataset(cfg, &val_rows)?) };

    let mut net: Network<f32> = build_network(&cfg.network_config(), cfg.training.seed)?;
    let tc = cfg.train_config();
    let dir = &cfg.output.run_dir;
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_ECHO), cfg.to_text())?;

    let run_path = dir.join(RUN_CSV);
    let file = File::create(&run_path).map_err(|e| CliError::io(&run_path, e))?;
    let mut log = BufWriter::new(file);
    let mut io_err: Option<std::io::Error> = None;
    let mut line = |text: &str, log: &mut BufWriter<File>| {
        if io_err.is_none() {
            if let Err(e) = writeln!(log, "{text}").and_then(|_| log.flush()) {
                io_err = Some(e);
            }
        }
    };
    line(report::RUN_HEADER, &mut log);
    let result = train::train(&mut net, &train_set, val_set.as_ref(), &tc, |r| {
        line(&report::run_row(r), &mut log);
        progress(r);
    });
    if let Some(e) = io_err {
        return Err(CliError::io(&run_path, e));
    }
    let history = result?;
    drop(log);
    checkpoint::save(&dir.join(MODEL), &net.params)?;

    let (eval_split, eval_rows) = [Split::Test, Split::Val, Split::Train]
        .into_iter()
        .map(|s| (s, by_split(&records, s)))
        .find(|(_, rows)| !rows.is_empty())
        .expect("train rows exist");
    let eval_set = match eval_split {
        Split::Train => train_set,
        Split::Val => val_set.expect("val rows exist"),
        Split::Test => load_dataset(cfg, &eval_rows)?,
    };
    let eval = train::evaluate(&net, &eval_set, &tc.loss, tc.batch_size)?;
    write_reports(dir, "", &eval.report, cfg, cfg.output.plot)?;
    if cfg.output.plot {
        let (loss, acc) = report::run_charts(&history);
        write_file(&dir.join("loss.svg"), loss)?;
        write_file(&dir.join("accuracy.svg"), acc)?;
    }
    Ok(TrainSummary { run_dir: dir.clone(), records: history, eval_split, report: eval.report })
}

/// Which manifest rows `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitFilter {
    All,
    Only(Split),
}

impl std::str::FromStr for SplitFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            Ok(SplitFilter::All)
        } else {
            s.parse().map(SplitFilter::Only)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    /// Defaults to the `config.echo` beside the checkpoint.
    pub config: Option<PathBuf>,
    /// Defaults to the config's manifest.
    pub manifest: Option<PathBuf>,
    pub split: SplitFilter,
    /// Defaults to `eval-<split>` beside the checkpoint.
    pub out_dir: Option<PathBuf>,
    pub plot: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub out_dir: PathBuf,
    pub evaluation: Evaluation,
    pub text: String,
}

pub fn eval(opts: &EvalOptions) -> Result<EvalSummary> {
    let ckpt_dir = opts.checkpoint.parent().unwrap_or(Path::new("."));
    let cfg_path = opts.config.clone().unwrap_or_else(|| ckpt_dir.join(CONFIG_ECHO));
    let cfg = RunConfig::load(&cfg_path)?;
    let mut net: Network<f32> = build_network(&cfg.network_config(), cfg.training.seed)?;
    checkpoint::load_into(&opts.checkpoint, &mut net.params)?;
    let manifest_path = opts.manifest.clone().unwrap_or_else(|| cfg.data.manifest.clone());
    let records = manifest::load(&manifest_path, &cfg.data.classes)?;
    let rows: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| match opts.split {
            SplitFilter::All => true,
            SplitFilter::Only(s) => r.split == s,
        })
        .collect();
    let data = load_dataset(&cfg, &rows)?;
    let tc = cfg.train_config();
    let evaluation = train::evaluate(&net, &data, &tc.loss, tc.batch_size)?;
    let tag = match opts.split {
        SplitFilter::All => "all",
        SplitFilter::Only(s) => s.as_str(),
    };
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| ckpt_dir.join(format!("eval-{tag}")));
    create_dir(&out_dir)?;
    write_reports(&out_dir, "", &evaluation.report, &cfg, opts.plot)?;
    let text = report::confusion_text(&evaluation.report, &cfg.data.classes);
    Ok(EvalSummary { out_dir, evaluation, text })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOutput {
    pub text: String,
    pub csv: String,
}

/// Per-layer cost table of the configured network, or with `sweep` the
/// totals over the standard ratio grid.
pub fn profile(cfg: &RunConfig, sweep: bool) -> Result<ProfileOutput> {
    let net = cfg.network_config();
    if !sweep {
        let r = cost::network_cost(&net)?;
        return Ok(ProfileOutput { text: r.to_text(), csv: r.to_csv() });
    }
    let rows = cost::ratio_sweep(&net, &RATIO_GRID)?;
    let mut text = format!("{:>6} {:>12} {:>16}\n", "ratio", "params", "flops");
    let mut csv = String::from("ratio,params,flops\n");
    for (r, p, f) in rows {
        text.push_str(&format!("{r:>6.2} {p:>12} {f:>16}\n"));
        csv.push_str(&format!("{r},{p},{f}\n"));
    }
    Ok(ProfileOutput { text, csv })
}

/// Writes profile CSV output to `path`.
pub fn write_profile_csv(path: &Path, out: &ProfileOutput) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(path, &out.csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_assignment_is_even() {
        let splits: Vec<Split> = (0..10).map(|k| assign_split(k, 0.0, 0.2)).collect();
        assert_eq!(splits.iter().filter(|&&s| s == Split::Test).count(), 2);
        assert_eq!(splits[4], Split::Test);
        assert!((0..100).all(|k| assign_split(k, 0.0, 0.0) == Split::Train));
        let both: Vec<Split> = (0..100).map(|k| assign_split(k, 0.1, 0.2)).collect();
        assert_eq!(both.iter().filter(|&&s| s == Split::Test).count(), 20);
        assert_eq!(both.iter().filter(|&&s| s == Split::Val).count(), 10);
    }

    #[test]
    fn sweep_has_six_rows() {
        let out = profile(&RunConfig::default(), true).unwrap();
        assert_eq!(out.csv.lines().count(), 7);
        assert_eq!(out.text.lines().count(), 7);
    }
}
