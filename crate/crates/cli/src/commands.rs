use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rkn_core::evaluation::{
    compare_methods, svg_line_plot, write_consistency_csv, write_gain_trace_csv, write_report_csv,
    Estimator, EvaluationReport, PlotSeries, ReportRow, CONSISTENCY_HEADER, GAIN_TRACE_HEADER,
    GAIN_TRACE_ZOOM, REPORT_HEADER,
};
use rkn_core::rkn::RknModel;
use rkn_core::statespace::{
    generate_dataset, load_dataset, read_dataset_fingerprints, save_dataset, Dataset,
};
use rkn_core::training::{
    load_checkpoint, save_checkpoint, train_from, write_history_csv, Checkpoint, TrainingState,
};
use rkn_core::Error;

use crate::config::{nu_db_of, ExperimentConfig};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, bytes: &[u8]) -> std::result::Result<(), Error> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

fn write_with<F>(path: &Path, f: F) -> std::result::Result<(), Error>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_file(path, &buf)
}

pub fn generate(config: &ExperimentConfig, out: &Path) -> Result<String> {
    let dataset = generate_dataset(&config.dataset_config()?)?;
    Ok(save_dataset(&dataset, out)?)
}

/// Loads a dataset directory and checks that it was generated from `config`.
pub fn load_matching_dataset(config: &ExperimentConfig, dir: &Path) -> Result<(Dataset, String)> {
    let (stored, content) = read_dataset_fingerprints(dir)?;
    let expected = config.dataset_config()?.fingerprint();
    if stored != expected {
        return Err(Error::FingerprintMismatch {
            expected,
            found: stored,
        }
        .into());
    }
    Ok((load_dataset(dir)?, content))
}

pub struct TrainPaths<'a> {
    pub dataset: &'a Path,
    pub checkpoint: &'a Path,
    pub history: &'a Path,
    pub resume: Option<&'a Path>,
}

pub fn train(
    config: &ExperimentConfig,
    paths: &TrainPaths<'_>,
    quiet: bool,
) -> Result<TrainingState> {
    let (dataset, fingerprint) = load_matching_dataset(config, paths.dataset)?;
    train_on(config, &dataset, &fingerprint, paths, quiet)
}

pub fn train_on(
    config: &ExperimentConfig,
    dataset: &Dataset,
    fingerprint: &str,
    paths: &TrainPaths<'_>,
    quiet: bool,
) -> Result<TrainingState> {
    let (gain_spec, chol_spec) = config.network_specs();
    let training = config.training_config();
    let state = match paths.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            ckpt.check_specs(&gain_spec, &chol_spec)?;
            if ckpt.state.model.squared_features() != config.rkn.squared_features {
                return Err(Error::SpecMismatch(
                    "checkpoint and config disagree on rkn.squared_features".into(),
                )
                .into());
            }
            if ckpt.dataset_fingerprint != fingerprint {
                return Err(Error::FingerprintMismatch {
                    expected: ckpt.dataset_fingerprint.clone(),
                    found: fingerprint.to_string(),
                }
                .into());
            }
            ckpt.state
        }
        None => {
            let model = RknModel::initialize(
                2,
                1,
                config.rkn.squared_features,
                gain_spec,
                chol_spec,
                config.rkn.init_seed,
            )?;
            TrainingState::new(model, &training)
        }
    };

    if let Some(parent) = paths
        .checkpoint
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
    {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    let state = train_from(state, dataset, &training, |s| {
        let ckpt = Checkpoint {
            state: s.clone(),
            config: training.clone(),
            init_seed: config.rkn.init_seed,
            dataset_fingerprint: fingerprint.to_string(),
        };
        save_checkpoint(paths.checkpoint, &ckpt, true)?;
        write_with(paths.history, |out| write_history_csv(&s.history, out))?;
        if !quiet {
            let r = s.history.last().expect("epoch recorded");
            println!(
                "epoch {:>4}/{}  train_nll {:>9.4}  val_nll {:>9.4}  val_mse {:>7.3} dB  val_msmd {:.3}",
                r.epoch, training.epochs, r.train_nll, r.val_nll, r.val_mse_db, r.val_msmd
            );
        }
        Ok(())
    })?;
    Ok(state)
}

/// An estimator addressed on the command line: `okf`, `sokf`, or a checkpoint path.
pub enum Method {
    Okf,
    Sokf,
    Checkpoint(PathBuf),
}

impl Method {
    pub fn parse(s: &str) -> Self {
        match s {
            "okf" => Method::Okf,
            "sokf" => Method::Sokf,
            path => Method::Checkpoint(path.into()),
        }
    }
}

pub fn load_model(path: &Path) -> Result<RknModel> {
    let model = load_checkpoint(path)?.best_model();
    if (model.state_dim(), model.measurement_dim()) != (2, 1) {
        return Err(Error::SpecMismatch(format!(
            "checkpoint is for state dimension {} and measurement dimension {}, expected 2 and 1",
            model.state_dim(),
            model.measurement_dim()
        ))
        .into());
    }
    Ok(model)
}

pub fn evaluate_method(method: &Method, dataset: &Dataset) -> Result<EvaluationReport> {
    let nu = nu_db_of(&dataset.noise, dataset.config.sigma_v_sq);
    let model;
    let est = match method {
        Method::Okf => Estimator::Okf,
        Method::Sokf => Estimator::Sokf,
        Method::Checkpoint(p) => {
            model = load_model(p)?;
            Estimator::Rkn(&model)
        }
    };
    let mut reports = compare_methods(dataset, nu, &[est])?;
    Ok(reports.pop().expect("one method"))
}

/// Writes `<name>_report.csv`, `<name>_consistency.csv` and `<name>_gain.csv`
/// (plus SVGs when asked) into `out`, returning the written paths.
pub fn write_evaluation(report: &EvaluationReport, out: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let name = &report.method;
    let report_path = out.join(format!("{name}_report.csv"));
    let consistency_path = out.join(format!("{name}_consistency.csv"));
    let gain_path = out.join(format!("{name}_gain.csv"));
    write_with(&report_path, |w| write_report_csv(&[report.row()], w))?;
    write_with(&consistency_path, |w| {
        write_consistency_csv(&report.consistency, w)
    })?;
    write_with(&gain_path, |w| {
        write_gain_trace_csv(&report.gain_trace, GAIN_TRACE_ZOOM, w)
    })?;
    let mut written = vec![report_path, consistency_path, gain_path];
    if svg {
        for csv in [written[1].clone(), written[2].clone()] {
            written.push(plot_csv(&csv, out)?);
        }
    }
    Ok(written)
}

pub fn eval(
    method: &Method,
    dataset_dir: &Path,
    out: &Path,
    svg: bool,
) -> Result<EvaluationReport> {
    let dataset = load_dataset(dataset_dir)?;
    let report = evaluate_method(method, &dataset)?;
    write_evaluation(&report, out, svg)?;
    Ok(report)
}

pub struct SweepOptions<'a> {
    pub nu_list: &'a [f64],
    pub out: &'a Path,
    pub train: bool,
    pub checkpoint_dir: Option<&'a Path>,
    pub quiet: bool,
}

pub fn checkpoint_name(nu: f64) -> String {
    format!("rkn_nu{nu}.ckpt")
}

/// Baselines at every level, plus an RKN row when training or a checkpoint
/// directory is requested.
pub fn sweep(config: &ExperimentConfig, opts: &SweepOptions<'_>) -> Result<Vec<ReportRow>> {
    if opts.nu_list.is_empty() {
        return Err(CliError::Usage("the ν list is empty".into()));
    }
    if config.noise.nu_db.is_none() {
        return Err(CliError::Usage(
            "sweep needs noise.nu_db and noise.sigma1_ratio, not explicit variances".into(),
        ));
    }
    let mut rows = Vec::new();
    for &nu in opts.nu_list {
        let mut cfg = config.clone();
        cfg.noise.nu_db = Some(nu);
        cfg.validate()?;
        let dataset = generate_dataset(&cfg.dataset_config()?)?;
        let mut reports = compare_methods(&dataset, nu, &[Estimator::Okf, Estimator::Sokf])?;
        let ckpt_path = opts
            .checkpoint_dir
            .unwrap_or(opts.out)
            .join(checkpoint_name(nu));
        if opts.train {
            let fingerprint = dataset.fingerprint()?;
            let history = opts.out.join(format!("history_nu{nu}.csv"));
            let paths = TrainPaths {
                dataset: Path::new(""),
                checkpoint: &ckpt_path,
                history: &history,
                resume: None,
            };
            train_on(&cfg, &dataset, &fingerprint, &paths, opts.quiet)?;
        }
        if opts.train || opts.checkpoint_dir.is_some() {
            let model = load_model(&ckpt_path)?;
            reports.extend(compare_methods(&dataset, nu, &[Estimator::Rkn(&model)])?);
        }
        rows.extend(reports.iter().map(EvaluationReport::row));
    }
    write_file(&opts.out.join("config.toml"), config.to_toml().as_bytes())?;
    write_with(&opts.out.join("sweep.csv"), |w| write_report_csv(&rows, w))?;
    Ok(rows)
}

/// Methods as rows and ν as column pairs `(MSE dB, MSMD)`.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut nus: Vec<f64> = rows.iter().map(|r| r.nu_db).collect();
    nus.sort_by(f64::total_cmp);
    nus.dedup();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let cells: BTreeMap<(&str, u64), &ReportRow> = rows
        .iter()
        .map(|r| ((r.method.as_str(), r.nu_db.to_bits()), r))
        .collect();
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}", "ν [dB]");
    for nu in &nus {
        s += &format!(" | {:^17}", format!("{nu}"));
    }
    s.push('\n');
    s += &format!("{:<width$}", "");
    for _ in &nus {
        s += &format!(" | {:>8} {:>8}", "MSE", "MSMD");
    }
    s.push('\n');
    for m in methods {
        s += &format!("{m:<width$}");
        for nu in &nus {
            match cells.get(&(m, nu.to_bits())) {
                Some(r) => s += &format!(" | {:>8.2} {:>8.3}", r.mse_db, r.msmd),
                None => s += &format!(" | {:>8} {:>8}", "-", "-"),
            }
        }
        s.push('\n');
    }
    s
}

fn parse_f64(text: &str, path: &Path, line: usize) -> Result<f64> {
    text.trim().parse().map_err(|_| {
        Error::Parse {
            location: format!("{}:{line}", path.display()),
            message: format!("bad number `{text}`"),
        }
        .into()
    })
}

fn read_csv(path: &Path) -> Result<(String, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().to_string();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

pub fn read_report_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let (header, rows) = read_csv(path)?;
    if header != REPORT_HEADER {
        return Err(Error::Parse {
            location: path.display().to_string(),
            message: "not a report CSV".into(),
        }
        .into());
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != 6 {
                return Err(Error::Parse {
                    location: format!("{}:{}", path.display(), i + 2),
                    message: format!("expected 6 fields, found {}", r.len()),
                }
                .into());
            }
            let f = |k: usize| parse_f64(&r[k], path, i + 2);
            Ok(ReportRow {
                method: r[0].clone(),
                nu_db: f(1)?,
                mse_db: f(2)?,
                msmd: f(3)?,
                component_mse: vec![f(4)?, f(5)?],
            })
        })
        .collect()
}

/// Renders a consistency or gain-trace CSV as an SVG next to `out`.
pub fn plot_csv(path: &Path, out: &Path) -> Result<PathBuf> {
    let (header, rows) = read_csv(path)?;
    let columns: Vec<&str> = header.split(',').collect();
    let (title, y_label, dashed): (&str, &str, &[bool]) = if header == CONSISTENCY_HEADER {
        (
            "Estimated and empirical standard deviations",
            "std",
            &[true, false, true, false],
        )
    } else if header == GAIN_TRACE_HEADER {
        ("Gain trace", "gain", &[false, false])
    } else {
        return Err(Error::Parse {
            location: path.display().to_string(),
            message: "no plot layout for this CSV".into(),
        }
        .into());
    };
    let mut series: Vec<PlotSeries> = columns[1..]
        .iter()
        .zip(dashed)
        .map(|(name, &dashed)| PlotSeries {
            name: name.to_string(),
            points: Vec::new(),
            dashed,
        })
        .collect();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != columns.len() {
            return Err(Error::Parse {
                location: format!("{}:{}", path.display(), i + 2),
                message: "ragged row".into(),
            }
            .into());
        }
        let t = parse_f64(&r[0], path, i + 2)?;
        for (s, v) in series.iter_mut().zip(&r[1..]) {
            s.points.push((t, parse_f64(v, path, i + 2)?));
        }
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let svg_path = out.join(format!("{stem}.svg"));
    let svg = svg_line_plot(title, "t", y_label, &series);
    write_with(&svg_path, |w| w.write_all(svg.as_bytes()))?;
    Ok(svg_path)
}

pub fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    Ok(write_with(path, |w| write_report_csv(rows, w))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, nu: f64, mse: f64) -> ReportRow {
        ReportRow {
            method: method.into(),
            nu_db: nu,
            mse_db: mse,
            msmd: 2.0,
            component_mse: vec![0.1, 0.01],
        }
    }

    #[test]
    fn table_has_one_line_per_method_and_a_column_pair_per_level() {
        let rows = [
            row("okf", 40.0, -11.3),
            row("sokf", 40.0, -8.3),
            row("okf", 20.0, -25.6),
        ];
        let table = format_table(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].find("20").unwrap() < lines[0].find("40").unwrap());
        assert!(
            lines[2].starts_with("okf")
                && lines[2].contains("-25.60")
                && lines[2].contains("-11.30")
        );
        assert!(lines[3].starts_with("sokf") && lines[3].contains(" - "));
    }

    #[test]
    fn report_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![row("okf", 40.0, -11.3), row("rkn", 40.0, f64::NEG_INFINITY)];
        write_rows(&path, &rows).unwrap();
        assert_eq!(read_report_rows(&path).unwrap(), rows);
    }

    #[test]
    fn foreign_csv_is_not_a_report() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        let err = read_report_rows(&path).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_IO);
        assert!(plot_csv(&path, dir.path()).is_err());
    }

    #[test]
    fn gain_trace_csv_becomes_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("okf_gain.csv");
        fs::write(
            &path,
            format!("{GAIN_TRACE_HEADER}\n1,0.5,0.1\n2,0.4,0.05\n"),
        )
        .unwrap();
        let svg = plot_csv(&path, dir.path()).unwrap();
        assert_eq!(svg.file_name().unwrap(), "okf_gain.svg");
        let text = fs::read_to_string(svg).unwrap();
        assert!(text.starts_with("<svg") && text.contains("K0") && text.contains("K1"));
    }

    #[test]
    fn checkpoint_names_follow_the_level() {
        assert_eq!(checkpoint_name(40.0), "rkn_nu40.ckpt");
        assert_eq!(checkpoint_name(42.5), "rkn_nu42.5.ckpt");
    }
}
