use std::fmt;
use std::fs;
use std::io::{BufReader, Cursor};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use confscore::conformal::calibrate;
use confscore::dataprep::{drop_classes, manifest_from_pngs, undersample, ClassTable};
use confscore::experiment::{run_experiment, run_sweep, ComparisonReport, ExperimentPlan, SweepPlan};
use confscore::io::{self, LabeledExample};
use confscore::score::score_all_classes;
use confscore::seeds::object_u;
use confscore::synth::{generate, SynthConfig};
use confscore::Example;

use crate::config::{
    CalibrateArgs, Cli, Command, DataprepArgs, ExperimentArgs, PredictArgs, ScoreArgs, SweepArgs, SynthArgs,
};

/// Bad flags or config detected by the CLI itself.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<Invalid>()
            || cause.is::<serde_json::Error>()
            || cause
                .downcast_ref::<confscore::Error>()
                .is_some_and(confscore::Error::is_validation)
    })
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let command = match (cli.config, cli.command) {
        (Some(_), Some(_)) => return Err(Invalid("give either --config or a subcommand, not both".into()).into()),
        (None, None) => return Err(Invalid("no subcommand given (see --help)".into()).into()),
        (None, Some(cmd)) => cmd,
        (Some(path), None) => load_config(&path)?,
    };
    run(&command)
}

/// Read a JSON run config, either a plain file or the `# config:` line of a
/// previous output.
fn load_config(path: &Path) -> Result<Command> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let json = io::find_comment_value(&text, "config").unwrap_or(text);
    serde_json::from_str(&json).with_context(|| format!("parsing config {}", path.display()))
}

fn run(command: &Command) -> Result<()> {
    let preamble = vec![
        format!("config: {}", serde_json::to_string(command)?),
        format!("seed: {}", command.seed()),
    ];
    match command {
        Command::Score(a) => cmd_score(a, &preamble),
        Command::Calibrate(a) => cmd_calibrate(a, &preamble),
        Command::Predict(a) => cmd_predict(a, &preamble),
        Command::Experiment(a) => cmd_experiment(a, &preamble),
        Command::Sweep(a) => cmd_sweep(a, &preamble),
        Command::Synth(a) => cmd_synth(a, &preamble),
        Command::Dataprep(a) => cmd_dataprep(a, &preamble),
    }
}

fn read_probabilities(path: &Path) -> Result<Vec<LabeledExample>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = io::read_probability_file(BufReader::new(file), &path.display().to_string())?;
    Ok(rows)
}

fn examples(rows: &[LabeledExample]) -> Vec<Example> {
    rows.iter().map(LabeledExample::to_example).collect()
}

/// Render into memory, then write the file in one go.
fn write_output(
    path: &Path,
    preamble: &[String],
    body: impl FnOnce(&mut Vec<u8>) -> confscore::Result<()>,
) -> Result<()> {
    let mut buf = Vec::new();
    io::write_preamble(&mut buf, preamble)?;
    body(&mut buf)?;
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_score(a: &ScoreArgs, preamble: &[String]) -> Result<()> {
    let rows = read_probabilities(&a.input)?;
    let spec = a.hyper.spec(a.spec);
    let scores = rows
        .iter()
        .enumerate()
        .map(|(i, r)| score_all_classes(&r.probs, &spec, spec.u_mode.resolve(object_u(a.seed, i as u64))))
        .collect::<confscore::Result<Vec<_>>>()?;
    let ids: Vec<String> = rows.iter().map(|r| r.id.clone()).collect();
    write_output(&a.output, preamble, |out| io::write_scores(out, &ids, &scores))
}

fn cmd_calibrate(a: &CalibrateArgs, preamble: &[String]) -> Result<()> {
    let rows = read_probabilities(&a.input)?;
    let record = calibrate(&examples(&rows), a.hyper.spec(a.spec), a.alpha, a.seed)?;
    log::info!("q_cal = {} from {} examples", record.q_cal, record.n_cal);
    write_output(&a.output, preamble, |out| io::write_record(out, &record))
}

fn cmd_predict(a: &PredictArgs, preamble: &[String]) -> Result<()> {
    let rows = read_probabilities(&a.input)?;
    let text = fs::read_to_string(&a.record).with_context(|| format!("reading {}", a.record.display()))?;
    let record = io::read_record(Cursor::new(text), &a.record.display().to_string())?;
    let sets = rows
        .iter()
        .enumerate()
        .map(|(i, r)| Ok((r.id.clone(), r.label, record.predict_set(&r.probs, object_u(a.seed, i as u64))?)))
        .collect::<confscore::Result<Vec<_>>>()?;
    let hits = sets.iter().filter(|(_, y, s)| s.contains(*y)).count();
    log::info!("coverage {:.4} on {} examples", hits as f64 / sets.len() as f64, sets.len());
    write_output(&a.output, preamble, |out| io::write_prediction_sets(out, &sets))
}

fn cmd_experiment(a: &ExperimentArgs, preamble: &[String]) -> Result<()> {
    let rows = read_probabilities(&a.input)?;
    let plan = ExperimentPlan {
        alpha: a.alpha,
        specs: a.specs.iter().map(|&k| a.hyper.spec(k)).collect(),
        n_trials: a.trials,
        cal_fraction: a.cal_fraction,
        test_fraction: 1.0 - a.cal_fraction,
        master_seed: a.seed,
        fill_empty_with_argmax: a.fill_empty,
    };
    let result = run_experiment(&examples(&rows), &plan)?;

    write_output(&a.output, preamble, |out| {
        use std::io::Write;
        writeln!(
            out,
            "kind,lambda,gamma,k_reg,trial,seed,alpha,n_cal,n_test,q_cal,coverage,efficiency,informativeness"
        )?;
        for spec_result in &result.per_spec {
            let s = &spec_result.spec;
            for t in &spec_result.trials {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    s.kind,
                    s.lambda,
                    s.gamma,
                    s.k_reg,
                    t.trial,
                    t.seed,
                    t.alpha,
                    t.n_cal,
                    t.n_test,
                    t.q_cal,
                    t.coverage,
                    t.efficiency,
                    t.informativeness
                )?;
            }
        }
        Ok(())
    })?;

    if let Some(path) = &a.summary {
        write_output(path, preamble, |out| {
            use std::io::Write;
            writeln!(out, "kind,lambda,gamma,k_reg,metric,mean,std,min,max,n_trials")?;
            for r in &result.per_spec {
                let s = &r.spec;
                let agg = &r.aggregate;
                for (name, m) in [
                    ("coverage", &agg.coverage),
                    ("efficiency", &agg.efficiency),
                    ("informativeness", &agg.informativeness),
                ] {
                    writeln!(
                        out,
                        "{},{},{},{},{name},{},{},{},{},{}",
                        s.kind, s.lambda, s.gamma, s.k_reg, m.mean, m.std, m.min, m.max, agg.n_trials
                    )?;
                }
            }
            Ok(())
        })?;
    }

    let report = ComparisonReport::from_result(&result);
    for line in &report.lines {
        log::info!("{line}");
    }
    if let Some(path) = &a.report {
        write_output(path, preamble, |out| {
            out.extend_from_slice(report.render().as_bytes());
            Ok(())
        })?;
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, preamble: &[String]) -> Result<()> {
    let rows = read_probabilities(&a.input)?;
    let plan = SweepPlan {
        param: a.param,
        grid: a.grid.clone(),
        k_reg: a.k_reg,
        trials: a.trials,
        cal_fraction: a.cal_fraction,
        u_mode: a.u_mode,
    };
    let result = run_sweep(&examples(&rows), &plan, a.param.kind(), a.alpha, a.seed)?;
    write_output(&a.output, preamble, |out| {
        use std::io::Write;
        writeln!(out, "param,value,trial,q_cal,coverage,efficiency,informativeness")?;
        for r in &result.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                a.param.as_str(),
                r.value,
                r.trial,
                r.q_cal,
                r.coverage,
                r.efficiency,
                r.informativeness
            )?;
        }
        Ok(())
    })?;
    let notes: Vec<String> = result
        .saturation
        .iter()
        .map(|n| {
            format!(
                "{} {} -> {}: identical prediction sets in {}/{} trials",
                a.param.as_str(),
                n.from,
                n.to,
                n.identical_trials,
                n.trials
            )
        })
        .collect();
    for line in &notes {
        log::info!("{line}");
    }
    if let Some(path) = &a.report {
        write_output(path, preamble, |out| {
            for line in &notes {
                out.extend_from_slice(line.as_bytes());
                out.push(b'\n');
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, preamble: &[String]) -> Result<()> {
    let mut config = SynthConfig::new(a.k, a.n, a.seed).with_concentration(a.concentration);
    if let Some(prior) = &a.prior {
        config.class_prior = prior.clone();
    }
    let data = generate(&config)?;
    let width = a.n.to_string().len();
    let rows: Vec<LabeledExample> = data
        .into_iter()
        .enumerate()
        .map(|(i, (probs, label))| LabeledExample {
            id: format!("synth_{i:0width$}"),
            label,
            probs,
        })
        .collect();
    write_output(&a.output, preamble, |out| io::write_probability_file(out, &rows))
}

fn mask_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    paths.sort();
    if paths.is_empty() {
        bail!(Invalid(format!("no .png masks in {}", dir.display())));
    }
    Ok(paths)
}

fn cmd_dataprep(a: &DataprepArgs, preamble: &[String]) -> Result<()> {
    let table_text = fs::read_to_string(&a.classes).with_context(|| format!("reading {}", a.classes.display()))?;
    let classes = ClassTable::parse(&table_text, &a.classes.display().to_string(), a.soil_id)?;
    let paths = mask_files(&a.masks)?;
    let mut manifest = manifest_from_pngs(&paths, &classes, a.tile_size, a.scope)?;
    log::info!("{} tiles from {} masks", manifest.tiles.len(), paths.len());

    for item in &a.undersample {
        let (key, count) = item
            .rsplit_once(':')
            .ok_or_else(|| Invalid(format!("--undersample expects <class>:<count>, got '{item}'")))?;
        let count: usize = count
            .parse()
            .map_err(|_| Invalid(format!("bad count in --undersample '{item}'")))?;
        let class = manifest.classes.resolve(key)?;
        manifest = undersample(&manifest, class, count, a.seed)?;
    }
    if !a.drop.is_empty() {
        let ids = a
            .drop
            .iter()
            .map(|key| manifest.classes.resolve(key))
            .collect::<confscore::Result<Vec<_>>>()?;
        manifest = drop_classes(&manifest, &ids)?;
    }

    let mut header = preamble.to_vec();
    header.extend(manifest.provenance.iter().map(|p| format!("step: {p}")));
    header.extend(manifest.warnings.iter().map(|w| format!("warning: {w}")));
    write_output(&a.output, &header, |out| io::write_manifest(out, &manifest))?;
    if let Some(path) = &a.summary {
        write_output(path, &header, |out| io::write_class_summary(out, &manifest))?;
    }
    Ok(())
}
