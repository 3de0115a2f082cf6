use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rrsitr::data::{inject_noise, load_dataset, write_dataset, DatasetManifest, SyntheticConfig};
use rrsitr::evaluation::{dataset_similarity, detection_from_trace, evaluate_with};
use rrsitr::similarity::to_csv;
use rrsitr::trainer::{read_heads, write_heads, write_trace_csv};
use rrsitr::{
    Dataset, DetectionReport, Error, Hyper, NoiseSpec, ProjectionHeads, Result, RetrievalReport, TrainLog,
    TrainOptions, Variant,
};
use serde::Serialize;

use crate::args::{
    AblateArgs, DataArgs, EvalArgs, GenArgs, HyperArgs, InjectArgs, SimKind, SimsArgs, TraceArgs, TrainArgs,
};
use crate::manifest::{output, RunManifest};

fn sidecar(path: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn mean_matched_cosine(ds: &Dataset) -> f64 {
    let (img, txt) = (ds.image_global(), ds.text_global());
    let total: f64 = img
        .rows()
        .into_iter()
        .zip(txt.rows())
        .map(|(a, b)| {
            let dot: f64 = a.iter().zip(b.iter()).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
            let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            dot / (na * nb)
        })
        .sum();
    total / ds.n_pairs() as f64
}

fn describe(label: &str, path: &Path, ds: &Dataset) {
    println!(
        "{label}: {} pairs, dim {}, parts {}x{}, noisy {}, mean matched cosine {:.4} -> {}",
        ds.n_pairs(),
        ds.dim(),
        ds.d1(),
        ds.d2(),
        ds.noisy_count(),
        mean_matched_cosine(ds),
        path.display()
    );
}

pub fn gen(a: GenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_pairs: a.n,
        n_classes: a.classes,
        dim: a.dim,
        d1: a.d1,
        d2: a.d2,
        intra_class_spread: a.spread,
        part_spread: a.part_spread,
        view_noise: a.view_noise,
        modality_gap: a.modality_gap,
        seed: a.seed.seed,
    };
    cfg.validate()?;
    let mut manifest = RunManifest::new("gen", cfg.seed);
    manifest.outputs.push(a.output.clone());
    manifest.outputs.extend(a.val_output.iter().cloned());
    manifest.outputs.extend(a.test_output.iter().cloned());
    manifest.write(&sidecar(&a.output, ".run.json"))?;

    let (train, val, test) = cfg.generate_splits(a.val, a.test)?;
    write_dataset(&train, &a.output)?;
    describe("train", &a.output, &train);
    for (ds, path, label) in [(&val, &a.val_output, "val"), (&test, &a.test_output, "test")] {
        if let Some(path) = path {
            if ds.n_pairs() == 0 {
                return Err(Error::Config(format!(
                    "--{label} must be >= 1 when --{label}-output is given"
                )));
            }
            write_dataset(ds, path)?;
            describe(label, path, ds);
        }
    }
    Ok(())
}

pub fn inject(a: InjectArgs) -> Result<()> {
    let spec = NoiseSpec {
        rho: a.rho,
        seed: a.seed.seed,
    };
    spec.validate()?;
    let (clean, prior) = load_dataset(&a.input)?;
    if prior.is_some() {
        return Err(Error::Data(format!(
            "{} already carries injected noise",
            a.input.display()
        )));
    }
    let json = a.output.with_extension("json");
    if json == a.output {
        return Err(Error::Config("output must not use the .json extension".into()));
    }
    let mut manifest = RunManifest::new("inject", spec.seed);
    manifest.dataset("input", &a.input, None);
    manifest.outputs = vec![a.output.clone(), json.clone()];
    manifest.write(&sidecar(&a.output, ".run.json"))?;

    let noisy = inject_noise(&clean, &spec)?;
    write_dataset(&noisy, &a.output)?;
    let file = a.output.file_name().map(Into::into).unwrap_or_else(|| a.output.clone());
    DatasetManifest {
        file,
        noise: Some(spec),
    }
    .write(&json)?;
    describe("noisy", &a.output, &noisy);
    println!("manifest -> {}", json.display());
    Ok(())
}

struct Loaded {
    train: Dataset,
    val: Option<Dataset>,
}

fn load_data(data: &DataArgs, manifest: &mut RunManifest) -> Result<Loaded> {
    let (train, noise) = load_dataset(&data.train)?;
    manifest.dataset("train", &data.train, noise);
    let val = match &data.val {
        Some(p) => {
            let (ds, noise) = load_dataset(p)?;
            manifest.dataset("val", p, noise);
            Some(ds)
        }
        None => None,
    };
    Ok(Loaded { train, val })
}

fn load_test(path: &Path, manifest: &mut RunManifest) -> Result<Dataset> {
    let (ds, noise) = load_dataset(path)?;
    manifest.dataset("test", path, noise);
    Ok(ds)
}

fn options(h: &HyperArgs, variant: Variant, trace_epochs: Vec<usize>) -> TrainOptions {
    TrainOptions {
        variant,
        objective: h.objective(),
        trace_epochs,
        record_timing: h.timing,
        dim_out: h.dim_out,
    }
}

fn write_log(log: &TrainLog, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    log.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    manifest: &'static str,
    variant: Variant,
    best_epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_val_mr: Option<f64>,
    detection: DetectionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<RetrievalReport>,
}

fn test_report(
    heads: &ProjectionHeads,
    test: &Dataset,
    hyper: &Hyper,
    variant: Variant,
    h: &HyperArgs,
) -> Result<RetrievalReport> {
    evaluate_with(heads, test, variant.inference_alpha(hyper.alpha), h.local_aggregation)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let hyper = a.hyper.hyper(a.epochs);
    hyper.validate()?;
    let opts = options(&a.hyper, a.variant, Vec::new());
    fs::create_dir_all(&a.out_dir)?;
    let mut manifest = RunManifest::new("train", hyper.seed);
    let data = load_data(&a.data, &mut manifest)?;
    let test = a.test.as_deref().map(|p| load_test(p, &mut manifest)).transpose()?;
    if let Some(t) = &test {
        if !t.is_clean() {
            return Err(Error::Data(format!(
                "test set has {} pairs with y = 0",
                t.noisy_count()
            )));
        }
    }
    manifest.hyper = Some(hyper.clone());
    manifest.options = Some(opts.clone());
    let heads_path = output(&mut manifest, &a.out_dir, "heads.rrsp");
    let log_path = output(&mut manifest, &a.out_dir, "log.jsonl");
    let summary_path = output(&mut manifest, &a.out_dir, "summary.json");
    manifest.write(&a.out_dir.join("run.json"))?;

    let (heads, log) = rrsitr::train(&data.train, data.val.as_ref(), &hyper, &opts)?;
    write_heads(&heads_path, &heads)?;
    write_log(&log, &log_path)?;
    let test = test
        .as_ref()
        .map(|t| test_report(&heads, t, &hyper, a.variant, &a.hyper))
        .transpose()?;
    let summary = TrainSummary {
        manifest: "run.json",
        variant: a.variant,
        best_epoch: log.best_epoch,
        best_val_mr: log.best_val_mr,
        detection: detection_from_trace(&log.final_pairs),
        test,
    };
    write_json(&summary_path, &summary)?;
    println!(
        "trained {} for {} epochs, best epoch {} -> {}",
        a.variant,
        hyper.epochs,
        log.best_epoch,
        heads_path.display()
    );
    if let Some(r) = test {
        println!("test mR {:.2}", r.mr);
    }
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let hyper = a.hyper.hyper(a.epochs);
    hyper.validate()?;
    let variants: Vec<Variant> = match a.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    fs::create_dir_all(&a.out_dir)?;
    let mut manifest = RunManifest::new("ablate", hyper.seed);
    let data = load_data(&a.data, &mut manifest)?;
    let test = load_test(&a.test, &mut manifest)?;
    if !test.is_clean() {
        return Err(Error::Data(format!(
            "test set has {} pairs with y = 0",
            test.noisy_count()
        )));
    }
    manifest.hyper = Some(hyper.clone());
    manifest.options = Some(options(&a.hyper, Variant::Full, Vec::new()));
    let csv_path = output(&mut manifest, &a.out_dir, "results.csv");
    for v in &variants {
        output(&mut manifest, &a.out_dir, &format!("{v}.rrsp"));
        output(&mut manifest, &a.out_dir, &format!("{v}.log.jsonl"));
    }
    manifest.write(&a.out_dir.join("run.json"))?;

    let mut csv = BufWriter::new(File::create(&csv_path)?);
    writeln!(csv, "variant,label,best_epoch,noisy_f1,{}", RetrievalReport::CSV_HEADER)?;
    for v in variants {
        let opts = options(&a.hyper, v, Vec::new());
        let (heads, log) = rrsitr::train(&data.train, data.val.as_ref(), &hyper, &opts)?;
        write_heads(a.out_dir.join(format!("{v}.rrsp")), &heads)?;
        write_log(&log, &a.out_dir.join(format!("{v}.log.jsonl")))?;
        let report = test_report(&heads, &test, &hyper, v, &a.hyper)?;
        let f1 = detection_from_trace(&log.final_pairs).f1;
        writeln!(csv, "{v},{},{},{f1:.4},{}", v.label(), log.best_epoch, report.csv_row())?;
        println!("{:>5} {v:<20} mR {:.2}", v.label(), report.mr);
    }
    csv.flush()?;
    println!("results -> {}", csv_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    variant: Variant,
    alpha: f64,
    n_pairs: usize,
    report: RetrievalReport,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let heads = read_heads(&a.heads)?;
    let (test, _) = load_dataset(&a.test)?;
    let alpha = a.variant.inference_alpha(a.alpha);
    let report = evaluate_with(&heads, &test, alpha, a.local_aggregation)?;
    let out = EvalOutput {
        variant: a.variant,
        alpha,
        n_pairs: test.n_pairs(),
        report,
    };
    match &a.output {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    if a.csv {
        println!("{}", RetrievalReport::CSV_HEADER);
        println!("{}", report.csv_row());
    }
    Ok(())
}

pub fn trace(a: TraceArgs) -> Result<()> {
    let mut epochs = a.epochs.clone();
    epochs.sort_unstable();
    epochs.dedup();
    let last = *epochs.last().expect("clap requires at least one epoch");
    let train_epochs = a.train_epochs.unwrap_or(last);
    if epochs[0] == 0 || last > train_epochs {
        return Err(Error::Config(format!(
            "traced epochs must lie in 1..={train_epochs}, got {:?}",
            a.epochs
        )));
    }
    let hyper = a.hyper.hyper(train_epochs);
    hyper.validate()?;
    let opts = options(&a.hyper, a.variant, epochs.clone());
    fs::create_dir_all(&a.out_dir)?;
    let mut manifest = RunManifest::new("trace", hyper.seed);
    let data = load_data(&a.data, &mut manifest)?;
    manifest.hyper = Some(hyper.clone());
    manifest.options = Some(opts.clone());
    let paths: Vec<_> = epochs
        .iter()
        .map(|e| output(&mut manifest, &a.out_dir, &format!("trace_epoch_{e}.csv")))
        .collect();
    let log_path = output(&mut manifest, &a.out_dir, "log.jsonl");
    manifest.write(&a.out_dir.join("run.json"))?;

    let (_, log) = rrsitr::train(&data.train, data.val.as_ref(), &hyper, &opts)?;
    write_log(&log, &log_path)?;
    for (e, path) in epochs.iter().zip(&paths) {
        let rows = log
            .traces
            .get(e)
            .ok_or_else(|| Error::Internal(format!("epoch {e} was not traced")))?;
        let mut out = BufWriter::new(File::create(path)?);
        write_trace_csv(rows, &mut out)?;
        out.flush()?;
        let d = detection_from_trace(rows);
        println!(
            "epoch {e}: {} pairs, noisy-bucket F1 {:.3} -> {}",
            rows.len(),
            d.f1,
            path.display()
        );
    }
    Ok(())
}

pub fn sims(a: SimsArgs) -> Result<()> {
    let (ds, _) = load_dataset(&a.data)?;
    let heads = match &a.heads {
        Some(p) => read_heads(p)?,
        None => ProjectionHeads::identity(ds.dim(), ds.dim()),
    };
    let alpha = match a.kind {
        SimKind::Global => 1.0,
        SimKind::Local => 0.0,
        SimKind::Fused => a.alpha,
    };
    let s = dataset_similarity(&heads, &ds, alpha, a.local_aggregation)?;
    fs::write(&a.output, to_csv(s.view()))?;
    println!("{}x{} similarity -> {}", s.nrows(), s.ncols(), a.output.display());
    Ok(())
}
