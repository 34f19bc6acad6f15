use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use grnet::ablation::{AblationPlan, Check, ScenarioData};
use grnet::bench::{bench_guided, MAX_RADIUS_RATIO};
use grnet::config::RunConfig;
use grnet::image::{load_image, save_image, Image, Region};
use grnet::model::{evaluate, train, Checkpoint, Evaluation};
use grnet::mte::{extract_residual, visualize_residual};
use grnet::synth::{build_dataset, generate_split, DatasetManifest, Scenario, Split};
use serde_json::json;

use crate::{AblateArgs, BenchArgs, Cli, Command, DataArgs, EvalArgs, ExtractArgs, GenerateArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).context("config")?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    match cli.command {
        Command::Extract(a) => extract(&config, a).context("extract"),
        Command::Generate(a) => generate(config, cli.seed, a).context("generate"),
        Command::Train(a) => train_cmd(config, a).context("train"),
        Command::Eval(a) => eval_cmd(&config, a).context("eval"),
        Command::Ablate(a) => ablate(config, a).context("ablate"),
        Command::Bench(a) => bench(a).context("bench"),
    }
}

fn parse_region(s: &str) -> Result<Region> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| anyhow!("region must be x,y,width,height, got {s:?}"))?;
    match v[..] {
        [x, y, w, h] if w > 0 && h > 0 => Ok(Region::new(x, y, w, h)),
        _ => bail!("region must be x,y,width,height with nonzero size, got {s:?}"),
    }
}

fn vis_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy()).unwrap_or("png".into());
    out.with_file_name(format!("{stem}_vis.{ext}"))
}

fn extract(config: &RunConfig, a: ExtractArgs) -> Result<()> {
    let mut params = config.guided;
    if let Some(r) = a.radius {
        params.radius = r;
    }
    if let Some(e) = a.epsilon {
        params.epsilon = e;
    }
    params.validate().context("guided filter")?;
    let img = load_image(&a.input).context("image io")?;
    let region = a.region.as_deref().map(parse_region).transpose()?;
    if let Some(r) = &region {
        if !r.fits(img.width(), img.height()) {
            bail!("region {r:?} does not fit a {}x{} image", img.width(), img.height());
        }
    }
    let res = extract_residual(&img, a.method, &params).context("mte")?;
    let vis = visualize_residual(&res, a.gain).context("mte")?;
    let vis_out = a.vis.unwrap_or_else(|| vis_path(&a.out));
    save_image(&res.residual, &a.out).context("image io")?;
    save_image(&vis, &vis_out).context("image io")?;

    let method = format!("{:?}", a.method).to_lowercase();
    let contrast = region.map(|r| (res.region_mean(&r), res.contrast(&r)));
    if a.json {
        let mut v = json!({
            "input": a.input,
            "residual": a.out,
            "visualization": vis_out,
            "method": method,
            "width": img.width(),
            "height": img.height(),
            "mean": res.mean(),
            "max": res.max(),
            "source_hash": format!("{:016x}", res.source_hash),
        });
        if let Some(p) = res.params {
            v["radius"] = json!(p.radius);
            v["epsilon"] = json!(p.epsilon);
        }
        if let Some((inside, c)) = contrast {
            v["region_mean"] = json!(inside);
            v["contrast"] = json!(c);
        }
        println!("{v}");
    } else {
        println!("residual       {}", a.out.display());
        println!("visualization  {} (gain {})", vis_out.display(), a.gain);
        match res.params {
            Some(p) => println!("method         {method} (radius {}, epsilon {})", p.radius, p.epsilon),
            None => println!("method         {method}"),
        }
        println!("mean           {:.6}", res.mean());
        println!("max            {:.6}", res.max());
        if let Some((inside, c)) = contrast {
            println!("region mean    {inside:.6}");
            println!("contrast       {c:.4}");
        }
    }
    Ok(())
}

fn generate(mut config: RunConfig, seed: Option<u64>, a: GenerateArgs) -> Result<()> {
    let d = &mut config.dataset;
    if let Some(s) = seed {
        d.seed = s;
    }
    if let Some(c) = a.classes {
        d.classes = c;
    }
    if let Some(n) = a.train_per_class {
        d.train_per_class = n;
    }
    if let Some(n) = a.test_per_class {
        d.test_per_class = n;
    }
    if let Some(s) = a.scenarios {
        d.scenarios = s;
    }
    let started = Instant::now();
    let (train, test) = build_dataset(d, &a.out).context("dataset")?;
    println!(
        "wrote {} train and {} test images ({} classes, scenarios {}) to {} in {:.1} s",
        train.len(),
        test.len(),
        d.classes,
        d.scenarios.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","),
        a.out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

type LabeledImages = Vec<(Image, usize)>;

/// Images of one split: from a manifest when one is given, otherwise
/// generated from the `[dataset]` section. Also returns the class count.
fn load_split(
    config: &RunConfig,
    data: &DataArgs,
    split: Split,
) -> Result<(LabeledImages, Scenario, usize)> {
    let scenario = data.scenario.unwrap_or(config.data.scenario);
    let manifest = data.data.clone().or_else(|| match split {
        Split::Train => config.data.train_manifest.clone(),
        Split::Test => config.data.test_manifest.clone(),
    });
    let (set, classes) = match manifest {
        Some(path) => {
            let m = DatasetManifest::read(&path).context("dataset")?;
            let root = path.parent().unwrap_or(Path::new("."));
            (m.load(root, scenario).context("dataset")?, m.classes)
        }
        None => {
            let set = generate_split(&config.dataset, split)
                .and_then(|recs| recs.iter().map(|r| Ok((scenario.apply(&r.image)?, r.label))).collect())
                .context("dataset")?;
            (set, config.dataset.classes)
        }
    };
    if set.is_empty() {
        bail!("dataset: no {split} images for scenario {scenario}");
    }
    Ok((set, scenario, classes))
}

fn train_cmd(mut config: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        config.model.epochs = e;
    }
    if let Some(b) = a.batch_size {
        config.model.batch_size = b;
    }
    let (data, scenario, classes) = load_split(&config, &a.data, Split::Train)?;
    let model_cfg = config.model_config_for(classes).context("config")?;
    println!(
        "training {} images ({scenario}), fusion {}, residual stream {}, {} epochs",
        data.len(),
        model_cfg.fusion,
        if model_cfg.use_mte { "guided" } else { "off" },
        model_cfg.epochs
    );
    let ck = train(model_cfg, &data).context("model")?;
    println!("epoch  loss      fused     l_rgb     l_gr      acc     lr        alpha1  alpha2");
    for r in &ck.history {
        println!(
            "{:<6} {:<9.5} {:<9.5} {:<9.5} {:<9.5} {:<7.4} {:<9.2e} {:<7.4} {:.4}",
            r.epoch,
            r.loss,
            r.fused_loss,
            r.stream_losses[0],
            r.stream_losses[1],
            r.train_accuracy,
            r.learning_rate,
            r.weights.alpha[0],
            r.weights.alpha[1]
        );
    }
    for r in &ck.history {
        println!(
            "epoch\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6e}\t{:.6}\t{:.6}",
            r.epoch,
            r.loss,
            r.fused_loss,
            r.stream_losses[0],
            r.stream_losses[1],
            r.train_accuracy,
            r.learning_rate,
            r.weights.alpha[0],
            r.weights.alpha[1]
        );
    }
    ck.save(&a.out).context("checkpoint")?;
    println!("checkpoint {}", a.out.display());
    Ok(())
}

fn print_evaluation(ev: &Evaluation) {
    println!("head      accuracy  auc");
    for (name, m) in [("fused", &ev.fused), ("rgb", &ev.rgb), ("residual", &ev.gr)] {
        let auc = m.auc.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!("{name:<9} {:<9.4} {auc}", m.accuracy);
    }
    let per_class: Vec<String> = ev
        .fused
        .per_class_accuracy
        .iter()
        .map(|a| a.map_or("-".into(), |v| format!("{v:.3}")))
        .collect();
    println!("per-class accuracy: {}", per_class.join(" "));
    println!("confusion (rows = truth, columns = prediction):");
    for row in &ev.fused.confusion.counts {
        println!("  {}", row.iter().map(|c| format!("{c:>5}")).collect::<String>());
    }
    for (name, m) in [("fused", &ev.fused), ("rgb", &ev.rgb), ("residual", &ev.gr)] {
        let auc = m.auc.map_or("nan".to_string(), |a| format!("{a:.6}"));
        println!("metric\t{name}\t{:.6}\t{auc}", m.accuracy);
    }
}

fn eval_cmd(config: &RunConfig, a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt).context("checkpoint")?;
    let (data, scenario, classes) = load_split(config, &a.data, Split::Test)?;
    if classes != ck.model.config.n_classes {
        bail!(
            "eval: data has {classes} classes but the checkpoint was trained for {}",
            ck.model.config.n_classes
        );
    }
    let ev = evaluate(&ck.model, &data).context("model")?;
    if a.json {
        let v = json!({ "scenario": scenario, "samples": data.len(), "evaluation": ev });
        println!("{v}");
    } else {
        println!("{} test images ({scenario})", data.len());
        print_evaluation(&ev);
    }
    Ok(())
}

fn check_line(c: &Check) -> String {
    let mark = match c.passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    format!("{mark}  {}  ({})", c.name, c.detail)
}

fn ablate(mut config: RunConfig, a: AblateArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        config.model.epochs = e;
    }
    enum Source {
        Manifests(PathBuf, DatasetManifest, DatasetManifest),
        Generated(Vec<grnet::synth::SampleRecord>, Vec<grnet::synth::SampleRecord>),
    }
    let source = match &a.data {
        Some(dir) => Source::Manifests(
            dir.clone(),
            DatasetManifest::read(dir.join("train.tsv")).context("dataset")?,
            DatasetManifest::read(dir.join("test.tsv")).context("dataset")?,
        ),
        None => Source::Generated(
            generate_split(&config.dataset, Split::Train).context("dataset")?,
            generate_split(&config.dataset, Split::Test).context("dataset")?,
        ),
    };
    let classes = match &source {
        Source::Manifests(_, train, _) => train.classes,
        Source::Generated(..) => config.dataset.classes,
    };
    let base = config.model_config_for(classes).context("config")?;
    let seeds: Vec<u64> = match a.seeds {
        Some(n) => {
            let first = config.seed.unwrap_or(0);
            (first..first + n).collect()
        }
        None => config.ablation.seeds.clone(),
    };
    let scenarios = a.scenarios.unwrap_or(config.ablation.scenarios.clone());
    let mut plan = AblationPlan::table_one(base, seeds, &scenarios);
    if a.fusion_study {
        plan = plan.with_fusion_study(Scenario::Jp60);
    }

    let total = plan.run_count();
    let mut done = 0;
    let results = plan
        .run(
            |s| match &source {
                Source::Manifests(dir, train, test) => Ok(ScenarioData {
                    train: train.load(dir, s)?,
                    test: test.load(dir, s)?,
                }),
                Source::Generated(train, test) => ScenarioData::from_records(train, test, s),
            },
            |r| {
                done += 1;
                eprintln!(
                    "[{done}/{total}] {} {} seed {}: fused {:.4} rgb {:.4} residual {:.4} ({:.1} s)",
                    r.variant, r.scenario, r.seed, r.fused, r.rgb, r.gr, r.seconds
                );
            },
        )
        .context("ablation")?;

    let mut tables = vec![results.table_one()];
    if a.fusion_study {
        tables.push(results.table_three(Scenario::Jp60));
    }
    let checks = results.checks();
    let mut records = String::new();
    for t in &tables {
        println!("{}", t.render_text());
        records.push_str(&t.render_records());
    }
    println!("checks:");
    for c in &checks {
        println!("  {}", check_line(c));
        let v = match c.passed {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "skip",
        };
        records.push_str(&format!("check\t{}\t{v}\t{}\n", c.name, c.detail));
    }
    records.push_str(&results.render_runs());
    println!();
    print!("{records}");
    if let Some(path) = &a.records {
        fs::write(path, &records).with_context(|| format!("writing {}", path.display()))?;
    }
    let failed = checks.iter().filter(|c| c.passed == Some(false)).count();
    if a.strict && failed > 0 {
        bail!("ablation: {failed} check(s) failed");
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let report = bench_guided(a.size, &a.radii, a.repeats, a.epsilon).context("guided filter")?;
    if a.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        println!("guided filter, {}x{}x{}, best of {}", report.width, report.height, report.channels, a.repeats);
        println!("radius  ms        Mpx/s");
        for r in &report.rows {
            println!("{:<7} {:<9.2} {:.2}", r.radius, r.seconds * 1e3, r.megapixels_per_second);
        }
        println!(
            "ratio largest/smallest radius: {:.3} (limit {MAX_RADIUS_RATIO}) {}",
            report.ratio,
            if report.passed { "PASS" } else { "FAIL" }
        );
        for r in &report.rows {
            println!("bench\t{}\t{:.6}\t{:.4}", r.radius, r.seconds, r.megapixels_per_second);
        }
    }
    if !report.passed {
        bail!(
            "guided filter: time ratio {:.3} between radii exceeds {MAX_RADIUS_RATIO}",
            report.ratio
        );
    }
    Ok(())
}
