use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use rayon::prelude::*;

use rankpool_core::argmin_grad::WGradMode;
use rankpool_core::encoder::broadcast;
use rankpool_core::gradcheck::{run_suite, Suite};
use rankpool_core::io::{write_dataset, EncodingTable};
use rankpool_core::metrics::evaluate;
use rankpool_core::pooling::PyramidBase;
use rankpool_core::synth::{generate, SynthKind, SynthSpec};
use rankpool_core::training::{
    train_discriminative_rp, train_end_to_end, train_linear_classifier, AffineUpstream, DiscriminativeConfig,
    EndToEndConfig, LossKind, SgdConfig,
};
use rankpool_core::{Dataset, EncoderConfig, HierarchyConfig, LayerSpec, MapKind, Method, Model, SvrConfig, Transform};

use crate::input::{check_dataset, class_table, label_indices, load, require_dataset, Loaded};
use crate::{
    BenchArgs, EncodeArgs, EncoderArgs, EvalArgs, GradcheckArgs, PredictArgs, SynthArgs, TrainArgs, EXIT_CHECK_FAILED,
};

fn svr_config(a: &EncoderArgs) -> Result<SvrConfig> {
    let svr = SvrConfig {
        c: a.svr_c,
        epsilon: a.svr_eps,
        tol: a.svr_tol,
        max_iter: a.svr_max_iter,
    };
    svr.validate()?;
    Ok(svr)
}

fn encoder_config(a: &EncoderArgs) -> Result<EncoderConfig> {
    let method: Method = a.method.parse()?;
    let depth = a.depth;
    if depth == 0 {
        bail!("--depth must be >= 1");
    }
    let windows: Vec<usize> = broadcast(&a.window, depth, "window")?;
    let strides: Vec<usize> = broadcast(&a.stride, depth, "stride")?;
    let maps: Vec<MapKind> = broadcast(a.map.as_deref().unwrap_or("ser"), depth, "map")?;
    let layers = (0..depth)
        .map(|l| LayerSpec {
            window: windows[l],
            stride: strides[l],
            map: maps[l],
        })
        .collect();
    let cfg = EncoderConfig {
        method,
        pyramid_base: a.pyramid_base.parse::<PyramidBase>()?,
        hierarchy: HierarchyConfig {
            layers,
            svr: svr_config(a)?,
        },
        smooth_tvm: a.smooth_tvm,
        l2norm: a.l2norm,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Map of a learned transform; a single value is required.
fn transform_map(a: &EncoderArgs) -> Result<MapKind> {
    Ok(a.map.as_deref().unwrap_or("identity").parse()?)
}

/// Encodes every sequence on the worker pool; output order and the
/// reported error (the first failing sequence) do not depend on scheduling.
fn encode_all<F>(d: &Dataset, f: F) -> Result<Vec<DVector<f64>>>
where
    F: Fn(&rankpool_core::FrameSequence) -> rankpool_core::Result<DVector<f64>> + Sync,
{
    let results: Vec<_> = d
        .sequences
        .par_iter()
        .map(|s| f(s).map_err(|e| e.in_sample(s.id())))
        .collect();
    Ok(results.into_iter().collect::<rankpool_core::Result<Vec<_>>>()?)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn label_names(d: &Dataset) -> Vec<Option<String>> {
    d.sequences
        .iter()
        .map(|s| s.label().map(|y| d.class_names[y].clone()))
        .collect()
}

pub fn encode(a: EncodeArgs) -> Result<u8> {
    let cfg = encoder_config(&a.encoder)?;
    let d = require_dataset(load(&a.input)?, "encode")?.into_dataset()?;
    let dim = check_dataset(&d, false)?;
    let values = encode_all(&d, |s| cfg.encode(s).map(|e| e.into_values()))?;
    let mut meta = cfg.to_pairs();
    meta.push(("input_dim".into(), dim.to_string()));
    let table = EncodingTable {
        meta,
        ids: d.sequences.iter().map(|s| s.id().to_string()).collect(),
        labels: label_names(&d),
        values,
    };
    let mut w = output(a.output.as_deref())?;
    if a.binary {
        table.write_binary(&mut w)?;
    } else {
        table.write_csv(&mut w)?;
    }
    w.flush()?;
    Ok(0)
}

fn sgd_config(a: &TrainArgs, end_to_end: bool) -> Result<SgdConfig> {
    let base = if end_to_end {
        SgdConfig::end_to_end()
    } else {
        SgdConfig::default()
    };
    let cfg = SgdConfig {
        epochs: a.epochs,
        lr_start: a.lr_start.unwrap_or(base.lr_start),
        lr_end: a.lr_end.unwrap_or(base.lr_end),
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        seed: a.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn report_trace(trace: &[f64], accuracy: f64) {
    for (epoch, loss) in trace.iter().enumerate() {
        eprintln!("epoch {epoch} loss {loss:.9e}");
    }
    println!("train_accuracy={accuracy}");
    if let Some(last) = trace.last() {
        println!("final_loss={last}");
    }
}

pub fn train(a: TrainArgs) -> Result<u8> {
    let loss: LossKind = a.loss.parse()?;
    let mode = a.mode.as_str();
    let sgd = sgd_config(&a, mode == "end2end")?;
    let mut config = vec![
        ("mode".to_string(), mode.to_string()),
        ("epochs".into(), sgd.epochs.to_string()),
        ("lr_start".into(), sgd.lr_start.to_string()),
        ("lr_end".into(), sgd.lr_end.to_string()),
        ("momentum".into(), sgd.momentum.to_string()),
        ("weight_decay".into(), sgd.weight_decay.to_string()),
        ("seed".into(), sgd.seed.to_string()),
    ];
    let loaded = load(&a.input)?;

    let model = match mode {
        "linear" => {
            let (encodings, labels, names, encoder) = match loaded {
                Loaded::Encodings(t) => {
                    let names = class_table(&t.labels);
                    let labels = label_indices(&t.labels, &t.ids, &names)?;
                    let encoder = EncoderConfig::from_pairs(&t.meta_map()).ok();
                    (t.values, labels, names, encoder)
                }
                Loaded::Dataset(r) => {
                    let d = r.into_dataset()?;
                    check_dataset(&d, true)?;
                    let cfg = encoder_config(&a.encoder)?;
                    let values = encode_all(&d, |s| cfg.encode(s).map(|e| e.into_values()))?;
                    (values, d.labels()?, d.class_names, Some(cfg))
                }
            };
            if let Some(bad) = encodings.iter().find(|u| u.len() != encodings[0].len()) {
                bail!(
                    "encodings have mixed dimensions {} and {}",
                    encodings[0].len(),
                    bad.len()
                );
            }
            let fit = train_linear_classifier(&encodings, &labels, names.len(), loss, &sgd)?;
            report_trace(&fit.loss_trace, fit.train_accuracy);
            Model {
                class_names: names,
                loss,
                classifier: fit.classifier,
                transform: Transform::Encoder(encoder),
                config,
            }
        }
        "discriminative" => {
            let d = require_dataset(loaded, "discriminative training")?.into_dataset()?;
            check_dataset(&d, true)?;
            let cfg = DiscriminativeConfig {
                loss,
                svr: svr_config(&a.encoder)?,
                map: transform_map(&a.encoder)?,
                sgd,
                pretrain: SgdConfig {
                    epochs: a.pretrain_epochs,
                    seed: a.seed,
                    ..SgdConfig::default()
                },
                grad_mode: a.grad_mode.parse::<WGradMode>()?,
                freeze_w: false,
            };
            config.push(("pretrain_epochs".into(), a.pretrain_epochs.to_string()));
            config.push(("grad_mode".into(), cfg.grad_mode.name().into()));
            let fit = train_discriminative_rp(&d, &cfg)?;
            report_trace(&fit.loss_trace, fit.train_accuracy);
            Model {
                class_names: d.class_names,
                loss,
                classifier: fit.classifier,
                transform: Transform::Shared {
                    w: fit.w,
                    map: cfg.map,
                    svr: cfg.svr,
                },
                config,
            }
        }
        "end2end" => {
            let d = require_dataset(loaded, "end-to-end training")?.into_dataset()?;
            let dim = check_dataset(&d, true)?;
            let cfg = EndToEndConfig {
                loss,
                svr: svr_config(&a.encoder)?,
                sgd,
                ..EndToEndConfig::default()
            };
            let up = AffineUpstream::identity(dim, transform_map(&a.encoder)?);
            let fit = train_end_to_end(&d, up, &cfg)?;
            report_trace(&fit.loss_trace, fit.train_accuracy);
            Model {
                class_names: d.class_names,
                loss,
                classifier: fit.classifier,
                transform: Transform::Upstream {
                    upstream: fit.upstream,
                    svr: cfg.svr,
                },
                config,
            }
        }
        other => bail!("unknown mode `{other}` (expected linear, discriminative or end2end)"),
    };
    model
        .save(&a.output)
        .with_context(|| format!("writing {}", a.output.display()))?;
    Ok(0)
}

/// Scores for every input row, with ids and label text.
struct Scored {
    ids: Vec<String>,
    labels: Vec<Option<String>>,
    scores: Vec<DVector<f64>>,
}

fn score(model: &Model, loaded: Loaded) -> Result<Scored> {
    match loaded {
        Loaded::Encodings(t) => {
            let scores = t
                .values
                .iter()
                .zip(&t.ids)
                .map(|(u, id)| model.scores(u).with_context(|| format!("sequence `{id}`")))
                .collect::<Result<Vec<_>>>()?;
            Ok(Scored {
                ids: t.ids,
                labels: t.labels,
                scores,
            })
        }
        Loaded::Dataset(r) => {
            let labels = r.labels.clone();
            let d = Dataset::new(r.sequences, Vec::new());
            check_dataset(&d, false)?;
            let encodings = encode_all(&d, |s| model.encode(s))?;
            let scores = encodings
                .iter()
                .map(|u| model.scores(u))
                .collect::<rankpool_core::Result<Vec<_>>>()?;
            Ok(Scored {
                ids: d.sequences.iter().map(|s| s.id().to_string()).collect(),
                labels,
                scores,
            })
        }
    }
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("reading model {}", path.display()))
}

pub fn predict(a: PredictArgs) -> Result<u8> {
    let model = load_model(&a.model)?;
    let scored = score(&model, load(&a.input)?)?;
    let mut w = output(a.output.as_deref())?;
    write!(w, "id,predicted")?;
    for name in &model.class_names {
        write!(w, ",score:{}", csv_field(name))?;
    }
    writeln!(w)?;
    for (id, s) in scored.ids.iter().zip(&scored.scores) {
        let y = rankpool_core::training::argmax(s);
        write!(w, "{},{}", csv_field(id), csv_field(&model.class_names[y]))?;
        for x in s.iter() {
            write!(w, ",{x:.8e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn eval(a: EvalArgs) -> Result<u8> {
    let model = load_model(&a.model)?;
    let scored = score(&model, load(&a.input)?)?;
    let labels = label_indices(&scored.labels, &scored.ids, &model.class_names)?;
    let m = evaluate(&scored.scores, &labels, model.classes());
    if a.kv {
        print!("{}", m.key_values(&model.class_names));
        return Ok(0);
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!("sequences  {}", m.count);
    println!("accuracy   {:.4}", m.accuracy);
    println!("mAP        {:.4}", m.mean_ap);
    for (c, name) in model.class_names.iter().enumerate() {
        println!(
            "  {name}: accuracy {}  AP {}",
            fmt(m.per_class_accuracy[c]),
            fmt(m.average_precision[c])
        );
    }
    Ok(0)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<u8> {
    let mut suites = Vec::new();
    for s in &a.suite {
        if s.eq_ignore_ascii_case("all") {
            suites.extend(Suite::ALL);
        } else {
            suites.push(s.parse::<Suite>()?);
        }
    }
    suites.dedup();
    if a.trials == 0 {
        eprintln!("warning: --trials 0 checks nothing; reporting a vacuous pass");
    }
    let mut all_passed = true;
    for suite in suites {
        let r = run_suite(suite, a.trials, a.seed)?;
        let status = if r.passed() { "pass" } else { "FAIL" };
        all_passed &= r.passed();
        println!(
            "suite={} trials={} checked={} skipped={} max_rel_err={:.3e} threshold={:e} status={status}",
            r.suite, r.trials, r.checked, r.skipped, r.max_rel_err, r.threshold
        );
        for (k, v) in &r.diagnostics {
            println!("  {k}={v:e}");
        }
    }
    Ok(if all_passed { 0 } else { EXIT_CHECK_FAILED })
}

pub fn synth(a: SynthArgs) -> Result<u8> {
    let (min_len, max_len) = match a.len {
        Some(l) => (l, l),
        None => (a.min_len, a.max_len),
    };
    let spec = SynthSpec {
        kind: a.kind.parse::<SynthKind>()?,
        classes: a.k,
        count: a.n,
        min_len,
        max_len,
        dim: a.dim,
        noise: a.noise,
        seed: a.seed,
    };
    let d = generate(&spec)?;
    let mut w = output(a.output.as_deref())?;
    write_dataset(&d, &mut w)?;
    w.flush()?;
    Ok(0)
}

pub fn bench(a: BenchArgs) -> Result<u8> {
    let methods: Vec<Method> = if a.method.is_empty() {
        Method::ALL.to_vec()
    } else {
        a.method
            .iter()
            .map(|m| m.parse())
            .collect::<rankpool_core::Result<_>>()?
    };
    let d = generate(&SynthSpec {
        kind: SynthKind::Noise,
        classes: 2,
        count: a.count.max(1),
        min_len: a.len,
        max_len: a.len,
        dim: a.dim,
        noise: 1.0,
        seed: a.seed,
    })?;
    for method in methods {
        let cfg = EncoderConfig::new(method);
        let start = Instant::now();
        encode_all(&d, |s| cfg.encode(s).map(|e| e.into_values()))?;
        let secs = start.elapsed().as_secs_f64();
        println!(
            "method={method} sequences={} len={} dim={} total_s={secs:.4} per_sequence_ms={:.4}",
            d.len(),
            a.len,
            a.dim,
            1e3 * secs / d.len() as f64
        );
    }
    Ok(0)
}
