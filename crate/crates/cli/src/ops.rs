use crate::config::{FileConfig, ResolvedConfig};
use crate::data::DataSpec;
use crate::{Command, Common, DataArgs};
use psparse_core::admm::{
    connectivity_prune, connectivity_score, extract_pattern_library, hard_masks,
    overall_compression, read_pas, write_pas, ConnectivityMask, ExtractionSchedule, LayerMask,
    PasFile,
};
use psparse_core::engine::{
    bench, execute_sparse, verify_equivalence, DenseModel, F32Batch,
};
use psparse_core::nn::{accuracy, read_pnm, train_epoch, write_pnm, Network, TrainConfig};
use psparse_core::pack::{pack, read_psp, unpack, write_psp};
use psparse_core::pattern::{
    derived_library, elog_filter, elog_pattern_set, gaussian_filter_3x3, gaussian_pattern_set,
    interpolation_report, log_filter_approx, auto_target, IntFilter3x3, LogApprox, SteerableSpec,
};
use psparse_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const DEFAULT_SEED: u64 = 42;

struct ResolvedCommon {
    seed: u64,
    threads: usize,
    tol: f64,
    file: FileConfig,
}

fn resolve_common(common: &Common) -> Result<ResolvedCommon> {
    let file = FileConfig::load(common.config.as_ref())?;
    Ok(ResolvedCommon {
        seed: file.resolve(common.seed, "seed", DEFAULT_SEED)?,
        threads: file.resolve(common.threads, "threads", 1)?,
        tol: file.resolve(common.tol, "tol", 1e-4)?,
        file,
    })
}

fn resolve_data(args: &DataArgs, file: &FileConfig) -> Result<DataSpec> {
    Ok(DataSpec {
        source: file.resolve(Some(args.data.clone()), "data", "synth".into())?,
        samples: file.resolve(args.samples, "samples", 2000)?,
        classes: file.resolve(args.classes, "classes", 4)?,
        image_size: file.resolve(args.image_size, "image_size", 16)?,
        noise: file.resolve(args.noise, "noise", 0.3)?,
    })
}

fn record_data(cfg: &mut ResolvedConfig, spec: &DataSpec) {
    cfg.set("data", &spec.source);
    cfg.set("samples", spec.samples);
    cfg.set("classes", spec.classes);
    cfg.set("image_size", spec.image_size);
    cfg.set("noise", spec.noise);
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Derive { common, out } => cmd_derive(&common, &out),
        Command::Train {
            common,
            data,
            epochs,
            lr,
            batch_size,
            out,
        } => cmd_train(&common, &data, epochs, lr, batch_size, &out),
        Command::Extract {
            common,
            data,
            model,
            schedule,
            rho,
            epochs_per_step,
            admm_iters,
            lr,
            z_lr,
            batch_size,
            out,
        } => cmd_extract(
            &common,
            &data,
            model,
            schedule,
            rho,
            epochs_per_step,
            admm_iters,
            lr,
            z_lr,
            batch_size,
            &out,
        ),
        Command::Prune {
            common,
            data,
            model,
            assignment,
            keep_ratio,
            rounds,
            finetune_epochs,
            lr,
            batch_size,
            out,
        } => cmd_prune(
            &common,
            &data,
            &model,
            &assignment,
            keep_ratio,
            rounds,
            finetune_epochs,
            lr,
            batch_size,
            &out,
        ),
        Command::Pack {
            common,
            model,
            assignment,
            out,
        } => cmd_pack(&common, &model, &assignment, &out),
        Command::Infer {
            common,
            data,
            packed,
            count,
        } => cmd_infer(&common, &data, &packed, count),
        Command::Verify {
            common,
            packed,
            model,
            batches,
            image_size,
        } => cmd_verify(&common, &packed, model, batches, image_size),
        Command::Bench {
            common,
            packed,
            iters,
            thread_list,
            image_size,
            out,
        } => cmd_bench(&common, &packed, iters, thread_list, image_size, out),
    }
}

fn matrix_lines(name: &str, f: &IntFilter3x3) -> String {
    let mut s = format!("{name}:\n");
    for row in f.entries {
        let _ = writeln!(s, "  {row:?}");
    }
    s
}

fn cmd_derive(common: &Common, out: &Path) -> Result<()> {
    let rc = resolve_common(common)?;
    ensure_dir(out)?;

    let gauss = gaussian_pattern_set();
    let elog = elog_pattern_set();
    let derived = derived_library();
    write_text(&out.join("gaussian.json"), &gauss.to_json())?;
    write_text(&out.join("elog.json"), &elog.to_json())?;
    write_text(&out.join("derived.json"), &derived.to_json())?;

    let spec = SteerableSpec::default();
    let mut report = String::new();
    report.push_str(&matrix_lines("gaussian 3x3", &gaussian_filter_3x3()));
    report.push_str(&matrix_lines("LoG approx 1", &log_filter_approx(LogApprox::First)));
    report.push_str(&matrix_lines("LoG approx 2", &log_filter_approx(LogApprox::Second)));
    report.push_str(&matrix_lines("ELoG", &elog_filter()));

    // sum identity of the Gaussian family
    let mut sum = [[0i32; 3]; 3];
    for m in gauss.masks() {
        for (r, c) in m.positions() {
            sum[r][c] += 1;
        }
    }
    let sum_ok = sum == gaussian_filter_3x3().entries;
    let _ = writeln!(report, "gaussian-set sum identity: {}", if sum_ok { "ok" } else { "FAILED" });
    if !sum_ok {
        return Err(Error::Verification("gaussian mask sum identity".into()));
    }

    for (name, lib) in [("gaussian", &gauss), ("elog", &elog)] {
        let r = interpolation_report(&spec, lib, auto_target(lib))?;
        let _ = writeln!(
            report,
            "{name} set: K={} mean mask {:?} cosine_mean={:.6} cosine_composite(n={})={:.6}",
            r.k, r.mean_mask, r.cosine_mean, r.n, r.cosine_composite
        );
    }
    let _ = writeln!(report, "derived library: K={}", derived.k());
    write_text(&out.join("derivation_report.txt"), &report)?;

    let mut cfg = ResolvedConfig::new("derive");
    cfg.set("seed", rc.seed);
    cfg.set("out", out.display());
    cfg.write_next_to(out, true)?;
    println!("derive: wrote 3 libraries (K=4, 4, {}) to {}", derived.k(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: &Common,
    data_args: &DataArgs,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    out: &Path,
) -> Result<()> {
    let rc = resolve_common(common)?;
    let spec = resolve_data(data_args, &rc.file)?;
    let epochs = rc.file.resolve(epochs, "epochs", 12)?;
    let cfg = TrainConfig {
        lr: rc.file.resolve(lr, "lr", 0.05)?,
        z_lr: 0.0,
        batch_size: rc.file.resolve(batch_size, "batch_size", 32)?,
    };
    let (train, test) = spec.load(rc.seed)?;
    let mut net = Network::toy(
        train.inputs.shape()[1],
        spec.classes,
        (train.inputs.shape()[2], train.inputs.shape()[3]),
        rc.seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed.wrapping_add(1));
    for epoch in 0..epochs {
        let stats = train_epoch(&mut net, None, &train, &cfg, None, None, &mut rng)?;
        println!(
            "epoch {epoch}: loss {:.4} train-acc {:.3}",
            stats.task_loss, stats.accuracy
        );
    }
    let test_acc = accuracy(&net, &test)?;
    println!("test accuracy: {test_acc:.3}");

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_pnm(&net, out)?;
    let mut cfg_out = ResolvedConfig::new("train");
    cfg_out.set("seed", rc.seed);
    record_data(&mut cfg_out, &spec);
    cfg_out.set("epochs", epochs);
    cfg_out.set("lr", cfg.lr);
    cfg_out.set("batch_size", cfg.batch_size);
    cfg_out.set("test_accuracy", format!("{test_acc:.4}"));
    cfg_out.write_next_to(out, false)?;
    println!("train: wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_extract(
    common: &Common,
    data_args: &DataArgs,
    model: Option<PathBuf>,
    schedule: Option<String>,
    rho: Option<f64>,
    epochs_per_step: Option<usize>,
    admm_iters: Option<usize>,
    lr: Option<f64>,
    z_lr: Option<f64>,
    batch_size: Option<usize>,
    out: &Path,
) -> Result<()> {
    let rc = resolve_common(common)?;
    let spec = resolve_data(data_args, &rc.file)?;
    let schedule_text = rc
        .file
        .resolve(schedule, "schedule", "126,12,8".to_string())?;
    let schedule = ExtractionSchedule {
        k_targets: ExtractionSchedule::parse_targets(&schedule_text)?,
        epochs_per_step: rc.file.resolve(epochs_per_step, "epochs_per_step", 2)?,
        admm_iters_final: rc.file.resolve(admm_iters, "admm_iters", 10)?,
    };
    let rho = rc.file.resolve(rho, "rho", 1e-2)?;
    let cfg = TrainConfig {
        lr: rc.file.resolve(lr, "lr", 0.05)?,
        z_lr: rc.file.resolve(z_lr, "z_lr", 0.5)?,
        batch_size: rc.file.resolve(batch_size, "batch_size", 32)?,
    };

    let (train, _test) = spec.load(rc.seed)?;
    let mut net = match &model {
        Some(path) => read_pnm(path)?,
        None => Network::toy(
            train.inputs.shape()[1],
            spec.classes,
            (train.inputs.shape()[2], train.inputs.shape()[3]),
            rc.seed,
        ),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed.wrapping_add(2));
    let result = extract_pattern_library(&mut net, &train, &schedule, rho, &cfg, &mut rng)?;

    ensure_dir(out)?;
    write_text(&out.join("library.json"), &result.library.to_json())?;
    let geometry: Vec<(usize, usize)> = net
        .conv_layers()
        .iter()
        .map(|c| (c.filters(), c.channels()))
        .collect();
    let pas = PasFile::with_geometry(result.library.clone(), &result.assignment, &geometry)?;
    write_pas(&pas, &out.join("assignment.pas"))?;
    write_pnm(&net, &out.join("model.pnm"))?;
    write_text(&out.join("extract_log.csv"), &result.log.to_csv())?;

    let mut cfg_out = ResolvedConfig::new("extract");
    cfg_out.set("seed", rc.seed);
    record_data(&mut cfg_out, &spec);
    cfg_out.set("schedule", &schedule_text);
    cfg_out.set("rho", rho);
    cfg_out.set("epochs_per_step", schedule.epochs_per_step);
    cfg_out.set("admm_iters", schedule.admm_iters_final);
    cfg_out.set("lr", cfg.lr);
    cfg_out.set("z_lr", cfg.z_lr);
    cfg_out.set("batch_size", cfg.batch_size);
    if let Some(path) = &model {
        cfg_out.hash_input("model", path)?;
    }
    cfg_out.write_next_to(out, true)?;

    let residuals = result.log.final_residuals();
    println!(
        "extract: K={} after schedule {:?}; final residual {:.4}",
        result.library.k(),
        schedule.k_targets,
        residuals.last().copied().unwrap_or(f64::NAN)
    );
    println!("extract: wrote library.json, assignment.pas, model.pnm, extract_log.csv to {}", out.display());
    Ok(())
}

fn parse_keep_ratios(text: &str, layers: usize) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(',').collect();
    let values: Vec<f64> = parts
        .iter()
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Infeasible(format!("bad keep ratio {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    match values.len() {
        1 => Ok(vec![values[0]; layers]),
        n if n == layers => Ok(values),
        n => Err(Error::Infeasible(format!(
            "expected 1 or {layers} keep ratios, got {n}"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_prune(
    common: &Common,
    data_args: &DataArgs,
    model: &Path,
    assignment_path: &Path,
    keep_ratio: Option<String>,
    rounds: Option<usize>,
    finetune_epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    out: &Path,
) -> Result<()> {
    let rc = resolve_common(common)?;
    let spec = resolve_data(data_args, &rc.file)?;
    let keep_text = rc.file.resolve(keep_ratio, "keep_ratio", "1.0".to_string())?;
    let rounds = rc.file.resolve(rounds, "rounds", 3)?.max(1);
    let epochs_per_round = rc.file.resolve(finetune_epochs, "finetune_epochs", 2)?;
    let cfg = TrainConfig {
        lr: rc.file.resolve(lr, "lr", 0.02)?,
        z_lr: 0.0,
        batch_size: rc.file.resolve(batch_size, "batch_size", 32)?,
    };

    let mut net = read_pnm(model)?;
    let pas = read_pas(assignment_path)?;
    let assignment = pas.assignment();
    let library = pas.library.clone();
    let ratios = parse_keep_ratios(&keep_text, net.conv_count())?;
    let (train, test) = spec.load(rc.seed)?;

    // hard pattern masks first
    hard_masks(&library, &assignment, None)?.apply(&mut net)?;

    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed.wrapping_add(3));
    let mut connectivity = ConnectivityMask::dense(&net);
    for round in 0..rounds {
        connectivity = connectivity_prune(&net, &ratios)?;
        let masks = hard_masks(&library, &assignment, Some(&connectivity))?;
        masks.apply(&mut net)?;
        for _ in 0..epochs_per_round {
            let stats = train_epoch(&mut net, None, &train, &cfg, None, Some(&masks), &mut rng)?;
            println!(
                "prune round {round}: loss {:.4} train-acc {:.3}",
                stats.task_loss, stats.accuracy
            );
        }
    }

    let compression = overall_compression(&assignment, &connectivity)?;
    let test_acc = accuracy(&net, &test)?;
    println!(
        "prune: kept {}/{} kernels, overall compression {:.3}x, test accuracy {:.3}",
        connectivity.kept_kernels(),
        connectivity.total_kernels(),
        compression,
        test_acc
    );

    ensure_dir(out)?;
    write_pnm(&net, &out.join("model.pnm"))?;
    let updated = PasFile::new(library, &assignment, Some(&connectivity))?;
    write_pas(&updated, &out.join("assignment.pas"))?;

    let mut cfg_out = ResolvedConfig::new("prune");
    cfg_out.set("seed", rc.seed);
    record_data(&mut cfg_out, &spec);
    cfg_out.set("keep_ratio", &keep_text);
    cfg_out.set("rounds", rounds);
    cfg_out.set("finetune_epochs", epochs_per_round);
    cfg_out.set("lr", cfg.lr);
    cfg_out.set("batch_size", cfg.batch_size);
    cfg_out.set("compression", format!("{compression:.4}"));
    cfg_out.set("test_accuracy", format!("{test_acc:.4}"));
    cfg_out.hash_input("model", model)?;
    cfg_out.hash_input("assignment", assignment_path)?;
    cfg_out.write_next_to(out, true)?;
    Ok(())
}

/// Rebuilds a connectivity mask (kept flags from the .pas, scores from the
/// model) so the packer can check and group kernels.
fn connectivity_from_pas(net: &Network, pas: &PasFile) -> Result<ConnectivityMask> {
    let convs = net.conv_layers();
    if convs.len() != pas.layers.len() {
        return Err(Error::ShapeMismatch {
            context: ".pas layers vs model conv layers",
            left: vec![pas.layers.len()],
            right: vec![convs.len()],
        });
    }
    let per_layer = convs
        .iter()
        .zip(&pas.layers)
        .enumerate()
        .map(|(i, (conv, pl))| {
            if conv.filters() != pl.filters || conv.channels() != pl.channels {
                return Err(Error::ShapeMismatch {
                    context: ".pas layer geometry vs model",
                    left: vec![pl.filters, pl.channels],
                    right: vec![conv.filters(), conv.channels()],
                });
            }
            let _ = i;
            let mut gamma = Vec::with_capacity(pl.kept.len());
            for f in 0..conv.filters() {
                for c in 0..conv.channels() {
                    gamma.push(connectivity_score(conv, f, c)?);
                }
            }
            Ok(LayerMask {
                filters: pl.filters,
                channels: pl.channels,
                kept: pl.kept.clone(),
                gamma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConnectivityMask { per_layer })
}

fn cmd_pack(common: &Common, model: &Path, assignment_path: &Path, out: &Path) -> Result<()> {
    let rc = resolve_common(common)?;
    let net = read_pnm(model)?;
    let pas = read_pas(assignment_path)?;
    let connectivity = connectivity_from_pas(&net, &pas)?;
    let packed = pack(&net, &pas.library, &pas.assignment(), &connectivity)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_psp(&packed, out)?;

    let mut cfg_out = ResolvedConfig::new("pack");
    cfg_out.set("seed", rc.seed);
    cfg_out.set("library_id", format!("{:08x}", packed.library_id()));
    cfg_out.set("kept_kernels", packed.kept_kernels());
    cfg_out.hash_input("model", model)?;
    cfg_out.hash_input("assignment", assignment_path)?;
    cfg_out.write_next_to(out, false)?;

    let size = std::fs::metadata(out).map(|m| m.len()).unwrap_or(0);
    println!(
        "pack: {} kernels -> {} ({} bytes, 4 weights each)",
        packed.kept_kernels(),
        out.display(),
        size
    );
    Ok(())
}

fn cmd_infer(
    common: &Common,
    data_args: &DataArgs,
    packed_path: &Path,
    count: Option<usize>,
) -> Result<()> {
    let rc = resolve_common(common)?;
    let spec = resolve_data(data_args, &rc.file)?;
    let count = rc.file.resolve(count, "count", 16)?;
    let packed = read_psp(packed_path)?;
    let (_, test) = spec.load(rc.seed)?;

    let take = count.min(test.len());
    let idxs: Vec<usize> = (0..take).collect();
    let (inputs, labels) = test.batch(&idxs);
    let batch = F32Batch::from_f64(inputs.shape(), inputs.data())?;
    let logits = execute_sparse(&packed, &batch, rc.threads)?;
    let classes = packed.classifier_dims.0;

    println!("index,pred,label");
    let mut correct = 0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap_or(0);
        if pred == label {
            correct += 1;
        }
        println!("{i},{pred},{label}");
    }
    println!(
        "accuracy {:.3} over {} samples, checksum {:.6}",
        correct as f64 / take as f64,
        take,
        psparse_core::engine::checksum(&logits)
    );
    Ok(())
}

fn cmd_verify(
    common: &Common,
    packed_path: &Path,
    model: Option<PathBuf>,
    batches: Option<usize>,
    image_size: Option<usize>,
) -> Result<()> {
    let rc = resolve_common(common)?;
    let batches = rc.file.resolve(batches, "batches", 8)?;
    let packed = read_psp(packed_path)?;
    let restored = unpack(&packed)?;

    if let Some(model_path) = &model {
        let reference = read_pnm(model_path)?;
        check_f32_equal(&reference, &restored)?;
    }

    let dense = DenseModel::from_network(&restored)?;
    let channels = packed
        .layers
        .first()
        .map(|l| l.channels)
        .ok_or_else(|| Error::Infeasible("packed model has no conv layers".into()))?;
    let side = rc.file.resolve(image_size, "image_size", 16)?;

    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed.wrapping_add(4));
    let mut worst = 0.0f64;
    let mut worst_at = (usize::MAX, 0usize, 0usize);
    for _ in 0..batches {
        let data: Vec<f32> = (0..2 * channels * side * side)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        let input = F32Batch::new(2, channels, side, side, data)?;
        let report = verify_equivalence(&packed, &dense, &input, rc.threads)?;
        if report.max_rel_deviation > worst {
            worst = report.max_rel_deviation;
            worst_at = report.worst;
        }
    }

    if worst > rc.tol {
        let loc = if worst_at.0 == usize::MAX {
            format!("logit {}", worst_at.2)
        } else {
            format!(
                "layer {}, filter {}, pixel {}",
                worst_at.0, worst_at.1, worst_at.2
            )
        };
        println!("verify: FAIL max relative deviation {worst:.3e} > tol {:.3e} at {loc}", rc.tol);
        return Err(Error::Verification(format!(
            "sparse-vs-dense deviation {worst:.3e} exceeds tolerance {:.3e} at {loc}",
            rc.tol
        )));
    }
    println!(
        "verify: PASS max relative deviation {worst:.3e} <= tol {:.3e} over {batches} batches",
        rc.tol
    );
    Ok(())
}

/// f32-level equality of two dense networks; names the first mismatch.
fn check_f32_equal(reference: &Network, restored: &Network) -> Result<()> {
    let ref_convs = reference.conv_layers();
    let got_convs = restored.conv_layers();
    if ref_convs.len() != got_convs.len() {
        return Err(Error::Verification(format!(
            "layer count mismatch: model has {}, packed holds {}",
            ref_convs.len(),
            got_convs.len()
        )));
    }
    for (li, (a, b)) in ref_convs.iter().zip(&got_convs).enumerate() {
        if a.weights.shape() != b.weights.shape() {
            return Err(Error::Verification(format!(
                "layer {li}: shape {:?} vs {:?}",
                a.weights.shape(),
                b.weights.shape()
            )));
        }
        for (n, (x, y)) in a.weights.data().iter().zip(b.weights.data()).enumerate() {
            if *x as f32 != *y as f32 {
                let channels = a.channels();
                let f = n / (channels * 9);
                let c = (n / 9) % channels;
                return Err(Error::Verification(format!(
                    "layer {li}, filter {f}, channel {c}: weight {} vs packed {}",
                    x, y
                )));
            }
        }
    }
    for (x, y) in reference
        .classifier
        .weights
        .data()
        .iter()
        .zip(restored.classifier.weights.data())
    {
        if *x as f32 != *y as f32 {
            return Err(Error::Verification("classifier weights differ".into()));
        }
    }
    Ok(())
}

fn cmd_bench(
    common: &Common,
    packed_path: &Path,
    iters: Option<usize>,
    thread_list: Option<String>,
    image_size: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let rc = resolve_common(common)?;
    let iters = rc.file.resolve(iters, "iters", 30)?;
    let side = rc.file.resolve(image_size, "image_size", 32)?;
    let threads_text = rc
        .file
        .resolve(thread_list, "thread_list", format!("{}", rc.threads))?;
    let thread_counts: Vec<usize> = threads_text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Infeasible(format!("bad thread count {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;

    let packed = read_psp(packed_path)?;
    let dense = DenseModel::from_network(&unpack(&packed)?)?;
    let channels = packed.layers[0].channels;
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed.wrapping_add(5));
    let data: Vec<f32> = (0..channels * side * side)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let input = F32Batch::new(1, channels, side, side, data)?;

    let config = format!("{}ch {}x{}", channels, side, side);
    let report = bench(&packed, &dense, &input, iters, &thread_counts, &config)?;
    print!("{}", report.to_table());
    if let Some(csv_path) = &out {
        if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        write_text(csv_path, &report.to_csv())?;
        let mut cfg_out = ResolvedConfig::new("bench");
        cfg_out.set("seed", rc.seed);
        cfg_out.set("iters", iters);
        cfg_out.set("image_size", side);
        cfg_out.set("thread_list", &threads_text);
        cfg_out.hash_input("packed", packed_path)?;
        cfg_out.write_next_to(csv_path, false)?;
        println!("bench: wrote {}", csv_path.display());
    }
    Ok(())
}
