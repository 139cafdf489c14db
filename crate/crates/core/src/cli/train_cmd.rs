use super::{ensure_out_dir, resolve, write_resolved_config, write_text, FileConfig};
use clap::Args;
use mnkit::error::{Error, Result};
use mnkit::icnn::{save_model, train, AlphaLossMode, IcnnModel, Layout, TrainConfig};
use mnkit::metrics::evaluate_closure;
use mnkit::sampler::read_dataset;
use mnkit::velocity::{MomentBasis, QuadratureRule};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset CSV produced by the sample command.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Convex block layout, WIDTHxDEPTH (e.g. 10x7).
    #[arg(long)]
    layout: Option<Layout>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Validation fraction in [0,1).
    #[arg(long)]
    val_split: Option<f64>,
    /// Compare full or reduced multipliers in the loss: full | reduced.
    #[arg(long)]
    alpha_loss: Option<AlphaLossMode>,
    /// Levenberg-Marquardt polish steps after the Adam epochs.
    #[arg(long)]
    polish: Option<usize>,
    /// Quadrature nodes (1D) or nodes per mu direction (2D).
    #[arg(long)]
    nq: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: TrainArgs, file_cfg: &FileConfig) -> Result<()> {
    let dataset = match (args.dataset, file_cfg.get("dataset")) {
        (Some(d), _) => d,
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => return Err(Error::Config("train needs --dataset".into())),
    };
    let layout = resolve(args.layout, file_cfg, "layout", Layout::new(10, 7)?)?;
    let epochs = resolve(args.epochs, file_cfg, "epochs", 2000)?;
    let batch = resolve(args.batch, file_cfg, "batch", 128)?;
    let lr = resolve(args.lr, file_cfg, "lr", 1e-3)?;
    let val_split = resolve(args.val_split, file_cfg, "val-split", 0.1)?;
    let alpha_loss = resolve(args.alpha_loss, file_cfg, "alpha-loss", AlphaLossMode::Full)?;
    let polish = resolve(args.polish, file_cfg, "polish", 0)?;
    let seed = resolve(args.seed, file_cfg, "seed", 0)?;
    let out = resolve(args.out, file_cfg, "out", PathBuf::from("out-train"))?;

    let (meta, samples) = read_dataset(&dataset)?;
    let nq = resolve(args.nq, file_cfg, "nq", super::sample_cmd::default_nq(meta.dimension))?;
    let rule = match meta.dimension {
        mnkit::moments::Dimension::One => QuadratureRule::gauss_legendre(nq)?,
        mnkit::moments::Dimension::Two => QuadratureRule::projected_sphere(nq, 2 * nq)?,
    };
    let basis = MomentBasis::new(meta.order, &rule)?;

    let train_cfg = TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        validation_split: val_split,
        seed,
        alpha_loss,
        polish_steps: polish,
        ..Default::default()
    };
    let mut model = IcnnModel::init(basis.basis_size() - 1, layout, seed)?;
    model.meta.dataset_hash = Some(file_hash(&dataset)?);
    let (model, history) = train(model, &samples, &train_cfg, &basis, &rule)?;

    ensure_out_dir(&out)?;
    let model_path = out.join("model.icnn");
    save_model(&model, &model_path)?;

    let mut history_csv = String::from(
        "epoch,lr,train_h,train_alpha,train_u,train_total,val_h,val_alpha,val_u,val_total\n",
    );
    for r in &history.records {
        let val = r
            .val
            .map(|v| format!("{},{},{},{}", v.h, v.alpha, v.u, v.total))
            .unwrap_or_else(|| ",,,".into());
        history_csv.push_str(&format!(
            "{},{},{},{},{},{},{val}\n",
            r.epoch, r.learning_rate, r.train.h, r.train.alpha, r.train.u, r.train.total
        ));
    }
    write_text(&out.join("history.csv"), &history_csv)?;

    write_resolved_config(
        &out,
        &[
            ("dataset", dataset.display().to_string()),
            ("layout", layout.to_string()),
            ("epochs", epochs.to_string()),
            ("batch", batch.to_string()),
            ("lr", lr.to_string()),
            ("val-split", val_split.to_string()),
            ("alpha-loss", format!("{alpha_loss:?}").to_lowercase()),
            ("polish", polish.to_string()),
            ("nq", nq.to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    )?;

    println!("trained {layout} model on {} samples", samples.len());
    if history.diverged {
        println!("warning: training diverged; best checkpoint restored");
    }
    // metrics on the held-out split when present, else on the training data
    let eval_set: Vec<_> = if history.val_indices.is_empty() {
        samples.clone()
    } else {
        history.val_indices.iter().map(|&i| samples[i].clone()).collect()
    };
    let metrics = evaluate_closure(&model, &eval_set, &basis, &rule)?;
    println!("validation metrics: MSE(h) MSE(alpha) MSE(u) MAE(h) MAE(alpha) MAE(u)");
    println!("  {}", metrics.table_row());
    println!("model written to {}", model_path.display());
    Ok(())
}

fn file_hash(path: &std::path::Path) -> Result<String> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}
