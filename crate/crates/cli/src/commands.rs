//! Subcommand implementations, kept apart from argument parsing so tests can
//! call them directly.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use anyhow::{bail, Context};
use bact_core::active_loop::weight_grid;
use bact_core::active_loop::{
    sweep, write_sweep, ActiveLearner, LoopConfig, RoundHistory, SweepGrid, SweepRow,
    ABLATION_CLIP_LENS,
};
use bact_core::annotation::{
    export_results, Annotator, HumanAnnotator, OracleAnnotator, SessionHub,
};
use bact_core::dataset::{generate_synthetic, save_dataset, Dataset, FeatureFormat};
use bact_core::metrics::{evaluate, MetricReport};
use bact_core::predictor::{FrameModel, ModelState};
use bact_core::uncertainty::AcquisitionFn;

use crate::config::ExperimentConfig;
use crate::server;

/// Runs the loop round by round, calling `on_round` after each one.
pub fn drive<A, F>(
    ds: &Dataset,
    cfg: &LoopConfig,
    annotator: &mut A,
    mut on_round: F,
) -> anyhow::Result<Vec<RoundHistory>>
where
    A: Annotator + ?Sized,
    F: FnMut(&[RoundHistory], &ModelState) -> anyhow::Result<()>,
{
    let mut history = Vec::new();
    if cfg.rounds == 0 {
        cfg.resolve(ds)?;
        return Ok(history);
    }
    let mut learner = ActiveLearner::new(ds, cfg.clone(), annotator)?;
    while learner.stopped().is_none() {
        let h = learner.run_round(annotator)?;
        log::info!(
            "round {}: labels {} -> {} of {}{}",
            h.round,
            h.labeled_before,
            h.labeled_after,
            h.budget,
            h.metrics
                .as_ref()
                .map(|m| format!(", acc {:.2} edit {:.2}", m.accuracy, m.edit))
                .unwrap_or_default()
        );
        history.push(h);
        let model = learner.model().expect("a model exists after a round");
        on_round(&history, model)?;
    }
    Ok(history)
}

/// `bact run`: simulated-annotator experiment exported to `out`.
pub fn run(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoints: bool,
) -> anyhow::Result<Vec<RoundHistory>> {
    let ds = cfg.data.load()?;
    let mut oracle = OracleAnnotator::new(cfg.oracle_noise, cfg.active.seed)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ckpt_dir = out.join("checkpoints");
    let history = drive(&ds, &cfg.active, &mut oracle, |h, model| {
        if checkpoints {
            std::fs::create_dir_all(&ckpt_dir)?;
            let round = h.last().map_or(0, |r| r.round);
            model.save(&ckpt_dir.join(format!("round_{round:03}.bin")))?;
        }
        Ok(())
    })?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    if history.is_empty() {
        log::warn!("zero rounds configured; no history written");
    } else {
        export_results(&history, out)?;
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    /// The `[sweep]` table of the config (cartesian product).
    Config,
    /// Weight triples summing to one.
    Weights,
    /// Clip lengths 0, 10, ..., 50.
    ClipLens,
    /// The five acquisition functions.
    Acquisitions,
    /// Weights, clip lengths and acquisitions one axis at a time.
    Ablations,
}

impl SweepAxis {
    fn grids(self, cfg: &ExperimentConfig) -> Vec<(&'static str, SweepGrid)> {
        let weights = SweepGrid {
            weights: weight_grid(),
            ..Default::default()
        };
        let lens = SweepGrid {
            clip_lens: ABLATION_CLIP_LENS.to_vec(),
            ..Default::default()
        };
        let acqs = SweepGrid {
            acquisitions: AcquisitionFn::ALL_DEFAULT.to_vec(),
            ..Default::default()
        };
        match self {
            SweepAxis::Config => vec![("config", cfg.sweep.clone())],
            SweepAxis::Weights => vec![("weights", weights)],
            SweepAxis::ClipLens => vec![("clip_lens", lens)],
            SweepAxis::Acquisitions => vec![("acquisitions", acqs)],
            SweepAxis::Ablations => vec![
                ("weights", weights),
                ("clip_lens", lens),
                ("acquisitions", acqs),
            ],
        }
    }
}

/// `bact sweep`: one experiment per grid point; each grid is written to
/// `out/<name>/sweep.{csv,json}`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    out: &Path,
) -> anyhow::Result<Vec<(String, Vec<SweepRow>)>> {
    let ds = cfg.data.load()?;
    let mut results = Vec::new();
    for (name, grid) in axis.grids(cfg) {
        let n = grid.points(&cfg.active).len();
        log::info!("sweep `{name}`: {n} configurations");
        let rows = sweep(&ds, &cfg.active, &grid, cfg.oracle_noise)?;
        let dir = if axis == SweepAxis::Config {
            out.to_path_buf()
        } else {
            out.join(name)
        };
        write_sweep(&rows, &dir)?;
        results.push((name.to_string(), rows));
    }
    Ok(results)
}

/// Runs the experiment on a worker thread with a [`HumanAnnotator`] and
/// publishes the history to `hub` after every round.
pub fn spawn_experiment(
    hub: Arc<SessionHub>,
    ds: Arc<Dataset>,
    cfg: ExperimentConfig,
    out: Option<PathBuf>,
) -> JoinHandle<anyhow::Result<Vec<RoundHistory>>> {
    hub.register_experiment(&cfg.name);
    std::thread::spawn(move || {
        let mut annotator = HumanAnnotator::new(hub.clone(), &cfg.name);
        let history = drive(&ds, &cfg.active, &mut annotator, |h, _| {
            hub.set_history(&cfg.name, h.to_vec());
            Ok(())
        })?;
        if let Some(out) = out {
            if !history.is_empty() {
                export_results(&history, &out)?;
                log::info!("results written to {}", out.display());
            }
        }
        Ok(history)
    })
}

/// `bact serve`: annotation service for one human-labeled experiment.
pub async fn serve(
    cfg: ExperimentConfig,
    addr: SocketAddr,
    out: Option<PathBuf>,
    exit_when_done: bool,
) -> anyhow::Result<()> {
    let ds = Arc::new(cfg.data.load()?);
    let hub = SessionHub::new(ds.class_names().to_vec());
    let name = cfg.name.clone();
    let worker = spawn_experiment(hub.clone(), ds, cfg, out);

    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!(
        "serving experiment `{name}` on http://{}",
        listener.local_addr()?
    );

    let (done_tx, done_rx) = tokio::sync::oneshot::channel();
    let waiter = tokio::task::spawn_blocking(move || {
        let res = worker.join();
        let _ = done_tx.send(());
        res
    });
    let shutdown = async move {
        if exit_when_done {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = done_rx => log::info!("experiment finished"),
            }
        } else {
            let _ = tokio::signal::ctrl_c().await;
        }
    };
    axum::serve(listener, server::router(hub.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    hub.shutdown();
    match waiter.await? {
        Ok(Ok(history)) => {
            log::info!("experiment `{name}` completed {} rounds", history.len());
            Ok(())
        }
        Ok(Err(e)) if !exit_when_done => {
            log::warn!("experiment `{name}` stopped: {e:#}");
            Ok(())
        }
        Ok(Err(e)) => Err(e),
        Err(_) => bail!("experiment thread panicked"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Train,
    Test,
}

/// `bact eval`: scores a saved checkpoint on one split.
pub fn eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    split: EvalSplit,
) -> anyhow::Result<MetricReport> {
    let ds = cfg.data.load()?;
    let model = ModelState::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let ids = match split {
        EvalSplit::Train => &ds.split().train,
        EvalSplit::Test => &ds.split().test,
    };
    let mut preds = BTreeMap::new();
    let mut gts = BTreeMap::new();
    for id in ids {
        let v = ds.video(id)?;
        let Some(gt) = v.labels() else {
            continue;
        };
        preds.insert(id.clone(), model.predict_probs(v)?.argmax());
        gts.insert(id.clone(), gt.to_vec());
    }
    if gts.is_empty() {
        bail!("no labeled videos in the {split:?} split");
    }
    Ok(evaluate(&preds, &gts, &cfg.active.eval)?)
}

/// `bact gen-data`: writes the configured synthetic benchmark to disk.
pub fn gen_data(
    cfg: &ExperimentConfig,
    out: &Path,
    format: FeatureFormat,
) -> anyhow::Result<Dataset> {
    if cfg.data.path.is_some() {
        bail!("gen-data needs a synthetic data section, not a dataset path");
    }
    let ds = generate_synthetic(&cfg.data.synthetic)?;
    save_dataset(&ds, out, format)?;
    Ok(ds)
}
