//! Sweeps over architecture pairs, resumable through the experiment
//! directory.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::{info, warn};

use super::images::{generate_images, render_pairs, write_pairs};
use super::matrix::{
    matrix_key, matrix_to_csv, triangle_stat_skipping_holes, Cell, MatrixRegime, SimilarityMatrix,
    TriangleStat,
};
use super::mse::{mse_statistics, MseScope, MseStudy, StitchPair, MSE_COLUMNS};
use super::store::{
    load_stitched, new_manifest, read_entry, rebuild_stitched, save_stitch, write_csv,
    EntryContext, EntryManifest, ExperimentDir, NetRef,
};
use crate::checkpoint;
use crate::config::{BudgetProfile, RunConfig};
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stitching::{assemble, build_stitch, plan_stitch, StitchedNetwork};
use crate::training::{
    mix_seed, train_stitch_similarity, train_stitch_task, Hyperparams, TrainingRegime,
};
use crate::zoo::{
    build_model, evaluate, evaluate_with, load_checkpoint, save_checkpoint, train_network,
    ArchSpec, ModelHandle, Provenance,
};

/// Data and persistence shared by the entries of a sweep.
pub struct SweepContext<'a> {
    pub train: &'a DatasetSplit,
    pub test: &'a DatasetSplit,
    /// Where entries are checkpointed; `None` keeps everything in memory.
    pub store: Option<&'a ExperimentDir>,
    pub profile: BudgetProfile,
    pub threads: usize,
}

/// Hyperparameters for one stitch-training regime under a run config.
pub fn stitch_hyperparams(cfg: &RunConfig, training: TrainingRegime) -> Hyperparams {
    let s = cfg.settings();
    let (base, epochs) = match training {
        TrainingRegime::Similarity => (Hyperparams::similarity_stitch(), s.similarity_epochs),
        _ => (Hyperparams::vanilla_stitch(), s.vanilla_epochs),
    };
    base.with_epochs(epochs)
        .with_batch_size(s.batch_size)
        .with_seed(mix_seed(&[cfg.seed, training as u64]))
}

fn entry_init_seed(hp: &Hyperparams, i: usize, j: usize) -> u64 {
    mix_seed(&[hp.seed, i as u64, j as u64])
}

struct EntryOutcome<S> {
    cell: Cell,
    net: Option<StitchedNetwork<S>>,
}

#[allow(clippy::too_many_arguments)]
fn run_entry<S: Scalar>(
    sender: &Arc<ModelHandle<S>>,
    i: usize,
    receiver: &Arc<ModelHandle<S>>,
    j: usize,
    key: &str,
    ectx: &EntryContext,
    hp: &Hyperparams,
    ctx: &SweepContext<'_>,
) -> Result<EntryOutcome<S>> {
    let dir = ctx.store.map(|s| s.entry(key, i, j));
    if let Some(dir) = &dir {
        if let Some(m) = read_entry(dir)? {
            if m.matches(&ectx.sender, &ectx.receiver) && m.training == ectx.training {
                let net = if m.params.is_empty() {
                    None
                } else {
                    Some(rebuild_stitched(dir, &m, sender.clone(), receiver.clone())?)
                };
                return Ok(EntryOutcome {
                    cell: Cell {
                        accuracy: m.accuracy,
                        note: m.error,
                        manifest: Some(dir.clone()),
                    },
                    net,
                });
            }
            warn!(
                "{} was produced with different networks; recomputing",
                dir.display()
            );
        }
    }
    let spec = plan_stitch(
        sender.arch().point_shape(i)?,
        receiver.arch().point_shape(j)?,
    )?;
    let seed = entry_init_seed(hp, i, j);
    let net = assemble(
        sender.clone(),
        i,
        receiver.clone(),
        j,
        build_stitch(spec, seed),
    )?;
    let mut manifest: EntryManifest = new_manifest(&net, ectx, seed);
    let trained = match ectx.training {
        TrainingRegime::Similarity => train_stitch_similarity(net, ctx.train, ctx.test, hp),
        _ => train_stitch_task(net, ctx.train, ctx.test, hp),
    };
    let (cell, net) = match trained {
        Ok((net, report)) => {
            manifest.accuracy = report.final_accuracy();
            manifest.report = Some(report);
            (
                Cell {
                    accuracy: manifest.accuracy,
                    note: None,
                    manifest: dir.clone(),
                },
                Some(net),
            )
        }
        Err(e @ Error::TrainingFailure { .. }) => {
            warn!("entry ({i},{j}) of {key} failed: {e}");
            manifest.error = Some(e.to_string());
            (
                Cell {
                    accuracy: None,
                    note: manifest.error.clone(),
                    manifest: dir.clone(),
                },
                None,
            )
        }
        Err(e) => return Err(e),
    };
    if let Some(dir) = &dir {
        save_stitch(dir, net.as_ref().map(|n| n.stitch()), manifest)?;
    }
    Ok(EntryOutcome { cell, net })
}

/// Stitches every `(i, j)` between the two networks and records final
/// test accuracies. Completed entries found in the store are reused.
pub fn similarity_matrix<S: Scalar>(
    sender: &Arc<ModelHandle<S>>,
    receiver: &Arc<ModelHandle<S>>,
    regime: MatrixRegime,
    training: TrainingRegime,
    hp: &Hyperparams,
    ctx: &SweepContext<'_>,
) -> Result<SimilarityMatrix> {
    Ok(matrix_with_stitches(sender, receiver, regime, training, hp, ctx)?.0)
}

/// Regime tag used in matrix keys.
pub fn regime_tag(regime: MatrixRegime, training: TrainingRegime) -> String {
    match training {
        TrainingRegime::Similarity => format!("{regime}_similarity"),
        _ => regime.to_string(),
    }
}

type StitchGrid<S> = Vec<Vec<Option<StitchedNetwork<S>>>>;

fn matrix_with_stitches<S: Scalar>(
    sender: &Arc<ModelHandle<S>>,
    receiver: &Arc<ModelHandle<S>>,
    regime: MatrixRegime,
    training: TrainingRegime,
    hp: &Hyperparams,
    ctx: &SweepContext<'_>,
) -> Result<(SimilarityMatrix, StitchGrid<S>)> {
    hp.validate()?;
    let mut matrix = SimilarityMatrix::new(
        sender.label(),
        sender.arch(),
        receiver.label(),
        receiver.arch(),
        regime,
    );
    let key = matrix_key(
        &sender.label(),
        &receiver.label(),
        &regime_tag(regime, training),
    );
    let ectx = EntryContext {
        sender: NetRef::of(sender),
        receiver: NetRef::of(receiver),
        training,
        matrix_regime: Some(regime),
        profile: ctx.profile,
    };
    let cells: Vec<(usize, usize)> = (0..matrix.rows())
        .flat_map(|i| (0..matrix.cols()).map(move |j| (i, j)))
        .collect();
    let results: Mutex<BTreeMap<(usize, usize), Result<EntryOutcome<S>>>> =
        Mutex::new(BTreeMap::new());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(i, j)) = cells.get(k) else { break };
        let out = run_entry(sender, i, receiver, j, &key, &ectx, hp, ctx);
        results
            .lock()
            .expect("no poisoned workers")
            .insert((i, j), out);
    };
    let threads = ctx.threads.clamp(1, cells.len());
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(worker);
            }
        });
    }
    let mut stitches: StitchGrid<S> = (0..matrix.rows())
        .map(|_| (0..matrix.cols()).map(|_| None).collect())
        .collect();
    for ((i, j), out) in results.into_inner().expect("no poisoned workers") {
        let out = out?;
        matrix.set(i, j, out.cell)?;
        stitches[i][j] = out.net;
    }
    info!("matrix {key}: {} holes", matrix.holes().len());
    Ok((matrix, stitches))
}

/// Models kept in memory for one command, keyed by label.
struct ModelCache<S> {
    models: BTreeMap<String, Arc<ModelHandle<S>>>,
}

impl<S: Scalar> ModelCache<S> {
    fn new() -> Self {
        Self {
            models: BTreeMap::new(),
        }
    }

    fn trained(
        &mut self,
        exp: &ExperimentDir,
        arch: ArchSpec,
        seed: u64,
    ) -> Result<Arc<ModelHandle<S>>> {
        let label = build_label(arch, seed);
        if let Some(m) = self.models.get(&label) {
            return Ok(m.clone());
        }
        let m = Arc::new(load_checkpoint::<S>(&exp.model(&label))?);
        self.models.insert(label, m.clone());
        Ok(m)
    }

    fn control(&mut self, arch: ArchSpec, seed: u64) -> Arc<ModelHandle<S>> {
        let m = build_model::<S>(arch, seed);
        self.models
            .entry(m.label())
            .or_insert_with(|| Arc::new(m))
            .clone()
    }
}

fn build_label(arch: ArchSpec, seed: u64) -> String {
    format!("{arch}_s{seed}")
}

/// Labels of the trained checkpoints a command needs but cannot find.
fn missing_checkpoints(exp: &ExperimentDir, needed: &[(ArchSpec, u64)]) -> Vec<String> {
    let mut missing: Vec<String> = needed
        .iter()
        .map(|&(a, s)| exp.model(&build_label(a, s)))
        .filter(|p| !p.join(checkpoint::MANIFEST_FILE).exists())
        .map(|p| p.display().to_string())
        .collect();
    missing.sort();
    missing.dedup();
    missing
}

fn require_checkpoints(exp: &ExperimentDir, needed: &[(ArchSpec, u64)]) -> Result<()> {
    let missing = missing_checkpoints(exp, needed);
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingCheckpoints(missing))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZooRow {
    pub label: String,
    pub provenance: Provenance,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |a| format!("{a:.4}"))
}

fn write_zoo_table(path: &std::path::Path, rows: &[ZooRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                format!("{:?}", r.provenance).to_lowercase(),
                fmt_opt(r.train_accuracy),
                format!("{:.4}", r.test_accuracy),
            ]
        })
        .collect();
    write_csv(
        path,
        &["model", "provenance", "train_accuracy", "test_accuracy"],
        &body,
    )
}

/// Trains the two instances of every configured architecture. Existing
/// trained checkpoints are kept.
pub fn zoo_train<S: Scalar>(cfg: &RunConfig) -> Result<Vec<ZooRow>> {
    cfg.validate()?;
    let (train, test) = cfg.load_data()?;
    let exp = ExperimentDir::new(&cfg.out);
    exp.write_config(cfg)?;
    let s = cfg.settings();
    let mut rows = Vec::new();
    for &arch in &cfg.archs {
        for seed in cfg.instance_seeds() {
            let path = exp.model(&build_label(arch, seed));
            let model = match path.join(checkpoint::MANIFEST_FILE).exists() {
                true => Some(load_checkpoint::<S>(&path)?)
                    .filter(|m| m.provenance == Provenance::Trained),
                false => None,
            };
            let model = match model {
                Some(m) => {
                    info!("{} already trained", m.label());
                    m
                }
                None => {
                    let hp = Hyperparams::zoo(s.zoo_epochs)
                        .with_batch_size(s.batch_size)
                        .with_seed(mix_seed(&[seed, 0x200]));
                    let m = train_network(build_model::<S>(arch, seed), &train, &test, &hp)?;
                    save_checkpoint(&m, &path)?;
                    m
                }
            };
            rows.push(ZooRow {
                label: model.label(),
                provenance: model.provenance,
                train_accuracy: model.train_accuracy,
                test_accuracy: model
                    .test_accuracy
                    .expect("trained models record test accuracy"),
            });
        }
    }
    write_zoo_table(&exp.zoo_dir().join("summary.csv"), &rows)?;
    Ok(rows)
}

/// Test accuracy of the trained instances, or of random controls.
pub fn zoo_eval<S: Scalar>(cfg: &RunConfig, controls: bool) -> Result<Vec<ZooRow>> {
    cfg.validate()?;
    let exp = ExperimentDir::new(&cfg.out);
    let seeds = if controls {
        cfg.control_seeds()
    } else {
        cfg.instance_seeds()
    };
    if !controls {
        let needed: Vec<_> = cfg
            .archs
            .iter()
            .flat_map(|&a| seeds.map(|s| (a, s)))
            .collect();
        require_checkpoints(&exp, &needed)?;
    }
    let (_, test) = cfg.load_data()?;
    let mut rows = Vec::new();
    for &arch in &cfg.archs {
        for seed in seeds {
            let model = if controls {
                build_model::<S>(arch, seed)
            } else {
                load_checkpoint::<S>(&exp.model(&build_label(arch, seed)))?
            };
            rows.push(ZooRow {
                label: model.label(),
                provenance: model.provenance,
                train_accuracy: model.train_accuracy,
                test_accuracy: evaluate(&model, &test)?,
            });
        }
    }
    let name = if controls {
        "eval_controls.csv"
    } else {
        "eval_trained.csv"
    };
    write_zoo_table(&exp.zoo_dir().join(name), &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSummary {
    pub key: String,
    pub path: PathBuf,
    pub holes: Vec<(usize, usize)>,
    pub triangle: Option<TriangleStat>,
}

/// Checkpoints needed by the configured regimes: `(arch, seed)`.
fn sweep_needs(cfg: &RunConfig) -> Vec<(ArchSpec, u64)> {
    let [s0, s1] = cfg.instance_seeds();
    let mut needed = Vec::new();
    for r in &cfg.regimes {
        for &a in &cfg.archs {
            if !r.sender_is_random() {
                needed.push((a, s0));
            }
            if !r.receiver_is_random() {
                needed.push((a, s1));
            }
        }
    }
    needed
}

fn pair_models<S: Scalar>(
    cache: &mut ModelCache<S>,
    exp: &ExperimentDir,
    cfg: &RunConfig,
    regime: MatrixRegime,
    a: ArchSpec,
    b: ArchSpec,
) -> Result<(Arc<ModelHandle<S>>, Arc<ModelHandle<S>>)> {
    let [s0, s1] = cfg.instance_seeds();
    let [c0, c1] = cfg.control_seeds();
    let sender = if regime.sender_is_random() {
        cache.control(a, c0)
    } else {
        cache.trained(exp, a, s0)?
    };
    let receiver = if regime.receiver_is_random() {
        cache.control(b, c1)
    } else {
        cache.trained(exp, b, s1)?
    };
    Ok((sender, receiver))
}

/// One vanilla-stitch matrix per ordered architecture pair and regime.
pub fn run_full_sweep<S: Scalar>(cfg: &RunConfig) -> Result<Vec<MatrixSummary>> {
    cfg.validate()?;
    let exp = ExperimentDir::new(&cfg.out);
    require_checkpoints(&exp, &sweep_needs(cfg))?;
    let (train, test) = cfg.load_data()?;
    exp.write_config(cfg)?;
    let ctx = SweepContext {
        train: &train,
        test: &test,
        store: Some(&exp),
        profile: cfg.profile,
        threads: cfg.threads,
    };
    let hp = stitch_hyperparams(cfg, TrainingRegime::Task);
    let mut cache = ModelCache::<S>::new();
    let mut out = Vec::new();
    for &regime in &cfg.regimes {
        for &a in &cfg.archs {
            for &b in &cfg.archs {
                let (sender, receiver) = pair_models(&mut cache, &exp, cfg, regime, a, b)?;
                let m =
                    similarity_matrix(&sender, &receiver, regime, TrainingRegime::Task, &hp, &ctx)?;
                let path = exp.matrix_csv(&m.key());
                checkpoint::write_atomic(&path, matrix_to_csv(&m.grid())?.as_bytes())?;
                out.push(MatrixSummary {
                    key: m.key(),
                    path,
                    holes: m.holes(),
                    triangle: triangle_stat_skipping_holes(&m.grid()).ok(),
                });
            }
        }
    }
    let rows: Vec<Vec<String>> = out
        .iter()
        .map(|m| {
            let t = m.triangle;
            vec![
                m.key.clone(),
                fmt_opt(t.map(|t| t.lower_mean)),
                fmt_opt(t.map(|t| t.strict_upper_mean)),
                t.map_or_else(|| "NA".into(), |t| format!("{:.4}", t.gap)),
                m.holes.len().to_string(),
            ]
        })
        .collect();
    write_csv(
        &exp.matrices_dir().join("summary.csv"),
        &["matrix", "lower_mean", "strict_upper_mean", "gap", "holes"],
        &rows,
    )?;
    Ok(out)
}

/// Per layer pair comparison of the two stitch-training regimes.
#[derive(Clone, Debug, PartialEq)]
pub struct PairComparison {
    pub sender: String,
    pub receiver: String,
    pub i: usize,
    pub j: usize,
    pub lower: bool,
    pub ev: f64,
    pub es: f64,
    pub sv: f64,
    pub vanilla_accuracy: f64,
    pub similarity_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct MseReport {
    pub study: MseStudy,
    pub pairs: Vec<PairComparison>,
}

/// Trains similarity stitches alongside the vanilla ones for every trained
/// pair, then writes `stats/mse_<scope>.csv` and `stats/pairs.csv`.
pub fn run_mse_study<S: Scalar>(cfg: &RunConfig, scopes: &[MseScope]) -> Result<MseReport> {
    cfg.validate()?;
    let exp = ExperimentDir::new(&cfg.out);
    let regime = MatrixRegime::TrainedTrained;
    let needed: Vec<_> = cfg
        .archs
        .iter()
        .flat_map(|&a| cfg.instance_seeds().map(|s| (a, s)))
        .collect();
    require_checkpoints(&exp, &needed)?;
    let (train, test) = cfg.load_data()?;
    exp.write_config(cfg)?;
    let ctx = SweepContext {
        train: &train,
        test: &test,
        store: Some(&exp),
        profile: cfg.profile,
        threads: cfg.threads,
    };
    let hp_v = stitch_hyperparams(cfg, TrainingRegime::Task);
    let hp_s = stitch_hyperparams(cfg, TrainingRegime::Similarity);
    let mut cache = ModelCache::<S>::new();
    let mut pairs = Vec::new();
    let mut meta = Vec::new();
    for &a in &cfg.archs {
        for &b in &cfg.archs {
            let (sender, receiver) = pair_models(&mut cache, &exp, cfg, regime, a, b)?;
            let (vm, vs) = matrix_with_stitches(
                &sender,
                &receiver,
                regime,
                TrainingRegime::Task,
                &hp_v,
                &ctx,
            )?;
            let (sm, ss) = matrix_with_stitches(
                &sender,
                &receiver,
                regime,
                TrainingRegime::Similarity,
                &hp_s,
                &ctx,
            )?;
            checkpoint::write_atomic(
                &exp.matrix_csv(&vm.key()),
                matrix_to_csv(&vm.grid())?.as_bytes(),
            )?;
            let skey = matrix_key(
                &sm.sender,
                &sm.receiver,
                &regime_tag(regime, TrainingRegime::Similarity),
            );
            checkpoint::write_atomic(
                &exp.matrix_csv(&skey),
                matrix_to_csv(&sm.grid())?.as_bytes(),
            )?;
            for (i, (vrow, srow)) in vs.into_iter().zip(ss).enumerate() {
                for (j, (v, s)) in vrow.into_iter().zip(srow).enumerate() {
                    if let (Some(vanilla), Some(similarity)) = (v, s) {
                        meta.push((
                            sender.label(),
                            receiver.label(),
                            vm.cell(i, j).accuracy,
                            sm.cell(i, j).accuracy,
                            vm.rows() - 1,
                            vm.cols() - 1,
                        ));
                        pairs.push(StitchPair {
                            vanilla,
                            similarity,
                        });
                    }
                }
            }
        }
    }
    let study = mse_statistics(&pairs, &test)?;
    let comparisons: Vec<PairComparison> = study
        .per_pair
        .iter()
        .zip(&meta)
        .map(|(p, (s, r, va, sa, last_i, last_j))| PairComparison {
            sender: s.clone(),
            receiver: r.clone(),
            i: p.i,
            j: p.j,
            lower: super::matrix::in_lower_region(p.i, p.j, *last_i, *last_j),
            ev: p.ev,
            es: p.es,
            sv: p.sv,
            vanilla_accuracy: va.unwrap_or(f64::NAN),
            similarity_accuracy: sa.unwrap_or(f64::NAN),
        })
        .collect();
    for &scope in scopes {
        let table = study
            .table(scope)
            .ok_or_else(|| Error::Argument(format!("no layer pairs in the {scope} scope")))?;
        checkpoint::write_atomic(
            &exp.stats_dir().join(format!("mse_{scope}.csv")),
            table.to_csv().as_bytes(),
        )?;
    }
    let rows: Vec<Vec<String>> = comparisons
        .iter()
        .map(|c| {
            vec![
                c.sender.clone(),
                c.receiver.clone(),
                c.i.to_string(),
                c.j.to_string(),
                c.lower.to_string(),
                format!("{:.6e}", c.ev),
                format!("{:.6e}", c.es),
                format!("{:.6e}", c.sv),
                format!("{:.4}", c.vanilla_accuracy),
                format!("{:.4}", c.similarity_accuracy),
            ]
        })
        .collect();
    write_csv(
        &exp.stats_dir().join("pairs.csv"),
        &[
            "sender",
            "receiver",
            "i",
            "j",
            "lower",
            "mean_ev",
            "mean_es",
            "mean_sv",
            "vanilla_accuracy",
            "similarity_accuracy",
        ],
        &rows,
    )?;
    debug_assert_eq!(MSE_COLUMNS.len(), 12);
    Ok(MseReport {
        study,
        pairs: comparisons,
    })
}

/// Image-generation stitches for every stitch point of each configured
/// architecture's first trained instance.
pub fn run_image_generation<S: Scalar>(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let exp = ExperimentDir::new(&cfg.out);
    let seed = cfg.instance_seeds()[0];
    let needed: Vec<_> = cfg.archs.iter().map(|&a| (a, seed)).collect();
    require_checkpoints(&exp, &needed)?;
    let (train, test) = cfg.load_data()?;
    exp.write_config(cfg)?;
    let hp = stitch_hyperparams(cfg, TrainingRegime::Task).with_seed(mix_seed(&[cfg.seed, 0x1a6e]));
    let mut cache = ModelCache::<S>::new();
    let mut written = Vec::new();
    for &arch in &cfg.archs {
        let sender = cache.trained(&exp, arch, seed)?;
        let label = sender.label();
        let sref = NetRef::of(&sender);
        let ectx = EntryContext {
            sender: sref.clone(),
            receiver: sref,
            training: TrainingRegime::Task,
            matrix_regime: None,
            profile: cfg.profile,
        };
        for i in 0..sender.arch().num_stitch_points() {
            let dir = exp.image_entry(&label, i);
            let done = read_entry(&dir)?
                .is_some_and(|m| m.matches(&ectx.sender, &ectx.receiver) && !m.params.is_empty());
            let pairs = if done {
                let (net, _) = load_stitched(&dir, sender.clone(), sender.clone())?;
                render_pairs(&net, &test, cfg.images_per_point)?
            } else {
                let (pairs, net, report) =
                    generate_images(sender.clone(), i, &train, &test, &hp, cfg.images_per_point)?;
                let mut m = new_manifest(&net, &ectx, mix_seed(&[hp.seed, i as u64, 0x1a6e]));
                m.accuracy = report.final_accuracy();
                m.report = Some(report);
                save_stitch(&dir, Some(net.stitch()), m)?;
                pairs
            };
            written.extend(write_pairs(&exp.images_dir(), &label, i, &pairs)?);
        }
    }
    Ok(written)
}

/// Re-evaluates a completed entry from its manifest and checkpoint.
/// Returns `(recorded, recomputed)` accuracy.
pub fn reproduce_entry<S: Scalar>(
    dir: &std::path::Path,
    sender: Arc<ModelHandle<S>>,
    receiver: Arc<ModelHandle<S>>,
    test: &DatasetSplit,
) -> Result<(f64, f64)> {
    let (net, m) = load_stitched(dir, sender, receiver)?;
    let recorded = m
        .accuracy
        .ok_or_else(|| Error::Argument(format!("entry {} records no accuracy", dir.display())))?;
    Ok((recorded, evaluate_with(test, |x| net.forward(x))?))
}
