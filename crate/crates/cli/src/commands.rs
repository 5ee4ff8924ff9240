//! The five pipeline commands. Each returns a summary for the caller to
//! print; artifacts are written next to `--out`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use orgmol_core::assemble::{assemble, assemble_random, AssemblyMode};
use orgmol_core::bonds::{train_bond_scorer, BondConfig, BondScorerParams};
use orgmol_core::chem::{read_corpus, write_canonical_smiles, Ingested, MolGraph, ValenceTable};
use orgmol_core::metrics::{canonical_keys, parse_lines, structure_report, GenerationReport};
use orgmol_core::nets::{PhiParams, ThetaParams};
use orgmol_core::sde::{pc_sample, train_diffusion, DiffusionCheckpoint, DiscreteGraph};
use orgmol_core::vocab::{build_vocab, decompose, to_tensor, Decomposition, FragmentVocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::CheckpointFile;
use crate::config::{parse_pairs, RunConfig};
use crate::error::CliError;

pub const SEED_ENV: &str = "ORGMOL_SEED";
const DIFFUSION_KIND: &str = "diffusion";
const BONDS_KIND: &str = "bonds";

/// `<path><suffix>`, e.g. `model.ckpt` + `.loss.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Options shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker cap for per-molecule work; 0 means 1.
    pub threads: usize,
}

/// A run configuration plus the keys its file set explicitly.
struct Loaded {
    cfg: RunConfig,
    explicit: HashSet<String>,
}

impl Common {
    fn load(&self) -> Result<Loaded, CliError> {
        let (mut cfg, explicit) = match &self.config {
            Some(p) => {
                let text = read_text(p)?;
                let keys = parse_pairs(&text)?.into_iter().map(|(k, _)| k).collect();
                (RunConfig::parse(&text)?, keys)
            }
            None => (RunConfig::default(), HashSet::new()),
        };
        cfg.seed = self.resolve_seed(explicit.contains("seed").then_some(cfg.seed))?;
        Ok(Loaded { cfg, explicit })
    }

    /// Flag, then config file, then the environment, then 0.
    fn resolve_seed(&self, from_file: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = self.seed.or(from_file) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    fn workers(&self) -> usize {
        self.threads.max(1)
    }
}

fn load_corpus(path: &Path) -> Result<Ingested, CliError> {
    let text = read_text(path)?;
    let ingested = read_corpus(&text, &ValenceTable::default());
    if ingested.reject_count() > 0 {
        let detail: Vec<String> = ingested.rejects.iter().map(|(r, n)| format!("{r} {n}")).collect();
        log::warn!("{}: rejected {} lines ({})", path.display(), ingested.reject_count(), detail.join(", "));
    }
    if ingested.molecules.is_empty() {
        return Err(CliError::Input(format!("{}: no usable molecules", path.display())));
    }
    Ok(ingested)
}

fn decompose_all<'m>(mols: &'m [MolGraph], vocab: &FragmentVocab) -> (Vec<(&'m MolGraph, Decomposition)>, usize) {
    let mut out = Vec::with_capacity(mols.len());
    let mut failed = 0;
    for m in mols {
        match decompose(m, vocab) {
            Ok(d) => out.push((m, d)),
            Err(e) => {
                failed += 1;
                log::debug!("cannot decompose {}: {e}", write_canonical_smiles(m));
            }
        }
    }
    if failed > 0 {
        log::warn!("{failed} molecules use atom types outside the vocabulary and were skipped");
    }
    (out, failed)
}

/// Adopts the vocabulary's size unless the config file pinned another one.
fn fit_vocab_size(loaded: &mut Loaded, vocab: &FragmentVocab) -> Result<(), CliError> {
    if loaded.cfg.vocab_size != vocab.len() {
        if loaded.explicit.contains("vocab_size") {
            return Err(CliError::Config(format!(
                "vocab_size = {} but the vocabulary has {} entries",
                loaded.cfg.vocab_size,
                vocab.len()
            )));
        }
        loaded.cfg.set("vocab_size", &vocab.len().to_string())?;
    }
    loaded.cfg.bond.atom_types = vocab.atom_base_len();
    Ok(())
}

fn check_fingerprint(what: &str, found: &str, vocab: &FragmentVocab) -> Result<(), CliError> {
    let expected = vocab.fingerprint();
    if found == expected {
        Ok(())
    } else {
        Err(CliError::Fingerprint {
            what: what.to_string(),
            expected,
            found: found.to_string(),
        })
    }
}

/// `key = value` manifest: command, inputs, every effective setting, the
/// settings that differ from the preset, then results.
fn manifest(command: &str, inputs: &[(&str, String)], cfg: &RunConfig, results: &[(&str, String)]) -> String {
    let mut s = format!("command = {command}\n");
    for (k, v) in inputs {
        let _ = writeln!(s, "input.{k} = {v}");
    }
    for (k, v) in cfg.entries() {
        let _ = writeln!(s, "config.{k} = {v}");
    }
    for (k, v) in cfg.overrides() {
        let _ = writeln!(s, "override.{k} = {v}");
    }
    for (k, v) in results {
        let _ = writeln!(s, "result.{k} = {v}");
    }
    s
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

pub struct BuildVocabArgs {
    pub data: PathBuf,
    pub size: Option<usize>,
    pub out: PathBuf,
    pub common: Common,
}

/// Builds and saves the vocabulary plus corpus structure tables
/// (`<out>.atoms.csv`, `<out>.fragments.csv`, `<out>.sizes.csv`).
pub fn build_vocab_cmd(args: &BuildVocabArgs) -> Result<String, CliError> {
    let mut loaded = args.common.load()?;
    if let Some(size) = args.size {
        loaded.cfg.set("vocab_size", &size.to_string())?;
    }
    let corpus = load_corpus(&args.data)?;
    let vocab = build_vocab(&corpus.molecules, loaded.cfg.vocab_size)?;
    vocab.save(&args.out)?;
    let (decs, _) = decompose_all(&corpus.molecules, &vocab);
    let decs: Vec<Decomposition> = decs.into_iter().map(|(_, d)| d).collect();
    // a smaller vocabulary is a prefix of a larger one
    let mut sizes: Vec<usize> = (1..)
        .map(|i| i * 25)
        .take_while(|&s| s < vocab.len())
        .filter(|&s| s > vocab.atom_base_len())
        .collect();
    sizes.insert(0, vocab.atom_base_len());
    sizes.push(vocab.len());
    sizes.dedup();
    let prefixes: Vec<FragmentVocab> = sizes.iter().map(|&s| vocab.truncated(s)).collect();
    let refs: Vec<&FragmentVocab> = prefixes.iter().collect();
    let report = structure_report(&decs, &refs)?;
    write(&sibling(&args.out, ".atoms.csv"), report.atom_count_csv())?;
    write(&sibling(&args.out, ".fragments.csv"), report.fragment_count_csv())?;
    write(&sibling(&args.out, ".sizes.csv"), report.fragment_size_csv())?;
    Ok(format!(
        "molecules {}\nrejected {}\nvocabulary {} entries ({} atom types)\nfingerprint {}\n",
        corpus.molecules.len(),
        corpus.reject_count(),
        vocab.len(),
        vocab.atom_base_len(),
        vocab.fingerprint()
    ))
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub vocab: PathBuf,
    pub out: PathBuf,
    /// For train-bonds: a diffusion checkpoint that must share the vocabulary.
    pub diffusion_ckpt: Option<PathBuf>,
    pub common: Common,
}

pub fn train_diffusion_cmd(args: &TrainArgs) -> Result<String, CliError> {
    let mut loaded = args.common.load()?;
    let vocab = FragmentVocab::load(&args.vocab)?;
    fit_vocab_size(&mut loaded, &vocab)?;
    let cfg = loaded.cfg;
    let corpus = load_corpus(&args.data)?;
    let (decs, undecomposable) = decompose_all(&corpus.molecules, &vocab);
    let kept: Vec<&Decomposition> = decs.iter().map(|(_, d)| d).filter(|d| d.len() <= cfg.max_fragments).collect();
    let too_big = decs.len() - kept.len();
    if too_big > 0 {
        log::warn!("{too_big} molecules exceed max_fragments = {} and were skipped", cfg.max_fragments);
    }
    let n_max = kept.iter().map(|d| d.len()).max().ok_or_else(|| {
        CliError::Input(format!("{}: no molecule fits the vocabulary and fragment limit", args.data.display()))
    })?;
    let graphs = kept
        .iter()
        .map(|d| to_tensor(d, &vocab, n_max))
        .collect::<Result<Vec<_>, _>>()?;
    let fingerprint = vocab.fingerprint();
    let mut csv = String::from("epoch,loss_f,loss_c\n");
    let (ckpt, history) = train_diffusion(&graphs, &fingerprint, &cfg.diffusion(), |e| {
        log::info!("epoch {} loss_f {:.6} loss_c {:.6}", e.epoch, e.loss_f, e.loss_c);
        let _ = writeln!(csv, "{},{},{}", e.epoch, e.loss_f, e.loss_c);
    })?;
    diffusion_file(&ckpt, &cfg).save(&args.out)?;
    write(&sibling(&args.out, ".loss.csv"), &csv)?;
    let last = history.last().map_or("none".to_string(), |e| format!("{} {}", e.loss_f, e.loss_c));
    let results = [
        ("molecules", graphs.len().to_string()),
        ("skipped_undecomposable", undecomposable.to_string()),
        ("skipped_too_many_fragments", too_big.to_string()),
        ("n_max", n_max.to_string()),
        ("final_loss", last.clone()),
        ("vocab_fingerprint", fingerprint),
    ];
    let inputs = [("data", shown(&args.data)), ("vocab", shown(&args.vocab))];
    write(&sibling(&args.out, ".manifest"), manifest("train-diffusion", &inputs, &cfg, &results))?;
    Ok(format!("trained on {} fragment graphs; final losses {last}\n", graphs.len()))
}

fn diffusion_file(ckpt: &DiffusionCheckpoint, cfg: &RunConfig) -> CheckpointFile {
    let hist: Vec<String> = ckpt.size_histogram.iter().map(|c| c.to_string()).collect();
    let mut file = CheckpointFile {
        kind: DIFFUSION_KIND.into(),
        fingerprint: ckpt.vocab_fingerprint.clone(),
        config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        meta: vec![("size_histogram".into(), hist.join(",")), ("seed".into(), ckpt.seed.to_string())],
        tensors: Vec::new(),
    };
    file.push_params("theta", &ckpt.theta.params);
    file.push_params("phi", &ckpt.phi.params);
    file
}

fn stored_config(file: &CheckpointFile) -> Result<RunConfig, CliError> {
    let text: String = file.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    Ok(RunConfig::parse(&text)?)
}

fn meta_number<T: std::str::FromStr>(file: &CheckpointFile, key: &str) -> Result<T, CliError> {
    file.meta(key)?
        .parse()
        .map_err(|_| CliError::Input(format!("checkpoint meta {key} is not a number")))
}

pub fn load_diffusion(path: &Path) -> Result<(DiffusionCheckpoint, RunConfig), CliError> {
    let file = CheckpointFile::load(path)?;
    file.expect_kind(DIFFUSION_KIND)?;
    let cfg = stored_config(&file)?;
    let size_histogram = file
        .meta("size_histogram")?
        .split(',')
        .map(|c| c.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Input("checkpoint size histogram is malformed".into()))?;
    // templates only fix names and shapes
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let theta = ThetaParams::init(cfg.theta, &mut rng);
    let phi = PhiParams::init(cfg.phi, &mut rng);
    let ckpt = DiffusionCheckpoint {
        theta: ThetaParams {
            config: cfg.theta,
            params: file.take_params("theta", &theta.params)?,
        },
        phi: PhiParams {
            config: cfg.phi,
            params: file.take_params("phi", &phi.params)?,
        },
        sde_f: cfg.sde_f,
        sde_c: cfg.sde_c,
        vocab_fingerprint: file.fingerprint.clone(),
        size_histogram,
        seed: meta_number(&file, "seed")?,
    };
    Ok((ckpt, cfg))
}

pub fn train_bonds_cmd(args: &TrainArgs) -> Result<String, CliError> {
    let mut loaded = args.common.load()?;
    let vocab = FragmentVocab::load(&args.vocab)?;
    if let Some(p) = &args.diffusion_ckpt {
        let file = CheckpointFile::load(p)?;
        check_fingerprint(&shown(p), &file.fingerprint, &vocab)?;
    }
    fit_vocab_size(&mut loaded, &vocab)?;
    let cfg = loaded.cfg;
    let corpus = load_corpus(&args.data)?;
    let (decs, undecomposable) = decompose_all(&corpus.molecules, &vocab);
    let pairs: Vec<(&MolGraph, &Decomposition)> = decs.iter().map(|(m, d)| (*m, d)).collect();
    let mut csv = String::from("epoch,loss\n");
    let (params, report) = train_bond_scorer(&pairs, &vocab, cfg.bond, &cfg.bond_training(), |e| {
        log::info!("epoch {} loss {:.6}", e.epoch, e.loss);
        let _ = writeln!(csv, "{},{}", e.epoch, e.loss);
    })?;
    bonds_file(&params, &vocab, &cfg).save(&args.out)?;
    write(&sibling(&args.out, ".loss.csv"), &csv)?;
    let last = report.epochs.last().map_or("none".to_string(), |e| e.loss.to_string());
    let results = [
        ("molecules", (pairs.len() - report.skipped).to_string()),
        ("skipped_single_fragment", report.skipped.to_string()),
        ("skipped_undecomposable", undecomposable.to_string()),
        ("final_loss", last.clone()),
        ("vocab_fingerprint", vocab.fingerprint()),
    ];
    let mut inputs = vec![("data", shown(&args.data)), ("vocab", shown(&args.vocab))];
    if let Some(p) = &args.diffusion_ckpt {
        inputs.push(("diffusion_ckpt", shown(p)));
    }
    write(&sibling(&args.out, ".manifest"), manifest("train-bonds", &inputs, &cfg, &results))?;
    Ok(format!(
        "trained on {} molecules; final loss {last}\n",
        pairs.len() - report.skipped
    ))
}

fn bonds_file(params: &BondScorerParams, vocab: &FragmentVocab, cfg: &RunConfig) -> CheckpointFile {
    let mut file = CheckpointFile {
        kind: BONDS_KIND.into(),
        fingerprint: vocab.fingerprint(),
        config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        meta: vec![
            ("atom_types".into(), params.config.atom_types.to_string()),
            ("vocab_size".into(), params.config.vocab_size.to_string()),
        ],
        tensors: Vec::new(),
    };
    file.push_params("bond", &params.params);
    file
}

pub fn load_bonds(path: &Path) -> Result<(BondScorerParams, String), CliError> {
    let file = CheckpointFile::load(path)?;
    file.expect_kind(BONDS_KIND)?;
    let cfg = stored_config(&file)?;
    let config = BondConfig {
        atom_types: meta_number(&file, "atom_types")?,
        vocab_size: meta_number(&file, "vocab_size")?,
        ..cfg.bond
    };
    let template = BondScorerParams::init(config, &mut ChaCha8Rng::seed_from_u64(0));
    let params = file.take_params("bond", &template.params)?;
    Ok((BondScorerParams { config, params }, file.fingerprint))
}

pub struct SampleArgs {
    pub diffusion_ckpt: PathBuf,
    pub bond_ckpt: PathBuf,
    pub vocab: PathBuf,
    pub n: usize,
    pub threshold: Option<f64>,
    pub mode: Option<AssemblyMode>,
    pub out: PathBuf,
    pub common: Common,
}

/// Samples fragment graphs, assembles each into a molecule and writes one
/// canonical SMILES per line. Aborted or unassemblable samples are logged
/// and left out.
pub fn sample_cmd(args: &SampleArgs) -> Result<String, CliError> {
    let vocab = FragmentVocab::load(&args.vocab)?;
    let (ckpt, stored) = load_diffusion(&args.diffusion_ckpt)?;
    check_fingerprint(&shown(&args.diffusion_ckpt), &ckpt.vocab_fingerprint, &vocab)?;
    let (scorer, bond_fp) = load_bonds(&args.bond_ckpt)?;
    check_fingerprint(&shown(&args.bond_ckpt), &bond_fp, &vocab)?;
    if ckpt.theta.config.k != vocab.len() {
        return Err(CliError::Config("diffusion checkpoint width differs from the vocabulary".into()));
    }
    // the stored training config is the base; a config file and flags override it
    let mut cfg = stored;
    let mut seed_from_file = None;
    if let Some(p) = &args.common.config {
        let text = read_text(p)?;
        for (k, v) in parse_pairs(&text)? {
            cfg.set(&k, &v)?;
            if k == "seed" {
                seed_from_file = Some(cfg.seed);
            }
        }
    }
    if let Some(t) = args.threshold {
        cfg.assembly.threshold = t;
    }
    if let Some(m) = args.mode {
        cfg.assembly.mode = m;
    }
    cfg.seed = args.common.resolve_seed(seed_from_file)?;
    cfg.validate()?;
    let mut ckpt = ckpt;
    // step counts may change at sample time, the processes themselves may not
    for (name, trained, wanted) in [("sde_f", &mut ckpt.sde_f, cfg.sde_f), ("sde_c", &mut ckpt.sde_c, cfg.sde_c)] {
        if (trained.kind, trained.p_min, trained.p_max) != (wanted.kind, wanted.p_min, wanted.p_max) {
            return Err(CliError::Config(format!("{name} differs from the process the checkpoint was trained with")));
        }
        trained.steps = wanted.steps;
    }

    let samples = pc_sample(&ckpt, args.n, &cfg.sampler, cfg.seed)?;
    if samples.aborted > 0 {
        log::warn!("{} samples diverged and were dropped", samples.aborted);
    }
    let table = ValenceTable::default();
    let results = assemble_all(&samples.graphs, &vocab, &scorer, &table, &cfg, args.common.workers());
    let mut out = String::new();
    let mut failed = 0;
    for (i, r) in results.iter().enumerate() {
        match r {
            Some(Ok(smiles)) => {
                out.push_str(smiles);
                out.push('\n');
            }
            Some(Err(e)) => {
                failed += 1;
                log::warn!("sample {i}: assembly failed: {e}");
            }
            None => {}
        }
    }
    write(&args.out, &out)?;
    let emitted = args.n - samples.aborted - failed;
    let res = [
        ("n_requested", args.n.to_string()),
        ("n_emitted", emitted.to_string()),
        ("aborted", samples.aborted.to_string()),
        ("assembly_failed", failed.to_string()),
        ("peak_live_tensor_bytes", samples.peak_bytes.to_string()),
        ("vocab_fingerprint", vocab.fingerprint()),
    ];
    let inputs = [
        ("diffusion_ckpt", shown(&args.diffusion_ckpt)),
        ("bond_ckpt", shown(&args.bond_ckpt)),
        ("vocab", shown(&args.vocab)),
    ];
    write(&sibling(&args.out, ".manifest"), manifest("sample", &inputs, &cfg, &res))?;
    Ok(format!(
        "emitted {emitted} of {} molecules ({} aborted, {failed} failed assembly)\n",
        args.n, samples.aborted
    ))
}

type Assembled = Option<Result<String, CliError>>;

/// Assembles every sample, splitting the list over `workers` threads. The
/// random-ablation stream of sample `i` is stream `i` of the run seed.
fn assemble_all(
    graphs: &[Option<DiscreteGraph>],
    vocab: &FragmentVocab,
    scorer: &BondScorerParams,
    table: &ValenceTable,
    cfg: &RunConfig,
    workers: usize,
) -> Vec<Assembled> {
    let one = |i: usize, g: &Option<DiscreteGraph>| -> Assembled {
        let g = g.as_ref()?;
        let mol = match cfg.assembly.mode {
            AssemblyMode::Scored => assemble(&g.ranks, &g.edges, vocab, scorer, table, &cfg.assembly),
            AssemblyMode::RandomAblation => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                assemble_random(&g.ranks, &g.edges, vocab, table, &cfg.assembly, &mut rng)
            }
        };
        Some(mol.map(|m| write_canonical_smiles(&m)).map_err(CliError::from))
    };
    let chunk = graphs.len().div_ceil(workers.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = graphs
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, g)| one(c * chunk + j, g))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("assembly worker panicked"))
            .collect()
    })
}

pub struct EvaluateArgs {
    pub generated: PathBuf,
    pub train: PathBuf,
    pub vocab: PathBuf,
    pub out: PathBuf,
    /// Validity denominator; defaults to the sample manifest's request
    /// count, then to the number of generated lines.
    pub requested: Option<usize>,
}

/// Looks up `key` in the manifest written next to `path`.
fn manifest_value(path: &Path, key: &str) -> Option<String> {
    let text = std::fs::read_to_string(sibling(path, ".manifest")).ok()?;
    parse_pairs(&text)
        .ok()?
        .into_iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
}

/// Writes the report JSON to `out` and wall time to `<out>.timing.json`.
pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<String, CliError> {
    let start = Instant::now();
    let text = read_text(&args.generated)?;
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    if lines.is_empty() {
        return Err(CliError::Input(format!("{}: no generated molecules", args.generated.display())));
    }
    let vocab = FragmentVocab::load(&args.vocab)?;
    let train = load_corpus(&args.train)?;
    let requested = match args.requested {
        Some(n) => n,
        None => manifest_value(&args.generated, "result.n_requested")
            .and_then(|v| v.parse().ok())
            .unwrap_or(lines.len()),
    };
    let peak = manifest_value(&args.generated, "result.peak_live_tensor_bytes").and_then(|v| v.parse().ok());
    let table = ValenceTable::default();
    let parsed = parse_lines(&lines, &table);
    let train_keys = canonical_keys(&train.molecules);
    let report = GenerationReport::compute(requested, &parsed, &train_keys, &vocab, &table, peak)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&args.out, json + "\n")?;
    let timing = serde_json::json!({ "wall_seconds": start.elapsed().as_secs_f64() });
    write(&sibling(&args.out, ".timing.json"), timing.to_string() + "\n")?;
    Ok(format!(
        "validity {:.2}% uniqueness {:.2}% novelty {:.2}% ({} valid of {} requested)\n",
        report.validity, report.uniqueness, report.novelty, report.n_valid, report.n_requested
    ))
}
