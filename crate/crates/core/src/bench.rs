//! Benchmark suite loading, strategy runs and model accuracy reports.

use crate::clock::Instant;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{generate_dataset, sample_record, DatasetRecord, GenConfig};
use crate::expr::{evaluate, Expr};
use crate::nn::{cosine, record_frames, train_seq, NnError, SeqModel, TrainConfig};
use crate::ops::{OpCode, Registry};
use crate::search::{
    rank_sequences, synthesize, Limits, Models, SearchStats, Status, Strategy, TaskSpec,
};
use crate::tensor::Tensor;

/// Version of the JSON report layout.
pub const REPORT_SCHEMA: u32 = 1;

const CORE_SUITE: &str = include_str!("../data/so_core.json");

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub id: String,
    pub inputs: Vec<Tensor>,
    pub output: Tensor,
    pub reference_program: Expr,
    pub expected_sequence: Vec<OpCode>,
    pub required_ops: Vec<OpCode>,
    /// Rows with unresolved transcription problems; kept but not counted.
    pub quarantined: bool,
}

impl Benchmark {
    pub fn spec(&self) -> TaskSpec {
        TaskSpec {
            inputs: self.inputs.clone(),
            output: self.output.clone(),
        }
    }
}

#[derive(Deserialize)]
struct RawSuite {
    #[serde(default)]
    benchmarks: Vec<RawBenchmark>,
}

#[derive(Deserialize)]
struct RawBenchmark {
    id: String,
    inputs: Vec<Tensor>,
    output: Tensor,
    reference_program: String,
    expected_sequence: Vec<OpCode>,
    required_ops: Vec<OpCode>,
    #[serde(default)]
    quarantined: bool,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("suite file is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("benchmark {0}: reference program does not reproduce the output")]
    CorruptBenchmark(String),
}

/// Parses a suite and replays every reference program. Blank input is an
/// empty suite.
pub fn parse_suite(text: &str) -> Result<Vec<Benchmark>, BenchError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw: RawSuite = serde_json::from_str(text)?;
    raw.benchmarks
        .into_iter()
        .map(|b| {
            let corrupt = || BenchError::CorruptBenchmark(b.id.clone());
            let program: Expr = b.reference_program.parse().map_err(|_| corrupt())?;
            if b.inputs.is_empty() || b.inputs.len() > 3 {
                return Err(corrupt());
            }
            if evaluate(&program, &b.inputs).ok().as_ref() != Some(&b.output) {
                return Err(corrupt());
            }
            let used = program.op_sequence();
            if !b.required_ops.iter().all(|op| used.contains(op)) {
                return Err(corrupt());
            }
            Ok(Benchmark {
                id: b.id,
                inputs: b.inputs,
                output: b.output,
                reference_program: program,
                expected_sequence: b.expected_sequence,
                required_ops: b.required_ops,
                quarantined: b.quarantined,
            })
        })
        .collect()
}

pub fn load_suite(path: &Path) -> Result<Vec<Benchmark>, BenchError> {
    parse_suite(&std::fs::read_to_string(path)?)
}

/// The built-in 18-task core suite.
pub fn core_suite() -> Vec<Benchmark> {
    parse_suite(CORE_SUITE).expect("bundled suite replays")
}

/// Benchmarks whose required ops all belong to `registry`.
pub fn filter_suite(suite: &[Benchmark], registry: &Registry) -> Vec<Benchmark> {
    suite
        .iter()
        .filter(|b| b.required_ops.iter().all(|op| registry.contains(*op)))
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub id: String,
    pub strategy: Strategy,
    pub status: Status,
    pub program: Option<String>,
    pub cost: Option<u32>,
    pub candidates: u64,
    pub model_invocations: u64,
    pub wall_secs: f64,
    /// Whether a found program was re-checked against the output.
    pub verified: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub found: usize,
    pub not_found: usize,
    /// Wall-time statistics over found tasks only.
    pub mean_secs: Option<f64>,
    pub max_secs: Option<f64>,
    pub median_secs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteAccuracy {
    pub top1: f64,
    pub top3: f64,
    /// 1-based rank of each benchmark's expected sequence, if ranked.
    pub ranks: BTreeMap<String, Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub registry: Vec<String>,
    pub timeout_secs: f64,
    pub max_cost: u32,
    pub beam_width: usize,
    pub node_budget: usize,
    pub fallback: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema: u32,
    pub settings: RunSettings,
    pub rows: Vec<TaskRow>,
    pub summaries: Vec<StrategySummary>,
    pub model_accuracy: Option<SuiteAccuracy>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Aggregates for one strategy, recomputed from its rows.
pub fn summarize(strategy: Strategy, rows: &[TaskRow]) -> StrategySummary {
    let mine: Vec<&TaskRow> = rows.iter().filter(|r| r.strategy == strategy).collect();
    let mut times: Vec<f64> = mine
        .iter()
        .filter(|r| r.status == Status::Found)
        .map(|r| r.wall_secs)
        .collect();
    times.sort_by(f64::total_cmp);
    let found = times.len();
    StrategySummary {
        strategy,
        found,
        not_found: mine.len() - found,
        mean_secs: (found > 0).then(|| times.iter().sum::<f64>() / found as f64),
        max_secs: times.last().copied(),
        median_secs: median(&times),
    }
}

/// Rank (1-based) of each benchmark's expected sequence among the model's
/// merged beam hypotheses.
pub fn suite_accuracy(model: &SeqModel<f32>, suite: &[Benchmark], beam: usize) -> SuiteAccuracy {
    let mut ranks = BTreeMap::new();
    for b in suite {
        let mut stats = SearchStats::default();
        let ranked = rank_sequences(&b.spec(), model, beam, &mut stats);
        let rank = ranked
            .iter()
            .position(|h| h.ops == b.expected_sequence)
            .map(|i| i + 1);
        ranks.insert(b.id.clone(), rank);
    }
    let n = suite.len().max(1) as f64;
    let within = |k: usize| ranks.values().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / n;
    SuiteAccuracy {
        top1: within(1),
        top3: within(3),
        ranks,
    }
}

/// Runs every benchmark under every strategy in a fixed order. Failures are
/// recorded per row; found programs are re-evaluated before counting.
pub fn run_suite(
    suite: &[Benchmark],
    strategies: &[Strategy],
    registry: &Registry,
    models: Models<'_>,
    limits: &Limits,
    seed: u64,
) -> SuiteReport {
    let mut rows = Vec::new();
    for &strategy in strategies {
        for b in suite.iter().filter(|b| !b.quarantined) {
            let spec = b.spec();
            let started = Instant::now();
            let outcome = synthesize(&spec, strategy, registry, models, limits);
            let wall_secs = started.elapsed().as_secs_f64();
            let row = match outcome {
                Ok(r) => {
                    let verified = r.program.as_ref().is_some_and(|p| spec.is_solved_by(p));
                    let status = if r.status == Status::Found && !verified {
                        Status::NotFound
                    } else {
                        r.status
                    };
                    TaskRow {
                        id: b.id.clone(),
                        strategy,
                        status,
                        program: r.program.as_ref().map(Expr::render),
                        cost: r.cost,
                        candidates: r.stats.candidates,
                        model_invocations: r.stats.model_invocations,
                        wall_secs,
                        verified,
                        error: (r.status == Status::Found && !verified)
                            .then(|| "program failed re-verification".to_string()),
                    }
                }
                Err(e) => TaskRow {
                    id: b.id.clone(),
                    strategy,
                    status: Status::NotFound,
                    program: None,
                    cost: None,
                    candidates: 0,
                    model_invocations: 0,
                    wall_secs,
                    verified: false,
                    error: Some(e.to_string()),
                },
            };
            log::info!(
                "{} {}: {:?} in {:.3}s",
                row.id,
                strategy,
                row.status,
                row.wall_secs
            );
            rows.push(row);
        }
    }
    let summaries = strategies.iter().map(|&s| summarize(s, &rows)).collect();
    let model_accuracy = models
        .seq
        .map(|m| suite_accuracy(m, suite, limits.beam_width));
    SuiteReport {
        schema: REPORT_SCHEMA,
        settings: RunSettings {
            registry: registry.names().iter().map(|s| s.to_string()).collect(),
            timeout_secs: limits.timeout.as_secs_f64(),
            max_cost: limits.max_cost,
            beam_width: limits.beam_width,
            node_budget: limits.node_budget,
            fallback: limits.fallback,
            seed,
        },
        rows,
        summaries,
        model_accuracy,
    }
}

fn secs(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |s| format!("{s:.3}"))
}

impl SuiteReport {
    /// Zeroes wall times so two runs with the same settings compare equal.
    pub fn without_timings(mut self) -> Self {
        for r in &mut self.rows {
            r.wall_secs = 0.0;
        }
        for s in &mut self.summaries {
            let zero = |v: Option<f64>| v.map(|_| 0.0);
            s.mean_secs = zero(s.mean_secs);
            s.max_secs = zero(s.max_secs);
            s.median_secs = zero(s.median_secs);
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| strategy | found | not found | mean s | max s | median s |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} |",
                s.strategy,
                s.found,
                s.not_found,
                secs(s.mean_secs),
                secs(s.max_secs),
                secs(s.median_secs)
            );
        }
        out.push_str("\n| task | strategy | status | candidates | seconds | program |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {:?} | {} | {:.3} | {} |",
                r.id,
                r.strategy,
                r.status,
                r.candidates,
                r.wall_secs,
                r.program.as_deref().unwrap_or("-").replace('|', "\\|")
            );
        }
        if let Some(acc) = &self.model_accuracy {
            let _ = writeln!(
                out,
                "\nsequence top-1 {:.3}, top-3 {:.3}",
                acc.top1, acc.top3
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    /// Exact whole-sequence match within the top k beam hypotheses.
    pub sequence: f64,
    /// First op within the top k of the first-step distribution.
    pub first_op: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub records: usize,
    pub top: Vec<TopK>,
}

/// Top-k accuracies of a sequence model on labelled records, each queried
/// with its own step frames. Records that cannot be encoded count as misses.
pub fn eval_model(
    model: &SeqModel<f32>,
    records: &[DatasetRecord],
    ks: &[usize],
) -> AccuracyReport {
    let kmax = ks.iter().copied().max().unwrap_or(1).max(1);
    let mut seq_rank = Vec::with_capacity(records.len());
    let mut first_rank = Vec::with_capacity(records.len());
    for r in records {
        let frames = record_frames(r);
        let beams = model
            .beam_search(&frames, &r.output, kmax)
            .unwrap_or_default();
        seq_rank.push(beams.iter().position(|h| h.ops == r.sequence));
        let firsts = model
            .predict_first(&frames[0], &r.output, kmax)
            .unwrap_or_default();
        first_rank.push(
            firsts
                .iter()
                .position(|(op, _)| Some(op) == r.sequence.first()),
        );
    }
    let n = records.len().max(1) as f64;
    let rate = |ranks: &[Option<usize>], k: usize| {
        ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count() as f64 / n
    };
    AccuracyReport {
        records: records.len(),
        top: ks
            .iter()
            .map(|&k| TopK {
                k,
                sequence: rate(&seq_rank, k),
                first_op: rate(&first_rank, k),
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutResult {
    pub sequence: Vec<OpCode>,
    pub records: usize,
    /// Share of probe records whose sequence appears in the top k.
    pub top_k: f64,
    pub predicted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub k: usize,
    pub seed: u64,
    pub held_out: Vec<HeldOutResult>,
}

impl GeneralizationReport {
    pub fn predicted_count(&self) -> usize {
        self.held_out.iter().filter(|h| h.predicted).count()
    }
}

/// Retrains without the held-out sequences, then measures how often each
/// unseen sequence lands in the top `k`. A held-out sequence counts as
/// predicted when at least half its probe records rank it within `k`.
pub fn generalization_probe(
    sequences: &[Vec<OpCode>],
    held_out: &[Vec<OpCode>],
    registry: &Registry,
    gen: &GenConfig,
    train: &TrainConfig,
    probe_records: usize,
    k: usize,
) -> Result<GeneralizationReport, NnError> {
    let kept: Vec<Vec<OpCode>> = sequences
        .iter()
        .filter(|s| !held_out.contains(s))
        .cloned()
        .collect();
    let data = generate_dataset(&kept, gen).map_err(|_| NnError::EmptyDataset)?;
    let (model, _) = train_seq(&data.train, &data.valid, registry, train)?;
    let mut rng =
        <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(gen.seed ^ 0x005e_ed0f_4e1d);
    let mut results = Vec::new();
    for seq in held_out {
        let mut records = Vec::new();
        let mut attempts = 0;
        while records.len() < probe_records && attempts < probe_records * 20 {
            attempts += 1;
            if let Some(r) = sample_record(seq, gen, &mut rng) {
                records.push(r);
            }
        }
        let report = eval_model(&model, &records, &[k]);
        let top_k = report.top[0].sequence;
        results.push(HeldOutResult {
            sequence: seq.clone(),
            records: records.len(),
            top_k,
            predicted: !records.is_empty() && top_k >= 0.5,
        });
    }
    Ok(GeneralizationReport {
        k,
        seed: train.seed,
        held_out: results,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    pub sequence: Vec<OpCode>,
    /// Second-step state of the masked rollout.
    pub masked: Vec<f64>,
    /// First-step state of a rollout fed the concrete intermediate value.
    pub concrete: Vec<f64>,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenProbeReport {
    pub pairs: usize,
    pub seed: u64,
    pub mean_matched: f64,
    /// Mean cosine after pairing each masked state with another record's
    /// concrete state.
    pub mean_shuffled: f64,
    pub gap: f64,
    pub vectors: Vec<ProbePair>,
}

/// Compares matched hidden-state pairs from up to `pairs` two-step records
/// against a seeded mismatched pairing.
pub fn probe_hidden(
    model: &SeqModel<f32>,
    records: &[DatasetRecord],
    pairs: usize,
    seed: u64,
) -> HiddenProbeReport {
    let mut vectors = Vec::new();
    for r in records.iter().filter(|r| r.steps.len() == 2) {
        if vectors.len() >= pairs {
            break;
        }
        if let Ok(p) = model.hidden_probe(r) {
            vectors.push(ProbePair {
                sequence: r.sequence.clone(),
                masked: p.masked,
                concrete: p.concrete,
                cosine: p.cosine,
            });
        }
    }
    let n = vectors.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
    let mut shuffled = 0.0;
    for i in 0..n {
        let j = if perm[i] == i { (i + 1) % n } else { perm[i] };
        shuffled += cosine(&vectors[i].masked, &vectors[j].concrete);
    }
    let denom = n.max(1) as f64;
    let mean_matched = vectors.iter().map(|v| v.cosine).sum::<f64>() / denom;
    let mean_shuffled = shuffled / denom;
    HiddenProbeReport {
        pairs: n,
        seed,
        mean_matched,
        mean_shuffled,
        gap: mean_matched - mean_shuffled,
        vectors,
    }
}
